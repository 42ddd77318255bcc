fn main() {
    std::process::exit(bae_qnd_sim::cli::run(std::env::args_os()));
}
