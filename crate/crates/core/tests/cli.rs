use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use bae_qnd_sim::cli::output::payload_checksum;
use bae_qnd_sim::cli::{EXIT_NUMERIC, EXIT_CONFIG, EXIT_OK, EXIT_OVERFLOW, THREADS_ENV};
use serde_json::Value;
use tempfile::TempDir;

fn run(args: &[&str], out: &Path) -> i32 {
    run_env(args, out, None)
}

fn run_env(args: &[&str], out: &Path, threads: Option<&str>) -> i32 {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bae-qnd-sim"));
    cmd.args(args).arg("--out").arg(out);
    match threads {
        Some(t) => cmd.env(THREADS_ENV, t),
        None => cmd.env_remove(THREADS_ENV),
    };
    let output = cmd.output().expect("binary runs");
    output.status.code().expect("exit code")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    assert!(!text.contains('\r'));
    assert!(text.ends_with('\n'));
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (header, rows)
}

fn envelope_verifies(v: &Value) -> bool {
    payload_checksum(&v["payload"]) == v["checksum"].as_str().unwrap()
}

#[test]
fn jump_sweep_json_envelope() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sweep.json");
    let code = run(&["jump-sweep", "--delta-x", "2,4", "--dim", "24"], &out);
    assert_eq!(code, EXIT_OK);
    let v = read_json(&out);
    assert!(envelope_verifies(&v));
    assert_eq!(v["meta"]["command"], "jump-sweep");
    let rows = v["payload"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1][0].as_f64().unwrap(), 4.0);
    assert_eq!(rows[1][2].as_f64().unwrap(), 0.00390625);
    let ratio = rows[1][3].as_f64().unwrap();
    assert!((ratio - 1.0).abs() < 0.02, "ratio {ratio}");
}

#[test]
fn csv_and_json_agree() {
    let dir = TempDir::new().unwrap();
    let json = dir.path().join("d.json");
    let csv = dir.path().join("d.csv");
    let args = ["distribution", "--delta-x", "1.5", "--dim", "16", "--grid-span", "8", "--grid-count", "81"];
    assert_eq!(run(&args, &json), EXIT_OK);
    let mut csv_args = args.to_vec();
    csv_args.extend(["--format", "csv"]);
    assert_eq!(run(&csv_args, &csv), EXIT_OK);

    let v = read_json(&json);
    let (header, rows) = csv_rows(&csv);
    let columns: Vec<String> = v["payload"]["columns"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_str().unwrap().to_string())
        .collect();
    assert_eq!(header, columns);
    assert_eq!(&header[..3], ["x_m", "P", "P_0"]);
    assert_eq!(rows.len(), 81);
    let json_rows = v["payload"]["rows"].as_array().unwrap();
    for (r, jr) in rows.iter().zip(json_rows) {
        for (cell, jv) in r.iter().zip(jr.as_array().unwrap()) {
            assert_eq!(cell.parse::<f64>().unwrap(), jv.as_f64().unwrap());
        }
    }

    let meta = read_json(&with_suffix(&csv, ".meta.json"));
    assert_eq!(meta["checksum"], v["checksum"]);
    assert_eq!(meta["meta"]["command"], "distribution");
}

#[test]
fn csv_floats_carry_seventeen_digits() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sweep.csv");
    let code = run(&["jump-sweep", "--delta-x", "3", "--dim", "16", "--format", "csv"], &out);
    assert_eq!(code, EXIT_OK);
    let (header, rows) = csv_rows(&out);
    assert_eq!(header, ["delta_x", "jump_probability", "asymptote", "ratio"]);
    for cell in &rows[0] {
        let mantissa = cell.split('e').next().unwrap().replace(['-', '.'], "");
        assert_eq!(mantissa.len(), 17, "{cell}");
    }
}

#[test]
fn photon_columns_sum_to_total_density() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("d.json");
    let code = run(
        &["distribution", "--delta-x", "0.7", "--dim", "12", "--n-max", "11", "--grid-count", "41"],
        &out,
    );
    assert_eq!(code, EXIT_OK);
    let v = read_json(&out);
    for row in v["payload"]["rows"].as_array().unwrap() {
        let row: Vec<f64> = row.as_array().unwrap().iter().map(|c| c.as_f64().unwrap()).collect();
        let total: f64 = row[2..14].iter().sum();
        assert!((total - row[1]).abs() <= 1e-12 * row[1].max(1e-300) + 1e-300, "{total} vs {}", row[1]);
    }
}

#[test]
fn correlation_without_shots_is_exact_only() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("c.json");
    assert_eq!(run(&["correlation", "--delta-x", "5", "--dim", "16"], &out), EXIT_OK);
    let v = read_json(&out);
    assert!(v["payload"].get("sampled").is_none());
    assert_eq!(v["payload"]["operator"]["value"].as_f64().unwrap(), 0.125);
}

#[test]
fn simulate_writes_records_and_report() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sim.csv");
    let code = run(
        &["simulate", "--delta-x", "1", "--dim", "16", "--shots", "500", "--seed", "7", "--format", "csv"],
        &out,
    );
    assert_eq!(code, EXIT_OK);
    let (header, rows) = csv_rows(&out);
    assert_eq!(header, ["x_m", "photon_n", "shot_index", "rng_stream_id"]);
    assert_eq!(rows.len(), 500);
    assert!(with_suffix(&out, ".report.csv").exists());
    let meta = read_json(&with_suffix(&out, ".meta.json"));
    assert_eq!(meta["meta"]["seed"].as_u64(), Some(7));
}

#[test]
fn setup_check_reports_derived_parameters() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("s.json");
    let a = std::f64::consts::SQRT_2.to_string();
    assert_eq!(run(&["setup-check", "--gain-a", &a, "--dim", "24"], &out), EXIT_OK);
    let v = read_json(&out);
    let p = &v["payload"];
    assert!((p["reflectivity"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert!((p["delta_x"].as_f64().unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
    assert_eq!(p["within_tolerance"], true);
}

#[test]
fn setup_overflow_has_its_own_exit_code() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("s.json");
    assert_eq!(run(&["setup-check", "--gain-a", "3", "--dim", "16"], &out), EXIT_OVERFLOW);
}

#[test]
fn narrow_povm_grid_is_a_numeric_failure() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("p.json");
    let code = run(&["povm-check", "--delta-x", "1", "--dim", "16", "--grid-span", "2"], &out);
    assert_eq!(code, EXIT_NUMERIC);
}

#[test]
fn povm_check_passes_on_default_grid() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("p.json");
    assert_eq!(run(&["povm-check", "--delta-x", "1", "--dim", "16"], &out), EXIT_OK);
    let v = read_json(&out);
    assert_eq!(v["payload"]["dims"].as_array().unwrap().len(), 3);
    assert!(v["payload"]["completeness_defect"].as_f64().unwrap() < 1e-8);
}

#[test]
fn config_errors_exit_with_config_code() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.json");
    let cases: [&[&str]; 5] = [
        &["distribution", "--delta-x", "1", "--gain-a", "1.2", "--dim", "16"],
        &["distribution", "--delta-x", "1", "--dim", "2"],
        &["simulate", "--delta-x", "1", "--dim", "16"],
        &["setup-check", "--delta-x", "1", "--dim", "16"],
        &["distribution", "--delta-x", "1", "--dim", "16", "--format", "xml"],
    ];
    for args in cases {
        assert_eq!(run(args, &out), EXIT_CONFIG, "{args:?}");
    }
    assert!(!out.exists());
}

#[test]
fn invalid_thread_cap_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.json");
    let args = ["jump-sweep", "--delta-x", "2", "--dim", "16"];
    assert_eq!(run_env(&args, &out, Some("zero")), EXIT_CONFIG);
    assert_eq!(run_env(&args, &out, Some("0")), EXIT_CONFIG);
    assert_eq!(run_env(&args, &out, Some("2")), EXIT_OK);
}
