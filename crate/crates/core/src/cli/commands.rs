use std::path::PathBuf;

use serde::Serialize;
use serde_json::Value;

use super::output::{json_text, report_csv, sidecar, write_file, CsvSidecar, ResultEnvelope};
use super::{Cell, CliError, Format, RunConfig, Table};
use crate::fock::{make_grid, trusted_dim, FockState, GridKind, QuadratureGrid};
use crate::jump_stats::{
    jump_probability, operator_correlation, run_experiment, summarize, CorrelationReport, Estimate, ExactValues,
    OperatorCorrelation,
};
use crate::measurement::{asymptotic_p1, MeasurementModel, OutcomeDensityTable};
use crate::setup::{
    calibrate_with_state, convergence_table, ConvergenceRow, EquivalenceReport, OutcomeMap, SetupParams,
    SetupSimulator,
};

/// Completeness defect a povm-check must stay below.
pub const POVM_TOLERANCE: f64 = 1e-8;

/// Equivalence defect and scale spread a setup-check must stay below.
pub const SETUP_TOLERANCE: f64 = 1e-3;

pub(super) fn dispatch(config: &RunConfig) -> Result<(), CliError> {
    match config.command.as_str() {
        "distribution" => distribution(config),
        "jump-sweep" => jump_sweep(config),
        "correlation" => correlation(config),
        "povm-check" => povm_check(config),
        "setup-check" => setup_check(config),
        "simulate" => simulate(config),
        other => Err(CliError::Config(format!("unknown command {other}"))),
    }
}

fn emit<P: Serialize>(config: &RunConfig, payload: &P, csv: impl FnOnce() -> Vec<(PathBuf, String)>) -> Result<(), CliError> {
    let envelope = ResultEnvelope::new(config, payload);
    match config.format {
        Format::Json => write_file(&config.out, &json_text(&envelope)),
        Format::Csv => {
            for (path, text) in csv() {
                write_file(&path, &text)?;
            }
            let meta = CsvSidecar {
                meta: envelope.meta,
                checksum: envelope.checksum,
            };
            write_file(&sidecar(&config.out, ".meta.json"), &json_text(&meta))
        }
    }
}

fn emit_report<P: Serialize>(config: &RunConfig, report: &P) -> Result<(), CliError> {
    emit(config, report, || {
        let value = serde_json::to_value(report).expect("reports always serialize");
        vec![(config.out.clone(), report_csv(&value))]
    })
}

fn emit_table(config: &RunConfig, table: &Table) -> Result<(), CliError> {
    emit(config, table, || vec![(config.out.clone(), table.to_csv())])
}

fn default_span(delta_x: f64) -> f64 {
    6.0 * (delta_x * delta_x + 1.0).sqrt()
}

fn grid(config: &RunConfig, default: f64) -> Result<QuadratureGrid, CliError> {
    Ok(make_grid(
        GridKind::Uniform,
        config.grid_span.unwrap_or(default),
        config.grid_count,
    )?)
}

fn distribution(config: &RunConfig) -> Result<(), CliError> {
    let dx = config.delta_x[0];
    let model = MeasurementModel::new(dx, config.dim)?;
    let vacuum = FockState::vacuum(config.dim)?;
    let grid = grid(config, default_span(dx))?;
    let tab = OutcomeDensityTable::tabulate(&vacuum, &model, grid, Some(config.n_max.max(1)))?;
    let per_photon = tab.per_photon.as_ref().expect("requested per-photon columns");
    let mut columns = vec!["x_m".to_string(), "P".to_string()];
    columns.extend((0..=config.n_max).map(|n| format!("P_{n}")));
    columns.extend(
        ["asymptotic_p1", "x_m_scaled", "p1_scaled", "asymptotic_p1_scaled"]
            .iter()
            .map(|s| s.to_string()),
    );
    let mut table = Table::new(columns);
    let dx3 = dx.powi(3);
    for (i, &x) in tab.grid.nodes().iter().enumerate() {
        let asym = asymptotic_p1(dx, x)?;
        let mut row = vec![Cell::from(x), Cell::from(tab.density[i])];
        row.extend((0..=config.n_max).map(|n| Cell::from(per_photon[n][i])));
        row.extend([
            Cell::from(asym),
            Cell::from(x / dx),
            Cell::from(dx3 * per_photon[1][i]),
            Cell::from(dx3 * asym),
        ]);
        table.push(row);
    }
    emit_table(config, &table)
}

fn jump_sweep(config: &RunConfig) -> Result<(), CliError> {
    let mut table = Table::new(["delta_x", "jump_probability", "asymptote", "ratio"]);
    let vacuum = FockState::vacuum(config.dim)?;
    for &dx in &config.delta_x {
        let model = MeasurementModel::new(dx, config.dim)?;
        let p = jump_probability(&vacuum, &model, &grid(config, default_span(dx))?)?;
        let asymptote = 1.0 / (16.0 * dx * dx);
        table.push(vec![
            Cell::from(dx),
            Cell::from(p),
            Cell::from(asymptote),
            Cell::from(p / asymptote),
        ]);
    }
    emit_table(config, &table)
}

#[derive(Debug, Clone, Serialize)]
struct CorrelationPayload {
    delta_x: f64,
    dim: usize,
    exact: ExactValues,
    operator: OperatorCorrelation,
    #[serde(skip_serializing_if = "Option::is_none")]
    sampled: Option<SampledCorrelation>,
}

#[derive(Debug, Clone, Serialize)]
struct SampledCorrelation {
    shots: u64,
    seed: u64,
    jump_fraction: Estimate,
    measured_c: Estimate,
    covariance_c: Estimate,
}

impl SampledCorrelation {
    fn new(report: &CorrelationReport, seed: u64) -> Self {
        Self {
            shots: report.shots,
            seed,
            jump_fraction: report.jump_fraction,
            measured_c: report.measured_c,
            covariance_c: report.covariance_c,
        }
    }
}

fn correlation(config: &RunConfig) -> Result<(), CliError> {
    let dx = config.delta_x[0];
    let model = MeasurementModel::new(dx, config.dim)?;
    let vacuum = FockState::vacuum(config.dim)?;
    let exact = ExactValues::compute(&vacuum, &model, &grid(config, default_span(dx))?)?;
    let sampled = match (config.shots, config.seed) {
        (Some(shots), Some(seed)) => {
            let records = run_experiment(&vacuum, &model, shots, seed)?;
            Some(SampledCorrelation::new(&summarize(&records, &exact)?, seed))
        }
        _ => None,
    };
    let payload = CorrelationPayload {
        delta_x: dx,
        dim: config.dim,
        exact,
        operator: operator_correlation(&vacuum, config.dim)?,
        sampled,
    };
    emit_report(config, &payload)
}

#[derive(Debug, Clone, Serialize)]
struct PovmRow {
    dim: usize,
    trusted_dim: usize,
    completeness_defect: f64,
    truncated_product_defect: f64,
}

#[derive(Debug, Clone, Serialize)]
struct PovmPayload {
    delta_x: f64,
    grid_kind: GridKind,
    grid_span: f64,
    grid_count: usize,
    grid_max_step: f64,
    tolerance: f64,
    completeness_defect: f64,
    within_tolerance: bool,
    dims: Vec<PovmRow>,
}

fn study_dims(dim: usize, min: usize) -> Vec<usize> {
    let mut dims = vec![(dim / 2).max(min), (3 * dim / 4).max(min), dim];
    dims.dedup();
    dims
}

fn povm_check(config: &RunConfig) -> Result<(), CliError> {
    let dx = config.delta_x[0];
    let model = MeasurementModel::new(dx, config.dim)?;
    let grid = grid(config, model.completeness_span())?;
    if grid.span() < model.completeness_span() {
        return Err(crate::Error::GridTooNarrow {
            span: grid.span(),
            required: model.completeness_span(),
        }
        .into());
    }
    let dims = study_dims(config.dim, 2)
        .into_iter()
        .map(|dim| {
            let m = MeasurementModel::new(dx, dim)?;
            Ok(PovmRow {
                dim,
                trusted_dim: trusted_dim(dim),
                completeness_defect: m.completeness_defect(&grid)?,
                truncated_product_defect: m.truncated_product_defect(&grid)?,
            })
        })
        .collect::<Result<Vec<_>, crate::Error>>()?;
    let defect = dims.last().expect("at least one dim").completeness_defect;
    let payload = PovmPayload {
        delta_x: dx,
        grid_kind: grid.kind(),
        grid_span: grid.span(),
        grid_count: grid.len(),
        grid_max_step: grid.max_step(),
        tolerance: POVM_TOLERANCE,
        completeness_defect: defect,
        within_tolerance: defect < POVM_TOLERANCE,
        dims,
    };
    emit_report(config, &payload)?;
    if !payload.within_tolerance {
        return Err(CliError::CheckFailed(format!(
            "completeness defect {defect:e} is not below {POVM_TOLERANCE:e}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct SetupInputReport {
    input: String,
    calibration_scale: f64,
    equivalence: EquivalenceReport,
    convergence: Vec<ConvergenceRow>,
    converges_monotonically: bool,
}

#[derive(Debug, Clone, Serialize)]
struct SetupPayload {
    gain_a: f64,
    reflectivity: f64,
    delta_x: f64,
    dim: usize,
    nominal_scale: f64,
    calibration: OutcomeMap,
    scale_spread: f64,
    tolerance: f64,
    max_defect: f64,
    within_tolerance: bool,
    inputs: Vec<SetupInputReport>,
}

fn setup_check(config: &RunConfig) -> Result<(), CliError> {
    let a = config.gain_a.expect("resolved config has a gain");
    let params = SetupParams::new(a, config.dim, config.dim)?;
    let sim = SetupSimulator::new(params)?;
    let dims = study_dims(config.dim, 4);
    let mut inputs = Vec::new();
    for (name, level) in [("vacuum", 0), ("one-photon", 1)] {
        let state = FockState::number(level, config.dim)?;
        let grid = match config.grid_span {
            Some(span) => make_grid(GridKind::Uniform, span, config.grid_count)?,
            None => sim.default_grid(&state)?,
        };
        let equivalence = sim.equivalence_report(&state, &grid)?;
        let convergence = convergence_table(a, level, &dims)?;
        let converges_monotonically = convergence
            .windows(2)
            .all(|w| w[1].report.defect < w[0].report.defect);
        inputs.push(SetupInputReport {
            input: name.to_string(),
            calibration_scale: calibrate_with_state(sim.circuit(), &state)?.scale,
            equivalence,
            convergence,
            converges_monotonically,
        });
    }
    let scales = inputs.iter().map(|i| i.calibration_scale);
    let scale_spread = scales.clone().fold(f64::NEG_INFINITY, f64::max) - scales.fold(f64::INFINITY, f64::min);
    let max_defect = inputs.iter().map(|i| i.equivalence.defect).fold(0.0, f64::max);
    let within_tolerance = max_defect < SETUP_TOLERANCE && scale_spread < SETUP_TOLERANCE;
    let payload = SetupPayload {
        gain_a: a,
        reflectivity: params.reflectivity(),
        delta_x: params.delta_x(),
        dim: config.dim,
        nominal_scale: params.nominal_scale(),
        calibration: sim.outcome_map(),
        scale_spread,
        tolerance: SETUP_TOLERANCE,
        max_defect,
        within_tolerance,
        inputs,
    };
    emit_report(config, &payload)?;
    if !within_tolerance {
        return Err(CliError::CheckFailed(format!(
            "equivalence defect {max_defect:e} or scale spread {scale_spread:e} is not below {SETUP_TOLERANCE:e}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct SimulatePayload {
    delta_x: f64,
    dim: usize,
    seed: u64,
    record_stride: u64,
    report: CorrelationReport,
    /// Mean of `x_m²` over shots that found one photon.
    one_photon_x2: Option<Estimate>,
    records: Table,
}

fn simulate(config: &RunConfig) -> Result<(), CliError> {
    let dx = config.delta_x[0];
    let (shots, seed) = (
        config.shots.expect("resolved config has shots"),
        config.seed.expect("resolved config has a seed"),
    );
    let model = MeasurementModel::new(dx, config.dim)?;
    let vacuum = FockState::vacuum(config.dim)?;
    let exact = ExactValues::compute(&vacuum, &model, &grid(config, default_span(dx))?)?;
    let records = run_experiment(&vacuum, &model, shots, seed)?;
    let report = summarize(&records, &exact)?;
    let ones = records.iter().filter(|r| r.photon_n == 1).map(|r| r.x_m * r.x_m);
    let one_photon_x2 = (ones.clone().count() > 1).then(|| Estimate::from_samples(ones));
    let mut table = Table::new(["x_m", "photon_n", "shot_index", "rng_stream_id"]);
    for r in records.iter().step_by(config.record_stride as usize) {
        table.push(vec![
            Cell::from(r.x_m),
            Cell::from(r.photon_n),
            Cell::from(r.shot_index),
            Cell::from(r.rng_stream_id),
        ]);
    }
    let payload = SimulatePayload {
        delta_x: dx,
        dim: config.dim,
        seed,
        record_stride: config.record_stride,
        report,
        one_photon_x2,
        records: table,
    };
    emit(config, &payload, || {
        let report = serde_json::to_value(&payload.report).expect("reports always serialize");
        let mut summary = report_csv(&report);
        if let Some(e) = payload.one_photon_x2 {
            let extra: Value = serde_json::json!({ "one_photon_x2": e });
            summary.push_str(report_csv(&extra).trim_start_matches("quantity,value\n"));
        }
        vec![
            (config.out.clone(), payload.records.to_csv()),
            (sidecar(&config.out, ".report.csv"), summary),
        ]
    })
}
