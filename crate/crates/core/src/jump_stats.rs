//! Monte Carlo sampling of measurement outcomes followed by photon counting,
//! and the exact jump probability and outcome/photon-number correlations.
//!
//! Shots are split into fixed chunks of [`CHUNK_SHOTS`]; chunk `k` draws from
//! a ChaCha8 stream with the run seed and stream id `k`, so the record stream
//! does not depend on how chunks are scheduled.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{make_grid, number_operator, quadrature_x, FockState, GridKind, QuadratureGrid};
use crate::measurement::MeasurementModel;

/// Shots drawn from one rng stream.
pub const CHUNK_SHOTS: u64 = 8192;

/// Minimum node count of the sampling grid.
pub const MIN_SAMPLER_NODES: usize = 8193;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub x_m: f64,
    pub photon_n: usize,
    pub shot_index: u64,
    pub rng_stream_id: u64,
}

/// Inverse-CDF sampler for the outcome density of one state, using a
/// piecewise-linear interpolant of the density on a uniform grid.
#[derive(Debug, Clone)]
pub struct OutcomeSampler {
    nodes: Vec<f64>,
    density: Vec<f64>,
    cdf: Vec<f64>,
}

impl OutcomeSampler {
    /// Grid over `±6√(δx² + ⟨x̂²⟩ + 1)` with a step at most 1/32 of the
    /// narrower of `δx` and the vacuum width.
    pub fn new(state: &FockState, model: &MeasurementModel) -> Result<Self> {
        let dx = model.delta_x();
        let span = 6.0 * (dx * dx + state.quadrature_x_second_moment() + 1.0).sqrt();
        let step = dx.min(0.5) / 32.0;
        let count = ((2.0 * span / step).ceil() as usize + 1).max(MIN_SAMPLER_NODES) | 1;
        let grid = make_grid(GridKind::Uniform, span, count)?;
        let density = grid
            .nodes()
            .par_iter()
            .map(|&x| model.outcome_density(state, x))
            .collect::<Result<Vec<f64>>>()?;
        let mut cdf = Vec::with_capacity(count);
        cdf.push(0.0);
        let nodes = grid.nodes().to_vec();
        for i in 1..count {
            let h = nodes[i] - nodes[i - 1];
            cdf.push(cdf[i - 1] + 0.5 * h * (density[i - 1] + density[i]));
        }
        let total = cdf[count - 1];
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::DegenerateConditioning { density: total });
        }
        for c in &mut cdf {
            *c /= total;
        }
        Ok(Self {
            nodes,
            density,
            cdf,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Maps `u ∈ [0, 1)` to an outcome by inverting the piecewise-quadratic CDF.
    pub fn quantile(&self, u: f64) -> f64 {
        let total = self.cdf.len();
        let i = self.cdf.partition_point(|&c| c <= u).clamp(1, total - 1);
        let (x0, x1) = (self.nodes[i - 1], self.nodes[i]);
        let h = x1 - x0;
        let (p0, p1) = (self.density[i - 1], self.density[i]);
        let seg = self.cdf[i] - self.cdf[i - 1];
        if !(seg > 0.0) {
            return x0;
        }
        // fraction of the segment's mass to cover, then solve
        // p0 t + (p1 − p0) t²/2 = f (p0 + p1)/2 for t ∈ [0, 1]
        let f = ((u - self.cdf[i - 1]) / seg).clamp(0.0, 1.0);
        let target = f * 0.5 * (p0 + p1);
        let slope = p1 - p0;
        let t = if slope.abs() <= 1e-12 * (p0 + p1) {
            f
        } else {
            let disc = (p0 * p0 + 2.0 * slope * target).max(0.0);
            2.0 * target / (p0 + disc.sqrt())
        };
        x0 + h * t.clamp(0.0, 1.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random::<f64>())
    }
}

/// Draws one outcome from the outcome density of `state`.
pub fn sample_outcome<R: Rng + ?Sized>(state: &FockState, model: &MeasurementModel, rng: &mut R) -> Result<f64> {
    Ok(OutcomeSampler::new(state, model)?.sample(rng))
}

/// Draws a photon number from `|⟨n|ψ⟩|²`.
pub fn sample_photon_number<R: Rng + ?Sized>(state_out: &FockState, rng: &mut R) -> Result<usize> {
    let total = state_out.norm_sqr();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::InvalidParameter("state has no norm".into()));
    }
    Ok(pick_level(state_out.amplitudes(), total, rng.random::<f64>()))
}

fn pick_level(amplitudes: &DVector<Complex64>, total: f64, u: f64) -> usize {
    let target = u * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (n, c) in amplitudes.iter().enumerate() {
        let p = c.norm_sqr();
        if p > 0.0 {
            acc += p;
            last = n;
            if target < acc {
                return n;
            }
        }
    }
    last
}

/// Serial or rayon-parallel execution of the shot chunks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Execution {
    Serial,
    Parallel,
}

/// Runs `shots` independent measurements followed by photon counting.
pub fn run_experiment(state: &FockState, model: &MeasurementModel, shots: u64, seed: u64) -> Result<Vec<OutcomeRecord>> {
    run_experiment_with(state, model, shots, seed, Execution::Parallel)
}

pub fn run_experiment_with(
    state: &FockState,
    model: &MeasurementModel,
    shots: u64,
    seed: u64,
    execution: Execution,
) -> Result<Vec<OutcomeRecord>> {
    if shots == 0 {
        return Err(Error::InvalidParameter("shots must be at least 1".into()));
    }
    state.check_same_dim(model.dim())?;
    let state = state.normalized()?;
    let sampler = OutcomeSampler::new(&state, model)?;
    let chunks = shots.div_ceil(CHUNK_SHOTS);
    let run_chunk = |stream: u64| -> Result<Vec<OutcomeRecord>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let first = stream * CHUNK_SHOTS;
        let last = (first + CHUNK_SHOTS).min(shots);
        (first..last)
            .map(|shot_index| {
                let x_m = sampler.sample(&mut rng);
                let out = model.apply(&state, x_m)?;
                let total = out.norm_squared();
                if !(total > crate::measurement::UNDERFLOW_DENSITY) {
                    return Err(Error::DegenerateConditioning { density: total });
                }
                let photon_n = pick_level(&out, total, rng.random::<f64>());
                Ok(OutcomeRecord {
                    x_m,
                    photon_n,
                    shot_index,
                    rng_stream_id: stream,
                })
            })
            .collect()
    };
    let parts: Vec<Vec<OutcomeRecord>> = match execution {
        Execution::Serial => (0..chunks).map(run_chunk).collect::<Result<_>>()?,
        Execution::Parallel => (0..chunks).into_par_iter().map(run_chunk).collect::<Result<_>>()?,
    };
    Ok(parts.into_iter().flatten().collect())
}

/// Photon number the input state most likely has; departures from it are
/// counted as jumps.
pub fn reference_photon_number(state: &FockState) -> usize {
    state
        .photon_probabilities()
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (n, &p)| if p > best.1 { (n, p) } else { best })
        .0
}

/// Per-photon-number integrals of the joint density on a grid.
#[derive(Debug, Clone, PartialEq)]
struct PhotonMoments {
    // ∫ P_n dx_m and ∫ P_n x_m² dx_m for every n
    mass: Vec<f64>,
    second: Vec<f64>,
}

fn photon_moments(state: &FockState, model: &MeasurementModel, grid: &QuadratureGrid) -> Result<PhotonMoments> {
    state.check_same_dim(model.dim())?;
    model.check_density_grid(state, grid)?;
    let rows = grid
        .nodes()
        .par_iter()
        .map(|&x| model.joint_photon_densities(state, x))
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let dim = model.dim();
    let mut mass = vec![0.0; dim];
    let mut second = vec![0.0; dim];
    for ((row, &x), &w) in rows.iter().zip(grid.nodes()).zip(grid.weights()) {
        for n in 0..dim {
            mass[n] += w * row[n];
            second[n] += w * row[n] * x * x;
        }
    }
    Ok(PhotonMoments { mass, second })
}

/// Probability that photon counting after the measurement finds a number
/// other than [`reference_photon_number`] of the input.
pub fn jump_probability(state: &FockState, model: &MeasurementModel, grid: &QuadratureGrid) -> Result<f64> {
    let reference = reference_photon_number(state);
    let m = photon_moments(state, model, grid)?;
    Ok(m.mass
        .iter()
        .enumerate()
        .filter(|&(n, _)| n != reference)
        .map(|(_, v)| v)
        .sum())
}

/// `Σ_n n ∫ P_n(x_m) (x_m² − δx²) dx_m`
pub fn measured_correlation(state: &FockState, model: &MeasurementModel, grid: &QuadratureGrid) -> Result<f64> {
    let m = photon_moments(state, model, grid)?;
    let dx2 = model.delta_x().powi(2);
    Ok((0..m.mass.len())
        .map(|n| n as f64 * (m.second[n] - dx2 * m.mass[n]))
        .sum())
}

/// Covariance of the detected photon number and `x_m²`.
pub fn outcome_photon_covariance(state: &FockState, model: &MeasurementModel, grid: &QuadratureGrid) -> Result<f64> {
    let m = photon_moments(state, model, grid)?;
    Ok(covariance_from(&m))
}

fn covariance_from(m: &PhotonMoments) -> f64 {
    let nx2: f64 = (0..m.mass.len()).map(|n| n as f64 * m.second[n]).sum();
    let n_mean: f64 = (0..m.mass.len()).map(|n| n as f64 * m.mass[n]).sum();
    let x2: f64 = m.second.iter().sum();
    nx2 - n_mean * x2
}

/// The individual expectation values entering the operator correlation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorCorrelation {
    /// `⟨x̂² n̂⟩`
    pub x2_n: f64,
    /// `⟨x̂ n̂ x̂⟩`
    pub x_n_x: f64,
    /// `⟨n̂ x̂²⟩`
    pub n_x2: f64,
    pub x2: f64,
    pub n: f64,
    /// `¼⟨x̂²n̂ + 2x̂n̂x̂ + n̂x̂²⟩ − ⟨x̂²⟩⟨n̂⟩`
    pub value: f64,
}

/// Symmetrized correlation of `x̂²` and `n̂` evaluated with matrices of size
/// `dim`, which must exceed the state's support by at least 3.
pub fn operator_correlation(state: &FockState, dim: usize) -> Result<OperatorCorrelation> {
    let top = state.support_top(0.0);
    let required = (top + 3).max(4);
    if dim < required {
        return Err(Error::InvalidDimension { dim, min: required });
    }
    let mut amps = DVector::zeros(dim);
    for (n, c) in state.amplitudes().iter().enumerate().take(top + 1) {
        amps[n] = *c;
    }
    let psi = FockState::from_amplitudes(amps)?.normalized()?;
    let x = quadrature_x(dim)?;
    let n = number_operator(dim)?;
    let x2 = x.mul(&x)?;
    let ev = |op: &crate::fock::FockOperator| psi.expectation(op).map(|c| c.re);
    let x2_n = ev(&x2.mul(&n)?)?;
    let x_n_x = ev(&x.mul(&n)?.mul(&x)?)?;
    let n_x2 = ev(&n.mul(&x2)?)?;
    let (x2v, nv) = (ev(&x2)?, ev(&n)?);
    Ok(OperatorCorrelation {
        x2_n,
        x_n_x,
        n_x2,
        x2: x2v,
        n: nv,
        value: 0.25 * (x2_n + 2.0 * x_n_x + n_x2) - x2v * nv,
    })
}

/// Sample mean with its shot-noise standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub standard_error: f64,
}

impl Estimate {
    pub fn from_samples<I: Iterator<Item = f64> + Clone>(samples: I) -> Self {
        let (count, sum) = samples.clone().fold((0usize, 0.0), |(c, s), v| (c + 1, s + v));
        let mean = sum / count as f64;
        let var = if count > 1 {
            samples.map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64
        } else {
            0.0
        };
        Self {
            value: mean,
            standard_error: (var / count as f64).sqrt(),
        }
    }

    /// Distance from `target` in units of the standard error.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.value - target).abs() / self.standard_error
    }
}

/// Deterministic quantities a Monte Carlo run is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactValues {
    pub delta_x: f64,
    pub reference_n: usize,
    pub jump_probability: f64,
    /// `Σ n ∫ P_n (x_m² − δx²)`
    pub exact_c_integral: f64,
    /// Covariance of `n` and `x_m²`.
    pub exact_covariance: f64,
    pub operator_c: f64,
}

impl ExactValues {
    pub fn compute(state: &FockState, model: &MeasurementModel, grid: &QuadratureGrid) -> Result<Self> {
        let reference_n = reference_photon_number(state);
        let m = photon_moments(state, model, grid)?;
        let dx2 = model.delta_x().powi(2);
        let jump = m
            .mass
            .iter()
            .enumerate()
            .filter(|&(n, _)| n != reference_n)
            .map(|(_, v)| v)
            .sum();
        let c = (0..m.mass.len())
            .map(|n| n as f64 * (m.second[n] - dx2 * m.mass[n]))
            .sum();
        Ok(Self {
            delta_x: model.delta_x(),
            reference_n,
            jump_probability: jump,
            exact_c_integral: c,
            exact_covariance: covariance_from(&m),
            operator_c: operator_correlation(state, model.dim().max(state.support_top(0.0) + 3).max(4))?.value,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub shots: u64,
    pub jump_fraction: Estimate,
    /// Mean of `n (x_m² − δx²)`.
    pub measured_c: Estimate,
    /// Sample covariance of `n` and `x_m²`.
    pub covariance_c: Estimate,
    pub exact: ExactValues,
}

pub fn summarize(records: &[OutcomeRecord], exact: &ExactValues) -> Result<CorrelationReport> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let dx2 = exact.delta_x * exact.delta_x;
    let it = records.iter();
    let jump_fraction = Estimate::from_samples(
        it.clone()
            .map(|r| if r.photon_n != exact.reference_n { 1.0 } else { 0.0 }),
    );
    let measured_c = Estimate::from_samples(it.clone().map(|r| r.photon_n as f64 * (r.x_m * r.x_m - dx2)));
    let n_mean = Estimate::from_samples(it.clone().map(|r| r.photon_n as f64)).value;
    let x2_mean = Estimate::from_samples(it.clone().map(|r| r.x_m * r.x_m)).value;
    let centred = Estimate::from_samples(
        it.map(|r| (r.photon_n as f64 - n_mean) * (r.x_m * r.x_m - x2_mean)),
    );
    let count = records.len() as f64;
    let covariance_c = Estimate {
        value: centred.value * count / (count - 1.0).max(1.0),
        standard_error: centred.standard_error,
    };
    Ok(CorrelationReport {
        shots: records.len() as u64,
        jump_fraction,
        measured_c,
        covariance_c,
        exact: *exact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn vac(dim: usize) -> FockState {
        FockState::vacuum(dim).unwrap()
    }

    fn wide_grid(model: &MeasurementModel, state: &FockState) -> QuadratureGrid {
        make_grid(GridKind::Uniform, model.density_span(state), 4001).unwrap()
    }

    // mass of the n = 1 joint density for vacuum input, in closed form
    fn one_photon_mass(dx: f64) -> f64 {
        let eps = 1.0 / (8.0 * dx * dx);
        (1.0 + eps).powf(-1.5) / (16.0 * dx * dx)
    }

    // Σ-free n = 1 contribution to the correlation integral for vacuum input
    fn one_photon_correlation(dx: f64) -> f64 {
        let eps = 1.0 / (8.0 * dx * dx);
        0.125 * (1.0 + eps).powf(-1.5) * (1.0 + 3.0 / (16.0 * dx * dx))
    }

    #[test]
    fn sampled_vacuum_outcomes_have_convolved_variance() {
        let model = MeasurementModel::new(1.0, 16).unwrap();
        let sampler = OutcomeSampler::new(&vac(16), &model).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xs: Vec<f64> = (0..100_000).map(|_| sampler.sample(&mut rng)).collect();
        let mean = Estimate::from_samples(xs.iter().copied());
        assert!(mean.z_score(0.0) < 3.0);
        let second = Estimate::from_samples(xs.iter().map(|x| x * x));
        assert!(second.z_score(1.25) < 3.0, "{second:?}");
    }

    #[test]
    fn quantile_inverts_the_cdf() {
        let model = MeasurementModel::new(0.7, 12).unwrap();
        let sampler = OutcomeSampler::new(&vac(12), &model).unwrap();
        assert_abs_diff_eq!(sampler.quantile(0.5), 0.0, epsilon = 1e-9);
        // vacuum outcome density is Gaussian with variance δx² + 1/4
        let sigma = (0.49f64 + 0.25).sqrt();
        let q84 = sampler.quantile(0.841_344_746_068_542_9);
        assert_abs_diff_eq!(q84, sigma, epsilon = 1e-5);
        let lo = sampler.quantile(0.0);
        let hi = sampler.quantile(1.0 - 1e-17);
        assert!(lo >= sampler.nodes()[0] && hi <= *sampler.nodes().last().unwrap());
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let model = MeasurementModel::new(1.5, 16).unwrap();
        let a = run_experiment(&vac(16), &model, 20_000, 99).unwrap();
        let b = run_experiment(&vac(16), &model, 20_000, 99).unwrap();
        let c = run_experiment_with(&vac(16), &model, 20_000, 99, Execution::Serial).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        let d = run_experiment(&vac(16), &model, 20_000, 100).unwrap();
        assert_ne!(a, d);
        let mut one = ChaCha8Rng::seed_from_u64(3);
        let mut two = ChaCha8Rng::seed_from_u64(3);
        let s = sample_outcome(&vac(16), &model, &mut one).unwrap();
        assert_eq!(s, sample_outcome(&vac(16), &model, &mut two).unwrap());
    }

    #[test]
    fn records_carry_streams_and_indices() {
        let model = MeasurementModel::new(2.0, 12).unwrap();
        let recs = run_experiment(&vac(12), &model, CHUNK_SHOTS + 10, 1).unwrap();
        assert_eq!(recs.len() as u64, CHUNK_SHOTS + 10);
        for (i, r) in recs.iter().enumerate() {
            assert_eq!(r.shot_index, i as u64);
            assert_eq!(r.rng_stream_id, i as u64 / CHUNK_SHOTS);
            assert!(r.photon_n < 12);
        }
    }

    #[test]
    fn experiment_preconditions() {
        let model = MeasurementModel::new(2.0, 12).unwrap();
        assert!(run_experiment(&vac(12), &model, 0, 1).is_err());
        assert!(run_experiment(&vac(10), &model, 5, 1).is_err());
    }

    #[test]
    fn photon_sampling_respects_zero_amplitudes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            assert_eq!(sample_photon_number(&vac(8), &mut rng).unwrap(), 0);
        }
        let model = MeasurementModel::new(1.0, 16).unwrap();
        let out = model.conditional_state(&vac(16), 0.0).unwrap();
        assert_eq!(out.amplitude(1).norm(), 0.0);
        for _ in 0..20_000 {
            assert_ne!(sample_photon_number(&out, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn sampled_jump_fraction_matches_exact() {
        let model = MeasurementModel::new(2.0, 24).unwrap();
        let state = vac(24);
        let exact = ExactValues::compute(&state, &model, &wide_grid(&model, &state)).unwrap();
        let recs = run_experiment(&state, &model, 200_000, 11).unwrap();
        let report = summarize(&recs, &exact).unwrap();
        assert!(report.jump_fraction.z_score(exact.jump_probability) < 3.0);
        assert!(report.measured_c.z_score(exact.exact_c_integral) < 3.0);
        assert!(report.covariance_c.z_score(exact.exact_covariance) < 3.0);
        // jump shots sit on the two one-photon peaks: E[x_m² | n = 1] = 3δx² + 3/8
        let ones = Estimate::from_samples(
            recs.iter().filter(|r| r.photon_n == 1).map(|r| r.x_m * r.x_m),
        );
        assert!(ones.z_score(3.0 * 4.0 + 0.375) < 3.0, "{ones:?}");
    }

    #[test]
    fn jump_probability_tracks_one_photon_mass() {
        for dx in [4.0, 10.0] {
            let model = MeasurementModel::new(dx, 32).unwrap();
            let state = vac(32);
            let p = jump_probability(&state, &model, &wide_grid(&model, &state)).unwrap();
            let p1 = one_photon_mass(dx);
            assert!(p >= p1 * (1.0 - 1e-10));
            assert!((p - p1) / p1 < 1.0 / (dx * dx));
        }
    }

    #[test]
    fn jump_probability_approaches_asymptote_from_below() {
        let mut prev = 0.0;
        for dx in [2.0, 5.0, 10.0, 20.0] {
            let model = MeasurementModel::new(dx, 32).unwrap();
            let state = vac(32);
            let ratio = jump_probability(&state, &model, &wide_grid(&model, &state)).unwrap() * 16.0 * dx * dx;
            assert!(ratio > prev && ratio < 1.0);
            prev = ratio;
        }
    }

    #[test]
    fn weak_measurement_keeps_one_photon() {
        let model = MeasurementModel::new(100.0, 16).unwrap();
        let one = FockState::number(1, 16).unwrap();
        assert_eq!(reference_photon_number(&one), 1);
        let p = jump_probability(&one, &model, &wide_grid(&model, &one)).unwrap();
        assert!(p < 1e-3);
    }

    #[test]
    fn narrow_grid_is_rejected() {
        let model = MeasurementModel::new(4.0, 16).unwrap();
        let grid = make_grid(GridKind::Uniform, 5.0, 101).unwrap();
        assert!(matches!(
            jump_probability(&vac(16), &model, &grid),
            Err(Error::GridTooNarrow { .. })
        ));
        assert!(measured_correlation(&vac(16), &model, &grid).is_err());
    }

    #[test]
    fn correlation_integral_is_close_to_one_eighth() {
        let mut prev = f64::INFINITY;
        for dx in [2.0, 5.0, 10.0, 20.0, 40.0] {
            let model = MeasurementModel::new(dx, 32).unwrap();
            let state = vac(32);
            let c = measured_correlation(&state, &model, &wide_grid(&model, &state)).unwrap();
            let tol = if dx < 5.0 { 0.1 } else { 0.01 };
            assert!((c - 0.125).abs() < tol * 0.125, "δx={dx}: {c}");
            assert!((c - one_photon_correlation(dx)).abs() < 0.05 / (dx * dx));
            let dev = (c - 0.125).abs();
            if dx >= 10.0 {
                assert!(dev < prev);
            }
            prev = dev;
        }
    }

    #[test]
    fn asymptotic_density_gives_one_eighth() {
        let dx = 3.0;
        let grid = make_grid(GridKind::Uniform, 60.0, 12001).unwrap();
        let c = grid.integrate(|x| crate::measurement::asymptotic_p1(dx, x).unwrap() * (x * x - dx * dx));
        assert_abs_diff_eq!(c, 0.125, epsilon = 1e-10);
    }

    #[test]
    fn literal_and_covariance_estimators_differ_by_quarter_mean_photon() {
        let model = MeasurementModel::new(5.0, 32).unwrap();
        let state = vac(32);
        let grid = wide_grid(&model, &state);
        let exact = ExactValues::compute(&state, &model, &grid).unwrap();
        let n_mean = exact.jump_probability + {
            let m = photon_moments(&state, &model, &grid).unwrap();
            (2..32).map(|n| (n as f64 - 1.0) * m.mass[n]).sum::<f64>()
        };
        assert_abs_diff_eq!(
            exact.exact_c_integral - exact.exact_covariance,
            n_mean / 4.0,
            // the ±6σ grid drops ~2e−6 of ∫x² P
            epsilon = 1e-8
        );
        assert_eq!(
            exact.exact_covariance,
            outcome_photon_covariance(&state, &model, &grid).unwrap()
        );
    }

    #[test]
    fn vacuum_operator_correlation() {
        for dim in [4, 5, 8, 16, 40] {
            let c = operator_correlation(&vac(dim.min(8)), dim).unwrap();
            assert_abs_diff_eq!(c.value, 0.125, epsilon = 1e-12);
            assert_eq!(c.x2_n, 0.0);
            assert_eq!(c.n_x2, 0.0);
            assert_abs_diff_eq!(c.x_n_x, 0.25, epsilon = 1e-15);
        }
        assert!(matches!(
            operator_correlation(&vac(3), 3),
            Err(Error::InvalidDimension { .. })
        ));
    }

    #[test]
    fn number_state_operator_correlation() {
        // ⟨x̂²n̂⟩ = n(2n+1)/4, ⟨x̂n̂x̂⟩ = (2n²+n+1)/4, so the correlation is 1/8 for every |n⟩
        for n in 1..6 {
            let c = operator_correlation(&FockState::number(n, 10).unwrap(), n + 3).unwrap();
            let nf = n as f64;
            assert_abs_diff_eq!(c.x2_n, nf * (2.0 * nf + 1.0) / 4.0, epsilon = 1e-12);
            assert_abs_diff_eq!(c.x_n_x, (2.0 * nf * nf + nf + 1.0) / 4.0, epsilon = 1e-12);
            assert_abs_diff_eq!(c.value, 0.125, epsilon = 1e-12);
        }
        assert!(operator_correlation(&FockState::number(4, 10).unwrap(), 6).is_err());
    }

    #[test]
    fn summary_of_nothing_is_an_error() {
        let exact = ExactValues {
            delta_x: 1.0,
            reference_n: 0,
            jump_probability: 0.0,
            exact_c_integral: 0.0,
            exact_covariance: 0.0,
            operator_c: 0.125,
        };
        assert_eq!(summarize(&[], &exact), Err(Error::EmptyRecords));
    }

    #[test]
    fn report_round_trips_through_json() {
        let model = MeasurementModel::new(3.0, 16).unwrap();
        let state = vac(16);
        let exact = ExactValues::compute(&state, &model, &wide_grid(&model, &state)).unwrap();
        let recs = run_experiment(&state, &model, 5000, 4).unwrap();
        let report = summarize(&recs, &exact).unwrap();
        let text = serde_json::to_string(&report).unwrap();
        let back: CorrelationReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, report);
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
        assert!(report.jump_fraction.standard_error >= 0.0);
        assert!(report.measured_c.standard_error >= 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn quantile_is_monotone(u in 0.0f64..1.0, v in 0.0f64..1.0, dx in 0.2f64..5.0) {
            let model = MeasurementModel::new(dx, 8).unwrap();
            let sampler = OutcomeSampler::new(&vac(8), &model).unwrap();
            let (lo, hi) = if u <= v { (u, v) } else { (v, u) };
            prop_assert!(sampler.quantile(lo) <= sampler.quantile(hi));
        }

        #[test]
        fn serial_and_parallel_agree(seed in any::<u64>(), shots in 1u64..20_000) {
            let model = MeasurementModel::new(1.0, 8).unwrap();
            let a = run_experiment_with(&vac(8), &model, shots, seed, Execution::Serial).unwrap();
            let b = run_experiment_with(&vac(8), &model, shots, seed, Execution::Parallel).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
