//! The Gaussian measurement operator
//! `P(x_m) = (2πδx²)^{−1/4} exp(−(x_m − x̂)²/(4δx²))`, its outcome densities
//! and the conditional output states it produces.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::wavefunction_table;
use crate::fock::{
    check_dim, make_grid, trusted_dim, FockOperator, FockState, GaussHermiteRule, GridKind,
    QuadratureGrid,
};

/// Densities below this are refused as conditioning events.
pub const UNDERFLOW_DENSITY: f64 = 1e-300;

/// Default number of per-photon columns tabulated from vacuum inputs.
pub const DEFAULT_N_MAX: usize = 4;

/// How matrix elements `⟨n|f(x̂)|m⟩` of a Gaussian kernel are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalStrategy {
    /// Completes the square against `e^{−2x²}` and integrates the remaining
    /// polynomial exactly with a Gauss–Hermite rule.
    ClosedForm,
    /// Dense trapezoid over position space.
    Quadrature,
}

#[derive(Debug, Clone)]
struct QuadratureTable {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    // dim × nodes
    psi: DMatrix<f64>,
}

/// Measurement of resolution `δx` on a `dim`-level signal mode.
#[derive(Debug, Clone)]
pub struct MeasurementModel {
    delta_x: f64,
    dim: usize,
    strategy: EvalStrategy,
    rule: GaussHermiteRule,
    table: Option<QuadratureTable>,
}

/// Gaussian kernel `pref · exp(−β (x − x_m)²)` written as
/// `pref · Σ_k c_k ψ(x_k) ψ(x_k)ᵀ`.
struct KernelFactors {
    coeffs: Vec<f64>,
    psi: DMatrix<f64>,
}

impl MeasurementModel {
    pub fn new(delta_x: f64, dim: usize) -> Result<Self> {
        Self::with_strategy(delta_x, dim, EvalStrategy::ClosedForm)
    }

    pub fn with_strategy(delta_x: f64, dim: usize, strategy: EvalStrategy) -> Result<Self> {
        check_dim(dim)?;
        if !(delta_x > 0.0) || !delta_x.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "measurement resolution must be positive and finite, got {delta_x}"
            )));
        }
        // degree of ψ_n ψ_m / e^{−2x²} is at most 2·dim − 2
        let rule = GaussHermiteRule::new(dim + 4)?;
        let table = match strategy {
            EvalStrategy::ClosedForm => None,
            EvalStrategy::Quadrature => {
                let span = (dim as f64).sqrt() + 7.0;
                let count = (2.0 * span / 0.01).ceil() as usize + 1;
                let grid = make_grid(GridKind::Uniform, span, count)?;
                let psi = wavefunction_table(dim, grid.nodes());
                Some(QuadratureTable {
                    nodes: grid.nodes().to_vec(),
                    weights: grid.weights().to_vec(),
                    psi,
                })
            }
        };
        Ok(Self {
            delta_x,
            dim,
            strategy,
            rule,
            table,
        })
    }

    pub fn delta_x(&self) -> f64 {
        self.delta_x
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn strategy(&self) -> EvalStrategy {
        self.strategy
    }

    /// Variance of the vacuum outcome distribution, `δx² + 1/4`.
    pub fn vacuum_outcome_variance(&self) -> f64 {
        self.delta_x * self.delta_x + 0.25
    }

    fn kernel_factors(&self, beta: f64, x_m: f64) -> KernelFactors {
        match &self.table {
            None => {
                let alpha = 2.0 + beta;
                let mu = beta * x_m / alpha;
                let inv_sqrt_alpha = alpha.sqrt().recip();
                let nodes: Vec<f64> = self
                    .rule
                    .nodes()
                    .iter()
                    .map(|t| mu + t * inv_sqrt_alpha)
                    .collect();
                let coeffs = nodes
                    .iter()
                    .zip(self.rule.scaled_weights())
                    .map(|(&x, &w)| w * inv_sqrt_alpha * (-beta * (x - x_m).powi(2)).exp())
                    .collect();
                KernelFactors {
                    coeffs,
                    psi: wavefunction_table(self.dim, &nodes),
                }
            }
            Some(t) => KernelFactors {
                coeffs: t
                    .nodes
                    .iter()
                    .zip(&t.weights)
                    .map(|(&x, &w)| w * (-beta * (x - x_m).powi(2)).exp())
                    .collect(),
                psi: t.psi.clone(),
            },
        }
    }

    fn kernel_matrix(&self, beta: f64, prefactor: f64, x_m: f64) -> DMatrix<f64> {
        let KernelFactors { coeffs, psi } = self.kernel_factors(beta, x_m);
        let mut out = DMatrix::zeros(self.dim, self.dim);
        for n in 0..self.dim {
            for m in 0..=n {
                let v = prefactor * paired_sum(coeffs.len(), |k| coeffs[k] * psi[(n, k)] * psi[(m, k)]);
                out[(n, m)] = v;
                out[(m, n)] = v;
            }
        }
        out
    }

    fn operator_beta(&self) -> f64 {
        1.0 / (4.0 * self.delta_x * self.delta_x)
    }

    fn operator_prefactor(&self) -> f64 {
        (2.0 * PI * self.delta_x * self.delta_x).powf(-0.25)
    }

    /// Real symmetric matrix of `P(x_m)`.
    pub fn measurement_matrix(&self, x_m: f64) -> Result<DMatrix<f64>> {
        check_finite(x_m)?;
        Ok(self.kernel_matrix(self.operator_beta(), self.operator_prefactor(), x_m))
    }

    pub fn measurement_operator(&self, x_m: f64) -> Result<FockOperator> {
        FockOperator::from_real(&self.measurement_matrix(x_m)?)
    }

    /// The untruncated Gaussian `P(x_m)² = (2πδx²)^{−1/2} exp(−(x_m − x̂)²/(2δx²))`
    /// projected onto the truncated space.
    pub fn squared_operator(&self, x_m: f64) -> Result<FockOperator> {
        check_finite(x_m)?;
        let beta = 2.0 * self.operator_beta();
        let pref = self.operator_prefactor().powi(2);
        FockOperator::from_real(&self.kernel_matrix(beta, pref, x_m))
    }

    /// `P(x_m)|ψ⟩` without forming the matrix.
    pub fn apply(&self, state: &FockState, x_m: f64) -> Result<DVector<Complex64>> {
        state.check_same_dim(self.dim)?;
        check_finite(x_m)?;
        let KernelFactors { coeffs, psi } = self.kernel_factors(self.operator_beta(), x_m);
        let amps = state.amplitudes();
        let mut projections: DVector<Complex64> = DVector::zeros(coeffs.len());
        for k in 0..coeffs.len() {
            let mut acc = Complex64::new(0.0, 0.0);
            for n in 0..self.dim {
                acc += amps[n] * psi[(n, k)];
            }
            projections[k] = acc * coeffs[k];
        }
        let pref = self.operator_prefactor();
        let out = DVector::from_iterator(
            self.dim,
            (0..self.dim).map(|n| pref * paired_sum_c(coeffs.len(), |k| projections[k] * psi[(n, k)])),
        );
        Ok(out)
    }

    /// `P(x_m) = ⟨ψ|P̂²|ψ⟩`.
    pub fn outcome_density(&self, state: &FockState, x_m: f64) -> Result<f64> {
        Ok(self.apply(state, x_m)?.norm_squared())
    }

    /// Normalized `P̂(x_m)|ψ⟩`.
    pub fn conditional_state(&self, state: &FockState, x_m: f64) -> Result<FockState> {
        let out = self.apply(state, x_m)?;
        let density = out.norm_squared();
        if !(density > UNDERFLOW_DENSITY) {
            return Err(Error::DegenerateConditioning { density });
        }
        FockState::from_amplitudes(out.unscale(density.sqrt()))
    }

    /// `|⟨n|P̂(x_m)|ψ⟩|²`.
    pub fn joint_photon_density(&self, state: &FockState, x_m: f64, n: usize) -> Result<f64> {
        if n >= self.dim {
            return Err(Error::OutOfRange {
                what: "photon number",
                value: n,
                max: self.dim - 1,
            });
        }
        Ok(self.apply(state, x_m)?[n].norm_sqr())
    }

    /// `|⟨n|P̂(x_m)|ψ⟩|²` for every `n < dim`.
    pub fn joint_photon_densities(&self, state: &FockState, x_m: f64) -> Result<Vec<f64>> {
        Ok(self.apply(state, x_m)?.iter().map(|c| c.norm_sqr()).collect())
    }

    /// Span a grid needs for [`MeasurementModel::completeness_defect`].
    pub fn completeness_span(&self) -> f64 {
        6.0 * (self.delta_x * self.delta_x + self.dim as f64).sqrt()
    }

    /// Max-entry norm of `Σ_k w_k P̂²(x_k) − 1` on the trusted subspace.
    ///
    /// `P̂²` is the Gaussian of width `δx/√2` evaluated in closed form, so the
    /// defect measures the outcome quadrature and not ladder truncation.
    pub fn completeness_defect(&self, grid: &QuadratureGrid) -> Result<f64> {
        let beta = 2.0 * self.operator_beta();
        let pref = self.operator_prefactor().powi(2);
        self.summed_defect(grid, |x| self.kernel_matrix(beta, pref, x))
    }

    /// Same sum with `P̂²` formed as the product of truncated `P̂` matrices.
    ///
    /// Unlike [`MeasurementModel::completeness_defect`] this picks up the
    /// truncation edge, and shrinks as `dim` grows.
    pub fn truncated_product_defect(&self, grid: &QuadratureGrid) -> Result<f64> {
        self.summed_defect(grid, |x| {
            let p = self.kernel_matrix(self.operator_beta(), self.operator_prefactor(), x);
            &p * &p
        })
    }

    fn summed_defect<F>(&self, grid: &QuadratureGrid, squared: F) -> Result<f64>
    where
        F: Fn(f64) -> DMatrix<f64> + Sync,
    {
        let required = self.completeness_span();
        if grid.span() < required {
            return Err(Error::GridTooNarrow {
                span: grid.span(),
                required,
            });
        }
        let keep = trusted_dim(self.dim);
        let sum = grid
            .nodes()
            .par_iter()
            .zip(grid.weights().par_iter())
            .map(|(&x, &w)| squared(x).view((0, 0), (keep, keep)) * w)
            .reduce(|| DMatrix::zeros(keep, keep), |a, b| a + b);
        let defect = (sum - DMatrix::<f64>::identity(keep, keep))
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(defect)
    }

    /// Span needed to integrate outcome densities of `state`.
    pub fn density_span(&self, state: &FockState) -> f64 {
        6.0 * (self.delta_x * self.delta_x + state.quadrature_x_second_moment()).sqrt()
    }

    pub(crate) fn check_density_grid(&self, state: &FockState, grid: &QuadratureGrid) -> Result<()> {
        let required = self.density_span(state);
        if grid.span() < required {
            return Err(Error::GridTooNarrow {
                span: grid.span(),
                required,
            });
        }
        Ok(())
    }
}

// Nodes are symmetric about their centre; adding mirror pairs first makes odd
// integrands at x_m = 0 vanish exactly.
fn paired_sum<F: Fn(usize) -> f64>(len: usize, term: F) -> f64 {
    let mut acc = 0.0;
    for k in 0..len / 2 {
        acc += term(k) + term(len - 1 - k);
    }
    if len % 2 == 1 {
        acc += term(len / 2);
    }
    acc
}

fn paired_sum_c<F: Fn(usize) -> Complex64>(len: usize, term: F) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for k in 0..len / 2 {
        acc += term(k) + term(len - 1 - k);
    }
    if len % 2 == 1 {
        acc += term(len / 2);
    }
    acc
}

fn check_finite(x_m: f64) -> Result<()> {
    if !x_m.is_finite() {
        return Err(Error::NonFinite("measurement outcome"));
    }
    Ok(())
}

/// High-resolution-limit one-photon density
/// `(2πδx²)^{−1/2} · x_m²/(4δx²)² · exp(−x_m²/(2δx²))`.
pub fn asymptotic_p1(delta_x: f64, x_m: f64) -> Result<f64> {
    if !(delta_x > 0.0) || !delta_x.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "measurement resolution must be positive, got {delta_x}"
        )));
    }
    check_finite(x_m)?;
    let d2 = delta_x * delta_x;
    Ok((2.0 * PI * d2).powf(-0.5) * x_m * x_m / (4.0 * d2).powi(2) * (-x_m * x_m / (2.0 * d2)).exp())
}

/// Outcome density and per-photon joint densities tabulated over a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDensityTable {
    pub grid: QuadratureGrid,
    pub density: Vec<f64>,
    /// `per_photon[n][i] = P_n(x_i)` for `n ≤ n_max`.
    pub per_photon: Option<Vec<Vec<f64>>>,
}

impl OutcomeDensityTable {
    pub fn tabulate(
        state: &FockState,
        model: &MeasurementModel,
        grid: QuadratureGrid,
        n_max: Option<usize>,
    ) -> Result<Self> {
        if let Some(n) = n_max {
            if n >= model.dim() {
                return Err(Error::OutOfRange {
                    what: "n_max",
                    value: n,
                    max: model.dim() - 1,
                });
            }
        }
        let rows: Vec<Vec<f64>> = grid
            .nodes()
            .par_iter()
            .map(|&x| model.joint_photon_densities(state, x))
            .collect::<Result<_>>()?;
        let density = rows.iter().map(|r| r.iter().sum()).collect();
        let per_photon = n_max.map(|n_max| {
            (0..=n_max)
                .map(|n| rows.iter().map(|r| r[n]).collect())
                .collect()
        });
        Ok(Self {
            grid,
            density,
            per_photon,
        })
    }

    pub fn total_probability(&self) -> f64 {
        self.grid.integrate_values(&self.density)
    }
}
