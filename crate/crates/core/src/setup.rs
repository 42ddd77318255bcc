//! The two-mode optical circuit: beam splitter, a pair of phase-sensitive
//! amplifiers, a recombining beam splitter and homodyne detection of the
//! meter output.
//!
//! Mode indices: mode `Upper` carries the signal input and the meter output,
//! mode `Lower` carries the meter input and the signal output. A splitter of
//! angle `θ` maps `a → a cos θ + b sin θ`, `b → b cos θ − a sin θ` with
//! `cos²θ = 1 − R`. The upper arm is amplified in `y` (`x → x/a`), the lower
//! arm in `x` (`x → a x`). The recombining splitter sits at `θ + π`, which is
//! the first splitter followed by a π phase on both arms; with that choice the
//! circuit acts as `x_s → x_s`, `x_meter → g x_s − x_meter`, `g = (a² − 1)/a`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{
    annihilation, check_dim, fill_wavefunctions, make_grid, quadrature_x, quadrature_y, trusted_dim,
    FockOperator, FockState,
    GridKind, QuadratureGrid,
};
use crate::measurement::{MeasurementModel, UNDERFLOW_DENSITY};

/// Top-quarter occupation above which a truncation is considered overflowed.
pub const OVERFLOW_OCCUPATION: f64 = 1e-6;

/// Calibration residual above which the circuit is declared inconsistent.
pub const CALIBRATION_LIMIT: f64 = 1e-2;

/// Outcomes with an ideal density below this are skipped by the equivalence check.
pub const EQUIVALENCE_DENSITY_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetupParams {
    gain_a: f64,
    dim_signal: usize,
    dim_meter: usize,
    arm_swap: bool,
}

impl SetupParams {
    pub fn new(gain_a: f64, dim_signal: usize, dim_meter: usize) -> Result<Self> {
        if !(gain_a > 1.0) || !gain_a.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "OPA gain must exceed 1, got {gain_a}"
            )));
        }
        check_dim(dim_signal)?;
        check_dim(dim_meter)?;
        Ok(Self {
            gain_a,
            dim_signal,
            dim_meter,
            arm_swap: false,
        })
    }

    /// Exchanges which arm gets which amplifier. The swapped circuit measures
    /// `y` instead of `x` and is only useful for diagnosis.
    pub fn with_arm_swap(mut self, swap: bool) -> Self {
        self.arm_swap = swap;
        self
    }

    pub fn gain_a(&self) -> f64 {
        self.gain_a
    }

    pub fn dim_signal(&self) -> usize {
        self.dim_signal
    }

    pub fn dim_meter(&self) -> usize {
        self.dim_meter
    }

    pub fn arm_swap(&self) -> bool {
        self.arm_swap
    }

    /// `R = a²/(a² + 1)`
    pub fn reflectivity(&self) -> f64 {
        let a2 = self.gain_a * self.gain_a;
        a2 / (a2 + 1.0)
    }

    /// `δx = a / (2(a² − 1))`
    pub fn delta_x(&self) -> f64 {
        self.gain_a / (2.0 * (self.gain_a * self.gain_a - 1.0))
    }

    /// Outcome scale `x_m = c · q` implied by the circuit algebra, `a/(a² − 1)`.
    pub fn nominal_scale(&self) -> f64 {
        self.gain_a / (self.gain_a * self.gain_a - 1.0)
    }
}

/// Which of the two circuit modes an element acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Upper,
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SqueezeDirection {
    /// `x → a x`, `y → y/a`
    AmplifyX,
    /// `x → x/a`, `y → a y`
    AmplifyY,
}

/// Joint state of both modes; entry `(i, j)` is the amplitude of
/// `|i⟩_upper |j⟩_lower`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoModeState {
    amplitudes: DMatrix<Complex64>,
}

impl TwoModeState {
    pub fn product(upper: &FockState, lower: &FockState) -> Self {
        Self {
            amplitudes: upper.amplitudes() * lower.amplitudes().transpose(),
        }
    }

    pub fn from_matrix(amplitudes: DMatrix<Complex64>) -> Result<Self> {
        check_dim(amplitudes.nrows())?;
        check_dim(amplitudes.ncols())?;
        Ok(Self { amplitudes })
    }

    pub fn amplitudes(&self) -> &DMatrix<Complex64> {
        &self.amplitudes
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.amplitudes.nrows(), self.amplitudes.ncols())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm_sqr().sqrt();
        if !(n > 0.0) {
            return Err(Error::InvalidParameter("cannot normalize a zero state".into()));
        }
        Ok(Self {
            amplitudes: self.amplitudes.unscale(n),
        })
    }

    pub fn photon_probabilities(&self, mode: Mode) -> Vec<f64> {
        match mode {
            Mode::Upper => self
                .amplitudes
                .row_iter()
                .map(|r| r.iter().map(|c| c.norm_sqr()).sum())
                .collect(),
            Mode::Lower => self
                .amplitudes
                .column_iter()
                .map(|c| c.iter().map(|v| v.norm_sqr()).sum())
                .collect(),
        }
    }

    /// Occupation of the top quarter of levels of `mode`.
    pub fn top_quarter_occupation(&self, mode: Mode) -> f64 {
        let p = self.photon_probabilities(mode);
        p[trusted_dim(p.len())..].iter().sum()
    }

    /// `⟨x̂²⟩` of one mode, including the component pushed past the top level.
    pub fn quadrature_x_second_moment(&self, mode: Mode) -> f64 {
        let m = match mode {
            Mode::Upper => self.amplitudes.clone(),
            Mode::Lower => self.amplitudes.transpose(),
        };
        m.column_iter()
            .map(|col| {
                let d = col.len();
                (0..=d)
                    .map(|n| {
                        let mut v = Complex64::new(0.0, 0.0);
                        if n + 1 < d {
                            v += col[n + 1] * ((n + 1) as f64).sqrt();
                        }
                        if n >= 1 {
                            v += col[n - 1] * (n as f64).sqrt();
                        }
                        (v * 0.5).norm_sqr()
                    })
                    .sum::<f64>()
            })
            .sum()
    }

    /// Ideal homodyne projection of the upper mode onto the `x` eigenvector
    /// at `q`; returns the unnormalized lower-mode vector.
    pub fn project_upper_x(&self, q: f64) -> Vec<Complex64> {
        let mut psi = vec![0.0; self.amplitudes.nrows()];
        fill_wavefunctions(q, &mut psi);
        self.amplitudes
            .column_iter()
            .map(|col| col.iter().zip(&psi).map(|(c, p)| c * *p).sum())
            .collect()
    }
}

/// Unitary acting on a [`TwoModeState`].
pub trait TwoModeGate {
    fn dims(&self) -> (usize, usize);

    fn apply(&self, state: &TwoModeState) -> Result<TwoModeState>;

    /// Dense matrix in the basis `|i⟩|j⟩ ↦ i·dim_lower + j`. Only sensible for
    /// small dimensions.
    fn dense_matrix(&self) -> DMatrix<Complex64> {
        let (da, db) = self.dims();
        let n = da * db;
        let mut out = DMatrix::zeros(n, n);
        for col in 0..n {
            let mut basis = DMatrix::zeros(da, db);
            basis[(col / db, col % db)] = Complex64::new(1.0, 0.0);
            let image = self
                .apply(&TwoModeState { amplitudes: basis })
                .expect("dims match by construction");
            for i in 0..da {
                for j in 0..db {
                    out[(i * db + j, col)] = image.amplitudes[(i, j)];
                }
            }
        }
        out
    }

    fn check_dims(&self, state: &TwoModeState) -> Result<()> {
        let (da, db) = self.dims();
        let (sa, sb) = state.dims();
        if da != sa {
            return Err(Error::DimensionMismatch {
                expected: da,
                found: sa,
            });
        }
        if db != sb {
            return Err(Error::DimensionMismatch {
                expected: db,
                found: sb,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct SplitterBlock {
    // (upper, lower) occupation pairs sharing one total photon number
    members: Vec<(usize, usize)>,
    unitary: DMatrix<f64>,
}

/// `exp(θ (a†b − a b†))`, block diagonal in the total photon number.
#[derive(Debug, Clone)]
pub struct BeamSplitter {
    angle: f64,
    dims: (usize, usize),
    blocks: Vec<SplitterBlock>,
}

/// Beam splitter of reflectivity `R` (`cos²θ = 1 − R`, no phases).
pub fn beam_splitter(reflectivity: f64, dims: (usize, usize)) -> Result<BeamSplitter> {
    if !(0.0..=1.0).contains(&reflectivity) {
        return Err(Error::InvalidParameter(format!(
            "reflectivity must lie in [0, 1], got {reflectivity}"
        )));
    }
    BeamSplitter::from_angle((1.0 - reflectivity).sqrt().acos(), dims)
}

impl BeamSplitter {
    pub fn from_angle(angle: f64, dims: (usize, usize)) -> Result<Self> {
        if !angle.is_finite() {
            return Err(Error::NonFinite("beam splitter angle"));
        }
        check_dim(dims.0)?;
        check_dim(dims.1)?;
        let (da, db) = dims;
        let blocks = (0..da + db - 1)
            .map(|total| {
                let lo = total.saturating_sub(db - 1);
                let hi = total.min(da - 1);
                let members: Vec<(usize, usize)> = (lo..=hi).map(|i| (i, total - i)).collect();
                // exact block over all splittings of `total`, then cropped to
                // the pairs that fit both truncations
                let full = total + 1;
                let mut gen = DMatrix::<f64>::zeros(full, full);
                // a†b |i, j⟩ = √((i+1) j) |i+1, j−1⟩, minus its transpose
                for i in 0..total {
                    let v = (((i + 1) * (total - i)) as f64).sqrt();
                    gen[(i + 1, i)] = v;
                    gen[(i, i + 1)] = -v;
                }
                let exact = (gen * angle).exp();
                let unitary = exact.view((lo, lo), (members.len(), members.len())).into_owned();
                SplitterBlock { members, unitary }
            })
            .collect();
        Ok(Self {
            angle,
            dims,
            blocks,
        })
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn reflectivity(&self) -> f64 {
        self.angle.sin().powi(2)
    }

    /// Max deviation of `a U = U (a cos θ + b sin θ)` and
    /// `b U = U (b cos θ − a sin θ)` over basis inputs and outputs below
    /// `levels` in each mode.
    pub fn heisenberg_defect(&self, levels: usize) -> Result<f64> {
        let (da, db) = self.dims;
        if levels + 1 > da.min(db) {
            return Err(Error::OutOfRange {
                what: "checked levels",
                value: levels,
                max: da.min(db) - 1,
            });
        }
        let (c, s) = (
            Complex64::new(self.angle.cos(), 0.0),
            Complex64::new(self.angle.sin(), 0.0),
        );
        let lower_a = |m: &DMatrix<Complex64>| {
            DMatrix::from_fn(da, db, |i, j| {
                if i + 1 < da {
                    m[(i + 1, j)] * ((i + 1) as f64).sqrt()
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
        };
        let lower_b = |m: &DMatrix<Complex64>| {
            DMatrix::from_fn(da, db, |i, j| {
                if j + 1 < db {
                    m[(i, j + 1)] * ((j + 1) as f64).sqrt()
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
        };
        let mut worst = 0.0f64;
        for k in 0..levels {
            for l in 0..levels {
                let mut basis = DMatrix::zeros(da, db);
                basis[(k, l)] = Complex64::new(1.0, 0.0);
                let image = self.apply(&TwoModeState { amplitudes: basis.clone() })?.amplitudes;
                let (ab, bb) = (lower_a(&basis), lower_b(&basis));
                let rhs_a = self.apply(&TwoModeState { amplitudes: &ab * c + &bb * s })?.amplitudes;
                let rhs_b = self.apply(&TwoModeState { amplitudes: &bb * c - &ab * s })?.amplitudes;
                let (lhs_a, lhs_b) = (lower_a(&image), lower_b(&image));
                for i in 0..levels {
                    for j in 0..levels {
                        worst = worst
                            .max((lhs_a[(i, j)] - rhs_a[(i, j)]).norm())
                            .max((lhs_b[(i, j)] - rhs_b[(i, j)]).norm());
                    }
                }
            }
        }
        Ok(worst)
    }
}

impl TwoModeGate for BeamSplitter {
    fn dims(&self) -> (usize, usize) {
        self.dims
    }

    fn apply(&self, state: &TwoModeState) -> Result<TwoModeState> {
        self.check_dims(state)?;
        let mut out = DMatrix::zeros(self.dims.0, self.dims.1);
        for block in &self.blocks {
            for (r, &(i, j)) in block.members.iter().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for (c, &(k, l)) in block.members.iter().enumerate() {
                    acc += state.amplitudes[(k, l)] * block.unitary[(r, c)];
                }
                out[(i, j)] = acc;
            }
        }
        Ok(TwoModeState { amplitudes: out })
    }
}

/// How the squeezer matrix is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SqueezerRealization {
    /// Matrix elements of the untruncated squeezer, generated column by
    /// column from `a†S = S(cosh r · a† − sinh r · a)` starting at the
    /// squeezed vacuum. Exact, but columns near the top lose the norm that
    /// the squeezer moves past the truncation.
    Exact,
    /// `exp` of the truncated generator. Exactly unitary, but the truncation
    /// edge corrupts matrix elements far below it.
    TruncatedExponential,
}

/// Single-mode squeezer `exp((r/2)(a² − a†²))` embedded in the two-mode space.
#[derive(Debug, Clone)]
pub struct Squeezer {
    gain: f64,
    direction: SqueezeDirection,
    mode: Mode,
    dims: (usize, usize),
    unitary: DMatrix<f64>,
}

/// Phase-sensitive amplifier of gain `a` on one mode.
pub fn opa_squeezer(
    gain_a: f64,
    mode: Mode,
    direction: SqueezeDirection,
    dims: (usize, usize),
) -> Result<Squeezer> {
    opa_squeezer_with(gain_a, mode, direction, dims, SqueezerRealization::Exact)
}

pub fn opa_squeezer_with(
    gain_a: f64,
    mode: Mode,
    direction: SqueezeDirection,
    dims: (usize, usize),
    realization: SqueezerRealization,
) -> Result<Squeezer> {
    if !(gain_a > 0.0) || !gain_a.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "amplifier gain must be positive, got {gain_a}"
        )));
    }
    check_dim(dims.0)?;
    check_dim(dims.1)?;
    let dim = match mode {
        Mode::Upper => dims.0,
        Mode::Lower => dims.1,
    };
    // S(r)† x S(r) = e^{−r} x
    let r = match direction {
        SqueezeDirection::AmplifyX => -gain_a.ln(),
        SqueezeDirection::AmplifyY => gain_a.ln(),
    };
    let unitary = match realization {
        SqueezerRealization::Exact => exact_squeezer(r, dim),
        SqueezerRealization::TruncatedExponential => {
            let a = annihilation(dim)?.matrix().map(|c| c.re);
            let a2 = &a * &a;
            ((&a2 - a2.transpose()) * (r / 2.0)).exp()
        }
    };
    Ok(Squeezer {
        gain: gain_a,
        direction,
        mode,
        dims,
        unitary,
    })
}

/// `⟨m|S(r)|n⟩` for `m, n < dim`, untruncated.
fn exact_squeezer(r: f64, dim: usize) -> DMatrix<f64> {
    let (mu, nu) = (r.cosh(), r.sinh());
    let t = r.tanh();
    let mut s = DMatrix::<f64>::zeros(dim, dim);
    // S|0⟩ = (cosh r)^{-1/2} Σ_k (−tanh r)^k √((2k)!)/(2^k k!) |2k⟩
    s[(0, 0)] = mu.powf(-0.5);
    let mut m = 2;
    while m < dim {
        let k = (m - 2) as f64;
        s[(m, 0)] = s[(m - 2, 0)] * (-t) * ((k + 1.0) / (k + 2.0)).sqrt();
        m += 2;
    }
    for n in 0..dim - 1 {
        let nf = n as f64;
        for m in 0..dim {
            let mut v = 0.0;
            if m >= 1 {
                v += (m as f64).sqrt() * s[(m - 1, n)];
            }
            if n >= 1 {
                v += nu * nf.sqrt() * s[(m, n - 1)];
            }
            s[(m, n + 1)] = v / (mu * (nf + 1.0).sqrt());
        }
    }
    s
}

impl Squeezer {
    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn direction(&self) -> SqueezeDirection {
        self.direction
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Max deviation of `x U = g U x` and `y U = U y / g` (`g = a` when
    /// amplifying `x`, `1/a` otherwise) over matrix elements below `levels`.
    pub fn heisenberg_defect(&self, levels: usize) -> Result<f64> {
        let dim = self.unitary.nrows();
        if levels + 1 > dim {
            return Err(Error::OutOfRange {
                what: "checked levels",
                value: levels,
                max: dim - 1,
            });
        }
        let g = match self.direction {
            SqueezeDirection::AmplifyX => self.gain,
            SqueezeDirection::AmplifyY => 1.0 / self.gain,
        };
        let u = self.single_mode_operator();
        let x = quadrature_x(dim)?;
        let y = quadrature_y(dim)?;
        let dx = x.mul(&u)?.sub(&u.mul(&x)?.scale(Complex64::new(g, 0.0)))?;
        let dy = y.mul(&u)?.sub(&u.mul(&y)?.scale(Complex64::new(1.0 / g, 0.0)))?;
        let zero = FockOperator::from_real(&DMatrix::zeros(dim, dim))?;
        Ok(dx
            .max_deviation_on(&zero, levels)?
            .max(dy.max_deviation_on(&zero, levels)?))
    }

    /// The squeezer restricted to its own mode.
    pub fn single_mode_operator(&self) -> FockOperator {
        FockOperator::from_real(&self.unitary).expect("square by construction")
    }
}

impl TwoModeGate for Squeezer {
    fn dims(&self) -> (usize, usize) {
        self.dims
    }

    fn apply(&self, state: &TwoModeState) -> Result<TwoModeState> {
        self.check_dims(state)?;
        let u = self.unitary.map(|v| Complex64::new(v, 0.0));
        let amplitudes = match self.mode {
            Mode::Upper => &u * &state.amplitudes,
            Mode::Lower => &state.amplitudes * u.transpose(),
        };
        Ok(TwoModeState { amplitudes })
    }
}

/// Output of the circuit before homodyne detection.
#[derive(Debug, Clone)]
pub struct PropagatedState {
    /// Upper mode: meter output. Lower mode: signal output.
    pub state: TwoModeState,
    /// Largest top-quarter occupation seen in either mode at any stage.
    pub max_top_occupation: f64,
}

impl PropagatedState {
    /// Raw homodyne density at meter quadrature value `q` together with the
    /// unnormalized conditional signal vector.
    pub fn project(&self, q: f64) -> (f64, Vec<Complex64>) {
        let v = self.state.project_upper_x(q);
        (v.iter().map(|c| c.norm_sqr()).sum(), v)
    }

    pub fn check_overflow(&self) -> Result<()> {
        if self.max_top_occupation > OVERFLOW_OCCUPATION {
            let (da, db) = self.state.dims();
            return Err(Error::TruncationOverflow {
                mode: "circuit",
                occupation: self.max_top_occupation,
                dim: da.min(db),
            });
        }
        Ok(())
    }
}

/// The fixed sequence of circuit elements for one parameter set.
#[derive(Debug, Clone)]
pub struct SetupCircuit {
    params: SetupParams,
    splitter_in: BeamSplitter,
    upper_amp: Squeezer,
    lower_amp: Squeezer,
    splitter_out: BeamSplitter,
}

impl SetupCircuit {
    pub fn new(params: SetupParams) -> Result<Self> {
        let dims = (params.dim_signal, params.dim_meter);
        let splitter_in = beam_splitter(params.reflectivity(), dims)?;
        let splitter_out = BeamSplitter::from_angle(splitter_in.angle() + std::f64::consts::PI, dims)?;
        let (upper_dir, lower_dir) = if params.arm_swap {
            (SqueezeDirection::AmplifyX, SqueezeDirection::AmplifyY)
        } else {
            (SqueezeDirection::AmplifyY, SqueezeDirection::AmplifyX)
        };
        Ok(Self {
            params,
            upper_amp: opa_squeezer(params.gain_a, Mode::Upper, upper_dir, dims)?,
            lower_amp: opa_squeezer(params.gain_a, Mode::Lower, lower_dir, dims)?,
            splitter_in,
            splitter_out,
        })
    }

    pub fn params(&self) -> &SetupParams {
        &self.params
    }

    /// Runs the signal input with a vacuum meter through the circuit.
    /// Truncation overflow is recorded, not raised.
    pub fn propagate(&self, signal_in: &FockState) -> Result<PropagatedState> {
        signal_in.check_same_dim(self.params.dim_signal)?;
        let meter = FockState::vacuum(self.params.dim_meter)?;
        let mut state = TwoModeState::product(&signal_in.normalized()?, &meter);
        let mut worst = 0.0f64;
        let mut track = |s: &TwoModeState| {
            worst = worst
                .max(s.top_quarter_occupation(Mode::Upper))
                .max(s.top_quarter_occupation(Mode::Lower));
        };
        track(&state);
        state = self.splitter_in.apply(&state)?;
        track(&state);
        state = self.upper_amp.apply(&state)?;
        state = self.lower_amp.apply(&state)?;
        track(&state);
        state = self.splitter_out.apply(&state)?;
        track(&state);
        Ok(PropagatedState {
            state,
            max_top_occupation: worst,
        })
    }

    /// [`SetupCircuit::propagate`] that fails on truncation overflow.
    pub fn propagate_checked(&self, signal_in: &FockState) -> Result<PropagatedState> {
        let out = self.propagate(signal_in)?;
        out.check_overflow()?;
        Ok(out)
    }
}

/// Affine map `x_m = scale · q + offset` from raw homodyne value to outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeMap {
    pub scale: f64,
    pub offset: f64,
    /// Max deviation of the mapped setup density from the ideal one,
    /// relative to the ideal peak.
    pub residual: f64,
}

/// Fits `|c|` by least squares of the mapped raw density against the ideal
/// outcome density of `state`, then fixes the sign of `c` from the mean
/// outcome of a state with `⟨x̂⟩ = 1/2`.
pub fn calibrate_with_state(circuit: &SetupCircuit, state: &FockState) -> Result<OutcomeMap> {
    let params = circuit.params();
    let model = MeasurementModel::new(params.delta_x(), params.dim_signal)?;
    let out = circuit.propagate(state)?;

    let sigma_q = out
        .state
        .quadrature_x_second_moment(Mode::Upper)
        .sqrt()
        .max(1e-3);
    let grid = make_grid(GridKind::Uniform, 8.0 * sigma_q, 801)?;
    let raw: Vec<f64> = grid
        .nodes()
        .par_iter()
        .map(|&q| out.project(q).0)
        .collect();
    let raw_var = grid.integrate_values(
        &raw.iter()
            .zip(grid.nodes())
            .map(|(p, q)| p * q * q)
            .collect::<Vec<_>>(),
    ) / grid.integrate_values(&raw);
    let ideal_var = params.delta_x().powi(2) + state.quadrature_x_second_moment();
    let c0 = (ideal_var / raw_var).sqrt();

    let ideal_at = |c: f64| -> Result<Vec<f64>> {
        grid.nodes()
            .par_iter()
            .map(|&q| model.outcome_density(state, c * q))
            .collect()
    };
    let objective = |c: f64| -> Result<f64> {
        let ideal = ideal_at(c)?;
        Ok(raw
            .iter()
            .zip(&ideal)
            .zip(grid.weights())
            .map(|((r, i), w)| w * (r - c * i).powi(2))
            .sum())
    };
    let scale = golden_section(0.9 * c0, 1.1 * c0, 1e-12, objective)?;

    let ideal = ideal_at(scale)?;
    let peak = ideal.iter().cloned().fold(0.0, f64::max);
    let residual = raw
        .iter()
        .zip(&ideal)
        .map(|(r, i)| (r / scale - i).abs())
        .fold(0.0, f64::max)
        / peak;

    // sign from a state with ⟨x̂⟩ = +1/2
    let mut probe = vec![0.0; params.dim_signal];
    probe[0] = 1.0;
    probe[1] = 1.0;
    let probe = FockState::from_real(&probe)?.normalized()?;
    let probe_out = circuit.propagate(&probe)?;
    let mean_q = grid.integrate(|q| q * probe_out.project(q).0);
    let sign = if mean_q < 0.0 { -1.0 } else { 1.0 };

    if residual > CALIBRATION_LIMIT {
        return Err(Error::SetupMismatch {
            residual,
            limit: CALIBRATION_LIMIT,
        });
    }
    Ok(OutcomeMap {
        scale: sign * scale,
        offset: 0.0,
        residual,
    })
}

/// Calibration against the vacuum signal input.
pub fn calibrate_outcome_map(params: &SetupParams) -> Result<OutcomeMap> {
    let circuit = SetupCircuit::new(*params)?;
    calibrate_with_state(&circuit, &FockState::vacuum(params.dim_signal)?)
}

fn golden_section<F>(mut lo: f64, mut hi: f64, rel_tol: f64, f: F) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while (hi - lo) > rel_tol * (hi.abs() + lo.abs()) {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = f(x2)?;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Outcome of one run of the circuit at a given measurement result.
#[derive(Debug, Clone)]
pub struct SetupOutcome {
    /// Density in outcome units `x_m`.
    pub density: f64,
    pub signal_out: FockState,
}

/// Circuit plus its vacuum calibration.
#[derive(Debug, Clone)]
pub struct SetupSimulator {
    circuit: SetupCircuit,
    map: OutcomeMap,
    model: MeasurementModel,
}

impl SetupSimulator {
    pub fn new(params: SetupParams) -> Result<Self> {
        SetupCircuit::new(params)?.propagate_checked(&FockState::vacuum(params.dim_signal)?)?;
        Self::unchecked(params)
    }

    /// Like [`SetupSimulator::new`] but tolerates truncation overflow of the
    /// calibration run; used for convergence studies.
    pub fn unchecked(params: SetupParams) -> Result<Self> {
        let circuit = SetupCircuit::new(params)?;
        let map = calibrate_with_state(&circuit, &FockState::vacuum(params.dim_signal)?)?;
        let model = MeasurementModel::new(params.delta_x(), params.dim_signal)?;
        Ok(Self {
            circuit,
            map,
            model,
        })
    }

    pub fn circuit(&self) -> &SetupCircuit {
        &self.circuit
    }

    pub fn outcome_map(&self) -> OutcomeMap {
        self.map
    }

    pub fn model(&self) -> &MeasurementModel {
        &self.model
    }

    /// Density and conditional signal output of an already propagated state
    /// at outcome `x_m`.
    pub fn condition(&self, propagated: &PropagatedState, x_m: f64) -> Result<SetupOutcome> {
        if !x_m.is_finite() {
            return Err(Error::NonFinite("homodyne result"));
        }
        let q = (x_m - self.map.offset) / self.map.scale;
        let (raw, vector) = propagated.project(q);
        let density = raw / self.map.scale.abs();
        if !(density > UNDERFLOW_DENSITY) {
            return Err(Error::DegenerateConditioning { density });
        }
        let ds = self.circuit.params.dim_signal;
        let mut amps = nalgebra::DVector::zeros(ds);
        for (n, c) in vector.iter().enumerate().take(ds) {
            amps[n] = *c;
        }
        let signal_out = FockState::from_amplitudes(amps)?.normalized()?;
        Ok(SetupOutcome {
            density,
            signal_out,
        })
    }

    pub fn run(&self, signal_in: &FockState, x_m: f64) -> Result<SetupOutcome> {
        let propagated = self.circuit.propagate_checked(signal_in)?;
        self.condition(&propagated, x_m)
    }

    /// Compares the circuit against the measurement operator over `grid`.
    pub fn equivalence_report(
        &self,
        signal_in: &FockState,
        grid: &QuadratureGrid,
    ) -> Result<EquivalenceReport> {
        let propagated = self.circuit.propagate(signal_in)?;
        let signal = signal_in.normalized()?;
        let rows: Vec<Option<(f64, f64)>> = grid
            .nodes()
            .par_iter()
            .map(|&x_m| -> Result<Option<(f64, f64)>> {
                let ideal_density = self.model.outcome_density(&signal, x_m)?;
                if ideal_density <= EQUIVALENCE_DENSITY_FLOOR {
                    return Ok(None);
                }
                let ideal_state = self.model.conditional_state(&signal, x_m)?;
                let setup = self.condition(&propagated, x_m)?;
                Ok(Some((
                    (setup.density - ideal_density).abs(),
                    setup.signal_out.trace_distance(&ideal_state)?,
                )))
            })
            .collect::<Result<_>>()?;
        let mut report = EquivalenceReport {
            defect: 0.0,
            max_density_error: 0.0,
            max_trace_distance: 0.0,
            outcomes_checked: 0,
            max_top_occupation: propagated.max_top_occupation,
        };
        for (d, t) in rows.into_iter().flatten() {
            report.defect = report.defect.max(d + t);
            report.max_density_error = report.max_density_error.max(d);
            report.max_trace_distance = report.max_trace_distance.max(t);
            report.outcomes_checked += 1;
        }
        Ok(report)
    }

    /// Default outcome grid for the equivalence check.
    pub fn default_grid(&self, signal_in: &FockState) -> Result<QuadratureGrid> {
        make_grid(GridKind::Uniform, self.model.density_span(signal_in), 241)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub defect: f64,
    pub max_density_error: f64,
    pub max_trace_distance: f64,
    pub outcomes_checked: usize,
    pub max_top_occupation: f64,
}

/// Density and normalized signal output for one homodyne result.
pub fn run_setup(signal_in: &FockState, params: &SetupParams, homodyne_result: f64) -> Result<SetupOutcome> {
    SetupSimulator::new(*params)?.run(signal_in, homodyne_result)
}

/// Max over `grid` of density error plus trace distance between the circuit's
/// and the measurement operator's conditional outputs.
pub fn equivalence_defect(
    signal_in: &FockState,
    params: &SetupParams,
    grid: &QuadratureGrid,
) -> Result<f64> {
    let sim = SetupSimulator::new(*params)?;
    sim.circuit.propagate_checked(signal_in)?;
    Ok(sim.equivalence_report(signal_in, grid)?.defect)
}

/// One row of a convergence-in-dimension study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub dim: usize,
    pub scale: f64,
    pub report: EquivalenceReport,
    pub overflow: bool,
}

/// Equivalence reports for `signal_level` as input at each truncation in
/// `dims` (both modes equal). Overflowed truncations are reported, not raised.
pub fn convergence_table(gain_a: f64, signal_level: usize, dims: &[usize]) -> Result<Vec<ConvergenceRow>> {
    dims.iter()
        .map(|&dim| {
            let params = SetupParams::new(gain_a, dim, dim)?;
            let sim = SetupSimulator::unchecked(params)?;
            let signal = FockState::number(signal_level, dim)?;
            let grid = sim.default_grid(&signal)?;
            let report = sim.equivalence_report(&signal, &grid)?;
            Ok(ConvergenceRow {
                dim,
                scale: sim.map.scale,
                overflow: report.max_top_occupation > OVERFLOW_OCCUPATION,
                report,
            })
        })
        .collect()
}
