use nalgebra::DVector;
use num_complex::Complex64;

use super::{check_dim, FockOperator};
use crate::error::{Error, Result};

/// Pure state of one mode in a truncated photon-number basis.
///
/// Amplitudes are not forced to unit norm; call [`FockState::normalized`]
/// when a physical state is required.
#[derive(Debug, Clone, PartialEq)]
pub struct FockState {
    amplitudes: DVector<Complex64>,
}

impl FockState {
    pub fn from_amplitudes(amplitudes: DVector<Complex64>) -> Result<Self> {
        check_dim(amplitudes.len())?;
        if amplitudes.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite("state amplitude"));
        }
        Ok(Self { amplitudes })
    }

    pub fn from_real(amplitudes: &[f64]) -> Result<Self> {
        Self::from_amplitudes(DVector::from_iterator(
            amplitudes.len(),
            amplitudes.iter().map(|&a| Complex64::new(a, 0.0)),
        ))
    }

    /// The photon-number eigenstate `|n⟩`.
    pub fn number(n: usize, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        if n >= dim {
            return Err(Error::OutOfRange {
                what: "photon number",
                value: n,
                max: dim - 1,
            });
        }
        let mut amplitudes = DVector::zeros(dim);
        amplitudes[n] = Complex64::new(1.0, 0.0);
        Ok(Self { amplitudes })
    }

    pub fn vacuum(dim: usize) -> Result<Self> {
        Self::number(0, dim)
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &DVector<Complex64> {
        &self.amplitudes
    }

    pub fn amplitude(&self, n: usize) -> Complex64 {
        self.amplitudes[n]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn normalized(&self) -> Result<Self> {
        let norm = self.norm_sqr().sqrt();
        if !(norm > 0.0) {
            return Err(Error::InvalidParameter("cannot normalize a zero state".into()));
        }
        Ok(Self {
            amplitudes: self.amplitudes.unscale(norm),
        })
    }

    /// `⟨self|other⟩`
    pub fn inner(&self, other: &FockState) -> Result<Complex64> {
        self.check_same_dim(other.dim())?;
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    pub fn expectation(&self, op: &FockOperator) -> Result<Complex64> {
        let image = op.apply(self)?;
        self.inner(&image)
    }

    /// `|⟨n|ψ⟩|²` for every level.
    pub fn photon_probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|c| c.norm_sqr()).collect()
    }

    /// Largest level carrying weight above `threshold`.
    pub fn support_top(&self, threshold: f64) -> usize {
        self.amplitudes
            .iter()
            .rposition(|c| c.norm_sqr() > threshold)
            .unwrap_or(0)
    }

    /// `⟨x̂²⟩` evaluated directly from the ladder action.
    pub fn quadrature_x_second_moment(&self) -> f64 {
        // x|ψ⟩ has components (√(n+1) c_{n+1} + √n c_{n-1}) / 2; the top
        // component is kept so that the moment matches the untruncated value.
        let d = self.dim();
        let mut sum = 0.0;
        for n in 0..=d {
            let mut v = Complex64::new(0.0, 0.0);
            if n + 1 < d {
                v += self.amplitudes[n + 1] * ((n + 1) as f64).sqrt();
            }
            if n >= 1 && n - 1 < d {
                v += self.amplitudes[n - 1] * (n as f64).sqrt();
            }
            sum += (v * 0.5).norm_sqr();
        }
        sum
    }

    /// Fidelity `|⟨self|other⟩|²` of two normalized states.
    pub fn fidelity(&self, other: &FockState) -> Result<f64> {
        Ok(self.inner(other)?.norm_sqr())
    }

    /// Trace distance `√(1 − |⟨self|other⟩|²)` between the pure states
    /// `self` and `other`, evaluated from the phase-aligned difference so it
    /// stays accurate for nearly equal states.
    pub fn trace_distance(&self, other: &FockState) -> Result<f64> {
        self.check_same_dim(other.dim())?;
        let u = self.normalized()?;
        let v = other.normalized()?;
        let overlap = u.inner(&v)?;
        if overlap.norm() == 0.0 {
            return Ok(1.0);
        }
        let phase = overlap.conj() / overlap.norm();
        let d2 = (&u.amplitudes - &v.amplitudes * phase).norm_squared();
        // 1 − |⟨u|v⟩| = d²/2
        let gap = 0.5 * d2;
        Ok((gap * (2.0 - gap)).max(0.0).sqrt())
    }

    pub(crate) fn check_same_dim(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: dim,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_state_out_of_range() {
        assert!(matches!(
            FockState::number(4, 4),
            Err(Error::OutOfRange { .. })
        ));
        assert!(matches!(
            FockState::vacuum(1),
            Err(Error::InvalidDimension { .. })
        ));
    }

    #[test]
    fn normalize_is_idempotent() {
        let s = FockState::from_real(&[3.0, 0.0, 4.0]).unwrap();
        let once = s.normalized().unwrap();
        let twice = once.normalized().unwrap();
        assert!((once.norm_sqr() - 1.0).abs() < 1e-12);
        assert!((&once.amplitudes - &twice.amplitudes).norm() < 1e-15);
        assert!(FockState::from_real(&[0.0, 0.0]).unwrap().normalized().is_err());
    }

    #[test]
    fn second_moment_matches_number_states() {
        for n in 0..5 {
            let s = FockState::number(n, 6).unwrap();
            let expected = (2 * n + 1) as f64 / 4.0;
            assert!((s.quadrature_x_second_moment() - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn trace_distance_resolves_tiny_rotations() {
        for eps in [1e-4f64, 1e-8, 1e-12] {
            let a = FockState::from_real(&[eps.cos(), eps.sin(), 0.0]).unwrap();
            let b = FockState::vacuum(3).unwrap();
            let d = a.trace_distance(&b).unwrap();
            assert!((d - eps.sin()).abs() < 1e-6 * eps, "{eps}: {d}");
        }
        let a = FockState::vacuum(4).unwrap();
        let b = FockState::from_amplitudes(a.amplitudes() * Complex64::new(0.0, 2.0)).unwrap();
        assert!(a.trace_distance(&b).unwrap() < 1e-15);
    }

    #[test]
    fn trace_distance_of_orthogonal_states_is_one() {
        let a = FockState::number(0, 3).unwrap();
        let b = FockState::number(2, 3).unwrap();
        assert!((a.trace_distance(&b).unwrap() - 1.0).abs() < 1e-15);
        assert!(a.trace_distance(&a).unwrap() < 1e-7);
    }
}
