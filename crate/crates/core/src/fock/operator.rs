use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{check_dim, FockState};
use crate::error::{Error, Result};

/// Dense operator on a truncated single-mode Fock space.
#[derive(Debug, Clone, PartialEq)]
pub struct FockOperator {
    matrix: DMatrix<Complex64>,
}

impl FockOperator {
    pub fn from_matrix(matrix: DMatrix<Complex64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                found: matrix.ncols(),
            });
        }
        check_dim(matrix.nrows())?;
        Ok(Self { matrix })
    }

    pub fn from_real(matrix: &DMatrix<f64>) -> Result<Self> {
        Self::from_matrix(matrix.map(|v| Complex64::new(v, 0.0)))
    }

    /// Wraps a matrix and verifies Hermiticity to `tol` (max-entry deviation).
    pub fn hermitian(matrix: DMatrix<Complex64>, tol: f64) -> Result<Self> {
        let op = Self::from_matrix(matrix)?;
        let deviation = op.hermiticity_defect();
        if deviation > tol {
            return Err(Error::NotHermitian { deviation });
        }
        Ok(op)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.matrix[(row, col)]
    }

    pub fn adjoint(&self) -> Self {
        Self {
            matrix: self.matrix.adjoint(),
        }
    }

    pub fn hermiticity_defect(&self) -> f64 {
        max_abs(&(&self.matrix - self.matrix.adjoint()))
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol
    }

    pub fn apply(&self, state: &FockState) -> Result<FockState> {
        self.check_dim(state.dim())?;
        FockState::from_amplitudes(&self.matrix * state.amplitudes())
    }

    pub fn apply_vector(&self, v: &DVector<Complex64>) -> Result<DVector<Complex64>> {
        self.check_dim(v.len())?;
        Ok(&self.matrix * v)
    }

    pub fn mul(&self, rhs: &FockOperator) -> Result<FockOperator> {
        self.check_dim(rhs.dim())?;
        Ok(Self {
            matrix: &self.matrix * &rhs.matrix,
        })
    }

    pub fn add(&self, rhs: &FockOperator) -> Result<FockOperator> {
        self.check_dim(rhs.dim())?;
        Ok(Self {
            matrix: &self.matrix + &rhs.matrix,
        })
    }

    pub fn sub(&self, rhs: &FockOperator) -> Result<FockOperator> {
        self.check_dim(rhs.dim())?;
        Ok(Self {
            matrix: &self.matrix - &rhs.matrix,
        })
    }

    pub fn scale(&self, factor: Complex64) -> FockOperator {
        Self {
            matrix: self.matrix.map(|v| v * factor),
        }
    }

    /// `[self, rhs] = self·rhs − rhs·self`
    pub fn commutator(&self, rhs: &FockOperator) -> Result<FockOperator> {
        self.mul(rhs)?.sub(&rhs.mul(self)?)
    }

    /// Max-entry deviation from `other` over the leading `levels × levels` block.
    pub fn max_deviation_on(&self, other: &FockOperator, levels: usize) -> Result<f64> {
        self.check_dim(other.dim())?;
        let k = levels.min(self.dim());
        let diff = self.matrix.view((0, 0), (k, k)) - other.matrix.view((0, 0), (k, k));
        Ok(max_abs(&diff))
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: dim,
            });
        }
        Ok(())
    }
}

pub(crate) fn max_abs(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

pub fn identity(dim: usize) -> Result<FockOperator> {
    check_dim(dim)?;
    FockOperator::from_matrix(DMatrix::identity(dim, dim))
}

/// Ladder operator `a`: entry `(n−1, n) = √n`.
pub fn annihilation(dim: usize) -> Result<FockOperator> {
    check_dim(dim)?;
    let mut m = DMatrix::zeros(dim, dim);
    for n in 1..dim {
        m[(n - 1, n)] = Complex64::new((n as f64).sqrt(), 0.0);
    }
    FockOperator::from_matrix(m)
}

pub fn creation(dim: usize) -> Result<FockOperator> {
    Ok(annihilation(dim)?.adjoint())
}

/// `x = (a + a†)/2`; `x|0⟩ = 0.5|1⟩`.
pub fn quadrature_x(dim: usize) -> Result<FockOperator> {
    let a = annihilation(dim)?;
    Ok(a.add(&a.adjoint())?.scale(Complex64::new(0.5, 0.0)))
}

/// `y = (a − a†)/(2i)`.
pub fn quadrature_y(dim: usize) -> Result<FockOperator> {
    let a = annihilation(dim)?;
    Ok(a.sub(&a.adjoint())?.scale(Complex64::new(0.0, -0.5)))
}

pub fn number_operator(dim: usize) -> Result<FockOperator> {
    check_dim(dim)?;
    let diag = DVector::from_iterator(dim, (0..dim).map(|n| Complex64::new(n as f64, 0.0)));
    FockOperator::from_matrix(DMatrix::from_diagonal(&diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn annihilation_lowers() {
        let a = annihilation(2).unwrap();
        let one = FockState::number(1, 2).unwrap();
        let out = a.apply(&one).unwrap();
        assert_eq!(out.amplitude(0), c(1.0));
        assert_eq!(out.amplitude(1), c(0.0));

        let a4 = annihilation(4).unwrap();
        let vac = FockState::vacuum(4).unwrap();
        assert_eq!(a4.apply(&vac).unwrap().norm_sqr(), 0.0);
        assert!((a4.entry(1, 2).re - 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(annihilation(1), Err(Error::InvalidDimension { .. })));
    }

    #[test]
    fn x_on_vacuum_creates_half_a_photon() {
        let x = quadrature_x(4).unwrap();
        let vac = FockState::vacuum(4).unwrap();
        let out = x.apply(&vac).unwrap();
        assert!((out.amplitude(1) - c(0.5)).norm() < 1e-15);
        assert!(out.amplitude(0).norm() < 1e-15);
        assert!(out.amplitude(2).norm() < 1e-15);
        let x2 = x.mul(&x).unwrap();
        assert!((vac.expectation(&x2).unwrap() - c(0.25)).norm() < 1e-15);
    }

    #[test]
    fn x_squared_on_one_photon() {
        // oracle: ⟨1|x²|1⟩ = ‖x|1⟩‖² with x|1⟩ = (|0⟩ + √2|2⟩)/2
        let oracle = (1.0f64 + 2.0) / 4.0;
        let x = quadrature_x(8).unwrap();
        let one = FockState::number(1, 8).unwrap();
        let v = one.expectation(&x.mul(&x).unwrap()).unwrap();
        assert!((v.re - oracle).abs() < 1e-14);
        assert!((v.re - 0.75).abs() < 1e-14);
    }

    #[test]
    fn xy_commutator_is_half_i_away_from_edge() {
        let x = quadrature_x(10).unwrap();
        let y = quadrature_y(10).unwrap();
        let comm = x.commutator(&y).unwrap();
        assert!((comm.entry(0, 0) - Complex64::new(0.0, 0.5)).norm() < 1e-14);
        let half_i = identity(10).unwrap().scale(Complex64::new(0.0, 0.5));
        assert!(comm.max_deviation_on(&half_i, 9).unwrap() < 1e-14);
        // the last diagonal entry carries the truncation artefact
        assert!((comm.entry(9, 9) - Complex64::new(0.0, 0.5)).norm() > 1.0);

        let vac = FockState::vacuum(10).unwrap();
        assert!(vac.expectation(&y).unwrap().norm() < 1e-15);
        let y2 = y.mul(&y).unwrap();
        assert!((vac.expectation(&y2).unwrap() - c(0.25)).norm() < 1e-14);
    }

    #[test]
    fn number_operator_expectations() {
        let n = number_operator(5).unwrap();
        assert_eq!(FockState::vacuum(5).unwrap().expectation(&n).unwrap(), c(0.0));
        assert_eq!(FockState::number(1, 5).unwrap().expectation(&n).unwrap(), c(1.0));
        let s = FockState::from_real(&[1.0, 0.0, 1.0, 0.0, 0.0])
            .unwrap()
            .normalized()
            .unwrap();
        assert!((s.expectation(&n).unwrap() - c(1.0)).norm() < 1e-15);
    }

    #[test]
    fn mismatched_dims_error() {
        let a = annihilation(3).unwrap();
        let b = annihilation(4).unwrap();
        assert!(matches!(a.mul(&b), Err(Error::DimensionMismatch { .. })));
        assert!(a.apply(&FockState::vacuum(4).unwrap()).is_err());
    }

    #[test]
    fn hermitian_constructor_rejects_ladder() {
        let a = annihilation(3).unwrap();
        assert!(matches!(
            FockOperator::hermitian(a.matrix().clone(), 1e-12),
            Err(Error::NotHermitian { .. })
        ));
        assert!(FockOperator::hermitian(quadrature_x(3).unwrap().matrix().clone(), 1e-12).is_ok());
    }

    proptest! {
        #[test]
        fn ladder_commutator_is_identity_below_edge(dim in 2usize..40) {
            let a = annihilation(dim).unwrap();
            let comm = a.commutator(&a.adjoint()).unwrap();
            let id = identity(dim).unwrap();
            prop_assert!(comm.max_deviation_on(&id, dim - 1).unwrap() < 1e-12);
            prop_assert!((comm.entry(dim - 1, dim - 1).re - (1.0 - dim as f64)).abs() < 1e-12);
        }

        #[test]
        fn quadratures_are_hermitian(dim in 2usize..40) {
            prop_assert!(quadrature_x(dim).unwrap().is_hermitian(1e-12));
            prop_assert!(quadrature_y(dim).unwrap().is_hermitian(1e-12));
        }
    }
}
