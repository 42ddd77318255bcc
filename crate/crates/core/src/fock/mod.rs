//! Truncated photon-number basis for one optical mode.
//!
//! Quadratures follow the convention `x = (a + a†)/2`, `y = (a - a†)/(2i)`,
//! so the vacuum variance of either quadrature is 1/4 and `[x, y] = i/2`.

mod grid;
mod operator;
mod state;
mod wavefunction;

pub use grid::{make_grid, GaussHermiteRule, GridKind, QuadratureGrid};
pub use operator::{
    annihilation, creation, identity, number_operator, quadrature_x, quadrature_y, FockOperator,
};
pub use state::FockState;
pub use wavefunction::{oscillator_wavefunction, oscillator_wavefunctions, MAX_LEVEL};
pub(crate) use wavefunction::{fill_wavefunctions, wavefunction_table};

use crate::error::{Error, Result};

/// Smallest truncation accepted anywhere.
pub const MIN_DIM: usize = 2;

/// Tolerance for exact algebraic identities.
pub const ALGEBRAIC_TOL: f64 = 1e-10;
/// Tolerance for identities that go through a quadrature.
pub const QUADRATURE_TOL: f64 = 1e-6;

pub(crate) fn check_dim(dim: usize) -> Result<()> {
    if dim < MIN_DIM {
        return Err(Error::InvalidDimension { dim, min: MIN_DIM });
    }
    Ok(())
}

/// Number of low levels on which truncated operator identities are trusted.
///
/// The top quarter of the ladder is excluded.
pub fn trusted_dim(dim: usize) -> usize {
    dim - dim / 4
}
