//! Simulation of backaction-evading quantum nondemolition measurements of a
//! light-field quadrature.
//!
//! * [`fock`]: truncated photon-number basis, ladder and quadrature operators,
//!   oscillator wavefunctions and integration grids.
//! * [`measurement`]: the Gaussian measurement operator, outcome densities and
//!   conditional output states.
//! * [`setup`]: the two-mode optical circuit (beam splitter, two OPAs, beam
//!   splitter, homodyne) and its reduction to the measurement operator.
//! * [`jump_stats`]: Monte Carlo sampling of outcomes and photon-number jumps,
//!   plus the exact jump probability and jump/outcome correlations.
//! * [`cli`]: the `bae-qnd-sim` command-line front end.

pub mod cli;
pub mod error;
pub mod fock;
pub mod jump_stats;
pub mod measurement;
pub mod setup;

pub use error::{Error, Result};
