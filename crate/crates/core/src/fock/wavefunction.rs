use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Highest supported oscillator level (inclusive).
pub const MAX_LEVEL: usize = 1024;

/// Position-space oscillator eigenfunction `ψ_n(x)` in the `x = (a + a†)/2`
/// convention, `ψ_0(x) = (2/π)^{1/4} e^{−x²}`.
///
/// Evaluated with the normalized three-term recurrence
/// `ψ_{n+1} = (2x ψ_n − √n ψ_{n−1}) / √(n+1)`, which never forms a factorial.
pub fn oscillator_wavefunction(n: usize, x: f64) -> Result<f64> {
    if n > MAX_LEVEL {
        return Err(Error::OutOfRange {
            what: "oscillator level",
            value: n,
            max: MAX_LEVEL,
        });
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("wavefunction argument"));
    }
    let mut out = vec![0.0; n + 1];
    fill_wavefunctions(x, &mut out);
    Ok(out[n])
}

/// `ψ_0(x) … ψ_{levels−1}(x)` in one pass.
pub fn oscillator_wavefunctions(levels: usize, x: f64) -> Result<Vec<f64>> {
    if levels > MAX_LEVEL + 1 {
        return Err(Error::OutOfRange {
            what: "oscillator level",
            value: levels - 1,
            max: MAX_LEVEL,
        });
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("wavefunction argument"));
    }
    let mut out = vec![0.0; levels];
    fill_wavefunctions(x, &mut out);
    Ok(out)
}

/// `ψ_n(x_k)` as a `levels × nodes` matrix.
pub(crate) fn wavefunction_table(levels: usize, nodes: &[f64]) -> DMatrix<f64> {
    let mut table = DMatrix::zeros(levels, nodes.len());
    let mut col = vec![0.0; levels];
    for (k, &x) in nodes.iter().enumerate() {
        fill_wavefunctions(x, &mut col);
        table.column_mut(k).copy_from_slice(&col);
    }
    table
}

/// Unchecked recurrence used by the hot loops.
pub(crate) fn fill_wavefunctions(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = (2.0 / PI).powf(0.25) * (-x * x).exp();
    if out.len() > 1 {
        out[1] = 2.0 * x * out[0];
    }
    for n in 1..out.len().saturating_sub(1) {
        let nf = n as f64;
        out[n + 1] = (2.0 * x * out[n] - nf.sqrt() * out[n - 1]) / (nf + 1.0).sqrt();
    }
}
