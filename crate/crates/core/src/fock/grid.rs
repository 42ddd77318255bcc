use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    Uniform,
    GaussHermite,
}

/// Nodes and weights for `∫ f(x) dx` over the real line.
///
/// Uniform grids cover `[−span, span]` with trapezoid weights summing to
/// `2·span`. Gauss–Hermite grids place the largest node at `span`; their
/// weights carry the `e^{(x/s)²}` factor, so `Σ w·e^{−(x/s)²} = s√π` for the
/// node scale `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    kind: GridKind,
    span: f64,
}

impl QuadratureGrid {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn span(&self) -> f64 {
        self.span
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Largest gap between neighbouring nodes.
    pub fn max_step(&self) -> f64 {
        self.nodes
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Weighted sum of already-tabulated values.
    pub fn integrate_values(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.weights.len());
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

pub fn make_grid(kind: GridKind, span: f64, count: usize) -> Result<QuadratureGrid> {
    if count < 2 {
        return Err(Error::InvalidParameter(format!(
            "grid needs at least 2 nodes, got {count}"
        )));
    }
    if !(span > 0.0) || !span.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "grid span must be positive, got {span}"
        )));
    }
    match kind {
        GridKind::Uniform => {
            let h = 2.0 * span / (count - 1) as f64;
            let nodes = (0..count).map(|i| -span + h * i as f64).collect();
            let mut weights = vec![h; count];
            weights[0] = h / 2.0;
            weights[count - 1] = h / 2.0;
            Ok(QuadratureGrid {
                nodes,
                weights,
                kind,
                span,
            })
        }
        GridKind::GaussHermite => {
            let rule = GaussHermiteRule::new(count)?;
            let t_max = rule.nodes().last().copied().unwrap_or(1.0);
            let s = span / t_max;
            Ok(QuadratureGrid {
                nodes: rule.nodes().iter().map(|t| s * t).collect(),
                weights: rule.scaled_weights().iter().map(|w| s * w).collect(),
                kind,
                span,
            })
        }
    }
}

/// Gauss–Hermite rule for `∫ f(t) e^{−t²} dt`, exact for polynomials of
/// degree below `2·count`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermiteRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    scaled_weights: Vec<f64>,
}

impl GaussHermiteRule {
    /// Golub–Welsch eigenvalues, polished by Newton steps on the normalized
    /// Hermite recurrence. Weights come from the Christoffel sum over
    /// Hermite functions, which stays finite for large nodes.
    pub fn new(count: usize) -> Result<Self> {
        if count == 0 || count > 512 {
            return Err(Error::InvalidParameter(format!(
                "Gauss-Hermite order must be in 1..=512, got {count}"
            )));
        }
        let mut jacobi = DMatrix::<f64>::zeros(count, count);
        for i in 0..count.saturating_sub(1) {
            let b = ((i + 1) as f64 / 2.0).sqrt();
            jacobi[(i, i + 1)] = b;
            jacobi[(i + 1, i)] = b;
        }
        let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
        nodes.sort_by(|a, b| a.total_cmp(b));

        for t in nodes.iter_mut() {
            for _ in 0..3 {
                let (h, h_prev) = hermite_poly_pair(count, *t);
                let deriv = (2.0 * count as f64).sqrt() * h_prev;
                if deriv != 0.0 {
                    *t -= h / deriv;
                }
            }
        }
        // symmetrize away rounding
        for i in 0..count / 2 {
            let j = count - 1 - i;
            let v = 0.5 * (nodes[j] - nodes[i]);
            nodes[i] = -v;
            nodes[j] = v;
        }
        if count % 2 == 1 {
            nodes[count / 2] = 0.0;
        }

        let scaled_weights: Vec<f64> = nodes
            .iter()
            .map(|&t| 1.0 / hermite_function_sum(count, t))
            .collect();
        let weights = nodes
            .iter()
            .zip(&scaled_weights)
            .map(|(t, w)| w * (-t * t).exp())
            .collect();
        Ok(Self {
            nodes,
            weights,
            scaled_weights,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Weights for the `e^{−t²}`-weighted integral.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `w_k e^{t_k²}`: weights for a plain `∫ g(t) dt` with Gaussian-decaying `g`.
    pub fn scaled_weights(&self) -> &[f64] {
        &self.scaled_weights
    }
}

/// `(p_n(t), p_{n−1}(t))` for the orthonormal Hermite polynomials, both
/// multiplied by `e^{−t²/2}` so large nodes do not overflow.
fn hermite_poly_pair(n: usize, t: f64) -> (f64, f64) {
    let mut prev = 0.0;
    let mut cur = PI.powf(-0.25) * (-t * t / 2.0).exp();
    for j in 0..n {
        let jf = j as f64;
        let next = t * (2.0 / (jf + 1.0)).sqrt() * cur - (jf / (jf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// `Σ_{j<n} (p_j(t) e^{−t²/2})²`
fn hermite_function_sum(n: usize, t: f64) -> f64 {
    let mut prev = 0.0;
    let mut cur = PI.powf(-0.25) * (-t * t / 2.0).exp();
    let mut sum = 0.0;
    for j in 0..n {
        sum += cur * cur;
        let jf = j as f64;
        let next = t * (2.0 / (jf + 1.0)).sqrt() * cur - (jf / (jf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    sum
}
