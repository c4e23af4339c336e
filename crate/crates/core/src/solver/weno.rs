//! One-sided derivative reconstructions in index space.
//!
//! Inputs are the node differences `d[j] = f[j+1] - f[j]`; outputs are
//! `df/deta` at a node from the left-biased (`minus`) or right-biased
//! (`plus`) stencil.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportScheme {
    Weno5,
    Upwind2,
}

impl TransportScheme {
    /// Nodes at each end that the stencils cannot reach.
    pub const GHOST: usize = 3;

    /// Left- and right-biased derivatives at node `i` (needs `3 <= i < n-3`).
    #[inline]
    pub fn one_sided(self, d: &[f64], i: usize, eps: f64) -> (f64, f64) {
        match self {
            TransportScheme::Weno5 => (
                weno5(d[i - 3], d[i - 2], d[i - 1], d[i], d[i + 1], eps),
                weno5(d[i + 2], d[i + 1], d[i], d[i - 1], d[i - 2], eps),
            ),
            TransportScheme::Upwind2 => (1.5 * d[i - 1] - 0.5 * d[i - 2], 1.5 * d[i] - 0.5 * d[i + 1]),
        }
    }
}

/// Jiang-Peng weighted reconstruction of the derivative from five differences,
/// upwind side first.
#[inline]
pub fn weno5(v1: f64, v2: f64, v3: f64, v4: f64, v5: f64, eps: f64) -> f64 {
    let q0 = v1 / 3.0 - 7.0 / 6.0 * v2 + 11.0 / 6.0 * v3;
    let q1 = -v2 / 6.0 + 5.0 / 6.0 * v3 + v4 / 3.0;
    let q2 = v3 / 3.0 + 5.0 / 6.0 * v4 - v5 / 6.0;
    let s0 = 13.0 / 12.0 * (v1 - 2.0 * v2 + v3).powi(2) + 0.25 * (v1 - 4.0 * v2 + 3.0 * v3).powi(2);
    let s1 = 13.0 / 12.0 * (v2 - 2.0 * v3 + v4).powi(2) + 0.25 * (v2 - v4).powi(2);
    let s2 = 13.0 / 12.0 * (v3 - 2.0 * v4 + v5).powi(2) + 0.25 * (3.0 * v3 - 4.0 * v4 + v5).powi(2);
    let a0 = 0.1 / (eps + s0).powi(2);
    let a1 = 0.6 / (eps + s1).powi(2);
    let a2 = 0.3 / (eps + s2).powi(2);
    (a0 * q0 + a1 * q1 + a2 * q2) / (a0 + a1 + a2)
}

/// Smoothness regularisation scaled to the field's largest squared difference.
pub fn weno_eps(d: &[f64]) -> f64 {
    let m = d.iter().fold(0.0f64, |acc, v| acc.max(v * v));
    (1e-6 * m).max(1e-40)
}
