//! The chemoattractant update with the density frozen over a substep:
//! `phi_t = D (phi_xx - phi + rho) + c phi_x`, where `c` is the grid frame
//! speed.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::Grid;
use crate::heat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhiMethod {
    /// L-stable implicit finite differences (TR-BDF2).
    ImexCentral,
    /// Exact heat-kernel propagation with an exponential trapezoid for the source.
    Duhamel,
}

/// Three-point operator `A phi = D (phi_xx - phi) + c phi_x` on the grid,
/// with the end nodes fixed.
#[derive(Debug, Clone)]
pub struct Operator {
    lower: Vec<f64>,
    upper: Vec<f64>,
    decay: f64,
}

impl Operator {
    pub fn new(grid: &Grid, diffusion: f64, drift: f64) -> Self {
        let n = grid.len();
        let x = &grid.x;
        let mut lower = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for i in 1..n - 1 {
            let hm = x[i] - x[i - 1];
            let hp = x[i + 1] - x[i];
            let s = hm + hp;
            let (lm, lp) = (2.0 / (hm * s), 2.0 / (hp * s));
            lower[i] = diffusion * lm - drift * hp / (hm * s);
            upper[i] = diffusion * lp + drift * hm / (hp * s);
        }
        Self { lower, upper, decay: diffusion }
    }

    /// `A phi + D rho` at the interior nodes, zero at the ends.
    pub fn residual(&self, phi: &[f64], rho_term: &[f64], out: &mut [f64]) {
        let n = phi.len();
        out[0] = 0.0;
        out[n - 1] = 0.0;
        for i in 1..n - 1 {
            let diff = self.lower[i] * (phi[i - 1] - phi[i]) + self.upper[i] * (phi[i + 1] - phi[i]);
            out[i] = diff - self.decay * phi[i] + rho_term[i];
        }
    }

    /// Solves `(I - k A) x = rhs` with `x = rhs` at the end nodes.
    pub fn solve_shifted(&self, k: f64, rhs: &[f64], scratch: &mut Vec<f64>, out: &mut [f64]) {
        let n = rhs.len();
        scratch.clear();
        scratch.resize(n, 0.0);
        let (c, d) = (scratch.as_mut_slice(), out);
        // Thomas sweep; rows 0 and n-1 are identity rows
        c[0] = 0.0;
        d[0] = rhs[0];
        for i in 1..n {
            let (a, b, cu) = if i == n - 1 {
                (0.0, 1.0, 0.0)
            } else {
                (
                    -k * self.lower[i],
                    1.0 + k * (self.lower[i] + self.upper[i] + self.decay),
                    -k * self.upper[i],
                )
            };
            let m = b - a * c[i - 1];
            c[i] = cu / m;
            d[i] = (rhs[i] - a * d[i - 1]) / m;
        }
        for i in (0..n - 1).rev() {
            d[i] -= c[i] * d[i + 1];
        }
    }
}

/// TR-BDF2 step of length `dt` with the source frozen.
pub fn trbdf2_step(op: &Operator, phi: &mut [f64], rho_term: &[f64], dt: f64, work: &mut Work) {
    let gamma = 2.0 - std::f64::consts::SQRT_2;
    let n = phi.len();
    work.resize(n);
    let Work { res, delta, stage, scratch } = work;

    // trapezoid to gamma dt, delta form
    op.residual(phi, rho_term, res);
    for r in res.iter_mut() {
        *r *= gamma * dt;
    }
    op.solve_shifted(0.5 * gamma * dt, res, scratch, delta);
    for i in 0..n {
        stage[i] = phi[i] + delta[i];
    }
    // BDF2 to dt
    let w = (1.0 - gamma) / (2.0 - gamma);
    let c = (1.0 - gamma).powi(2) / (gamma * (2.0 - gamma));
    op.residual(stage, rho_term, res);
    for i in 0..n {
        res[i] = c * (stage[i] - phi[i]) + w * dt * res[i];
    }
    op.solve_shifted(w * dt, res, scratch, delta);
    for i in 0..n {
        phi[i] = stage[i] + delta[i];
    }
}

/// Reusable buffers.
#[derive(Debug, Default, Clone)]
pub struct Work {
    res: Vec<f64>,
    delta: Vec<f64>,
    stage: Vec<f64>,
    scratch: Vec<f64>,
}

impl Work {
    fn resize(&mut self, n: usize) {
        for v in [&mut self.res, &mut self.delta, &mut self.stage] {
            v.resize(n, 0.0);
        }
    }
}

/// Heat-kernel step of length `dt`: the exact homogeneous solution plus the
/// frozen source integrated with an exponential trapezoid.
pub fn duhamel_step(grid: &Grid, phi: &mut [f64], rho: &[f64], diffusion: f64, drift: f64, dt: f64) -> Result<()> {
    let shifted: Vec<f64> = grid.x.iter().map(|x| x + drift * dt).collect();
    let h = grid.min_spacing();
    let propagate = |f: &[f64]| -> Result<Vec<f64>> {
        if diffusion * dt < h * h {
            Ok(shifted.iter().map(|&p| grid.interpolate(f, p, 6)).collect())
        } else {
            heat::convolve_at(grid, f, diffusion * dt, &shifted)
        }
    };
    let decay = (-diffusion * dt).exp();
    let moved_phi = propagate(phi)?;
    let moved_rho = propagate(rho)?;
    // int_0^dt e^(-D u) g(u) du, g linear between rho and the propagated rho
    let mu = -diffusion * dt;
    let (left, right) = if mu.abs() < 1e-3 {
        (
            0.5 + mu / 6.0 + mu * mu / 24.0 + mu.powi(3) / 120.0,
            0.5 + mu / 3.0 + mu * mu / 8.0 + mu.powi(3) / 30.0,
        )
    } else {
        ((mu.exp_m1() - mu) / (mu * mu), (mu.exp() * (mu - 1.0) + 1.0) / (mu * mu))
    };
    let n = phi.len();
    for i in 1..n - 1 {
        phi[i] = decay * moved_phi[i] + diffusion * dt * (left * rho[i] + right * decay * moved_rho[i]);
    }
    Ok(())
}
