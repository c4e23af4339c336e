//! Transport of `z` along its characteristics with frozen coefficients.
//!
//! With the speed `lam(x)` and source `g(x)` frozen over the step, the
//! travel time `int dx/lam` and the accumulated source `int g dx/lam` are
//! cumulative integrals on the grid; each node's departure point solves
//! `Theta(x_d) = Theta(x_i) - dt`.

use crate::error::{Error, Result};
use crate::grid::lagrange_unit;

/// Speeds closer to zero than this are rejected.
pub const MIN_SPEED: f64 = 1e-8;

/// Advances `f_t + lam f_x = g` by `dt`; `metric` is `dx/deta`. Values
/// entering through the inflow end are taken from `inflow`.
pub fn advance(metric: &[f64], speed: &[f64], source: &[f64], f: &[f64], inflow: f64, dt: f64) -> Result<Vec<f64>> {
    let n = f.len();
    let negative = speed.iter().all(|&s| s < -MIN_SPEED);
    let positive = speed.iter().all(|&s| s > MIN_SPEED);
    if negative {
        Ok(advance_leftward(metric, speed, source, f, inflow, dt))
    } else if positive {
        // mirror x -> -x, which flips the speed
        let rev = |v: &[f64]| v.iter().rev().copied().collect::<Vec<_>>();
        let flipped: Vec<f64> = speed.iter().rev().map(|s| -s).collect();
        let mut out = advance_leftward(&rev(metric), &flipped, &rev(source), &rev(f), inflow, dt);
        out.reverse();
        Ok(out)
    } else {
        let worst = speed.iter().fold(f64::INFINITY, |m, s| m.min(s.abs()));
        Err(Error::Domain(format!(
            "characteristic transport needs a one-signed speed (min |speed| = {worst:.3e} over {n} nodes)"
        )))
    }
}

fn cumulative(integrand: &[f64]) -> Vec<f64> {
    let n = integrand.len();
    let mut c = vec![0.0; n];
    for i in 0..n - 1 {
        let mut step = 0.5 * (integrand[i] + integrand[i + 1]);
        if i >= 1 && i + 2 < n {
            step -= (integrand[i + 2] - integrand[i + 1] - integrand[i] + integrand[i - 1]) / 24.0;
        }
        c[i + 1] = c[i] + step;
    }
    c
}

// Local interpolation of `v` at fractional index `pos` on `width` nodes.
fn interp(v: &[f64], pos: f64, width: usize) -> f64 {
    let n = v.len();
    let base = pos.floor() as isize - (width as isize / 2 - 1);
    let start = base.clamp(0, (n - width) as isize) as usize;
    let mut w = [0.0; 8];
    lagrange_unit(pos - start as f64, width, &mut w);
    v[start..start + width].iter().zip(&w[..width]).map(|(a, b)| a * b).sum()
}

// Speed negative everywhere: departure points lie to the right.
fn advance_leftward(metric: &[f64], speed: &[f64], source: &[f64], f: &[f64], inflow: f64, dt: f64) -> Vec<f64> {
    let n = f.len();
    // travel time is decreasing in the index
    let a: Vec<f64> = metric.iter().zip(speed).map(|(m, s)| m / s).collect();
    let b: Vec<f64> = metric.iter().zip(speed).zip(source).map(|((m, s), g)| m * g / s).collect();
    let theta = cumulative(&a);
    let accum = cumulative(&b);

    let mut out = vec![0.0; n];
    let mut j = 0usize;
    for i in 0..n {
        let target = theta[i] - dt;
        if target < theta[n - 1] {
            out[i] = inflow + accum[i] - accum[n - 1];
            continue;
        }
        j = j.max(i);
        while j + 1 < n && theta[j + 1] > target {
            j += 1;
        }
        // target lies in [theta[j+1], theta[j]]
        let pos = if j + 1 >= n {
            (n - 1) as f64
        } else {
            let frac = (theta[j] - target) / (theta[j] - theta[j + 1]);
            let mut p = j as f64 + frac.clamp(0.0, 1.0);
            for _ in 0..4 {
                let resid = interp(&theta, p, 4) - target;
                let slope = interp(&a, p, 4);
                let next = p - resid / slope;
                p = next.clamp(j as f64, (j + 1) as f64);
            }
            p
        };
        out[i] = interp(f, pos, 6) + accum[i] - interp(&accum, pos, 6);
    }
    out
}
