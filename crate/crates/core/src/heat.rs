//! Gaussian heat kernel `H_t(x) = (4 pi t)^(-1/2) exp(-x^2 / 4t)` by direct
//! quadrature, and the variation-of-constants formula for the
//! chemoattractant.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{FirstDerivative, Grid};
use crate::model::ModelParams;

/// Kernel support is cut at `TRUNCATION * sqrt(2t)`.
pub const TRUNCATION: f64 = 8.0;

#[inline]
pub fn kernel(x: f64, t: f64) -> f64 {
    (-x * x / (4.0 * t)).exp() / (4.0 * std::f64::consts::PI * t).sqrt()
}

/// `(H_t * f)(p)` at each point `p`, with `f` extended beyond the grid by its
/// end values on a continuation of the end spacing.
pub fn convolve_at(grid: &Grid, f: &[f64], t: f64, points: &[f64]) -> Result<Vec<f64>> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("heat kernel time must be positive, got {t}")));
    }
    if f.len() != grid.len() {
        return Err(Error::Input("field length does not match grid".into()));
    }
    let weights = lattice_weights(grid);
    Ok(points.iter().map(|&p| row_sum(grid, &weights, f, p, t)).collect())
}

/// `H_t * f` sampled on the grid nodes.
pub fn convolve(grid: &Grid, f: &[f64], t: f64) -> Result<Vec<f64>> {
    convolve_at(grid, f, t, &grid.x)
}

/// Discrete mass of `H_t` centred at node `i`, continuation included.
pub fn kernel_mass(grid: &Grid, t: f64, i: usize) -> f64 {
    let ones = vec![1.0; grid.len()];
    row_sum(grid, &lattice_weights(grid), &ones, grid.x[i], t)
}

// Trapezoid weights with the end nodes treated as interior nodes of the
// continued lattice.
fn lattice_weights(grid: &Grid) -> Vec<f64> {
    let mut w = grid.trapezoid_weights();
    let n = w.len();
    w[0] += 0.5 * (grid.x[1] - grid.x[0]);
    w[n - 1] += 0.5 * (grid.x[n - 1] - grid.x[n - 2]);
    w
}

fn row_sum(grid: &Grid, weights: &[f64], f: &[f64], p: f64, t: f64) -> f64 {
    let x = &grid.x;
    let n = x.len();
    let reach = TRUNCATION * (2.0 * t).sqrt();
    let lo = x.partition_point(|&xj| xj < p - reach);
    let hi = x.partition_point(|&xj| xj <= p + reach);
    let mut acc = 0.0;
    for j in lo..hi {
        acc += weights[j] * kernel(p - x[j], t) * f[j];
    }
    let (h_left, h_right) = (x[1] - x[0], x[n - 1] - x[n - 2]);
    let mut tail = 0.0;
    let mut m = 1.0;
    while x[0] - m * h_left >= p - reach {
        tail += kernel(p - (x[0] - m * h_left), t);
        m += 1.0;
    }
    acc += tail * h_left * f[0];
    let mut tail = 0.0;
    let mut m = 1.0;
    while x[n - 1] + m * h_right <= p + reach {
        tail += kernel(x[n - 1] + m * h_right - p, t);
        m += 1.0;
    }
    acc + tail * h_right * f[n - 1]
}

/// Time-indexed `q = (w - z)/2` samples recorded by the solver.
#[derive(Debug, Clone, Default)]
pub struct QHistory {
    pub times: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    /// Grid frame velocity; the history is stored in frame coordinates.
    pub frame_speed: f64,
}

impl QHistory {
    pub fn push(&mut self, t: f64, q: Vec<f64>) {
        self.times.push(t);
        self.q.push(q);
    }
}

/// Chemoattractant source `(2/(1+alpha)) (alpha q)^(1/alpha)`.
pub fn source(q: f64, params: &ModelParams) -> f64 {
    let alpha = params.alpha();
    2.0 / (1.0 + alpha) * (alpha * q).powf(1.0 / alpha)
}

/// `phi(t) = e^(-lt) H_(Dt) * phi0 + int_0^t e^(-l(t-s)) H_(D(t-s)) * S(s) ds`
/// with `l = D = 2/(1+alpha)`. The source is taken linear in time between
/// recorded samples.
pub fn duhamel_phi(grid: &Grid, phi0: &[f64], history: &QHistory, t: f64, params: &ModelParams) -> Result<Vec<f64>> {
    let times = &history.times;
    if times.is_empty() || times[0] != 0.0 {
        return Err(Error::Input("history must start at t = 0".into()));
    }
    let k_end = times.partition_point(|&s| s < t * (1.0 - 1e-12));
    if k_end >= times.len() || (times[k_end] - t).abs() > 1e-12 * t.max(1.0) {
        return Err(Error::Input(format!("no history sample at t = {t}")));
    }
    if times.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::Input("history times must increase".into()));
    }
    if history.q.iter().flatten().any(|&q| !(q > 0.0)) {
        return Err(Error::Input("history contains nonpositive q".into()));
    }
    let lambda = 2.0 / (1.0 + params.alpha());
    let diff = lambda;
    let c = history.frame_speed;
    let h_min = grid.min_spacing();

    let shifted = |lag: f64| -> Vec<f64> { grid.x.iter().map(|x| x + c * lag).collect() };
    let propagate = |f: &[f64], lag: f64| -> Result<Vec<f64>> {
        if diff * lag < h_min * h_min {
            // identity limit of the kernel, shift kept
            let pts = shifted(lag);
            return Ok(pts.iter().map(|&p| grid.interpolate(f, p, 6)).collect());
        }
        convolve_at(grid, f, diff * lag, &shifted(lag))
    };

    let mut phi: Vec<f64> = if t > 0.0 {
        propagate(phi0, t)?.into_iter().map(|v| v * (-lambda * t).exp()).collect()
    } else {
        phi0.to_vec()
    };
    // exponential factor integrated exactly against a source linear in time
    let mut sample_weight = vec![0.0; k_end + 1];
    for k in 1..=k_end {
        let span = times[k] - times[k - 1];
        let (left, right) = exponential_trapezoid(lambda * span);
        let scale = span * (-lambda * (t - times[k - 1])).exp();
        sample_weight[k - 1] += scale * left;
        sample_weight[k] += scale * right;
    }
    for (k, &weight) in sample_weight.iter().enumerate() {
        if weight == 0.0 {
            continue;
        }
        let lag = t - times[k];
        let s: Vec<f64> = history.q[k].iter().map(|&q| source(q, params)).collect();
        let term = if lag > 0.0 { propagate(&s, lag)? } else { s };
        for (p, v) in phi.iter_mut().zip(term) {
            *p += weight * v;
        }
    }
    Ok(phi)
}

// Weights of the left and right samples in int_0^1 e^(mu s) g(s) ds for g
// linear on [0, 1].
fn exponential_trapezoid(mu: f64) -> (f64, f64) {
    if mu.abs() < 1e-3 {
        let left = 0.5 + mu / 6.0 + mu * mu / 24.0 + mu * mu * mu / 120.0;
        let right = 0.5 + mu / 3.0 + mu * mu / 8.0 + mu * mu * mu / 30.0;
        return (left, right);
    }
    let e = mu.exp();
    ((mu.exp_m1() - mu) / (mu * mu), (e * (mu - 1.0) + 1.0) / (mu * mu))
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayCheck {
    /// Smallest constant satisfying both weighted bounds at every sample.
    pub c1: f64,
    /// Running constant over the sampled times, nondecreasing in `T`.
    pub c1_by_time: Vec<(f64, f64)>,
    /// Log-log slope of the weighted ratio over the outer decade of the grid.
    pub tail_slope: f64,
    pub passed: bool,
}

/// Fits the constant in `|H_t * f| <= C (1+x^2)^(-a)` and
/// `|H_t * f_x| <= C t^(-1/2) (1+x^2)^(-a)` over `times`.
pub fn weighted_decay_check(grid: &Grid, f: &[f64], a: f64, times: &[f64]) -> Result<DecayCheck> {
    if !(a > 0.0) {
        return Err(Error::Domain(format!("decay exponent must be positive, got {a}")));
    }
    if times.is_empty() {
        return Err(Error::Input("no sample times".into()));
    }
    let weight: Vec<f64> = grid.x.iter().map(|x| (1.0 + x * x).powf(a)).collect();
    let mut fx = vec![0.0; grid.len()];
    FirstDerivative::new(grid, 7).apply(f, &mut fx);

    let mut c1 = 0.0f64;
    let mut c1_by_time = Vec::with_capacity(times.len());
    let mut worst_ratio = vec![0.0f64; grid.len()];
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    for &t in &sorted {
        let g = convolve(grid, f, t)?;
        let gx = convolve(grid, &fx, t)?;
        for i in 0..grid.len() {
            let r = (g[i].abs() * weight[i]).max(gx[i].abs() * t.sqrt() * weight[i]);
            worst_ratio[i] = worst_ratio[i].max(r);
            c1 = c1.max(r);
        }
        c1_by_time.push((t, c1));
    }

    // growth of the weighted ratio towards the edge means the claimed decay is too fast
    let l = grid.half_width;
    let (mut sx, mut sy, mut sxx, mut sxy, mut m) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &x) in grid.x.iter().enumerate() {
        let ax = x.abs();
        if ax >= 0.1 * l && ax <= 0.9 * l && worst_ratio[i] > 0.0 {
            let (lx, ly) = (ax.ln(), worst_ratio[i].ln());
            sx += lx;
            sy += ly;
            sxx += lx * lx;
            sxy += lx * ly;
            m += 1.0;
        }
    }
    let tail_slope = if m >= 2.0 { (m * sxy - sx * sy) / (m * sxx - sx * sx) } else { 0.0 };
    let passed = c1.is_finite() && tail_slope <= 0.05;
    Ok(DecayCheck { c1, c1_by_time, tail_slope, passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid {
        Grid::uniform(20.0, 4000).unwrap()
    }

    #[test]
    fn constants_are_preserved() {
        let g = grid();
        let f = vec![3.5; g.len()];
        let out = convolve(&g, &f, 0.7).unwrap();
        assert!(out.iter().all(|v| (v - 3.5).abs() < 1e-12));
    }

    #[test]
    fn rejects_nonpositive_time() {
        let g = grid();
        let f = vec![0.0; g.len()];
        assert!(matches!(convolve(&g, &f, 0.0), Err(Error::Domain(_))));
        assert!(matches!(weighted_decay_check(&g, &f, 0.0, &[1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn gaussian_semigroup() {
        let g = grid();
        let f: Vec<f64> = g.x.iter().map(|&x| kernel(x, 0.3)).collect();
        let out = convolve(&g, &f, 0.5).unwrap();
        let err = g.x.iter().zip(&out).map(|(&x, v)| (v - kernel(x, 0.8)).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "error {err}");
    }

    #[test]
    fn unit_mass_once_resolved() {
        let g = grid();
        let h = g.min_spacing();
        for t in [h * h, 0.01, 1.0, 10.0] {
            let m = kernel_mass(&g, t, 2000);
            assert!((m - 1.0).abs() < 1e-8, "t = {t}: mass {m}");
        }
    }

    #[test]
    fn zero_input_has_zero_constant() {
        let g = grid();
        let f = vec![0.0; g.len()];
        let check = weighted_decay_check(&g, &f, 1.0 / 3.0, &[0.1, 1.0]).unwrap();
        assert_eq!(check.c1, 0.0);
    }

    #[test]
    fn duhamel_equilibrium() {
        let p = ModelParams::default();
        let g = Grid::uniform(5.0, 400).unwrap();
        let bg = crate::model::background(&p);
        let mut hist = QHistory::default();
        for k in 0..=10 {
            hist.push(0.01 * k as f64, vec![bg.q; g.len()]);
        }
        let phi0 = vec![bg.phi; g.len()];
        let phi = duhamel_phi(&g, &phi0, &hist, 0.1, &p).unwrap();
        let err = phi.iter().map(|v| (v - bg.phi).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12 * bg.phi, "error {err}");
    }

    #[test]
    fn duhamel_missing_samples() {
        let p = ModelParams::default();
        let g = Grid::uniform(5.0, 100).unwrap();
        let mut hist = QHistory::default();
        hist.push(0.0, vec![7.5; g.len()]);
        hist.push(0.1, vec![7.5; g.len()]);
        let phi0 = vec![1.0; g.len()];
        assert!(matches!(duhamel_phi(&g, &phi0, &hist, 0.2, &p), Err(Error::Input(_))));
        assert!(matches!(duhamel_phi(&g, &phi0, &QHistory::default(), 0.0, &p), Err(Error::Input(_))));
    }
}
