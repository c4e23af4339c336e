//! Blow-up diagnostics of a finished run: time and rate fits, the cusp
//! exponent, the continuation integral, distances to the stable profile,
//! the bootstrap inequality monitor and particle-path growth checks.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Coefficients, ModelParams, PhysicalState};
use crate::modulation::{SelfSimilarSnapshot, Velocity, VelocityField};
use crate::profile::ProfileSample;
use crate::solver::SlopeSample;

/// Relative slack on every monitored inequality.
pub const MONITOR_SLACK: f64 = 0.01;
/// Below this `|y|` the second-derivative envelope is under interpolation noise.
pub const CURVATURE_FLOOR_Y: f64 = 1.0 / 200.0;
/// Grid cells next to the minimum left out of the cusp fit.
pub const CUSP_EXCLUDED_CELLS: f64 = 3.0;

/// Ordinary least squares `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    /// Covariance of slope and intercept.
    pub covariance: f64,
    pub residual_rms: f64,
    pub points: usize,
}

pub fn least_squares(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let n = x.len();
    if n < 3 || y.len() != n {
        return Err(Error::Fit(format!("need at least 3 paired points, got {n}")));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Fit("abscissae are all equal".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let var = sse / (nf - 2.0);
    let slope_var = var / sxx;
    Ok(LinearFit {
        slope,
        intercept,
        slope_se: slope_var.sqrt(),
        intercept_se: (var * (1.0 / nf + mx * mx / sxx)).sqrt(),
        covariance: -mx * slope_var,
        residual_rms: (sse / nf).sqrt(),
        points: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub uncertainty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub t_star: Estimate,
    /// Power of `|min w_x|` against `T* - t`.
    pub rate_exponent: f64,
    pub exponent_se: f64,
    /// Decades of `|min w_x|` covered by the samples.
    pub decades: f64,
    pub inverse_fit: LinearFit,
    pub log_fit: LinearFit,
}

/// `T*` from the root of the straight line through `(t, 1/|min w_x|)`, and
/// the log-log slope of `|min w_x|` against `T* - t`.
pub fn fit_blowup_rate(series: &[SlopeSample]) -> Result<RateFit> {
    let pts: Vec<&SlopeSample> = series.iter().filter(|s| s.min_wx < 0.0 && s.min_wx.is_finite()).collect();
    if pts.len() < 20 {
        return Err(Error::Fit(format!("{} samples with a negative slope, need 20", pts.len())));
    }
    let mags: Vec<f64> = pts.iter().map(|s| s.min_wx.abs()).collect();
    let lo = mags.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mags.iter().copied().fold(0.0, f64::max);
    let decades = (hi / lo).log10();
    if decades < 1.5 {
        return Err(Error::Fit(format!("slope spans {decades:.2} decades, need 1.5")));
    }
    let t: Vec<f64> = pts.iter().map(|s| s.t).collect();
    let inv: Vec<f64> = mags.iter().map(|m| 1.0 / m).collect();
    let lf = least_squares(&t, &inv)?;
    if !(lf.slope < 0.0) {
        return Err(Error::Fit("1/|w_x| is not decreasing".into()));
    }
    let root = -lf.intercept / lf.slope;
    let var = (lf.intercept_se.powi(2) + root * root * lf.slope_se.powi(2) + 2.0 * root * lf.covariance) / lf.slope.powi(2);
    let last = pts[pts.len() - 1];
    let t_last = last.t;
    let extrapolated = t_last + 1.0 / last.min_wx.abs();
    let value = if root > t_last { root } else { extrapolated };
    let uncertainty = (var.max(0.0) + (root - extrapolated).powi(2)).sqrt().max(4.0 * f64::EPSILON * value.abs());

    let (lx, ly): (Vec<f64>, Vec<f64>) =
        t.iter().zip(&mags).filter(|(t, _)| **t < value).map(|(t, m)| ((value - t).ln(), m.ln())).unzip();
    let log_fit = least_squares(&lx, &ly)?;
    Ok(RateFit {
        t_star: Estimate { value, uncertainty },
        rate_exponent: log_fit.slope,
        exponent_se: log_fit.slope_se,
        decades,
        inverse_fit: lf,
        log_fit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CuspFit {
    /// Mean over both sides of the power of `|w - w(x*)|` against `|x - x*|`.
    pub holder_exponent: f64,
    /// Left and right exponents.
    pub holder_sides: [f64; 2],
    pub asymmetry: f64,
    /// Mean power of `|w_x|` against `|x - x*|`.
    pub gradient_exponent: f64,
    pub gradient_sides: [f64; 2],
    /// Fitted range of `|x - x*|`.
    pub window: [f64; 2],
    pub decades: f64,
    pub residual_rms: f64,
    pub t: f64,
}

/// Log-log fits of `|w - w(x*)|` and `|w_x|` against `|x - x*|` on both
/// sides of the lab position `x_star`, over `|x - x*| < 1`. The inner end of
/// the window stays `CUSP_EXCLUDED_CELLS` cells and ten smoothing lengths
/// `|min w_x|^(-3/2)` away from `x*`.
pub fn fit_cusp_exponent(state: &PhysicalState, x_star: f64) -> Result<CuspFit> {
    let grid = &state.grid;
    let offset = state.frame_offset();
    let xs = x_star - offset;
    let h = grid.spacing(grid.nearest(xs));
    let slope = grid.derivatives_at(&state.w, xs, 6, 1)[1];
    let smoothing = if slope < 0.0 { slope.abs().powf(-1.5) } else { 0.0 };
    let lo = (CUSP_EXCLUDED_CELLS * h).max(10.0 * smoothing);
    let room = (xs - grid.x[0]).min(grid.x[grid.len() - 1] - xs);
    let hi = room.min(1.0);
    let decades = (hi / lo).log10();
    if !(decades >= 1.5) {
        return Err(Error::Fit(format!("cusp window [{lo:.2e}, {hi:.2e}] resolves {decades:.2} decades, need 1.5")));
    }
    let w_star = grid.interpolate(&state.w, xs, 6);
    let per_decade = 40.0;
    let m = (decades * per_decade).ceil() as usize;
    let mut holder = [0.0; 2];
    let mut gradient = [0.0; 2];
    let mut rms = 0.0f64;
    for (side, sign) in [(0usize, -1.0), (1, 1.0)] {
        let mut lr = Vec::with_capacity(m + 1);
        let mut lw = Vec::with_capacity(m + 1);
        let mut lg = Vec::with_capacity(m + 1);
        for k in 0..=m {
            let r = lo * (hi / lo).powf(k as f64 / m as f64);
            let d = grid.derivatives_at(&state.w, xs + sign * r, 6, 1);
            let dw = (d[0] - w_star).abs();
            if dw > 0.0 && d[1] != 0.0 {
                lr.push(r.ln());
                lw.push(dw.ln());
                lg.push(d[1].abs().ln());
            }
        }
        let fw = least_squares(&lr, &lw)?;
        let fg = least_squares(&lr, &lg)?;
        holder[side] = fw.slope;
        gradient[side] = fg.slope;
        rms = rms.max(fw.residual_rms).max(fg.residual_rms);
    }
    Ok(CuspFit {
        holder_exponent: 0.5 * (holder[0] + holder[1]),
        holder_sides: holder,
        asymmetry: (holder[0] - holder[1]).abs(),
        gradient_exponent: 0.5 * (gradient[0] + gradient[1]),
        gradient_sides: gradient,
        window: [lo, hi],
        decades,
        residual_rms: rms,
        t: state.t,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuationSeries {
    pub t: Vec<f64>,
    /// `int_0^t max(|q_x| + |u_x|) dt'`.
    pub integral: Vec<f64>,
    /// Slope of the integral against `-ln(T* - t)` over the last decade of
    /// `T* - t`.
    pub log_coefficient: Option<f64>,
    pub divergent: bool,
}

/// Trapezoid accumulation of the gradient norm, with a logarithmic fit when
/// `t_star` is known.
pub fn continuation_integral(series: &[SlopeSample], t_star: Option<f64>) -> ContinuationSeries {
    let mut t = Vec::with_capacity(series.len());
    let mut integral = Vec::with_capacity(series.len());
    let mut acc = 0.0;
    for (k, s) in series.iter().enumerate() {
        if k > 0 {
            let p = &series[k - 1];
            acc += 0.5 * (s.t - p.t) * (s.max_gradient + p.max_gradient);
        }
        t.push(s.t);
        integral.push(acc);
    }
    let log_coefficient = t_star.and_then(|ts| {
        let first = series.first()?;
        let span = ts - first.t;
        let (x, y): (Vec<f64>, Vec<f64>) = t
            .iter()
            .zip(&integral)
            .filter(|(ti, _)| ts - **ti > 0.0 && ts - **ti <= 0.1 * span)
            .map(|(ti, v)| (-(ts - ti).ln(), *v))
            .unzip();
        least_squares(&x, &y).ok().map(|f| f.slope)
    });
    let growth = match (series.first(), series.last()) {
        (Some(a), Some(b)) if a.max_gradient > 0.0 => b.max_gradient / a.max_gradient,
        _ => 0.0,
    };
    let divergent = log_coefficient.is_some_and(|c| c >= 0.5) && growth >= 10.0;
    ContinuationSeries { t, integral, log_coefficient, divergent }
}

/// Weighted sup distances of `d_y W` from the profile slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileDistance {
    pub s: f64,
    /// `sup |d_y W~|` over `|y| <= 1/M`.
    pub inner: f64,
    /// `sup (1+y^2)^(1/3) |d_y W~|` over `1/M <= |y| <= e^(3s/2)`.
    pub middle: f64,
    /// `sup (1+y^2)^(1/3) |d_y W|` over `|y| >= e^(3s/2)`.
    pub outer: f64,
}

pub fn profile_distance(snapshot: &SelfSimilarSnapshot, m: f64) -> Result<ProfileDistance> {
    let s = snapshot.frame.s;
    let edge = (1.5 * s).exp();
    let mut d = ProfileDistance { s, inner: 0.0, middle: 0.0, outer: 0.0 };
    for (i, &y) in snapshot.y.iter().enumerate() {
        let ay = y.abs();
        let dw = snapshot.dw[0][i];
        let weight = (1.0 + y * y).powf(1.0 / 3.0);
        if ay >= edge {
            d.outer = d.outer.max(weight * dw.abs());
            continue;
        }
        let tilde = (dw - ProfileSample::at(y)?.values[1]).abs();
        if ay <= 1.0 / m {
            d.inner = d.inner.max(tilde);
        } else {
            d.middle = d.middle.max(weight * tilde);
        }
    }
    Ok(d)
}

/// Background levels and constants the monitor needs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorSettings {
    pub m: f64,
    pub epsilon: f64,
    pub kappa0: f64,
    pub rho_bar: f64,
    pub phi_bar: f64,
    pub slack: f64,
}

impl MonitorSettings {
    pub fn new(params: &ModelParams) -> Self {
        let bg = crate::model::background(params);
        Self {
            m: params.m,
            epsilon: params.epsilon,
            kappa0: params.kappa0,
            rho_bar: bg.rho,
            phi_bar: bg.phi,
            slack: MONITOR_SLACK,
        }
    }
}

/// Most binding sample of one inequality family at one snapshot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Margin {
    pub id: &'static str,
    pub t: f64,
    pub s: f64,
    /// `y` of the worst sample (`0` for scalar conditions).
    pub location: f64,
    pub observed: f64,
    pub bound: f64,
    /// `observed / bound`.
    pub ratio: f64,
}

impl Margin {
    pub fn violated(&self, slack: f64) -> bool {
        !(self.ratio <= 1.0 + slack)
    }
}

struct Tracker {
    id: &'static str,
    worst: Option<(f64, f64, f64)>,
}

impl Tracker {
    fn new(id: &'static str) -> Self {
        Self { id, worst: None }
    }

    fn push(&mut self, observed: f64, bound: f64, y: f64) {
        let r = observed / bound;
        match self.worst {
            Some((o, b, _)) if !(r > o / b) && r.is_finite() => {}
            _ => self.worst = Some((observed, bound, y)),
        }
    }

    fn finish(self, t: f64, s: f64) -> Option<Margin> {
        self.worst.map(|(observed, bound, location)| Margin {
            id: self.id,
            t,
            s,
            location,
            observed,
            bound,
            ratio: observed / bound,
        })
    }
}

/// Ids of the monitored inequality families, in report order.
pub const MONITOR_IDS: [&str; 17] = [
    "frame-rates",
    "frame-position",
    "amplitude-band",
    "third-derivative-origin",
    "second-derivative-envelope",
    "high-derivative-caps",
    "z-size",
    "z-derivatives",
    "phi-slope",
    "phi-curvature",
    "phi-high-derivatives",
    "weighted-perturbations",
    "z-slope-envelope",
    "inner-deviation",
    "middle-deviation",
    "outer-slope",
    "slope-envelope",
];

/// Worst ratio of each monitored inequality at one snapshot.
pub fn bootstrap_margins(snapshot: &SelfSimilarSnapshot, set: &MonitorSettings) -> Result<Vec<Margin>> {
    let f = &snapshot.frame;
    let s = f.s;
    let (m, eps) = (set.m, set.epsilon);
    let es = s.exp();
    let ell = 1.0 / m;
    let edge = (1.5 * s).exp();
    let e15 = eps.powf(0.2);
    let mut tr: Vec<Tracker> = MONITOR_IDS.iter().map(|id| Tracker::new(id)).collect();
    let idx = |id: &str| MONITOR_IDS.iter().position(|k| *k == id).expect("known id");

    if let (Some(td), Some(xd)) = (f.tau_dot, f.xi_dot) {
        tr[idx("frame-rates")].push(td.abs(), 5.0 * m / es, 0.0);
        tr[idx("frame-rates")].push(xd.abs(), 8.0 * m, 0.0);
    }
    tr[idx("frame-position")].push((f.tau - eps).abs(), 10.0 * m * eps * eps, 0.0);
    tr[idx("frame-position")].push(f.xi.abs(), 8.0 * m * eps, 0.0);
    tr[idx("third-derivative-origin")].push((snapshot.origin.w[3] - 6.0).abs(), 1.0, 0.0);

    let e_half = (-0.5 * s).exp();
    let z_cap = [1.0 + 8.0 * m * eps, 2.0 * m * (-1.5 * s).exp(), 2.0 * m * (-1.25 * s).exp(), 2.0 * m * (-s).exp(), 2.0 * m * (-0.75 * s).exp()];
    let phi_cap = 2.0 * (-1.5 * s).exp();
    for i in 0..snapshot.len() {
        let y = snapshot.y[i];
        let ay = y.abs();
        let w = snapshot.w[i];
        let dw = snapshot.dw[0][i];
        let wt = 1.0 + y * y;

        let amp = (e_half * w + f.kappa).abs();
        tr[idx("amplitude-band")].push(0.75 * set.kappa0, amp, y);
        tr[idx("amplitude-band")].push(amp, 1.25 * set.kappa0, y);
        if ay >= CURVATURE_FLOOR_Y {
            tr[idx("second-derivative-envelope")].push(snapshot.dw[1][i].abs(), 40.0 * ay / wt.sqrt(), y);
        }
        tr[idx("high-derivative-caps")].push(snapshot.dw[2][i].abs(), m.powf(0.75), y);
        tr[idx("high-derivative-caps")].push(snapshot.dw[3][i].abs(), m, y);

        tr[idx("z-size")].push(snapshot.z[i].abs(), z_cap[0], y);
        for n in 1..=4 {
            tr[idx("z-derivatives")].push(snapshot.dz[n - 1][i].abs(), z_cap[n], y);
        }
        tr[idx("phi-slope")].push(snapshot.dphi[0][i].abs(), 2.0 * m * (-1.5 * s).exp(), y);
        tr[idx("phi-curvature")].push(snapshot.dphi[1][i].abs(), m * (-3.0 * s).exp(), y);
        for n in 3..=5 {
            tr[idx("phi-high-derivatives")].push(snapshot.dphi[n - 1][i].abs(), phi_cap, y);
        }

        let x = snapshot.x[i];
        let xw = (1.0 + x * x).powf(1.0 / 3.0);
        let phi_x = edge * snapshot.dphi[0][i];
        let phi_xx = edge * edge * snapshot.dphi[1][i];
        let pert = (snapshot.sigma[i] - set.rho_bar)
            .abs()
            .max(snapshot.u[i].abs())
            .max((snapshot.phi[i] - set.phi_bar).abs())
            .max(phi_x.abs())
            .max(phi_xx.abs());
        tr[idx("weighted-perturbations")].push(xw * pert, m.sqrt(), y);
        tr[idx("z-slope-envelope")].push(snapshot.dz[0][i].abs(), wt.powf(-1.0 / 3.0), y);

        let envelope = wt.powf(-1.0 / 3.0);
        tr[idx("slope-envelope")].push(dw.abs(), (1.0 + eps.powf(1.0 / 7.0)) * envelope, y);
        if ay >= edge {
            tr[idx("outer-slope")].push(dw.abs(), envelope, y);
            continue;
        }
        let p = ProfileSample::at(y)?.values;
        if ay <= ell {
            tr[idx("inner-deviation")].push((w - p[0]).abs(), 3.0 * e15 * ell.powi(4), y);
            for n in 1..=3 {
                tr[idx("inner-deviation")].push((snapshot.dw[n - 1][i] - p[n]).abs(), 3.0 * e15 * ell.powi(4 - n as i32), y);
            }
            tr[idx("inner-deviation")].push((snapshot.dw[3][i] - p[4]).abs(), 2.0 * e15, y);
        } else {
            tr[idx("middle-deviation")].push((w - p[0]).abs(), eps.powf(1.0 / 6.0) * wt.powf(1.0 / 6.0), y);
            tr[idx("middle-deviation")].push((dw - p[1]).abs(), eps.powf(1.0 / 7.0) * envelope, y);
        }
    }
    Ok(tr.into_iter().filter_map(|t| t.finish(f.t, s)).collect())
}

/// Inequalities broken beyond the slack at one snapshot.
pub fn bootstrap_monitor(snapshot: &SelfSimilarSnapshot, set: &MonitorSettings) -> Result<Vec<Margin>> {
    Ok(bootstrap_margins(snapshot, set)?.into_iter().filter(|m| m.violated(set.slack)).collect())
}

/// Writes margins as CSV rows `id, t, s, location, observed, bound, ratio`.
pub fn write_margins_csv<W: Write>(out: W, margins: &[Margin]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    for m in margins {
        wr.serialize(m)?;
    }
    wr.flush()?;
    Ok(())
}

/// Growth of one particle path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathGrowth {
    pub kind: Velocity,
    pub y0: f64,
    pub s0: f64,
    pub s_end: f64,
    pub truncated: bool,
    /// `min ln(|psi(s)|/|y0|)/(s - s0)` over the path.
    pub min_rate: f64,
    /// `int (1+psi^2)^(-1/3) ds` along the path.
    pub integral: f64,
    /// Bound on the same integral beyond the end of the path.
    pub tail: f64,
}

impl PathGrowth {
    pub fn tail_fraction(&self) -> f64 {
        self.tail / (self.integral + self.tail)
    }
}

/// Integrates the path of `kind` from `(y0, s0)` to the last sampled `s`.
pub fn path_growth(field: &VelocityField, y0: f64, s0: f64) -> Result<PathGrowth> {
    let (_, s1) = field.s_range();
    let steps = ((s1 - s0) / 0.01).ceil().max(1.0) as usize;
    let path = field.integrate(y0, s0, s1, steps)?;
    let mut min_rate = f64::INFINITY;
    for (s, y) in path.s.iter().zip(&path.y).skip(1) {
        min_rate = min_rate.min((y.abs() / y0.abs()).ln() / (s - s0));
    }
    // past the end |psi| keeps growing at least at the rate of its last stretch
    let k = path.s.len();
    let back = k.saturating_sub(11);
    let end = path.y[k - 1].abs();
    let recent = if k > 1 { (end / path.y[back].abs()).ln() / (path.s[k - 1] - path.s[back]) } else { 0.0 };
    let tail = if recent > 0.0 { 1.5 * (1.0 + end * end).powf(-1.0 / 3.0) / recent } else { f64::INFINITY };
    Ok(PathGrowth {
        kind: field.kind,
        y0,
        s0,
        s_end: path.s[k - 1],
        truncated: path.truncated,
        min_rate,
        integral: path.weighted_integral(),
        tail,
    })
}

/// Path checks over sampled starting points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryReport {
    /// `W` paths from `1/M <= |y0| < e^(3 s0/2)`.
    pub near: Vec<PathGrowth>,
    /// Paths of all four velocities from `|y0| >= e^(3 s0/2)`.
    pub far: Vec<PathGrowth>,
    /// `Z` paths from the first snapshot.
    pub z_paths: Vec<PathGrowth>,
}

impl TrajectoryReport {
    pub fn min_near_rate(&self) -> f64 {
        self.near.iter().map(|p| p.min_rate).fold(f64::INFINITY, f64::min)
    }

    pub fn min_far_rate(&self) -> f64 {
        self.far.iter().map(|p| p.min_rate).fold(f64::INFINITY, f64::min)
    }

    pub fn max_tail_fraction(&self) -> f64 {
        self.z_paths.iter().map(|p| p.tail_fraction()).fold(0.0, f64::max)
    }
}

// `count` points log-spaced in [lo, hi], alternating in sign.
fn signed_log_points(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let half = count.div_ceil(2).max(2);
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let j = k / 2;
        let r = lo * (hi / lo).powf(j as f64 / (half - 1) as f64);
        out.push(if k % 2 == 0 { r } else { -r });
    }
    out
}

/// Samples `count` starting points for each family at the first snapshot.
pub fn trajectory_checks(
    snapshots: &[SelfSimilarSnapshot],
    coef: &Coefficients,
    m: f64,
    count: usize,
) -> Result<TrajectoryReport> {
    let first = snapshots.first().ok_or_else(|| Error::Input("no snapshots".into()))?;
    let s0 = first.frame.s;
    let edge = (1.5 * s0).exp();
    let w_field = VelocityField::new(Velocity::W, snapshots, coef)?;
    let (ylo, yhi) = w_field.y_range(s0).ok_or_else(|| Error::Input("empty window".into()))?;
    let reach = 0.5 * ylo.abs().min(yhi);
    if reach <= edge {
        return Err(Error::Window { lo: -edge, hi: edge });
    }
    let mut near = Vec::new();
    for y0 in signed_log_points(1.0 / m, edge, count) {
        near.push(path_growth(&w_field, y0, s0)?);
    }
    let mut far = Vec::new();
    let kinds = [Velocity::W, Velocity::Z, Velocity::Sigma, Velocity::U];
    let fields: Vec<VelocityField> =
        kinds.iter().map(|&k| VelocityField::new(k, snapshots, coef)).collect::<Result<_>>()?;
    for (j, y0) in signed_log_points(edge, reach, count).into_iter().enumerate() {
        // consecutive points are a +/- pair, so each kind sees both sides
        far.push(path_growth(&fields[(j / 2) % 4], y0, s0)?);
    }
    let mut z_paths = Vec::new();
    let mut starts = signed_log_points(0.1, reach, count.saturating_sub(1));
    starts.push(0.0);
    for y0 in starts {
        z_paths.push(path_growth(&fields[1], y0, s0)?);
    }
    Ok(TrajectoryReport { near, far, z_paths })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: f64, min_wx: f64) -> SlopeSample {
        SlopeSample { t, min_wx, argmin_x: 0.0, max_gradient: min_wx.abs(), max_phi_xx: 0.0, max_z_x: 0.0, mass: 1.0 }
    }

    #[test]
    fn least_squares_recovers_a_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let f = least_squares(&x, &y).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-14 && (f.intercept - 2.0).abs() < 1e-14);
        assert!(f.residual_rms < 1e-14);
    }

    #[test]
    fn synthetic_rate() {
        let series: Vec<SlopeSample> = (0..200)
            .map(|k| {
                let t = 0.01 * (1.0 - (-(k as f64) / 40.0).exp());
                sample(t, -1.0 / (0.01 - t))
            })
            .collect();
        let fit = fit_blowup_rate(&series).unwrap();
        assert!((fit.t_star.value - 0.01).abs() < 1e-12, "{fit:?}");
        assert!(fit.t_star.uncertainty > 0.0 && fit.t_star.value > series.last().unwrap().t);
        assert!((fit.rate_exponent + 1.0).abs() < 1e-6);
    }

    #[test]
    fn short_series_is_rejected() {
        let series: Vec<SlopeSample> = (0..50).map(|k| sample(k as f64 * 1e-4, -100.0 - k as f64)).collect();
        assert!(matches!(fit_blowup_rate(&series), Err(Error::Fit(_))));
        assert!(matches!(fit_blowup_rate(&series[..5]), Err(Error::Fit(_))));
    }

    #[test]
    fn continuation_of_exact_law() {
        let series: Vec<SlopeSample> = (0..4000)
            .map(|k| {
                let t = 0.01 * (1.0 - (-(k as f64) / 400.0).exp());
                sample(t, -1.0 / (0.01 - t))
            })
            .collect();
        let c = continuation_integral(&series, Some(0.01));
        assert!(c.integral.windows(2).all(|p| p[1] >= p[0]));
        let coef = c.log_coefficient.unwrap();
        assert!((coef - 1.0).abs() < 1e-3, "{coef}");
        assert!(c.divergent);

        let flat: Vec<SlopeSample> = (0..10).map(|k| sample(k as f64, 0.0)).collect();
        let c = continuation_integral(&flat, None);
        assert!(c.integral.iter().all(|&v| v == 0.0) && !c.divergent);
    }

    #[test]
    fn signed_points_cover_both_sides() {
        let p = signed_log_points(0.1, 10.0, 20);
        assert_eq!(p.len(), 20);
        assert!((p[0] - 0.1).abs() < 1e-15 && (p[19] + 10.0).abs() < 1e-12);
        assert_eq!(p.iter().filter(|v| **v < 0.0).count(), 10);
    }
}
