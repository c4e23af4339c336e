//! Initial data: the rescaled stable Burgers profile glued into the
//! background, and a validator for every structural constraint on it.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{background, ModelParams, PhysicalState};
use crate::profile::{wbar, wbar_deriv};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialDataSpec {
    pub params: ModelParams,
    /// The cutoff is 1 on `|x| <= cutoff_scale`.
    pub cutoff_scale: f64,
    /// Width in `ln|x|` over which the cutoff falls from 1 to 0.
    pub cutoff_log_width: f64,
    /// Amplitude of `z0 = a x exp(-x^2)`.
    pub z_amplitude: f64,
    /// Amplitude of `phi0 - phi_bar = c (1+x^2)^(-1/3) exp(-(x/l)^4)`.
    pub phi_perturbation: f64,
    /// Length `l` of the chemoattractant envelope.
    pub phi_envelope: f64,
}

impl Default for InitialDataSpec {
    fn default() -> Self {
        Self {
            params: ModelParams::default(),
            cutoff_scale: 1.0,
            cutoff_log_width: 2.5,
            z_amplitude: 0.0,
            phi_perturbation: 0.15,
            phi_envelope: 4.0,
        }
    }
}

impl InitialDataSpec {
    pub fn new(params: ModelParams) -> Self {
        Self { params, ..Self::default() }
    }

    /// Outer edge of the cutoff support.
    pub fn support_radius(&self) -> f64 {
        self.cutoff_scale * self.cutoff_log_width.exp()
    }
}

// Ramp share at each end of the cutoff's log-slope plateau.
const RAMP: f64 = 0.2;

// Integral of the C^3 step t^4 (35 - 84t + 70t^2 - 20t^3).
fn step_integral(t: f64) -> f64 {
    t.powi(5) * (7.0 - 14.0 * t + 10.0 * t * t - 2.5 * t.powi(3))
}

// C^4 monotone step from 0 to 1 with a flat slope in the middle.
fn plateau_step(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    let a = RAMP;
    let raw = if t < a {
        a * step_integral(t / a)
    } else if t < 1.0 - a {
        0.5 * a + (t - a)
    } else {
        0.5 * a + (1.0 - 2.0 * a) + a * (0.5 - step_integral((1.0 - t) / a))
    };
    raw / (1.0 - a)
}

/// Cutoff `chi`: 1 on `|x| <= cutoff_scale`, 0 beyond the support radius,
/// a C^4 step in `ln|x|` between.
pub fn cutoff(x: f64, spec: &InitialDataSpec) -> f64 {
    let r = x.abs();
    if r <= spec.cutoff_scale {
        return 1.0;
    }
    let t = (r / spec.cutoff_scale).ln() / spec.cutoff_log_width;
    if t >= 1.0 {
        return 0.0;
    }
    1.0 - plateau_step(t)
}

/// Perturbation `w0 - kappa0` at `x`.
pub fn w_perturbation(x: f64, spec: &InitialDataSpec) -> Result<f64> {
    let eps = spec.params.epsilon;
    let chi = cutoff(x, spec);
    if chi == 0.0 {
        return Ok(0.0);
    }
    Ok(eps.sqrt() * wbar(x / eps.powf(1.5))? * chi)
}

/// Samples the initial data on `grid` at `t = 0`.
pub fn build(spec: &InitialDataSpec, grid: Arc<Grid>, frame_speed: f64) -> Result<PhysicalState> {
    let p = &spec.params;
    p.validate()?;
    let eps = p.epsilon;
    let inner = eps.powf(1.5);
    let need = 1f64.max(100.0 * inner * p.m);
    if grid.half_width < need {
        return Err(Error::Construction(format!("domain half-width {} is below {need}", grid.half_width)));
    }
    if grid.half_width < spec.support_radius() {
        return Err(Error::Construction(format!(
            "cutoff support radius {:.3} exceeds the domain half-width {}",
            spec.support_radius(),
            grid.half_width
        )));
    }
    if !(spec.cutoff_scale > 0.0 && spec.cutoff_log_width > 0.0 && spec.phi_envelope > 0.0) {
        return Err(Error::Construction("cutoff scale, width and envelope must be positive".into()));
    }
    let i0 = grid.nearest(0.0);
    let h0 = grid.spacing(i0);
    if h0 > inner / 64.0 {
        return Err(Error::Construction(format!(
            "spacing {h0:.3e} at the origin resolves the inner scale {inner:.3e} with fewer than 64 points"
        )));
    }

    let bg = background(p);
    let n = grid.len();
    let mut w = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut phi = Vec::with_capacity(n);
    for &x in &grid.x {
        w.push(p.kappa0 + w_perturbation(x, spec)?);
        z.push(spec.z_amplitude * x * (-x * x).exp());
        let envelope = (-(x / spec.phi_envelope).powi(4)).exp();
        phi.push(bg.phi + spec.phi_perturbation * (1.0 + x * x).powf(-1.0 / 3.0) * envelope);
    }
    let state = PhysicalState { t: 0.0, t_orig: 0.0, grid, frame_speed, w, z, phi };

    let report = validate(&state, p);
    for id in ["inner-window", "middle-window"] {
        if let Some(c) = report.check(id).filter(|c| !c.passed) {
            return Err(Error::Construction(format!("{id} violated: ratio {:.3} at x = {:.4e}", c.ratio, c.location)));
        }
    }
    Ok(state)
}

/// One evaluated constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub id: String,
    pub description: String,
    /// Right-hand side at the most binding sample.
    pub bound: f64,
    /// Left-hand side at the most binding sample.
    pub observed: f64,
    /// Largest `observed / bound`; at most 1 when satisfied.
    pub ratio: f64,
    /// Where `ratio` is attained.
    pub location: f64,
    pub passed: bool,
    /// Failing checks with `blocking == false` are reported but do not
    /// reject the data.
    pub blocking: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub checks: Vec<ConstraintCheck>,
}

impl ConstraintReport {
    pub fn check(&self, id: &str) -> Option<&ConstraintCheck> {
        self.checks.iter().find(|c| c.id == id)
    }

    /// True when no blocking check failed.
    pub fn accepted(&self) -> bool {
        self.checks.iter().all(|c| c.passed || !c.blocking)
    }

    pub fn failures(&self) -> Vec<&ConstraintCheck> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Slack on grid-evaluated inequalities for finite-difference noise.
pub const FD_SLACK: f64 = 1e-6;

// Tracks the most binding sample of `lhs <= rhs`.
struct Worst {
    ratio: f64,
    lhs: f64,
    rhs: f64,
    x: f64,
}

impl Worst {
    fn new() -> Self {
        Self { ratio: 0.0, lhs: 0.0, rhs: 0.0, x: 0.0 }
    }

    fn push(&mut self, lhs: f64, rhs: f64, x: f64) {
        let r = lhs / rhs;
        if r > self.ratio || !r.is_finite() {
            *self = Self { ratio: r, lhs, rhs, x };
        }
    }

    fn finish(self, id: &str, description: &str) -> ConstraintCheck {
        ConstraintCheck {
            id: id.into(),
            description: description.into(),
            bound: self.rhs,
            observed: self.lhs,
            ratio: self.ratio,
            location: self.x,
            passed: self.ratio <= 1.0 + FD_SLACK,
            blocking: true,
            note: None,
        }
    }
}

/// Evaluates every initial-data constraint on the grid of `state`.
pub fn validate(state: &PhysicalState, params: &ModelParams) -> ConstraintReport {
    let grid = &state.grid;
    let n = grid.len();
    let x: Vec<f64> = (0..n).map(|i| state.lab_x(i)).collect();
    let eps = params.epsilon;
    let inner = eps.powf(1.5);
    let ell = 1.0 / params.m;
    let kappa0 = params.kappa0;
    let bg = background(params);
    let g: Vec<f64> = state.w.iter().map(|w| w - kappa0).collect();
    // stencils no finer than 1/200 of the inner scale
    let target = inner / 200.0;
    let dg = grid.strided_fields(&g, target, 4);
    let mut checks = Vec::new();

    // pinned values at the origin
    let x0 = -state.frame_offset();
    let at0 = grid.strided_derivatives(&g, x0, target, 9, 3);
    let targets = [0.0, -1.0 / eps, 0.0, 6.0 / eps.powi(4)];
    let scales = [eps.sqrt(), 1.0 / eps, eps.powf(-2.5), 6.0 / eps.powi(4)];
    let mut worst = Worst::new();
    for k in 0..4 {
        worst.push((at0[k] - targets[k]).abs(), FD_SLACK * scales[k], 0.0);
    }
    let mut c = worst.finish("origin-pins", "w0(0) = kappa0, w0'(0) = -1/eps, w0''(0) = 0, w0'''(0) = 6 eps^-4");
    c.passed = c.ratio <= 1.0;
    checks.push(c);

    // global derivative bounds
    let sup = |f: &[f64]| -> (f64, f64) {
        f.iter().zip(&x).fold((0.0, 0.0), |m, (v, &xi)| if v.abs() > m.0 { (v.abs(), xi) } else { m })
    };
    let bounds = [1.0 / eps, eps.powf(-2.5), 7.0 / eps.powi(4), eps.powf(-5.5)];
    let labels = ["slope-cap", "second-derivative-cap", "third-derivative-cap", "fourth-derivative-cap"];
    for k in 0..4 {
        let (v, at) = sup(&dg[k]);
        let mut w = Worst::new();
        w.push(v, bounds[k], at);
        let mut c = w.finish(labels[k], "sup norms of w0 derivatives");
        if k == 1 {
            c.note = Some(format!(
                "checked against eps^(-5/2); the literal eps^(5/2) bound gives ratio {:.3e}",
                v / eps.powf(2.5)
            ));
        }
        if k == 3 {
            c.blocking = false;
            c.note = Some(format!(
                "the pinned profile window forces |w0''''| near {:.1} eps^(-11/2) within |x| <= eps^(3/2)/M",
                wbar_deriv(ell, 4).map(f64::abs).unwrap_or(f64::NAN)
            ));
        }
        checks.push(c);
    }

    let mut worst = Worst::new();
    for (i, gi) in g.iter().enumerate() {
        worst.push(gi.abs(), kappa0 / 8.0, x[i]);
    }
    checks.push(worst.finish("amplitude", "|w0 - kappa0| <= kappa0/8"));

    // C^4 norms of z0 and phi0 - phi_bar
    // z0 and phi0 vary on unit scales
    let zf = grid.strided_fields(&state.z, 2e-3, 4);
    let pert: Vec<f64> = state.phi.iter().map(|p| p - bg.phi).collect();
    let pf = grid.strided_fields(&pert, 2e-3, 4);
    let mut worst = Worst::new();
    for i in 0..n {
        worst.push(state.z[i].abs(), 1.0, x[i]);
        worst.push(pert[i].abs(), 1.0, x[i]);
        for k in 0..4 {
            worst.push(zf[k][i].abs(), 1.0, x[i]);
            worst.push(pf[k][i].abs(), 1.0, x[i]);
        }
    }
    checks.push(worst.finish("z-phi-smallness", "C^4 norms of z0 and phi0 - phi_bar at most 1"));

    // profile windows
    let profile = |y: f64, k: usize| -> f64 {
        if k == 0 {
            wbar(y).unwrap_or(f64::NAN)
        } else {
            wbar_deriv(y, k).unwrap_or(f64::NAN)
        }
    };
    let mut w0 = Worst::new();
    let mut w1 = Worst::new();
    let mut w2 = Worst::new();
    let e15 = eps.powf(0.2);
    for i in 0..n {
        let xi = x[i];
        let y = xi / inner;
        let ax = xi.abs();
        if ax <= inner * ell {
            w0.push((g[i] / eps.sqrt() - profile(y, 0)).abs(), e15 * ell.powi(4), xi);
            for k in 1..=4 {
                let scaled = eps.powf(1.5 * k as f64 - 0.5) * dg[k - 1][i];
                w0.push((scaled - profile(y, k)).abs(), e15 * ell.powi(4 - k as i32), xi);
            }
        } else if ax <= 1.0 {
            let weight = 1.0 + y * y;
            w1.push((g[i] / eps.sqrt() - profile(y, 0)).abs(), e15 / 3.0 * weight.powf(1.0 / 6.0), xi);
            w1.push((eps * dg[0][i] - profile(y, 1)).abs(), e15 / 3.0 * weight.powf(-1.0 / 3.0), xi);
        } else {
            w2.push((eps * dg[0][i]).abs(), 0.5 * (1.0 + y * y).powf(-1.0 / 3.0), xi);
        }
    }
    checks.push(w0.finish("inner-window", "profile match for |x| <= eps^(3/2)/M, value and derivatives 1..4"));
    checks.push(w1.finish("middle-window", "profile match for eps^(3/2)/M <= |x| <= 1, value and slope"));
    checks.push(w2.finish("outer-slope", "|eps w0'| <= (1/2)(1 + x^2/eps^3)^(-1/3) for |x| >= 1"));

    // weighted smallness of the perturbations
    let alpha = params.alpha();
    let px = &pf[0];
    let pxx = &pf[1];
    let parts: [(&str, Box<dyn Fn(usize) -> f64>); 5] = [
        ("weighted-rho", Box::new(|i| (0.5 * alpha * (state.w[i] - state.z[i])).powf(1.0 / alpha) - bg.rho)),
        ("weighted-u", Box::new(|i| 0.5 * (state.w[i] + state.z[i] - kappa0))),
        ("weighted-phi", Box::new(|i| pert[i])),
        ("weighted-phi-x", Box::new(|i| px[i])),
        ("weighted-phi-xx", Box::new(|i| pxx[i])),
    ];
    for (id, f) in parts.iter() {
        let mut worst = Worst::new();
        for i in 0..n {
            worst.push((1.0 + x[i] * x[i]).powf(1.0 / 3.0) * f(i).abs(), 1.0, x[i]);
        }
        checks.push(worst.finish(id, "(1+x^2)^(1/3) |perturbation| <= 1"));
    }

    let mut worst = Worst::new();
    for i in 0..n {
        let y = x[i] / inner;
        worst.push((1.0 + y * y).powf(1.0 / 3.0) * inner * zf[0][i].abs(), 0.5, x[i]);
    }
    checks.push(worst.finish("weighted-z-slope", "(1 + x^2/eps^3)^(1/3) eps^(3/2) |z0'| <= 1/2"));

    ConstraintReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fine_grid() -> Arc<Grid> {
        Arc::new(Grid::sinh(16.0, 8192, 0.0, 2e-7).unwrap())
    }

    fn spec() -> InitialDataSpec {
        let mut p = ModelParams { half_width: 16.0, m: 30.0, override_regime: true, ..ModelParams::default() };
        p.cells = 8192;
        InitialDataSpec::new(p)
    }

    #[test]
    fn cutoff_is_monotone_step() {
        let s = InitialDataSpec::default();
        assert_eq!(cutoff(0.5, &s), 1.0);
        assert_eq!(cutoff(1.0, &s), 1.0);
        assert_eq!(cutoff(s.support_radius() * 1.01, &s), 0.0);
        let mut prev = 1.0;
        for k in 0..2000 {
            let x = 1.0 + k as f64 * 0.01;
            let c = cutoff(x, &s);
            assert!(c <= prev + 1e-15);
            prev = c;
        }
        assert!((plateau_step(0.5) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn origin_column() {
        let s = spec();
        let state = build(&s, fine_grid(), 0.0).unwrap();
        let report = validate(&state, &s.params);
        let c = report.check("origin-pins").unwrap();
        assert!(c.passed, "{c:?}");
        let g: Vec<f64> = state.w.iter().map(|w| w - s.params.kappa0).collect();
        let i = state.grid.nearest(0.0);
        assert_eq!(state.grid.x[i], 0.0);
        assert_eq!(state.w[i], s.params.kappa0);
        let d = state.grid.strided_derivatives(&g, 0.0, 1e-3 / 200.0, 9, 3);
        assert!((d[1] * 0.01 + 1.0).abs() < 1e-8);
        assert!((d[3] * 1e-8 / 6.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn built_data_report() {
        let s = spec();
        let state = build(&s, fine_grid(), 0.0).unwrap();
        let report = validate(&state, &s.params);
        for id in [
            "origin-pins",
            "slope-cap",
            "second-derivative-cap",
            "third-derivative-cap",
            "amplitude",
            "z-phi-smallness",
            "inner-window",
            "middle-window",
            "outer-slope",
            "weighted-u",
            "weighted-phi",
            "weighted-phi-x",
            "weighted-phi-xx",
            "weighted-z-slope",
        ] {
            let c = report.check(id).unwrap();
            assert!(c.passed, "{id}: {c:?}");
        }
        // profile-forced and density failures are reported, not hidden
        let fourth = report.check("fourth-derivative-cap").unwrap();
        assert!(!fourth.passed && !fourth.blocking);
        assert!((fourth.ratio - 29.83).abs() < 0.05, "{}", fourth.ratio);
        assert!(!report.check("weighted-rho").unwrap().passed);
        assert!(report.check("second-derivative-cap").unwrap().note.is_some());
    }

    #[test]
    fn global_slope_minimum_at_origin() {
        let s = spec();
        let state = build(&s, fine_grid(), 0.0).unwrap();
        let wx = state.grid.derivative_fields(&state.w, 7, 1).remove(0);
        let (imin, _) = wx.iter().enumerate().fold((0, f64::INFINITY), |m, (i, &v)| if v < m.1 { (i, v) } else { m });
        assert_eq!(state.grid.x[imin], 0.0);
    }

    #[test]
    fn constructed_violations() {
        let s = spec();
        let mut state = build(&s, fine_grid(), 0.0).unwrap();
        for w in state.w.iter_mut() {
            *w *= 2.0;
        }
        assert!(!validate(&state, &s.params).check("amplitude").unwrap().passed);

        let state = build(&s, fine_grid(), 0.0).unwrap();
        let mut halved = s.params.clone();
        halved.epsilon *= 0.5;
        assert!(!validate(&state, &halved).check("origin-pins").unwrap().passed);
    }

    #[test]
    fn coarse_or_short_grids_are_rejected() {
        let s = spec();
        let coarse = Arc::new(Grid::uniform(16.0, 4096).unwrap());
        assert!(matches!(build(&s, coarse, 0.0), Err(Error::Construction(_))));
        let short = Arc::new(Grid::sinh(8.0, 4096, 0.0, 2e-7).unwrap());
        assert!(matches!(build(&s, short, 0.0), Err(Error::Construction(_))));
        let mut narrow = s.clone();
        narrow.cutoff_scale = 0.05;
        assert!(matches!(build(&narrow, fine_grid(), 0.0), Err(Error::Construction(_))));
    }
}
