//! The self-similar frame `y = (x - xi)/(tau - t)^(3/2)`, `s = -ln(tau - t)`,
//! `w = e^(-s/2) W(y, s) + kappa`: extraction and integration of the
//! modulation variables, transformed snapshots and particle paths of the
//! self-similar transport velocities.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{fornberg, FirstDerivative};
use crate::model::{Coefficients, PhysicalState};
use crate::solver::slope_minimum;

/// Stencil spacing for `w`, in units of the inner length `(tau - t)^(3/2)`.
const W_RESOLUTION: f64 = 1.0 / 200.0;
/// Wider spacing for the third and fourth derivatives of `W` away from the
/// origin, where round-off dominates on the fine stencil.
const W_HIGH_RESOLUTION: f64 = 1.0 / 40.0;
/// Stencil spacing for `z` and `phi`.
const OUTER_TARGET: f64 = 2e-3;
/// Quintic stencils at the origin.
const ORIGIN_WIDTH: usize = 6;
/// Smallest `|d^3 W(0)|` for which the drift of `xi` is computed.
pub const MIN_THIRD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulationState {
    pub t: f64,
    /// Blow-up time tracker, same clock as `t`.
    pub tau: f64,
    /// Lab-frame blow-up point tracker.
    pub xi: f64,
    pub kappa: f64,
    pub s: f64,
    pub tau_dot: Option<f64>,
    pub xi_dot: Option<f64>,
}

impl ModulationState {
    pub fn new(t: f64, tau: f64, xi: f64, kappa: f64) -> Result<Self> {
        if !(tau > t) {
            return Err(Error::Domain(format!("tau = {tau} is not ahead of t = {t}")));
        }
        Ok(Self { t, tau, xi, kappa, s: -(tau - t).ln(), tau_dot: None, xi_dot: None })
    }

    /// `x` length of one unit of `y`, `(tau - t)^(3/2)`.
    pub fn scale(&self) -> f64 {
        (-1.5 * self.s).exp()
    }

    pub fn y_of(&self, x: f64) -> f64 {
        (x - self.xi) / self.scale()
    }

    pub fn x_of(&self, y: f64) -> f64 {
        self.xi + y * self.scale()
    }
}

/// `y`-derivatives at `y = 0`, index = order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OriginValues {
    pub w: [f64; 4],
    pub z: [f64; 4],
    pub phi: [f64; 4],
}

/// Values at the origin of `frame` by quintic stencils at `x = xi`.
pub fn origin_values(state: &PhysicalState, frame: &ModulationState) -> OriginValues {
    let grid = &state.grid;
    let xg = frame.xi - state.frame_offset();
    let l = frame.scale();
    let es2 = (0.5 * frame.s).exp();
    let dw = grid.strided_derivatives(&state.w, xg, l * W_RESOLUTION, ORIGIN_WIDTH, 3);
    let dz = grid.strided_derivatives(&state.z, xg, OUTER_TARGET, ORIGIN_WIDTH, 3);
    let dp = grid.strided_derivatives(&state.phi, xg, OUTER_TARGET, ORIGIN_WIDTH, 3);
    let mut out = OriginValues { w: [0.0; 4], z: [0.0; 4], phi: [0.0; 4] };
    for k in 0..4 {
        let lk = l.powi(k as i32);
        out.w[k] = es2 * lk * dw[k];
        out.z[k] = lk * dz[k];
        out.phi[k] = lk * dp[k];
    }
    out.w[0] = es2 * (dw[0] - frame.kappa);
    out
}

/// `(tau_dot, xi_dot)` from the origin values: the drift that keeps
/// `d_y W(0) = -1` and `d_y^2 W(0) = 0`.
pub fn frame_rates(origin: &OriginValues, frame: &ModulationState, coef: &Coefficients) -> Result<(f64, f64)> {
    let s = frame.s;
    let (em, e2, e1) = ((-s).exp(), (-0.5 * s).exp(), s.exp());
    let es2 = 1.0 / e2;
    let a = coef.cross;
    let (b, d) = (coef.damping, coef.diffusion);
    let z = &origin.z;
    let phi = &origin.phi;
    let tau_dot = b * em + a * es2 * z[1] + d * e1 * phi[2] - b * e2 * z[1];
    let third = origin.w[3];
    if !(third.abs() >= MIN_THIRD) {
        return Err(Error::IllConditioned(third));
    }
    let r = 1.0 - tau_dot;
    let force2 = (d * e1 * phi[3] - b * e2 * z[2] + a * es2 * z[2]) / r;
    let xi_dot = -r * e2 * force2 / third + frame.kappa + a * z[0] - coef.shift;
    Ok((tau_dot, xi_dot))
}

/// [`frame_rates`] of a transformed snapshot.
pub fn modulation_rhs(snapshot: &SelfSimilarSnapshot, coef: &Coefficients) -> Result<(f64, f64)> {
    frame_rates(&snapshot.origin, &snapshot.frame, coef)
}

/// `frame` with its rates filled where they are well defined.
pub fn with_rates(state: &PhysicalState, mut frame: ModulationState, coef: &Coefficients) -> ModulationState {
    let origin = origin_values(state, &frame);
    if let Ok((td, xd)) = frame_rates(&origin, &frame, coef) {
        frame.tau_dot = Some(td);
        frame.xi_dot = Some(xd);
    }
    frame
}

/// Frame pinned at the lab position `xi`: `kappa = w(xi)`,
/// `tau - t = -1/w_x(xi)`. `slope_estimate` sets the stencil spacing.
pub fn frame_at(state: &PhysicalState, xi: f64, slope_estimate: f64) -> Result<ModulationState> {
    if !(slope_estimate < 0.0) {
        return Err(Error::NoFrame);
    }
    let xg = xi - state.frame_offset();
    let target = slope_estimate.abs().powf(-1.5) * W_RESOLUTION;
    let d = state.grid.strided_derivatives(&state.w, xg, target, ORIGIN_WIDTH, 1);
    if !(d[1] < 0.0) {
        return Err(Error::NoFrame);
    }
    ModulationState::new(state.t, state.t - 1.0 / d[1], xi, d[0])
}

/// Moves the lab position `xi` to the vertex of the parabola fitted to
/// `w_x` on nodes spaced like the inner length, so that grid-scale noise in
/// `w_x` does not shift the minimum.
pub fn refine_minimum(state: &PhysicalState, xi: f64, slope_estimate: f64) -> f64 {
    let offset = state.frame_offset();
    let target = slope_estimate.abs().powf(-1.5) * W_RESOLUTION;
    let mut xg = xi - offset;
    for _ in 0..2 {
        let d = state.grid.strided_derivatives(&state.w, xg, target, ORIGIN_WIDTH, 3);
        if !(d[3] > 0.0) {
            break;
        }
        xg -= (d[2] / d[3]).clamp(-target, target);
    }
    xg + offset
}

/// Frame at the minimum of `w_x` near the lab position `hint`.
pub fn empirical_at(state: &PhysicalState, hint: f64, slope_estimate: f64) -> Result<ModulationState> {
    if !(slope_estimate < 0.0) {
        return Err(Error::NoFrame);
    }
    frame_at(state, refine_minimum(state, hint, slope_estimate), slope_estimate)
}

/// Frame at the sub-grid minimum of `w_x`, without rates.
pub fn extract_empirical(state: &PhysicalState) -> Result<ModulationState> {
    let grid = &state.grid;
    let mut wx = vec![0.0; grid.len()];
    FirstDerivative::new(grid, 5).apply(&state.w, &mut wx);
    let (imin, argmin) = slope_minimum(&grid.x, &wx);
    empirical_at(state, argmin + state.frame_offset(), wx[imin])
}

/// Frame at given `(tau, xi)` with `kappa = w(xi)`.
pub fn frame_from(state: &PhysicalState, tau: f64, xi: f64, coef: &Coefficients) -> Result<ModulationState> {
    let xg = xi - state.frame_offset();
    let mut frame = ModulationState::new(state.t, tau, xi, 0.0)?;
    frame.kappa = state.grid.strided_derivatives(&state.w, xg, frame.scale() * W_RESOLUTION, ORIGIN_WIDTH, 0)[0];
    let origin = origin_values(state, &frame);
    let (td, xd) = frame_rates(&origin, &frame, coef)?;
    frame.tau_dot = Some(td);
    frame.xi_dot = Some(xd);
    Ok(frame)
}

/// `(tau, xi)` integrated alongside a run with Heun steps.
#[derive(Debug, Clone)]
pub struct OdeFrame {
    pub coef: Coefficients,
    pub frame: ModulationState,
}

impl OdeFrame {
    pub fn start(state: &PhysicalState, tau: f64, xi: f64, coef: Coefficients) -> Result<Self> {
        Ok(Self { frame: frame_from(state, tau, xi, &coef)?, coef })
    }

    /// Moves the frame to `state.t`.
    pub fn advance(&mut self, state: &PhysicalState) -> Result<()> {
        let f = self.frame;
        let h = state.t - f.t;
        let (td, xd) = (f.tau_dot.unwrap_or(0.0), f.xi_dot.unwrap_or(0.0));
        let pred = frame_from(state, f.tau + h * td, f.xi + h * xd, &self.coef)?;
        let (tp, xp) = (pred.tau_dot.unwrap_or(0.0), pred.xi_dot.unwrap_or(0.0));
        self.frame = frame_from(state, f.tau + 0.5 * h * (td + tp), f.xi + 0.5 * h * (xd + xp), &self.coef)?;
        Ok(())
    }
}

/// Fields of one state in self-similar variables.
#[derive(Debug, Clone, Serialize)]
pub struct SelfSimilarSnapshot {
    pub frame: ModulationState,
    pub origin: OriginValues,
    /// Lab positions of the samples.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub w: Vec<f64>,
    pub z: Vec<f64>,
    pub phi: Vec<f64>,
    pub sigma: Vec<f64>,
    pub u: Vec<f64>,
    /// `y`-derivatives of orders 1..=4.
    pub dw: Vec<Vec<f64>>,
    /// Orders 1..=4.
    pub dz: Vec<Vec<f64>>,
    /// Orders 1..=5.
    pub dphi: Vec<Vec<f64>>,
}

/// Transforms `state` to the frame, keeping the nodes with `|y| <= y_window`
/// or the whole grid when `y_window` is `None`.
pub fn to_selfsimilar(
    state: &PhysicalState,
    frame: &ModulationState,
    coef: &Coefficients,
    y_window: Option<f64>,
) -> Result<SelfSimilarSnapshot> {
    let grid = &state.grid;
    let n = grid.len();
    let offset = state.frame_offset();
    let (lo, hi) = match y_window {
        Some(yw) => {
            let (xl, xh) = (frame.x_of(-yw) - offset, frame.x_of(yw) - offset);
            if xl < grid.x[0] || xh > grid.x[n - 1] {
                return Err(Error::Window { lo: -yw, hi: yw });
            }
            (grid.x.partition_point(|&x| x < xl), grid.x.partition_point(|&x| x <= xh))
        }
        None => (0, n),
    };
    let l = frame.scale();
    let es2 = (0.5 * frame.s).exp();
    let m = hi - lo;
    let mut snap = SelfSimilarSnapshot {
        frame: *frame,
        origin: origin_values(state, frame),
        x: Vec::with_capacity(m),
        y: Vec::with_capacity(m),
        w: Vec::with_capacity(m),
        z: Vec::with_capacity(m),
        phi: Vec::with_capacity(m),
        sigma: Vec::with_capacity(m),
        u: Vec::with_capacity(m),
        dw: vec![Vec::with_capacity(m); 4],
        dz: vec![Vec::with_capacity(m); 4],
        dphi: vec![Vec::with_capacity(m); 5],
    };
    for i in lo..hi {
        let xg = grid.x[i];
        let (w, z) = (state.w[i], state.z[i]);
        snap.x.push(xg + offset);
        snap.y.push(frame.y_of(xg + offset));
        snap.w.push(es2 * (w - frame.kappa));
        snap.z.push(z);
        snap.phi.push(state.phi[i]);
        snap.sigma.push(coef.density(w, z));
        snap.u.push(0.5 * (w + z - coef.kappa0));
        let dw = grid.strided_derivatives(&state.w, xg, l * W_RESOLUTION, 9, 2);
        let dw_high = grid.strided_derivatives(&state.w, xg, l * W_HIGH_RESOLUTION, 9, 4);
        let dz = grid.strided_derivatives(&state.z, xg, OUTER_TARGET, 9, 4);
        let dp = grid.strided_derivatives(&state.phi, xg, OUTER_TARGET, 9, 5);
        let mut lk = 1.0;
        for k in 1..=5 {
            lk *= l;
            if k <= 4 {
                let d = if k <= 2 { dw[k] } else { dw_high[k] };
                snap.dw[k - 1].push(es2 * lk * d);
                snap.dz[k - 1].push(lk * dz[k]);
            }
            snap.dphi[k - 1].push(lk * dp[k]);
        }
    }
    Ok(snap)
}

impl SelfSimilarSnapshot {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// The samples with `|y| <= y_window`.
    pub fn windowed(&self, y_window: f64) -> Self {
        let lo = self.y.partition_point(|&y| y < -y_window);
        let hi = self.y.partition_point(|&y| y <= y_window);
        let cut = |v: &Vec<f64>| v[lo..hi].to_vec();
        Self {
            frame: self.frame,
            origin: self.origin,
            x: cut(&self.x),
            y: cut(&self.y),
            w: cut(&self.w),
            z: cut(&self.z),
            phi: cut(&self.phi),
            sigma: cut(&self.sigma),
            u: cut(&self.u),
            dw: self.dw.iter().map(cut).collect(),
            dz: self.dz.iter().map(cut).collect(),
            dphi: self.dphi.iter().map(cut).collect(),
        }
    }

    /// Largest deviation of `w` rebuilt from `(W, kappa, s)` from `w_phys`
    /// sampled at the same nodes.
    pub fn reconstruction_error(&self, w_phys: &[f64]) -> f64 {
        let e = (-0.5 * self.frame.s).exp();
        self.w.iter().zip(w_phys).map(|(big, w)| (e * big + self.frame.kappa - w).abs()).fold(0.0, f64::max)
    }

    /// Transport velocity of `kind` at every sample.
    pub fn velocity(&self, kind: Velocity, coef: &Coefficients) -> Result<Vec<f64>> {
        let f = &self.frame;
        let (Some(td), Some(xd)) = (f.tau_dot, f.xi_dot) else {
            return Err(Error::Input(format!("frame at s = {} has no rates", f.s)));
        };
        let r = 1.0 / (1.0 - td);
        let es2 = (0.5 * f.s).exp();
        let (a, k) = (coef.cross, coef.shift);
        let v = (0..self.len())
            .map(|i| {
                let y = self.y[i];
                match kind {
                    Velocity::W => r * es2 * (f.kappa + a * self.z[i] - xd - k) + 1.5 * y + r * self.w[i],
                    Velocity::Z => r * es2 * (a * f.kappa - xd - k) + r * a * self.w[i] + 1.5 * y + r * es2 * self.z[i],
                    Velocity::Sigma => -r * es2 * xd + 1.5 * y + r * es2 * self.u[i],
                    Velocity::U => {
                        -r * es2 * xd + 1.5 * y + r * es2 * self.u[i] + r * es2 * self.sigma[i].powf(coef.alpha)
                    }
                }
            })
            .collect();
        Ok(v)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ["y", "x", "W", "Z", "Phi", "sigma", "U"].iter().map(|s| s.to_string()).collect();
        header.extend((1..=4).map(|k| format!("dW{k}")));
        header.extend((1..=4).map(|k| format!("dZ{k}")));
        header.extend((1..=5).map(|k| format!("dPhi{k}")));
        wr.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![self.y[i], self.x[i], self.w[i], self.z[i], self.phi[i], self.sigma[i], self.u[i]];
            row.extend(self.dw.iter().chain(&self.dz).chain(&self.dphi).map(|d| d[i]));
            wr.write_record(row.iter().map(|v| format!("{v:e}")))?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Writes a modulation series as CSV.
pub fn write_series_csv<W: Write>(out: W, series: &[ModulationState]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    for m in series {
        wr.serialize(m)?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Velocity {
    W,
    Z,
    Sigma,
    U,
}

/// A transport velocity sampled on a sequence of snapshots, interpolated
/// cubically in `y` and linearly in `s`.
#[derive(Debug, Clone)]
pub struct VelocityField {
    pub kind: Velocity,
    s: Vec<f64>,
    y: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

/// A sampled particle path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Path {
    pub s: Vec<f64>,
    pub y: Vec<f64>,
    /// The path left the sampled window before `s1`.
    pub truncated: bool,
}

impl Path {
    /// `int (1 + psi^2)^(-1/3) ds` by the trapezoid rule.
    pub fn weighted_integral(&self) -> f64 {
        let g = |y: f64| (1.0 + y * y).powf(-1.0 / 3.0);
        self.s.windows(2).zip(self.y.windows(2)).map(|(s, y)| 0.5 * (s[1] - s[0]) * (g(y[0]) + g(y[1]))).sum()
    }
}

impl VelocityField {
    /// `snapshots` must be ordered by `s`.
    pub fn new(kind: Velocity, snapshots: &[SelfSimilarSnapshot], coef: &Coefficients) -> Result<Self> {
        if snapshots.len() < 2 {
            return Err(Error::Input("a velocity field needs at least two snapshots".into()));
        }
        if snapshots.windows(2).any(|p| p[1].frame.s <= p[0].frame.s) {
            return Err(Error::Input("snapshots are not ordered by s".into()));
        }
        let mut field = Self { kind, s: Vec::new(), y: Vec::new(), v: Vec::new() };
        for snap in snapshots {
            field.s.push(snap.frame.s);
            field.y.push(snap.y.clone());
            field.v.push(snap.velocity(kind, coef)?);
        }
        Ok(field)
    }

    pub fn s_range(&self) -> (f64, f64) {
        (self.s[0], self.s[self.s.len() - 1])
    }

    /// `y` range covered at `s` by both neighbouring snapshots.
    pub fn y_range(&self, s: f64) -> Option<(f64, f64)> {
        let k = self.bracket(s)?;
        let (a, b) = (&self.y[k], &self.y[k + 1]);
        Some((a[0].max(b[0]), a[a.len() - 1].min(b[b.len() - 1])))
    }

    fn bracket(&self, s: f64) -> Option<usize> {
        let (s0, s1) = self.s_range();
        if !(s0..=s1).contains(&s) {
            return None;
        }
        Some(self.s.partition_point(|&v| v <= s).clamp(1, self.s.len() - 1) - 1)
    }

    fn at_snapshot(&self, k: usize, y: f64) -> Option<f64> {
        let ys = &self.y[k];
        let n = ys.len();
        if n < 4 || y < ys[0] || y > ys[n - 1] {
            return None;
        }
        let j = ys.partition_point(|&v| v < y);
        let start = j.saturating_sub(2).min(n - 4);
        let c = fornberg(y, &ys[start..start + 4], 0);
        Some(c[0].iter().zip(&self.v[k][start..]).map(|(a, b)| a * b).sum())
    }

    /// Velocity at `(y, s)`, `None` outside the sampled window.
    pub fn at(&self, y: f64, s: f64) -> Option<f64> {
        let k = self.bracket(s)?;
        let (a, b) = (self.at_snapshot(k, y)?, self.at_snapshot(k + 1, y)?);
        let th = (s - self.s[k]) / (self.s[k + 1] - self.s[k]);
        Some((1.0 - th) * a + th * b)
    }

    /// RK4 path of `d psi/ds = V(psi, s)` from `psi(s0) = y0` with `steps`
    /// equal steps up to `s1`.
    pub fn integrate(&self, y0: f64, s0: f64, s1: f64, steps: usize) -> Result<Path> {
        if self.at(y0, s0).is_none() {
            return Err(Error::Input(format!("start ({y0}, {s0}) lies outside the sampled window")));
        }
        let steps = steps.max(1);
        let h = (s1 - s0) / steps as f64;
        let mut path = Path { s: vec![s0], y: vec![y0], truncated: false };
        let mut y = y0;
        for j in 0..steps {
            let s = s0 + j as f64 * h;
            let end = if j + 1 == steps { s1 } else { s + h };
            let stage = || -> Option<f64> {
                let k1 = self.at(y, s)?;
                let k2 = self.at(y + 0.5 * h * k1, s + 0.5 * h)?;
                let k3 = self.at(y + 0.5 * h * k2, s + 0.5 * h)?;
                let k4 = self.at(y + h * k3, end)?;
                Some(y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
            };
            match stage() {
                Some(next) => {
                    y = next;
                    path.s.push(end);
                    path.y.push(y);
                }
                None => {
                    path.truncated = true;
                    break;
                }
            }
        }
        Ok(path)
    }
}

/// Path of `kind` from `(y0, s0)` to `s1` through the velocity sampled on
/// `snapshots`, with steps of at most `0.01` in `s`.
pub fn integrate_trajectory(
    kind: Velocity,
    y0: f64,
    s0: f64,
    s1: f64,
    snapshots: &[SelfSimilarSnapshot],
    coef: &Coefficients,
) -> Result<Path> {
    let field = VelocityField::new(kind, snapshots, coef)?;
    let steps = ((s1 - s0) / 0.01).ceil().max(1.0) as usize;
    field.integrate(y0, s0, s1, steps)
}
