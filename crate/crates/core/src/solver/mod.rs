//! Time integration of the rescaled Riemann system to the brink of blow-up.
//!
//! One step is a symmetric splitting: half a step of the chemoattractant with
//! the density frozen, then the transport of `(w, z)` with `phi_x` frozen,
//! then the second chemoattractant half step. Inside the transport stage `z`
//! is either moved along its characteristics in two half steps around an
//! SSP-RK3 step of `w`, or carried with `w` by the same method of lines.

pub mod characteristic;
pub mod parabolic;
pub mod weno;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{fornberg, FirstDerivative, Grid};
use crate::heat::QHistory;
use crate::model::{background, Coefficients, ModelParams, PhysicalState};

pub use parabolic::PhiMethod;
pub use weno::TransportScheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coupling {
    Full,
    /// Pure Burgers for `w`: no damping, no chemotactic feedback, `z` and
    /// `phi` held fixed.
    BurgersTest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZTransport {
    /// Semi-Lagrangian along the `z` characteristics; no CFL limit from `z`.
    Characteristic,
    /// Same upwind reconstruction and Runge-Kutta stages as `w`.
    MethodOfLines,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub params: ModelParams,
    pub phi_method: PhiMethod,
    pub transport_scheme: TransportScheme,
    pub coupling: Coupling,
    pub z_transport: ZTransport,
    /// Stop once `min w_x <= -stop_slope`. Defaults to `0.2 / h_min`.
    pub stop_slope: Option<f64>,
    /// Steps between stored snapshots, 0 for none.
    pub snapshot_stride: usize,
    /// Also store a snapshot whenever `|min w_x|` grew by this factor.
    pub snapshot_growth: f64,
    /// Defaults to `2 epsilon`.
    pub t_limit: Option<f64>,
    /// `dt <= proximity / |min w_x|`.
    pub proximity: f64,
    /// Lower bound on the transport speed in the CFL estimate.
    pub speed_floor: f64,
    pub max_steps: usize,
    /// Keep `q` at every step for the Duhamel reference.
    pub record_q_history: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            params: ModelParams::default(),
            phi_method: PhiMethod::ImexCentral,
            transport_scheme: TransportScheme::Weno5,
            coupling: Coupling::Full,
            z_transport: ZTransport::Characteristic,
            stop_slope: None,
            snapshot_stride: 0,
            snapshot_growth: 1.25,
            t_limit: None,
            proximity: 0.2,
            speed_floor: 1e-3,
            max_steps: 5_000_000,
            record_q_history: false,
        }
    }
}

impl SolverConfig {
    pub fn new(params: ModelParams) -> Self {
        Self { params, ..Self::default() }
    }

    pub fn stop_slope_for(&self, grid: &Grid) -> f64 {
        self.stop_slope.unwrap_or(0.2 / grid.min_spacing())
    }

    pub fn t_limit(&self) -> f64 {
        self.t_limit.unwrap_or(2.0 * self.params.epsilon)
    }

    /// Coefficients with the Burgers-test deletions applied.
    pub fn coefficients(&self) -> Coefficients {
        let mut c = self.params.coefficients();
        if self.coupling == Coupling::BurgersTest {
            c.damping = 0.0;
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    SlopeThreshold,
    TimeLimit,
    Instability,
}

/// Per-step record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeSample {
    pub t: f64,
    pub min_wx: f64,
    /// Lab-frame location of the slope minimum, refined between nodes.
    pub argmin_x: f64,
    /// `|q_x| + |u_x|` maximised over the grid, which is `max(|w_x|, |z_x|)`.
    pub max_gradient: f64,
    pub max_phi_xx: f64,
    pub max_z_x: f64,
    /// `int rho dx` over the grid.
    pub mass: f64,
}

/// Time derivatives of the three fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Rates {
    pub w: Vec<f64>,
    pub z: Vec<f64>,
    pub phi: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub config: SolverConfig,
    /// Time-ordered, first is the initial state, last the final state.
    pub snapshots: Vec<PhysicalState>,
    pub slope_series: Vec<SlopeSample>,
    pub stop_reason: StopReason,
    pub message: Option<String>,
    pub steps: usize,
    pub stop_slope: f64,
    pub q_history: Option<QHistory>,
}

impl RunTrace {
    pub fn final_state(&self) -> &PhysicalState {
        self.snapshots.last().expect("trace holds the initial state")
    }

    pub fn last_sample(&self) -> &SlopeSample {
        self.slope_series.last().expect("trace holds the initial sample")
    }

    /// `t + 1/|min w_x|` at the last sample.
    pub fn t_star_extrapolated(&self) -> f64 {
        let s = self.last_sample();
        s.t + 1.0 / s.min_wx.abs()
    }
}

/// Reusable state of one integration.
pub struct Stepper {
    config: SolverConfig,
    coef: Coefficients,
    grid: Arc<Grid>,
    frame_speed: f64,
    deriv: FirstDerivative,
    op: parabolic::Operator,
    work: parabolic::Work,
    phi_x: Vec<f64>,
    rho_term: Vec<f64>,
    diff: Vec<f64>,
    stage_w: [Vec<f64>; 3],
    stage_z: [Vec<f64>; 3],
}

impl Stepper {
    pub fn new(config: &SolverConfig, grid: Arc<Grid>, frame_speed: f64) -> Result<Self> {
        let n = grid.len();
        if n < 2 * TransportScheme::GHOST + 2 {
            return Err(Error::Input(format!("grid with {n} nodes is too small")));
        }
        let coef = config.coefficients();
        let op = parabolic::Operator::new(&grid, coef.diffusion, frame_speed);
        let deriv = FirstDerivative::new(&grid, 5);
        let zeros = || vec![0.0; n];
        Ok(Self {
            config: config.clone(),
            coef,
            frame_speed,
            deriv,
            op,
            work: parabolic::Work::default(),
            phi_x: zeros(),
            rho_term: zeros(),
            diff: zeros(),
            stage_w: [zeros(), zeros(), zeros()],
            stage_z: [zeros(), zeros(), zeros()],
            grid,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    fn full(&self) -> bool {
        self.config.coupling == Coupling::Full
    }

    /// `w_x` at every node.
    pub fn slope(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; w.len()];
        self.deriv.apply(w, &mut out);
        out
    }

    /// Upwind `-(speed) f_x`, zero on the held end nodes.
    fn transport(&mut self, f: &[f64], speed: impl Fn(usize) -> f64, out: &mut [f64]) {
        let n = f.len();
        for j in 0..n - 1 {
            self.diff[j] = f[j + 1] - f[j];
        }
        self.diff[n - 1] = 0.0;
        let eps = weno::weno_eps(&self.diff[..n - 1]);
        let g = TransportScheme::GHOST;
        let scheme = self.config.transport_scheme;
        let metric = &self.grid.metric;
        out[..g].fill(0.0);
        out[n - g..].fill(0.0);
        for i in g..n - g {
            let s = speed(i);
            let d = if s > 0.0 {
                scheme.one_sided(&self.diff, i, eps).0
            } else if s < 0.0 {
                scheme.one_sided(&self.diff, i, eps).1
            } else {
                0.0
            };
            out[i] = -s * d / metric[i];
        }
    }

    fn w_rate(&mut self, w: &[f64], z: &[f64], out: &mut [f64]) {
        let c = self.coef;
        let cf = self.frame_speed;
        let full = self.full();
        self.transport(w, |i| c.speed_w(w[i], if full { z[i] } else { 0.0 }) - cf, out);
        if full {
            let g = TransportScheme::GHOST;
            for i in g..w.len() - g {
                out[i] += c.forcing(w[i], z[i], self.phi_x[i]);
            }
        }
    }

    fn z_rate(&mut self, w: &[f64], z: &[f64], out: &mut [f64]) {
        let c = self.coef;
        let cf = self.frame_speed;
        self.transport(z, |i| c.speed_z(w[i], z[i]) - cf, out);
        let g = TransportScheme::GHOST;
        for i in g..w.len() - g {
            out[i] += c.forcing(w[i], z[i], self.phi_x[i]);
        }
    }

    /// Time derivatives of the semi-discrete system with `phi` treated
    /// explicitly.
    pub fn rhs(&mut self, state: &PhysicalState) -> Result<Rates> {
        check_positive(state)?;
        let n = state.len();
        self.deriv.apply(&state.phi, &mut self.phi_x);
        let mut w = vec![0.0; n];
        let mut z = vec![0.0; n];
        let mut phi = vec![0.0; n];
        self.w_rate(&state.w, &state.z, &mut w);
        if self.full() {
            self.z_rate(&state.w, &state.z, &mut z);
            self.fill_rho(&state.w, &state.z);
            self.op.residual(&state.phi, &self.rho_term, &mut phi);
        }
        Ok(Rates { w, z, phi })
    }

    fn fill_rho(&mut self, w: &[f64], z: &[f64]) {
        let c = self.coef;
        for i in 0..w.len() {
            self.rho_term[i] = c.diffusion * c.density(w[i], z[i]);
        }
    }

    /// Largest stable step for `state`.
    pub fn cfl_dt(&self, state: &PhysicalState) -> f64 {
        let c = self.coef;
        let cf = self.frame_speed;
        let full = self.full();
        let with_z = full && self.config.z_transport == ZTransport::MethodOfLines;
        let floor = self.config.speed_floor;
        let mut dt = f64::INFINITY;
        for i in 0..state.len() {
            let zi = if full { state.z[i] } else { 0.0 };
            let mut s = (c.speed_w(state.w[i], zi) - cf).abs();
            if with_z {
                s = s.max((c.speed_z(state.w[i], zi) - cf).abs());
            }
            dt = dt.min(self.grid.metric[i] / s.max(floor));
        }
        dt *= self.config.params.cfl;
        let min_wx = (0..state.len()).map(|i| self.deriv.at(&state.w, i)).fold(0.0, f64::min);
        if min_wx < 0.0 {
            dt = dt.min(self.config.proximity / min_wx.abs());
        }
        dt
    }

    fn phi_half(&mut self, state: &mut PhysicalState, dt: f64) -> Result<()> {
        self.fill_rho(&state.w, &state.z);
        match self.config.phi_method {
            PhiMethod::ImexCentral => parabolic::trbdf2_step(&self.op, &mut state.phi, &self.rho_term, dt, &mut self.work),
            PhiMethod::Duhamel => {
                let rho: Vec<f64> = self.rho_term.iter().map(|r| r / self.coef.diffusion).collect();
                parabolic::duhamel_step(&self.grid, &mut state.phi, &rho, self.coef.diffusion, self.frame_speed, dt)?;
            }
        }
        Ok(())
    }

    // Midpoint predictor-corrector along the z characteristics.
    fn z_characteristic(&mut self, w: &[f64], z: &mut Vec<f64>, dt: f64) -> Result<()> {
        let c = self.coef;
        let cf = self.frame_speed;
        let n = z.len();
        let mut speed = vec![0.0; n];
        let mut source = vec![0.0; n];
        let frozen = |zs: &[f64], speed: &mut [f64], source: &mut [f64]| {
            for i in 0..n {
                speed[i] = c.speed_z(w[i], zs[i]) - cf;
                source[i] = c.forcing(w[i], zs[i], self.phi_x[i]);
            }
        };
        frozen(z, &mut speed, &mut source);
        let predicted = characteristic::advance(&self.grid.metric, &speed, &source, z, 0.0, dt)?;
        let mid: Vec<f64> = z.iter().zip(&predicted).map(|(a, b)| 0.5 * (a + b)).collect();
        frozen(&mid, &mut speed, &mut source);
        let mut next = characteristic::advance(&self.grid.metric, &speed, &source, z, 0.0, dt)?;
        let g = TransportScheme::GHOST;
        next[..g].copy_from_slice(&z[..g]);
        next[n - g..].copy_from_slice(&z[n - g..]);
        *z = next;
        Ok(())
    }

    // SSP-RK3 for w alone (z frozen) or for w and z together.
    fn rk3(&mut self, state: &mut PhysicalState, dt: f64, with_z: bool) {
        let n = state.len();
        let mut rw = std::mem::take(&mut self.stage_w);
        let mut rz = std::mem::take(&mut self.stage_z);
        let (w0, z0) = (state.w.clone(), state.z.clone());
        // stage 1
        self.w_rate(&w0, &z0, &mut rw[0]);
        if with_z {
            self.z_rate(&w0, &z0, &mut rz[0]);
        }
        let w1: Vec<f64> = (0..n).map(|i| w0[i] + dt * rw[0][i]).collect();
        let z1: Vec<f64> = if with_z { (0..n).map(|i| z0[i] + dt * rz[0][i]).collect() } else { z0.clone() };
        // stage 2
        self.w_rate(&w1, &z1, &mut rw[1]);
        if with_z {
            self.z_rate(&w1, &z1, &mut rz[1]);
        }
        let w2: Vec<f64> = (0..n).map(|i| 0.75 * w0[i] + 0.25 * (w1[i] + dt * rw[1][i])).collect();
        let z2: Vec<f64> = if with_z {
            (0..n).map(|i| 0.75 * z0[i] + 0.25 * (z1[i] + dt * rz[1][i])).collect()
        } else {
            z0.clone()
        };
        // stage 3
        self.w_rate(&w2, &z2, &mut rw[2]);
        if with_z {
            self.z_rate(&w2, &z2, &mut rz[2]);
        }
        for i in 0..n {
            state.w[i] = w0[i] / 3.0 + 2.0 / 3.0 * (w2[i] + dt * rw[2][i]);
            if with_z {
                state.z[i] = z0[i] / 3.0 + 2.0 / 3.0 * (z2[i] + dt * rz[2][i]);
            }
        }
        self.stage_w = rw;
        self.stage_z = rz;
    }

    /// Advances `state` by `dt`.
    pub fn step(&mut self, state: &mut PhysicalState, dt: f64) -> Result<()> {
        if self.full() {
            self.phi_half(state, 0.5 * dt)?;
            self.deriv.apply(&state.phi, &mut self.phi_x);
            match self.config.z_transport {
                ZTransport::Characteristic => {
                    let mut z = std::mem::take(&mut state.z);
                    self.z_characteristic(&state.w, &mut z, 0.5 * dt)?;
                    state.z = z;
                    self.rk3(state, dt, false);
                    let mut z = std::mem::take(&mut state.z);
                    self.z_characteristic(&state.w, &mut z, 0.5 * dt)?;
                    state.z = z;
                }
                ZTransport::MethodOfLines => self.rk3(state, dt, true),
            }
            self.phi_half(state, 0.5 * dt)?;
        } else {
            self.phi_x.fill(0.0);
            self.rk3(state, dt, false);
        }
        state.t += dt;
        state.t_orig = self.config.params.original_time(state.t);
        let finite = state.w.iter().chain(&state.z).chain(&state.phi).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Domain(format!("non-finite field at t = {}", state.t)));
        }
        check_positive(state)
    }

    /// Diagnostics of one state.
    pub fn sample(&self, state: &PhysicalState) -> SlopeSample {
        let n = state.len();
        let x = &self.grid.x;
        let wx = self.slope(&state.w);
        let zx = self.slope(&state.z);
        let (imin, argmin) = slope_minimum(x, &wx);
        let min_wx = wx[imin];
        let max_gradient = wx
            .iter()
            .zip(&zx)
            .map(|(a, b)| a.abs().max(b.abs()))
            .fold(0.0, f64::max);
        let mut max_phi_xx = 0.0f64;
        for i in 1..n - 1 {
            let (hm, hp) = (x[i] - x[i - 1], x[i + 1] - x[i]);
            let p = &state.phi;
            let v = 2.0 * ((p[i + 1] - p[i]) / hp - (p[i] - p[i - 1]) / hm) / (hm + hp);
            max_phi_xx = max_phi_xx.max(v.abs());
        }
        let rho: Vec<f64> = (0..n).map(|i| self.coef.density(state.w[i], state.z[i])).collect();
        SlopeSample {
            t: state.t,
            min_wx,
            argmin_x: argmin + state.frame_offset(),
            max_gradient,
            max_phi_xx,
            max_z_x: zx.iter().fold(0.0, |m, v| m.max(v.abs())),
            mass: self.grid.integrate(&rho),
        }
    }
}

/// Node of the smallest slope and the vertex of the parabola through it and
/// its neighbours, clamped to the neighbouring nodes.
pub fn slope_minimum(x: &[f64], wx: &[f64]) -> (usize, f64) {
    let n = x.len();
    let (imin, _) = wx.iter().enumerate().fold((0, f64::INFINITY), |m, (i, &v)| if v < m.1 { (i, v) } else { m });
    let mut argmin = x[imin];
    if imin > 0 && imin + 1 < n {
        let c = fornberg(x[imin], &x[imin - 1..imin + 2], 2);
        let d1: f64 = c[1].iter().zip(&wx[imin - 1..]).map(|(a, b)| a * b).sum();
        let d2: f64 = c[2].iter().zip(&wx[imin - 1..]).map(|(a, b)| a * b).sum();
        if d2 > 0.0 {
            argmin = (x[imin] - d1 / d2).clamp(x[imin - 1], x[imin + 1]);
        }
    }
    (imin, argmin)
}

fn check_positive(state: &PhysicalState) -> Result<()> {
    match state.w.iter().zip(&state.z).position(|(w, z)| w <= z) {
        Some(i) => Err(Error::Vacuum { x: state.lab_x(i), w: state.w[i], z: state.z[i] }),
        None => Ok(()),
    }
}

/// Time derivatives of the semi-discrete system.
pub fn rhs(state: &PhysicalState, config: &SolverConfig) -> Result<Rates> {
    Stepper::new(config, state.grid.clone(), state.frame_speed)?.rhs(state)
}

/// Step limited by the transport CFL, the speed floor and the blow-up proximity.
pub fn cfl_dt(state: &PhysicalState, config: &SolverConfig) -> Result<f64> {
    Ok(Stepper::new(config, state.grid.clone(), state.frame_speed)?.cfl_dt(state))
}

/// One step of length `dt`.
pub fn step(state: &PhysicalState, dt: f64, config: &SolverConfig) -> Result<PhysicalState> {
    let mut next = state.clone();
    Stepper::new(config, state.grid.clone(), state.frame_speed)?.step(&mut next, dt)?;
    Ok(next)
}

/// Integrates until the slope threshold or the time limit.
pub fn run_until_blowup(initial: PhysicalState, config: &SolverConfig) -> Result<RunTrace> {
    run_observed(initial, config, |_, _| {})
}

/// As [`run_until_blowup`], calling `observer` after every accepted step.
pub fn run_observed<F>(initial: PhysicalState, config: &SolverConfig, mut observer: F) -> Result<RunTrace>
where
    F: FnMut(&PhysicalState, &SlopeSample),
{
    check_positive(&initial)?;
    let mut stepper = Stepper::new(config, initial.grid.clone(), initial.frame_speed)?;
    let mut state = initial;
    if config.coupling == Coupling::BurgersTest {
        state.z.fill(0.0);
        let bg = background(&config.params);
        state.phi.fill(bg.phi);
    }
    let stop_slope = config.stop_slope_for(&state.grid);
    let t_limit = config.t_limit();
    let mut q_history = config.record_q_history.then(|| QHistory {
        frame_speed: state.frame_speed,
        ..QHistory::default()
    });
    let record_q = |h: &mut Option<QHistory>, s: &PhysicalState| {
        if let Some(h) = h {
            h.push(s.t, s.w.iter().zip(&s.z).map(|(w, z)| 0.5 * (w - z)).collect());
        }
    };
    record_q(&mut q_history, &state);

    let first = stepper.sample(&state);
    observer(&state, &first);
    let mut slope_series = vec![first];
    let mut snapshots = vec![state.clone()];
    let mut last_snapshot_slope = first.min_wx.abs();
    let mut steps = 0usize;
    let mut message = None;

    let stop_reason = loop {
        let last = *slope_series.last().unwrap();
        if last.min_wx <= -stop_slope {
            break StopReason::SlopeThreshold;
        }
        if last.t >= t_limit * (1.0 - 1e-12) {
            break StopReason::TimeLimit;
        }
        if steps >= config.max_steps {
            message = Some(format!("step budget of {} exhausted", config.max_steps));
            break StopReason::TimeLimit;
        }
        let dt = stepper.cfl_dt(&state).min(t_limit - state.t);
        let mut next = state.clone();
        if let Err(e) = stepper.step(&mut next, dt) {
            message = Some(e.to_string());
            break StopReason::Instability;
        }
        state = next;
        steps += 1;
        record_q(&mut q_history, &state);
        let sample = stepper.sample(&state);
        if !sample.min_wx.is_finite() {
            message = Some(format!("non-finite slope at t = {}", state.t));
            break StopReason::Instability;
        }
        observer(&state, &sample);
        slope_series.push(sample);
        let by_stride = config.snapshot_stride > 0 && steps % config.snapshot_stride == 0;
        let by_growth = sample.min_wx.abs() >= last_snapshot_slope * config.snapshot_growth;
        if by_stride || by_growth {
            snapshots.push(state.clone());
            last_snapshot_slope = sample.min_wx.abs();
        }
    };
    if snapshots.last().map(|s| s.t) != Some(state.t) {
        snapshots.push(state);
    }
    Ok(RunTrace {
        config: config.clone(),
        snapshots,
        slope_series,
        stop_reason,
        message,
        steps,
        stop_slope,
        q_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ModelParams {
        ModelParams { half_width: 1.0, cells: 2000, ..ModelParams::default() }
    }

    fn lab_state(grid: Grid, params: &ModelParams, w: impl Fn(f64) -> f64) -> PhysicalState {
        let mut s = PhysicalState::background(Arc::new(grid), params);
        for (v, &x) in s.w.iter_mut().zip(&s.grid.x) {
            *v = w(x);
        }
        s
    }

    #[test]
    fn background_is_a_fixed_point() {
        let p = params();
        let grid = Arc::new(Grid::sinh(4.0, 400, 0.1, 1e-4).unwrap());
        let mut state = PhysicalState::background(grid.clone(), &p);
        state.frame_speed = p.background_speed();
        let initial = state.clone();
        let config = SolverConfig::new(p.clone());
        let mut stepper = Stepper::new(&config, grid, state.frame_speed).unwrap();
        let rates = stepper.rhs(&state).unwrap();
        assert!(rates.w.iter().chain(&rates.z).chain(&rates.phi).all(|&v| v == 0.0));
        for _ in 0..10_000 {
            let dt = stepper.cfl_dt(&state);
            stepper.step(&mut state, dt).unwrap();
        }
        let dev = initial
            .w
            .iter()
            .zip(&state.w)
            .chain(initial.z.iter().zip(&state.z))
            .chain(initial.phi.iter().zip(&state.phi))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(dev <= 1e-14, "deviation {dev}");
    }

    #[test]
    fn cfl_example() {
        let p = params();
        let state = PhysicalState::background(Arc::new(Grid::uniform(1.0, 2000).unwrap()), &p);
        for z_transport in [ZTransport::Characteristic, ZTransport::MethodOfLines] {
            let config = SolverConfig { z_transport, ..SolverConfig::new(p.clone()) };
            let dt = cfl_dt(&state, &config).unwrap();
            assert!((dt - 8e-5).abs() < 1e-17, "{dt}");
        }
    }

    #[test]
    fn proximity_clamp_and_speed_floor() {
        // a Courant number far too large to bind
        let p = ModelParams { cfl: 10.0, ..params() };
        let config = SolverConfig::new(p.clone());
        let mut state = lab_state(Grid::uniform(0.2, 4000).unwrap(), &p, |x| 15.0 - 0.5 * (x / 5e-4).tanh());
        state.frame_speed = p.background_speed();
        let dt = cfl_dt(&state, &config).unwrap();
        let min_wx = Stepper::new(&config, state.grid.clone(), state.frame_speed)
            .unwrap()
            .slope(&state.w)
            .into_iter()
            .fold(0.0, f64::min);
        assert!(min_wx < -900.0);
        assert!((dt - 0.2 / min_wx.abs()).abs() < 1e-15);

        // the background moves with the frame: only the floor limits the step
        let mut still = PhysicalState::background(Arc::new(Grid::uniform(1.0, 2000).unwrap()), &p);
        still.frame_speed = p.background_speed();
        let dt = cfl_dt(&still, &config).unwrap();
        assert!(dt.is_finite());
        assert!((dt - 10.0 * 1e-3 / config.speed_floor).abs() < 1e-12);
    }

    #[test]
    fn burgers_mode_rates() {
        let p = params();
        let config = SolverConfig { coupling: Coupling::BurgersTest, ..SolverConfig::new(p.clone()) };
        let state = lab_state(Grid::uniform(1.0, 2000).unwrap(), &p, |x| 15.0 + 0.3 * (3.0 * x).sin());
        let rates = rhs(&state, &config).unwrap();
        let k = p.kappa0 / (1.0 + p.alpha());
        for i in 10..state.len() - 10 {
            let x = state.grid.x[i];
            let exact = -(state.w[i] - k) * 0.9 * (3.0 * x).cos();
            assert!((rates.w[i] - exact).abs() < 1e-9, "{} vs {exact}", rates.w[i]);
        }
        assert!(rates.z.iter().chain(&rates.phi).all(|&v| v == 0.0));
    }

    #[test]
    fn full_rates_converge_at_high_order() {
        let p = ModelParams { beta: 1.0, ..params() };
        let config = SolverConfig::new(p.clone());
        let c = p.coefficients();
        let err = |cells: usize| {
            let state = lab_state(Grid::uniform(1.0, cells).unwrap(), &p, |x| 15.0 + 0.1 * (std::f64::consts::PI * x).sin());
            let rates = rhs(&state, &config).unwrap();
            (0..state.len())
                .filter(|&i| state.grid.x[i].abs() < 0.8)
                .map(|i| {
                    let x = state.grid.x[i];
                    let w = state.w[i];
                    let wx = 0.1 * std::f64::consts::PI * (std::f64::consts::PI * x).cos();
                    let exact = -c.speed_w(w, 0.0) * wx + c.forcing(w, 0.0, 0.0);
                    (rates.w[i] - exact).abs()
                })
                .fold(0.0, f64::max)
        };
        let order = (err(100) / err(200)).log2();
        assert!(order > 4.0, "order {order}");
    }

    fn pulse_state(p: &ModelParams) -> PhysicalState {
        let grid = Arc::new(Grid::uniform(3.0, 600).unwrap());
        let mut s = PhysicalState::background(grid, p);
        let bg = background(p);
        for i in 0..s.len() {
            let x = s.grid.x[i];
            s.w[i] = p.kappa0 + 0.4 * (-4.0 * x * x).exp();
            s.z[i] = 0.2 * x * (-4.0 * x * x).exp();
            s.phi[i] = bg.phi + 0.5 * (-2.0 * x * x).exp();
        }
        s.frame_speed = p.background_speed();
        s
    }

    #[test]
    fn two_half_steps_agree_to_third_order() {
        let p = ModelParams { beta: 1.0, ..params() };
        for z_transport in [ZTransport::Characteristic, ZTransport::MethodOfLines] {
            let config = SolverConfig { z_transport, ..SolverConfig::new(p.clone()) };
            let state = pulse_state(&p);
            let gap = |dt: f64| {
                let one = step(&state, dt, &config).unwrap();
                let half = step(&step(&state, 0.5 * dt, &config).unwrap(), 0.5 * dt, &config).unwrap();
                one.w
                    .iter()
                    .zip(&half.w)
                    .chain(one.z.iter().zip(&half.z))
                    .chain(one.phi.iter().zip(&half.phi))
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            };
            let dt = 2e-3;
            let order = (gap(dt) / gap(0.5 * dt)).log2();
            assert!(order > 2.7, "{z_transport:?}: local order {order}");
        }
    }

    #[test]
    fn quiet_data_stops_on_time_limit() {
        let p = ModelParams { half_width: 4.0, ..params() };
        let mut state = pulse_state(&p);
        for w in state.w.iter_mut() {
            *w = p.kappa0 + (*w - p.kappa0) * 1e-3;
        }
        let config = SolverConfig { stop_slope: Some(10.0), ..SolverConfig::new(p.clone()) };
        let trace = run_until_blowup(state, &config).unwrap();
        assert_eq!(trace.stop_reason, StopReason::TimeLimit);
        assert!((trace.last_sample().t - 2.0 * p.epsilon).abs() < 1e-15);
        assert!(trace.slope_series.windows(2).all(|p| p[1].t > p[0].t));
    }

    #[test]
    fn vacuum_aborts_with_position() {
        let p = params();
        let mut state = PhysicalState::background(Arc::new(Grid::uniform(1.0, 100).unwrap()), &p);
        state.z[40] = 20.0;
        let config = SolverConfig::new(p);
        assert!(matches!(rhs(&state, &config), Err(Error::Vacuum { .. })));
    }
}
