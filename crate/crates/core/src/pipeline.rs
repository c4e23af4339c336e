//! Run configuration and the simulate/diagnose pipeline with its file
//! outputs.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    bootstrap_margins, continuation_integral, fit_blowup_rate, fit_cusp_exponent, profile_distance,
    trajectory_checks, write_margins_csv, ContinuationSeries, CuspFit, Estimate, Margin, MonitorSettings,
    PathGrowth, ProfileDistance, RateFit,
};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::initial::{build, validate, ConstraintReport, InitialDataSpec};
use crate::model::{ModelParams, PhysicalState};
use crate::modulation::{
    empirical_at, origin_values, to_selfsimilar, with_rates, write_series_csv, ModulationState, OdeFrame,
    SelfSimilarSnapshot,
};
use crate::solver::{
    run_observed, Coupling, PhiMethod, RunTrace, SlopeSample, SolverConfig, StopReason, TransportScheme, ZTransport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    Uniform,
    Sinh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    None,
    Epsilon,
    Beta,
    Gamma,
}

/// Every setting of a run. Parsed from flat TOML; the resolved copy is
/// written next to the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub gamma: f64,
    pub beta: f64,
    pub kappa0: f64,
    pub epsilon: f64,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "L")]
    pub half_width: f64,
    #[serde(rename = "N")]
    pub cells: usize,
    pub cfl: f64,
    pub override_regime: bool,

    pub grid: GridKind,
    /// Spacing at the centre of a sinh grid.
    pub fine_spacing: f64,
    /// Move the grid with the background characteristic speed.
    pub comoving: bool,
    /// Coarsening factor of a pilot run that locates the blow-up point
    /// before the grid is placed; 0 disables the pilot.
    pub pilot_factor: usize,

    pub coupling: Coupling,
    pub phi_method: PhiMethod,
    pub transport_scheme: TransportScheme,
    pub z_transport: ZTransport,
    /// `0` selects `0.2 / h_min`.
    pub stop_slope: f64,
    /// `0` selects `2 epsilon`.
    pub t_limit: f64,
    pub snapshot_growth: f64,
    pub snapshot_stride: usize,
    pub proximity: f64,
    pub speed_floor: f64,
    pub max_steps: usize,

    pub cutoff_scale: f64,
    pub cutoff_log_width: f64,
    pub z_amplitude: f64,
    pub phi_perturbation: f64,
    pub phi_envelope: f64,

    /// Half-width in `y` of the written self-similar snapshots.
    pub y_window: f64,
    pub trajectory_samples: usize,
    pub monitor_slack: f64,
    pub write_snapshots: bool,
    /// Write every n-th stored snapshot, plus the last one.
    pub snapshot_output_stride: usize,

    pub sweep_axis: SweepAxis,
    pub sweep_values: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = ModelParams::default();
        let s = SolverConfig::default();
        let i = InitialDataSpec::default();
        Self {
            gamma: p.gamma,
            beta: p.beta,
            kappa0: p.kappa0,
            epsilon: p.epsilon,
            m: 32.0,
            half_width: 16.0,
            cells: 16384,
            cfl: p.cfl,
            override_regime: true,
            grid: GridKind::Sinh,
            fine_spacing: 1.25e-8,
            comoving: true,
            pilot_factor: 4,
            coupling: s.coupling,
            phi_method: s.phi_method,
            transport_scheme: s.transport_scheme,
            z_transport: s.z_transport,
            stop_slope: 20000.0,
            t_limit: 0.0,
            snapshot_growth: 1.1,
            snapshot_stride: 0,
            proximity: s.proximity,
            speed_floor: s.speed_floor,
            max_steps: s.max_steps,
            cutoff_scale: i.cutoff_scale,
            cutoff_log_width: i.cutoff_log_width,
            z_amplitude: i.z_amplitude,
            phi_perturbation: i.phi_perturbation,
            phi_envelope: i.phi_envelope,
            y_window: 1.0e3,
            trajectory_samples: 20,
            monitor_slack: crate::diagnostics::MONITOR_SLACK,
            write_snapshots: true,
            snapshot_output_stride: 4,
            sweep_axis: SweepAxis::None,
            sweep_values: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The configuration with automatic values filled in.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        if c.stop_slope <= 0.0 {
            c.stop_slope = 0.2 / self.min_spacing();
        }
        if c.t_limit <= 0.0 {
            c.t_limit = 2.0 * c.epsilon;
        }
        c
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&self.resolved()).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn check(&self) -> Result<()> {
        self.params().validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.grid == GridKind::Sinh && !(self.fine_spacing > 0.0) {
            return bad(format!("fine_spacing must be positive, got {}", self.fine_spacing));
        }
        if !(self.snapshot_growth > 1.0) {
            return bad(format!("snapshot_growth must exceed 1, got {}", self.snapshot_growth));
        }
        if !(self.monitor_slack >= 0.0) || !(self.y_window > 0.0) {
            return bad("monitor_slack must be nonnegative and y_window positive".into());
        }
        if self.snapshot_output_stride == 0 {
            return bad("snapshot_output_stride must be at least 1".into());
        }
        if self.sweep_axis != SweepAxis::None && self.sweep_values.is_empty() {
            return bad("sweep_axis is set but sweep_values is empty".into());
        }
        Ok(())
    }

    pub fn params(&self) -> ModelParams {
        ModelParams {
            gamma: self.gamma,
            beta: self.beta,
            kappa0: self.kappa0,
            epsilon: self.epsilon,
            m: self.m,
            half_width: self.half_width,
            cells: self.cells,
            cfl: self.cfl,
            override_regime: self.override_regime,
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        let r = self.resolved();
        SolverConfig {
            params: self.params(),
            phi_method: self.phi_method,
            transport_scheme: self.transport_scheme,
            coupling: self.coupling,
            z_transport: self.z_transport,
            stop_slope: Some(r.stop_slope),
            snapshot_stride: self.snapshot_stride,
            snapshot_growth: self.snapshot_growth,
            t_limit: Some(r.t_limit),
            proximity: self.proximity,
            speed_floor: self.speed_floor,
            max_steps: self.max_steps,
            record_q_history: false,
        }
    }

    pub fn initial_spec(&self) -> InitialDataSpec {
        InitialDataSpec {
            params: self.params(),
            cutoff_scale: self.cutoff_scale,
            cutoff_log_width: self.cutoff_log_width,
            z_amplitude: self.z_amplitude,
            phi_perturbation: self.phi_perturbation,
            phi_envelope: self.phi_envelope,
        }
    }

    pub fn frame_speed(&self) -> f64 {
        if self.comoving {
            self.params().background_speed()
        } else {
            0.0
        }
    }

    fn min_spacing(&self) -> f64 {
        match self.grid {
            GridKind::Uniform => 2.0 * self.half_width / self.cells as f64,
            GridKind::Sinh => self.fine_spacing.min(2.0 * self.half_width / self.cells as f64),
        }
    }

    pub fn make_grid(&self, center: f64) -> Result<Grid> {
        match self.grid {
            GridKind::Uniform => Grid::uniform(self.half_width, self.cells),
            GridKind::Sinh => Grid::sinh(self.half_width, self.cells, center, self.fine_spacing),
        }
    }

    /// Copy with one swept parameter replaced.
    pub fn with_axis(&self, axis: SweepAxis, value: f64) -> Self {
        let mut c = self.clone();
        match axis {
            SweepAxis::None => {}
            SweepAxis::Epsilon => c.epsilon = value,
            SweepAxis::Beta => c.beta = value,
            SweepAxis::Gamma => {
                c.gamma = value;
                let alpha = (value - 1.0) / 2.0;
                c.kappa0 = c.kappa0.max(5.0 * (1.0 + alpha) / alpha);
            }
        }
        c.sweep_axis = SweepAxis::None;
        c.sweep_values.clear();
        c
    }
}

/// Built initial data and its constraint report.
pub fn prepare(cfg: &RunConfig, center: f64) -> Result<(PhysicalState, ConstraintReport)> {
    let grid = Arc::new(cfg.make_grid(center)?);
    let state = build(&cfg.initial_spec(), grid, cfg.frame_speed())?;
    let report = validate(&state, &cfg.params());
    Ok((state, report))
}

/// A finished run with its frames.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub config: RunConfig,
    pub trace: RunTrace,
    pub initial_report: ConstraintReport,
    /// Empirical frame after every accepted step, where one exists.
    pub empirical: Vec<ModulationState>,
    /// Frame integrated from the modulation equations.
    pub ode: Vec<ModulationState>,
    pub ode_error: Option<String>,
    pub grid_center: f64,
    pub wall_seconds: f64,
}

impl Simulation {
    pub fn empirical_at_time(&self, t: f64) -> Option<&ModulationState> {
        let k = self.empirical.partition_point(|f| f.t < t);
        self.empirical.get(k).filter(|f| f.t == t)
    }

    pub fn ode_at_time(&self, t: f64) -> Option<&ModulationState> {
        let k = self.ode.partition_point(|f| f.t < t);
        self.ode.get(k).filter(|f| f.t == t)
    }
}

fn run_with_frames(cfg: &RunConfig, initial: PhysicalState) -> Result<(RunTrace, Vec<ModulationState>, Vec<ModulationState>, Option<String>)> {
    let coef = cfg.solver_config().coefficients();
    let mut empirical = Vec::new();
    let mut ode_frames = Vec::new();
    let mut ode = OdeFrame::start(&initial, cfg.epsilon, 0.0, coef).map_err(|e| e.to_string());
    let mut ode_error = None;
    let trace = run_observed(initial, &cfg.solver_config(), |state, sample: &SlopeSample| {
        if let Ok(f) = empirical_at(state, sample.argmin_x, sample.min_wx) {
            empirical.push(with_rates(state, f, &coef));
        }
        match &mut ode {
            Ok(o) => {
                if state.t > 0.0 {
                    if let Err(e) = o.advance(state) {
                        ode_error = Some(format!("t = {}: {e}", state.t));
                        ode = Err(e.to_string());
                        return;
                    }
                }
                ode_frames.push(o.frame);
            }
            Err(e) => {
                if ode_error.is_none() {
                    ode_error = Some(e.clone());
                }
            }
        }
    })?;
    Ok((trace, empirical, ode_frames, ode_error))
}

/// Grid centre from a coarse pilot run: the comoving position of the
/// blow-up point at the pilot's extrapolated blow-up time.
pub fn pilot_center(cfg: &RunConfig) -> Result<f64> {
    if cfg.pilot_factor < 2 || cfg.grid != GridKind::Sinh {
        return Ok(0.0);
    }
    let f = cfg.pilot_factor as f64;
    let mut pilot = cfg.resolved();
    pilot.cells = (cfg.cells / cfg.pilot_factor).max(256);
    pilot.fine_spacing = cfg.fine_spacing * f;
    pilot.stop_slope = pilot.stop_slope / f.powf(2.0 / 3.0);
    pilot.snapshot_growth = f64::INFINITY;
    let (initial, _) = prepare(&pilot, 0.0)?;
    let coef = pilot.solver_config().coefficients();
    let mut last = None;
    let trace = run_observed(initial, &pilot.solver_config(), |state, sample| {
        if sample.min_wx < 0.0 {
            last = empirical_at(state, sample.argmin_x, sample.min_wx).ok().map(|fr| with_rates(state, fr, &coef));
        }
    })?;
    let Some(fr) = last else { return Ok(0.0) };
    if trace.stop_reason != StopReason::SlopeThreshold {
        return Ok(0.0);
    }
    let t_star = trace.t_star_extrapolated();
    let xi = fr.xi + fr.xi_dot.unwrap_or(0.0) * (t_star - fr.t);
    let center = xi - cfg.frame_speed() * t_star;
    Ok(if center.abs() < 0.5 * cfg.half_width { center } else { 0.0 })
}

/// Builds, validates and integrates. Rejected initial data is an error
/// unless `force` is set.
pub fn simulate(cfg: &RunConfig, force: bool) -> Result<Simulation> {
    cfg.check()?;
    let start = Instant::now();
    let center = pilot_center(cfg)?;
    let (initial, report) = prepare(cfg, center)?;
    if !report.accepted() && !force {
        let failed: Vec<String> =
            report.failures().iter().filter(|c| c.blocking).map(|c| format!("{} (ratio {:.3})", c.id, c.ratio)).collect();
        return Err(Error::Construction(format!("initial data rejected: {}", failed.join(", "))));
    }
    let (trace, empirical, ode, ode_error) = run_with_frames(cfg, initial)?;
    Ok(Simulation {
        config: cfg.clone(),
        trace,
        initial_report: report,
        empirical,
        ode,
        ode_error,
        grid_center: center,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Comparison of the empirical and integrated frames over the snapshots.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FrameComparison {
    pub max_xi_gap: f64,
    pub max_tau_gap: f64,
    /// Largest `|W(0)|, |d_y W(0) + 1|, |d_y^2 W(0)|` in the integrated frame.
    pub ode_constraints: [f64; 3],
    /// The same residuals in the empirical frame: the accuracy with which
    /// the constraints can be read off the grid.
    pub interpolation_tolerance: [f64; 3],
    pub max_third_drift: f64,
    pub snapshots: usize,
    pub ode_error: Option<String>,
}

impl FrameComparison {
    /// Each integrated-frame residual within `factor` times the matching
    /// empirical one.
    pub fn constraints_within(&self, factor: f64) -> bool {
        (0..3).all(|k| self.ode_constraints[k] <= factor * self.interpolation_tolerance[k].max(f64::EPSILON))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthReport {
    pub slope_growth: f64,
    pub phi_xx_growth: f64,
    pub max_z_x: f64,
    pub z_x_bound: f64,
    pub mass_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectorySummary {
    pub near_min_rate: f64,
    pub far_min_rate: f64,
    pub max_tail_fraction: f64,
    pub truncated: usize,
    pub near: Vec<PathGrowth>,
    pub far: Vec<PathGrowth>,
    pub z_paths: Vec<PathGrowth>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuationSummary {
    pub final_integral: f64,
    pub log_coefficient: Option<f64>,
    pub divergent: bool,
}

/// Everything measured on a finished run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub stop_reason: StopReason,
    pub t_stop: f64,
    pub min_slope_at_stop: f64,
    /// Root of the straight-line fit of `1/|min w_x|`.
    pub t_star: Option<Estimate>,
    /// `t_stop + 1/|min w_x(t_stop)|`.
    pub t_star_extrapolated: f64,
    /// Blow-up point: the frame position carried to the estimated `T*`.
    pub x_star: Option<f64>,
    /// Frame position at the stop time.
    pub x_star_at_stop: Option<f64>,
    /// Gap between the two positions above in the grid frame, in cells at
    /// the minimum.
    pub x_star_gap_cells: Option<f64>,
    pub rate: Option<RateFit>,
    pub rate_error: Option<String>,
    /// Cusp fit, taken at the stop time.
    pub cusp: Option<CuspFit>,
    pub cusp_error: Option<String>,
    pub continuation: ContinuationSummary,
    pub worst_margins: Vec<Margin>,
    pub violations: Vec<Margin>,
    pub snapshots_monitored: usize,
    pub monitor_error: Option<String>,
    pub profile_distances: Vec<ProfileDistance>,
    pub frames: FrameComparison,
    pub growth: GrowthReport,
    pub trajectories: Option<TrajectorySummary>,
    pub trajectory_error: Option<String>,
}

/// Margins of every snapshot and the transformed snapshots, computed in
/// parallel.
pub struct Transformed {
    pub snapshots: Vec<SelfSimilarSnapshot>,
    pub margins: Vec<Margin>,
}

fn parallel_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync) -> Vec<U> {
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(items.len()).max(1);
    let chunk = items.len().div_ceil(workers).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| scope.spawn(|| c.iter().map(&f).collect::<Vec<U>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Transforms every snapshot with a frame to the self-similar variables.
pub fn transform_snapshots(sim: &Simulation) -> Result<Transformed> {
    let coef = sim.trace.config.coefficients();
    let set = MonitorSettings { slack: sim.config.monitor_slack, ..MonitorSettings::new(&sim.config.params()) };
    let jobs: Vec<(&PhysicalState, ModulationState)> =
        sim.trace.snapshots.iter().filter_map(|s| sim.empirical_at_time(s.t).map(|f| (s, *f))).collect();
    let out = parallel_map(&jobs, |(state, frame)| -> Result<(SelfSimilarSnapshot, Vec<Margin>)> {
        let snap = to_selfsimilar(state, frame, &coef, None)?;
        let margins = bootstrap_margins(&snap, &set)?;
        Ok((snap, margins))
    });
    let mut snapshots = Vec::with_capacity(out.len());
    let mut margins = Vec::new();
    for r in out {
        let (s, m) = r?;
        // equal s can occur when the last step repeats a stored state
        if snapshots.last().is_some_and(|p: &SelfSimilarSnapshot| p.frame.s >= s.frame.s) {
            continue;
        }
        snapshots.push(s);
        margins.extend(m);
    }
    Ok(Transformed { snapshots, margins })
}

fn compare_frames(sim: &Simulation) -> FrameComparison {
    let mut c = FrameComparison { ode_error: sim.ode_error.clone(), ..Default::default() };
    for state in &sim.trace.snapshots {
        let (Some(e), Some(o)) = (sim.empirical_at_time(state.t), sim.ode_at_time(state.t)) else { continue };
        c.snapshots += 1;
        c.max_xi_gap = c.max_xi_gap.max((e.xi - o.xi).abs());
        c.max_tau_gap = c.max_tau_gap.max((e.tau - o.tau).abs());
        let oe = origin_values(state, e);
        let oo = origin_values(state, o);
        let res = |w: [f64; 4]| [w[0].abs(), (w[1] + 1.0).abs(), w[2].abs()];
        let (re, ro) = (res(oe.w), res(oo.w));
        for k in 0..3 {
            c.interpolation_tolerance[k] = c.interpolation_tolerance[k].max(re[k]);
            c.ode_constraints[k] = c.ode_constraints[k].max(ro[k]);
        }
        c.max_third_drift = c.max_third_drift.max((oo.w[3] - 6.0).abs());
    }
    c
}

fn growth(sim: &Simulation) -> GrowthReport {
    let series = &sim.trace.slope_series;
    let first = series.first().expect("a trace has at least one sample");
    let last = series.last().expect("a trace has at least one sample");
    let max_z_x = series.iter().map(|s| s.max_z_x).fold(0.0, f64::max);
    let mass_drift = series.iter().map(|s| ((s.mass - first.mass) / first.mass).abs()).fold(0.0, f64::max);
    GrowthReport {
        slope_growth: last.min_wx.abs() / first.min_wx.abs(),
        phi_xx_growth: series.iter().map(|s| s.max_phi_xx).fold(0.0, f64::max) / first.max_phi_xx,
        max_z_x,
        z_x_bound: 2.0 * sim.config.m,
        mass_drift,
    }
}

/// Fits, monitor, frame comparison and path checks of a finished run.
pub fn diagnose(sim: &Simulation) -> Result<(DiagnosticsReport, Transformed)> {
    let trace = &sim.trace;
    let last = *trace.last_sample();
    let final_state = trace.final_state();
    let (rate, rate_error) = match fit_blowup_rate(&trace.slope_series) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let t_star = rate.as_ref().map(|r| r.t_star);
    let t_star_extrapolated = trace.t_star_extrapolated();
    let stop_frame = sim.empirical_at_time(final_state.t).copied();
    let x_star_at_stop = stop_frame.map(|f| f.xi);
    let x_star = stop_frame.map(|f| {
        let ts = t_star.map_or(t_star_extrapolated, |e| e.value);
        f.xi + f.xi_dot.unwrap_or(0.0) * (ts - f.t)
    });
    // compared on the grid, which moves with the frame speed
    let x_star_gap_cells = match (x_star, x_star_at_stop) {
        (Some(a), Some(b)) => {
            let g = &final_state.grid;
            let ts = t_star.map_or(t_star_extrapolated, |e| e.value);
            let at_stop = b - final_state.frame_offset();
            let at_blowup = a - final_state.frame_speed * ts;
            Some((at_blowup - at_stop).abs() / g.spacing(g.nearest(at_stop)))
        }
        _ => None,
    };
    let (cusp, cusp_error) = match x_star_at_stop.map(|x| fit_cusp_exponent(final_state, x)) {
        Some(Ok(c)) => (Some(c), None),
        Some(Err(e)) => (None, Some(e.to_string())),
        None => (None, Some(Error::NoFrame.to_string())),
    };
    let cont: ContinuationSeries = continuation_integral(&trace.slope_series, t_star.map(|e| e.value));

    let (transformed, monitor_error) = match transform_snapshots(sim) {
        Ok(t) => (t, None),
        Err(e) => (Transformed { snapshots: Vec::new(), margins: Vec::new() }, Some(e.to_string())),
    };
    let mut worst: Vec<Margin> = Vec::new();
    for m in &transformed.margins {
        match worst.iter_mut().find(|w| w.id == m.id) {
            Some(w) if !(m.ratio > w.ratio) => {}
            Some(w) => *w = m.clone(),
            None => worst.push(m.clone()),
        }
    }
    let violations: Vec<Margin> =
        transformed.margins.iter().filter(|m| m.violated(sim.config.monitor_slack)).cloned().collect();
    let profile_distances =
        transformed.snapshots.iter().map(|s| profile_distance(s, sim.config.m)).collect::<Result<Vec<_>>>()?;

    let coef = trace.config.coefficients();
    let (trajectories, trajectory_error) = if transformed.snapshots.len() >= 2 {
        match trajectory_checks(&transformed.snapshots, &coef, sim.config.m, sim.config.trajectory_samples) {
            Ok(r) => {
                let summary = TrajectorySummary {
                    near_min_rate: r.min_near_rate(),
                    far_min_rate: r.min_far_rate(),
                    max_tail_fraction: r.max_tail_fraction(),
                    truncated: r.near.iter().chain(&r.far).chain(&r.z_paths).filter(|p| p.truncated).count(),
                    near: r.near,
                    far: r.far,
                    z_paths: r.z_paths,
                };
                (Some(summary), None)
            }
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, Some("fewer than two transformed snapshots".into()))
    };

    let report = DiagnosticsReport {
        stop_reason: trace.stop_reason,
        t_stop: last.t,
        min_slope_at_stop: last.min_wx,
        t_star,
        t_star_extrapolated,
        x_star,
        x_star_at_stop,
        x_star_gap_cells,
        rate,
        rate_error,
        cusp,
        cusp_error,
        continuation: ContinuationSummary {
            final_integral: cont.integral.last().copied().unwrap_or(0.0),
            log_coefficient: cont.log_coefficient,
            divergent: cont.divergent,
        },
        worst_margins: worst,
        violations,
        snapshots_monitored: transformed.snapshots.len(),
        monitor_error,
        profile_distances,
        frames: compare_frames(sim),
        growth: growth(sim),
        trajectories,
        trajectory_error,
    };
    Ok((report, transformed))
}

/// Short run record.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub stop_reason: StopReason,
    pub message: Option<String>,
    pub steps: usize,
    pub t_stop: f64,
    pub min_slope_at_stop: f64,
    pub stop_slope: f64,
    pub t_star: Option<Estimate>,
    pub t_star_extrapolated: f64,
    pub t_star_over_epsilon: f64,
    pub x_star: Option<f64>,
    pub rate_exponent: Option<Estimate>,
    pub rate_decades: Option<f64>,
    pub holder_exponent: Option<f64>,
    pub gradient_exponent: Option<f64>,
    pub initial_data_accepted: bool,
    /// `None` when the monitor was not run.
    pub bootstrap_violations: Option<usize>,
    /// Family and ratio of the tightest bootstrap margin.
    pub worst_margin: Option<(String, f64)>,
    pub grid_center: f64,
}

/// Run record. Without a report the rate and cusp fits are computed here.
pub fn summarize(sim: &Simulation, report: Option<&DiagnosticsReport>) -> Summary {
    let trace = &sim.trace;
    let last = trace.last_sample();
    let own_rate;
    let own_cusp;
    let (rate, cusp) = match report {
        Some(r) => (r.rate.as_ref(), r.cusp.as_ref()),
        None => {
            own_rate = fit_blowup_rate(&trace.slope_series).ok();
            own_cusp = sim
                .empirical_at_time(trace.final_state().t)
                .and_then(|f| fit_cusp_exponent(trace.final_state(), f.xi).ok());
            (own_rate.as_ref(), own_cusp.as_ref())
        }
    };
    let t_star = rate.map(|r| r.t_star);
    let ts = t_star.map_or(trace.t_star_extrapolated(), |e| e.value);
    let x_star = match report {
        Some(r) => r.x_star,
        None => sim.empirical_at_time(last.t).map(|f| f.xi + f.xi_dot.unwrap_or(0.0) * (ts - f.t)),
    };
    Summary {
        stop_reason: trace.stop_reason,
        message: trace.message.clone(),
        steps: trace.steps,
        t_stop: last.t,
        min_slope_at_stop: last.min_wx,
        stop_slope: trace.stop_slope,
        t_star,
        t_star_extrapolated: trace.t_star_extrapolated(),
        t_star_over_epsilon: ts / sim.config.epsilon,
        x_star,
        // 95% interval half-width from the standard error
        rate_exponent: rate.map(|f| Estimate { value: f.rate_exponent, uncertainty: 1.96 * f.exponent_se }),
        rate_decades: rate.map(|f| f.decades),
        holder_exponent: cusp.map(|c| c.holder_exponent),
        gradient_exponent: cusp.map(|c| c.gradient_exponent),
        initial_data_accepted: sim.initial_report.accepted(),
        bootstrap_violations: report.map(|r| r.violations.len()),
        worst_margin: report.and_then(|r| {
            r.worst_margins.iter().max_by(|a, b| a.ratio.total_cmp(&b.ratio)).map(|m| (m.id.to_string(), m.ratio))
        }),
        grid_center: sim.grid_center,
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

/// Writes `slope_series.csv`.
pub fn write_slope_series(path: &Path, series: &[SlopeSample]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(create(path)?);
    for s in series {
        wr.serialize(s)?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct PhysicalRow {
    x: f64,
    w: f64,
    z: f64,
    phi: f64,
    rho: f64,
    u: f64,
}

/// Writes one physical snapshot in lab coordinates.
pub fn write_physical_csv<W: Write>(out: W, state: &PhysicalState, params: &ModelParams) -> Result<()> {
    let prim = state.primitive(params)?;
    let mut wr = csv::Writer::from_writer(out);
    for i in 0..state.len() {
        wr.serialize(PhysicalRow {
            x: state.lab_x(i),
            w: state.w[i],
            z: state.z[i],
            phi: state.phi[i],
            rho: prim.rho[i],
            u: prim.u[i],
        })?;
    }
    wr.flush()?;
    Ok(())
}

fn written<T>(items: &[T], stride: usize) -> impl Iterator<Item = (usize, &T)> {
    let last = items.len().saturating_sub(1);
    items.iter().enumerate().filter(move |(k, _)| k % stride == 0 || *k == last)
}

/// Writes the run files into `dir`, which must exist.
pub fn write_run(dir: &Path, sim: &Simulation, report: Option<(&DiagnosticsReport, &Transformed)>) -> Result<()> {
    fs::write(dir.join("config.toml"), sim.config.to_toml()?)?;
    write_json(&dir.join("initial_constraints.json"), &sim.initial_report)?;
    write_json(&dir.join("summary.json"), &summarize(sim, report.map(|r| r.0)))?;
    write_slope_series(&dir.join("slope_series.csv"), &sim.trace.slope_series)?;
    write_series_csv(create(&dir.join("modulation.csv"))?, &sim.empirical)?;
    write_series_csv(create(&dir.join("modulation_ode.csv"))?, &sim.ode)?;
    if sim.config.write_snapshots {
        let snaps = dir.join("snapshots");
        fs::create_dir_all(&snaps)?;
        let params = sim.config.params();
        for (k, s) in written(&sim.trace.snapshots, sim.config.snapshot_output_stride) {
            write_physical_csv(create(&snaps.join(format!("{k:04}.csv")))?, s, &params)?;
        }
    }
    if let Some((rep, tr)) = report {
        write_json(&dir.join("diagnostics.json"), rep)?;
        write_margins_csv(create(&dir.join("margins.csv"))?, &tr.margins)?;
        if sim.config.write_snapshots {
            let ss = dir.join("selfsimilar");
            fs::create_dir_all(&ss)?;
            let yw = sim.config.y_window;
            for (k, s) in written(&tr.snapshots, sim.config.snapshot_output_stride) {
                s.windowed(yw).write_csv(create(&ss.join(format!("{k:04}.csv")))?)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let text = c.to_toml().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, c.resolved());
        assert_eq!(back.resolved(), back);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = RunConfig::from_toml("epsilon = 0.01\nbogus = 1\n").unwrap_err();
        assert!(matches!(e, Error::Config(_)), "{e}");
        assert!(matches!(RunConfig::from_toml("gamma = 0.5\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("epsilon = \"x\"\n"), Err(Error::Config(_))));
    }

    #[test]
    fn automatic_values_resolve() {
        let c = RunConfig::from_toml("stop_slope = 0\nt_limit = 0\ngrid = \"uniform\"\nN = 1000\nL = 10\n").unwrap();
        let r = c.resolved();
        assert!((r.stop_slope - 10.0).abs() < 1e-12);
        assert!((r.t_limit - 0.02).abs() < 1e-15);
    }

    #[test]
    fn sweep_axis_applies() {
        let c = RunConfig::default();
        assert_eq!(c.with_axis(SweepAxis::Beta, 4.0).beta, 4.0);
        assert_eq!(c.with_axis(SweepAxis::Epsilon, 0.02).epsilon, 0.02);
        let g = c.with_axis(SweepAxis::Gamma, 3.0);
        assert_eq!(g.gamma, 3.0);
        assert!(g.kappa0 >= 7.5);
    }

    #[test]
    fn parallel_map_keeps_order() {
        let v: Vec<usize> = (0..1000).collect();
        assert_eq!(parallel_map(&v, |x| x * 2), v.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert!(parallel_map(&Vec::<usize>::new(), |x| *x).is_empty());
    }
}
