//! End-to-end acceptance checks. One line per criterion is written straight
//! to stderr so it shows with or without output capture.

use std::io::Write;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use chemoshock::diagnostics::{fit_blowup_rate, PathGrowth, MONITOR_IDS};
use chemoshock::grid::Grid;
use chemoshock::heat::{convolve, duhamel_phi, kernel, weighted_decay_check};
use chemoshock::initial::w_perturbation;
use chemoshock::model::{background, ModelParams, PhysicalState};
use chemoshock::modulation::Velocity;
use chemoshock::pipeline::{diagnose, simulate, DiagnosticsReport, RunConfig, Simulation};
use chemoshock::profile::{check_profile_properties, log_grid, wbar_deriv};
use chemoshock::solver::{run_until_blowup, Coupling, SolverConfig, StopReason, Stepper};

const EPSILON: f64 = 0.01;
const M: f64 = 32.0;

// criterion 1
const PROFILE_POINTS: usize = 100_000;
const PROFILE_RANGE: f64 = 1e6;
const PROFILE_RESIDUAL: f64 = 1e-10;
const PROFILE_SECONDS: f64 = 1.0;
// criterion 2
const BURGERS_CELLS: usize = 8192;
const BURGERS_T_TOL: f64 = 0.02;
const BURGERS_X_CELLS: f64 = 3.0;
const BURGERS_SECONDS: f64 = 60.0;
// criterion 3
const FULL_CELLS: usize = 16384;
const T_STAR_FACTOR: f64 = 1.5;
const X_STAR_FACTOR: f64 = 6.0;
const FULL_SECONDS: f64 = 600.0;
// criterion 4
const RATE_RANGE: (f64, f64) = (-1.1, -0.9);
const RATE_DECADES: f64 = 1.5;
// criterion 5
const HOLDER_RANGE: (f64, f64) = (0.28, 0.38);
const GRADIENT_RANGE: (f64, f64) = (-0.73, -0.60);
// criterion 6
const PHI_XX_GROWTH: f64 = 10.0;
const SLOPE_GROWTH: f64 = 100.0;
// criterion 8
const PATH_SAMPLES: usize = 20;
const NEAR_RATE: f64 = 0.5;
const FAR_RATE: f64 = 1.5;
const TAIL_FRACTION: f64 = 0.01;
// rates that the growth argument for the two path bounds actually yields
const NEAR_RATE_ARGUED: f64 = 1.0 / 8.0;
const FAR_RATE_ARGUED: f64 = 9.0 / 8.0;
// criterion 9
const SEMIGROUP_TOL: f64 = 1e-8;
const DECAY_EXPONENT: f64 = 1.0 / 3.0;
const DUHAMEL_TOL: f64 = 1e-4;
// criterion 10
const MASS_DRIFT: f64 = 1e-6;
const EQUILIBRIUM_STEPS: usize = 10_000;
const EQUILIBRIUM_TOL: f64 = 1e-13;

fn line(n: usize, pass: bool, detail: &str) -> bool {
    let tag = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "criterion {n:>2}: {tag}  {detail}");
    pass
}

fn within(v: f64, (lo, hi): (f64, f64)) -> bool {
    v >= lo && v <= hi
}

struct FullRun {
    sim: Simulation,
    report: DiagnosticsReport,
    seconds: f64,
}

fn full_config(beta: f64) -> RunConfig {
    RunConfig {
        gamma: 2.0,
        kappa0: 15.0,
        beta,
        epsilon: EPSILON,
        m: M,
        cells: FULL_CELLS,
        trajectory_samples: PATH_SAMPLES,
        write_snapshots: false,
        ..RunConfig::default()
    }
}

fn full_run(beta: f64) -> &'static FullRun {
    static RUNS: [OnceLock<FullRun>; 2] = [OnceLock::new(), OnceLock::new()];
    let k = if beta == 0.0 { 0 } else { 1 };
    RUNS[k].get_or_init(|| {
        let start = Instant::now();
        // the canonical data trips the weighted density check; see the README
        let sim = simulate(&full_config(beta), true).expect("full run");
        let seconds = start.elapsed().as_secs_f64();
        let (report, _) = diagnose(&sim).expect("diagnostics");
        FullRun { sim, report, seconds }
    })
}

fn criterion_1() -> bool {
    let start = Instant::now();
    let grid = log_grid(PROFILE_POINTS + 1, 1.0, 1e-3, PROFILE_RANGE);
    let report = check_profile_properties(&grid, PROFILE_RESIDUAL).unwrap();
    let seconds = start.elapsed().as_secs_f64();
    let d1 = wbar_deriv(0.0, 1).unwrap();
    let d3 = wbar_deriv(0.0, 3).unwrap();
    let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.id.as_str()).collect();
    let pass = failed.is_empty()
        && grid.len() >= PROFILE_POINTS
        && grid.first().is_some_and(|y| (y + PROFILE_RANGE).abs() <= 1e-9 * PROFILE_RANGE)
        && grid.last().is_some_and(|y| (y - PROFILE_RANGE).abs() <= 1e-9 * PROFILE_RANGE)
        && report.max_ode_residual < PROFILE_RESIDUAL
        && (d1 + 1.0).abs() < 1e-14
        && (d3 - 6.0).abs() < 1e-12
        && seconds < PROFILE_SECONDS;
    line(
        1,
        pass,
        &format!(
            "profile: {} points, failed {:?}, ode residual {:.2e}, dW(0) {d1}, d3W(0) {d3}, {seconds:.3}s",
            grid.len(),
            failed,
            report.max_ode_residual
        ),
    )
}

// Characteristics of w_t + (w - shift) w_x = 0 from the built data.
fn burgers_oracle(cfg: &RunConfig) -> (f64, f64) {
    let spec = cfg.initial_spec();
    let alpha = (cfg.gamma - 1.0) / 2.0;
    let shift = cfg.kappa0 / (1.0 + alpha);
    let h = 1e-7;
    let slope = |x: f64| {
        (w_perturbation(x + h, &spec).unwrap() - w_perturbation(x - h, &spec).unwrap()) / (2.0 * h)
    };
    let mut best = (0.0, f64::INFINITY);
    let fine = 400_000;
    let coarse = 400_000;
    let samples = (0..=fine)
        .map(|k| -0.05 + 0.1 * k as f64 / fine as f64)
        .chain((0..=coarse).map(|k| -cfg.half_width + 2.0 * cfg.half_width * k as f64 / coarse as f64));
    for x in samples {
        let s = slope(x);
        if s < best.1 {
            best = (x, s);
        }
    }
    let t_star = -1.0 / best.1;
    let x0 = best.0;
    let x_star = x0 + (cfg.kappa0 + w_perturbation(x0, &spec).unwrap() - shift) * t_star;
    (t_star, x_star)
}

fn criterion_2() -> bool {
    let cfg = RunConfig {
        coupling: Coupling::BurgersTest,
        epsilon: EPSILON,
        cells: BURGERS_CELLS,
        fine_spacing: 1e-7,
        pilot_factor: 0,
        stop_slope: 20_000.0,
        write_snapshots: false,
        ..RunConfig::default()
    };
    let start = Instant::now();
    let sim = simulate(&cfg, true).unwrap();
    let fit = fit_blowup_rate(&sim.trace.slope_series).unwrap();
    let seconds = start.elapsed().as_secs_f64();
    let (t_oracle, x_oracle) = burgers_oracle(&cfg);

    let t_est = fit.t_star.value;
    let last = sim.trace.final_state();
    let frame = sim.empirical_at_time(last.t).unwrap();
    let x_est = frame.xi + frame.xi_dot.unwrap() * (t_est - frame.t);
    let grid_x = x_est - last.frame_speed * t_est;
    let cell = last.grid.spacing(last.grid.nearest(grid_x));
    let x_gap = (x_est - x_oracle).abs() / cell;
    let t_err = (t_est - t_oracle).abs() / t_oracle;
    let t_err_eps = (t_est - EPSILON).abs() / EPSILON;
    let pass = sim.trace.stop_reason == StopReason::SlopeThreshold
        && t_err < BURGERS_T_TOL
        && t_err_eps < BURGERS_T_TOL
        && x_gap <= BURGERS_X_CELLS
        && seconds < BURGERS_SECONDS;
    line(
        2,
        pass,
        &format!(
            "burgers: T* {t_est:.8} vs characteristics {t_oracle:.8} (rel {t_err:.1e}, vs eps {t_err_eps:.1e}), \
             x* {x_est:.8} vs {x_oracle:.8} ({x_gap:.2} cells), {seconds:.1}s"
        ),
    )
}

fn t_star_of(r: &DiagnosticsReport) -> f64 {
    r.t_star.map_or(r.t_star_extrapolated, |e| e.value)
}

fn criterion_3(runs: &[(f64, &FullRun)]) -> bool {
    let mut pass = true;
    let mut parts = Vec::new();
    for (beta, run) in runs {
        let t = t_star_of(&run.report);
        let x = run.report.x_star.unwrap_or(f64::NAN);
        let ok = run.report.stop_reason == StopReason::SlopeThreshold
            && run.sim.config.cells == FULL_CELLS
            && t <= T_STAR_FACTOR * EPSILON
            && x.abs() <= X_STAR_FACTOR * M * EPSILON
            && run.seconds < FULL_SECONDS;
        pass &= ok;
        parts.push(format!(
            "beta {beta}: {:?}, T* {t:.8} (<= {}), x* {x:.6} (|.| <= {}), {:.0}s",
            run.report.stop_reason,
            T_STAR_FACTOR * EPSILON,
            X_STAR_FACTOR * M * EPSILON,
            run.seconds
        ));
    }
    line(3, pass, &parts.join("; "))
}

fn criterion_4(runs: &[(f64, &FullRun)]) -> bool {
    let mut pass = true;
    let mut parts = Vec::new();
    for (beta, run) in runs {
        match &run.report.rate {
            Some(r) => {
                pass &= within(r.rate_exponent, RATE_RANGE) && r.decades >= RATE_DECADES;
                parts.push(format!(
                    "beta {beta}: exponent {:.4} +- {:.4} over {:.2} decades",
                    r.rate_exponent,
                    1.96 * r.exponent_se,
                    r.decades
                ));
            }
            None => {
                pass = false;
                parts.push(format!("beta {beta}: no fit ({:?})", run.report.rate_error));
            }
        }
    }
    line(4, pass, &parts.join("; "))
}

fn criterion_5(runs: &[(f64, &FullRun)]) -> bool {
    let mut pass = true;
    let mut parts = Vec::new();
    for (beta, run) in runs {
        match &run.report.cusp {
            Some(c) => {
                pass &= within(c.holder_exponent, HOLDER_RANGE) && within(c.gradient_exponent, GRADIENT_RANGE);
                parts.push(format!(
                    "beta {beta}: at stop time t = {:.8}, holder {:.4}, gradient {:.4}, window [{:.1e}, {:.1e}]",
                    c.t, c.holder_exponent, c.gradient_exponent, c.window[0], c.window[1]
                ));
            }
            None => {
                pass = false;
                parts.push(format!("beta {beta}: no fit ({:?})", run.report.cusp_error));
            }
        }
    }
    line(5, pass, &parts.join("; "))
}

fn criterion_6(runs: &[(f64, &FullRun)]) -> bool {
    let mut pass = true;
    let mut parts = Vec::new();
    for (beta, run) in runs {
        let g = &run.report.growth;
        pass &= g.phi_xx_growth < PHI_XX_GROWTH && g.slope_growth > SLOPE_GROWTH && g.max_z_x <= 2.0 * M;
        parts.push(format!(
            "beta {beta}: phi_xx x{:.3}, w_x x{:.1}, max z_x {:.3e} (<= {})",
            g.phi_xx_growth,
            g.slope_growth,
            g.max_z_x,
            2.0 * M
        ));
    }
    line(6, pass, &parts.join("; "))
}

fn criterion_7(runs: &[(f64, &FullRun)]) -> bool {
    let mut pass = true;
    let mut parts = Vec::new();
    for (beta, run) in runs {
        let r = &run.report;
        let covered = MONITOR_IDS.iter().all(|id| r.worst_margins.iter().any(|m| m.id == *id));
        let ok = r.monitor_error.is_none() && covered && r.snapshots_monitored >= 10 && r.violations.is_empty();
        pass &= ok;
        let worst = r.worst_margins.iter().max_by(|a, b| a.ratio.total_cmp(&b.ratio));
        let mut families: Vec<&str> = r.violations.iter().map(|m| m.id).collect();
        families.sort_unstable();
        families.dedup();
        parts.push(format!(
            "beta {beta}: {} snapshots, {} violations {:?}, worst {} {:.3}",
            r.snapshots_monitored,
            r.violations.len(),
            families,
            worst.map_or("-", |m| m.id),
            worst.map_or(f64::NAN, |m| m.ratio)
        ));
    }
    line(7, pass, &parts.join("; "))
}

fn min_rate(paths: &[PathGrowth]) -> f64 {
    paths.iter().map(|p| p.min_rate).fold(f64::INFINITY, f64::min)
}

fn criterion_8(runs: &[(f64, &FullRun)]) -> bool {
    let mut pass = true;
    let mut parts = Vec::new();
    for (beta, run) in runs {
        let Some(t) = &run.report.trajectories else {
            pass = false;
            parts.push(format!("beta {beta}: no paths ({:?})", run.report.trajectory_error));
            continue;
        };
        let near = min_rate(&t.near);
        let far = min_rate(&t.far);
        let kinds = [Velocity::W, Velocity::Z, Velocity::Sigma, Velocity::U];
        let all_kinds = kinds.iter().all(|k| t.far.iter().any(|p| p.kind == *k));
        let ok = t.near.len() == PATH_SAMPLES
            && t.far.len() == PATH_SAMPLES
            && all_kinds
            && t.truncated == 0
            && near >= NEAR_RATE
            && far >= FAR_RATE
            && t.max_tail_fraction < TAIL_FRACTION;
        pass &= ok;
        parts.push(format!(
            "beta {beta}: near rate {near:.4} (>= {NEAR_RATE}; argued {NEAR_RATE_ARGUED}: {}), \
             far rate {far:.4} (>= {FAR_RATE}; argued {FAR_RATE_ARGUED}: {}), z tail {:.2}%",
            near >= NEAR_RATE_ARGUED,
            far >= FAR_RATE_ARGUED,
            100.0 * t.max_tail_fraction
        ));
    }
    line(8, pass, &parts.join("; "))
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn duhamel_gap() -> f64 {
    let p = ModelParams { half_width: 20.0, cells: 2048, cfl: 0.1, ..ModelParams::default() };
    let grid = Arc::new(Grid::uniform(p.half_width, p.cells).unwrap());
    let bg = background(&p);
    let mut s = PhysicalState::background(grid.clone(), &p);
    for i in 0..s.len() {
        let x = grid.x[i];
        s.w[i] = p.kappa0 + 0.5 * (-x * x).exp();
        s.z[i] = 0.3 * x * (-x * x).exp();
        s.phi[i] = bg.phi + 0.5 * (-0.5 * x * x).exp();
    }
    s.frame_speed = p.background_speed();
    let cfg = SolverConfig {
        t_limit: Some(0.05),
        stop_slope: Some(1e9),
        record_q_history: true,
        ..SolverConfig::new(p.clone())
    };
    let trace = run_until_blowup(s.clone(), &cfg).unwrap();
    assert_eq!(trace.stop_reason, StopReason::TimeLimit);
    let end = trace.final_state();
    let phi = duhamel_phi(&grid, &s.phi, trace.q_history.as_ref().unwrap(), end.t, &p).unwrap();
    let norm = end.phi.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    sup_diff(&phi, &end.phi) / norm
}

fn criterion_9() -> bool {
    let grid = Grid::uniform(20.0, 4000).unwrap();
    let gauss: Vec<f64> = grid.x.iter().map(|&x| kernel(x, 0.3)).collect();
    let once = convolve(&grid, &gauss, 0.5).unwrap();
    let exact: Vec<f64> = grid.x.iter().map(|&x| kernel(x, 0.8)).collect();
    let closed_form = sup_diff(&once, &exact);
    let bump: Vec<f64> =
        grid.x.iter().map(|&x| if x.abs() < 3.0 { (1.0 - (x / 3.0).powi(2)).powi(4) } else { 0.0 }).collect();
    let two_step = convolve(&grid, &convolve(&grid, &bump, 0.2).unwrap(), 0.7).unwrap();
    let one_step = convolve(&grid, &bump, 0.9).unwrap();
    let semigroup = closed_form.max(sup_diff(&two_step, &one_step));

    let signed: Vec<f64> = grid.x.iter().map(|&x| (3.0 * x).sin() * (-0.1 * x * x).exp() + 0.2).collect();
    let (lo, hi) = signed.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let mut max_principle = true;
    for t in [grid.min_spacing().powi(2), 1e-3, 0.1, 1.0, 10.0] {
        let out = convolve(&grid, &signed, t).unwrap();
        max_principle &= out.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12);
    }

    let wide = Grid::uniform(400.0, 8000).unwrap();
    let tail: Vec<f64> = wide.x.iter().map(|&x| (1.0 + x * x).powf(-DECAY_EXPONENT)).collect();
    let decay = weighted_decay_check(&wide, &tail, DECAY_EXPONENT, &[0.01, 0.1, 1.0, 10.0]).unwrap();
    let monotone = decay.c1_by_time.windows(2).all(|p| p[1].1 >= p[0].1);

    let duhamel = duhamel_gap();
    let pass = semigroup < SEMIGROUP_TOL
        && max_principle
        && decay.passed
        && decay.c1.is_finite()
        && monotone
        && duhamel < DUHAMEL_TOL;
    line(
        9,
        pass,
        &format!(
            "kernel: semigroup {semigroup:.2e}, maximum principle {max_principle}, decay C1 {:.4} \
             (tail slope {:.3}), Duhamel vs IMEX {duhamel:.2e}",
            decay.c1, decay.tail_slope
        ),
    )
}

fn equilibrium_drift() -> f64 {
    let p = ModelParams::default();
    let grid = Arc::new(Grid::sinh(p.half_width, 2048, 0.0, 1e-6).unwrap());
    let mut state = PhysicalState::background(grid.clone(), &p);
    state.frame_speed = p.background_speed();
    let initial = state.clone();
    let mut stepper = Stepper::new(&SolverConfig::new(p.clone()), grid, state.frame_speed).unwrap();
    for _ in 0..EQUILIBRIUM_STEPS {
        let dt = stepper.cfl_dt(&state);
        stepper.step(&mut state, dt).unwrap();
    }
    let rel = |a: &[f64], b: &[f64], scale: f64| sup_diff(a, b) / scale;
    let bg = background(&p);
    rel(&initial.w, &state.w, p.kappa0).max(rel(&initial.z, &state.z, p.kappa0)).max(rel(&initial.phi, &state.phi, bg.phi))
}

fn criterion_10(runs: &[(f64, &FullRun)]) -> bool {
    let mut pass = true;
    let mut parts = Vec::new();
    for (beta, run) in runs {
        let d = run.report.growth.mass_drift;
        pass &= d < MASS_DRIFT;
        parts.push(format!("beta {beta}: mass drift {d:.2e}"));
    }
    let eq = equilibrium_drift();
    pass &= eq < EQUILIBRIUM_TOL;
    parts.push(format!("background after {EQUILIBRIUM_STEPS} steps {eq:.1e}"));
    line(10, pass, &parts.join("; "))
}

#[test]
fn acceptance() {
    let mut results = vec![criterion_1(), criterion_2()];
    let runs = [(0.0, full_run(0.0)), (1.0, full_run(1.0))];
    results.push(criterion_3(&runs));
    results.push(criterion_4(&runs));
    results.push(criterion_5(&runs));
    results.push(criterion_6(&runs));
    results.push(criterion_7(&runs));
    results.push(criterion_8(&runs));
    results.push(criterion_9());
    results.push(criterion_10(&runs));
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, ok)| !**ok).map(|(k, _)| k + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

#[test]
fn blowup_point_agrees_with_cusp_position() {
    for beta in [0.0, 1.0] {
        let r = &full_run(beta).report;
        let gap = r.x_star_gap_cells.unwrap();
        assert!(gap <= 3.0, "beta {beta}: gap {gap} cells");
    }
}

#[test]
fn frames_agree_and_third_derivative_stays_near_six() {
    for beta in [0.0, 1.0] {
        let f = &full_run(beta).report.frames;
        assert!(f.snapshots >= 10 && f.ode_error.is_none(), "beta {beta}: {f:?}");
        assert!(f.max_xi_gap <= EPSILON, "beta {beta}: xi gap {}", f.max_xi_gap);
        assert!(f.max_tau_gap <= EPSILON * EPSILON, "beta {beta}: tau gap {}", f.max_tau_gap);
        assert!(f.max_third_drift <= 1.0, "beta {beta}: drift {}", f.max_third_drift);
    }
}

#[test]
fn continuation_integral_diverges() {
    for beta in [0.0, 1.0] {
        let c = &full_run(beta).report.continuation;
        assert!(c.divergent, "beta {beta}: {c:?}");
    }
}
