//! Independent runs over one parameter axis, written side by side with an
//! aggregate table.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::pipeline::{diagnose, simulate, summarize, write_run, RunConfig, Summary, SweepAxis};
use crate::solver::StopReason;

/// How a single run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum JobStatus {
    BlowUp,
    TimeLimit,
    Unstable,
    Rejected,
    Failed,
}

/// What to compute for each run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Depth {
    /// Integration, fits and run files.
    Simulate,
    /// Also the self-similar transform, bootstrap monitor and path checks.
    Diagnose,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobOutcome {
    pub status: JobStatus,
    pub summary: Option<Summary>,
    pub message: Option<String>,
}

/// Runs one configuration and writes its files into `dir`, which must
/// exist. Errors are folded into the outcome, except I/O on `dir`.
pub fn run_job(cfg: &RunConfig, dir: &Path, force: bool, depth: Depth) -> Result<JobOutcome> {
    let sim = match simulate(cfg, force) {
        Ok(s) => s,
        Err(Error::Construction(m)) => {
            fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
            return Ok(JobOutcome { status: JobStatus::Rejected, summary: None, message: Some(m) });
        }
        Err(e @ Error::Config(_)) => return Err(e),
        Err(e) => {
            fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
            return Ok(JobOutcome { status: JobStatus::Failed, summary: None, message: Some(e.to_string()) });
        }
    };
    let mut message = sim.trace.message.clone();
    let diagnosed = match depth {
        Depth::Diagnose if sim.trace.stop_reason != StopReason::Instability => match diagnose(&sim) {
            Ok(d) => Some(d),
            Err(e) => {
                message = Some(format!("diagnostics failed: {e}"));
                None
            }
        },
        _ => None,
    };
    write_run(dir, &sim, diagnosed.as_ref().map(|(r, t)| (r, t)))?;
    let status = match sim.trace.stop_reason {
        StopReason::SlopeThreshold => JobStatus::BlowUp,
        StopReason::TimeLimit => JobStatus::TimeLimit,
        StopReason::Instability => JobStatus::Unstable,
    };
    Ok(JobOutcome { status, summary: Some(summarize(&sim, diagnosed.as_ref().map(|d| &d.0))), message })
}

/// One line of `sweep.csv`. Empty cells mark quantities a job did not
/// produce.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub gamma: f64,
    pub status: JobStatus,
    pub t_star: Option<f64>,
    pub t_star_uncertainty: Option<f64>,
    pub t_star_over_epsilon: Option<f64>,
    pub x_star: Option<f64>,
    pub rate_exponent: Option<f64>,
    pub holder_exponent: Option<f64>,
    pub gradient_exponent: Option<f64>,
    pub initial_data_accepted: Option<bool>,
    pub bootstrap_violations: Option<usize>,
    pub worst_margin_family: Option<String>,
    pub worst_margin_ratio: Option<f64>,
    pub directory: String,
    pub message: Option<String>,
}

impl SweepRow {
    fn new(cfg: &RunConfig, value: f64, directory: String, outcome: JobOutcome) -> Self {
        let s = outcome.summary.as_ref();
        let t_star = s.map(|s| s.t_star.map_or(s.t_star_extrapolated, |e| e.value));
        let worst = s.and_then(|s| s.worst_margin.clone());
        Self {
            value,
            epsilon: cfg.epsilon,
            beta: cfg.beta,
            gamma: cfg.gamma,
            status: outcome.status,
            t_star,
            t_star_uncertainty: s.and_then(|s| s.t_star.map(|e| e.uncertainty)),
            t_star_over_epsilon: t_star.map(|t| t / cfg.epsilon),
            x_star: s.and_then(|s| s.x_star),
            rate_exponent: s.and_then(|s| s.rate_exponent.map(|e| e.value)),
            holder_exponent: s.and_then(|s| s.holder_exponent),
            gradient_exponent: s.and_then(|s| s.gradient_exponent),
            initial_data_accepted: s.map(|s| s.initial_data_accepted),
            bootstrap_violations: s.and_then(|s| s.bootstrap_violations),
            worst_margin_family: worst.as_ref().map(|w| w.0.clone()),
            worst_margin_ratio: worst.map(|w| w.1),
            directory,
            message: outcome.message,
        }
    }
}

fn job_dir_name(k: usize, axis: SweepAxis, value: f64) -> String {
    let name = match axis {
        SweepAxis::None => "run",
        SweepAxis::Epsilon => "epsilon",
        SweepAxis::Beta => "beta",
        SweepAxis::Gamma => "gamma",
    };
    format!("{k:03}-{name}-{value}")
}

/// Runs every value of the configured axis on `jobs` workers, each into its
/// own subdirectory of `out`, and writes `sweep.csv`. Without an axis the
/// single run is written into `out` itself.
pub fn sweep(cfg: &RunConfig, out: &Path, jobs: usize, force: bool, depth: Depth) -> Result<Vec<SweepRow>> {
    cfg.check()?;
    fs::create_dir_all(out)?;
    let plan: Vec<(f64, RunConfig, PathBuf, String)> = if cfg.sweep_axis == SweepAxis::None {
        vec![(f64::NAN, cfg.clone(), out.to_path_buf(), ".".into())]
    } else {
        cfg.sweep_values
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let name = job_dir_name(k, cfg.sweep_axis, v);
                (v, cfg.with_axis(cfg.sweep_axis, v), out.join(&name), name)
            })
            .collect()
    };
    for (_, c, dir, _) in &plan {
        c.check()?;
        fs::create_dir_all(dir)?;
    }
    let next = AtomicUsize::new(0);
    let rows: Mutex<Vec<Option<SweepRow>>> = Mutex::new(vec![None; plan.len()]);
    let io_error: Mutex<Option<Error>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, plan.len().max(1)) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some((v, c, dir, name)) = plan.get(k) else { break };
                let outcome = match run_job(c, dir, force, depth) {
                    Ok(o) => o,
                    Err(e) => {
                        let msg = e.to_string();
                        io_error.lock().unwrap().get_or_insert(e);
                        JobOutcome { status: JobStatus::Failed, summary: None, message: Some(msg) }
                    }
                };
                rows.lock().unwrap()[k] = Some(SweepRow::new(c, *v, name.clone(), outcome));
            });
        }
    });
    let rows: Vec<SweepRow> = rows.into_inner().unwrap().into_iter().flatten().collect();
    let mut wr = csv::Writer::from_path(out.join("sweep.csv"))?;
    for r in &rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    match io_error.into_inner().unwrap() {
        Some(e @ Error::Config(_)) => Err(e),
        _ => Ok(rows),
    }
}
