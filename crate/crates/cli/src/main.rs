use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use chemoshock::initial::{build, validate};
use chemoshock::pipeline::{write_physical_csv, RunConfig};
use chemoshock::profile::{check_profile_properties, log_grid, write_profile_csv};
use chemoshock::sweep::{run_job, sweep, Depth, JobStatus};
use clap::{Parser, ValueEnum};

const EXIT_CONFIG: u8 = 2;
const EXIT_REJECTED: u8 = 3;
const EXIT_UNSTABLE: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Integrate to the slope threshold and write the run files and fits.
    Simulate,
    /// As simulate, plus self-similar snapshots, bootstrap margins and path checks.
    Diagnose,
    /// Check the exact self-similar profile on a log grid.
    ProfileCheck,
    /// Build and validate the initial data without integrating.
    InitialCheck,
    /// Run the configured sweep axis.
    Sweep,
}

/// Shock formation runs for the hyperbolic-parabolic chemotaxis system.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    /// TOML run configuration; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created when the run finishes.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Simulate)]
    mode: Mode,
    /// Run even when the initial data fails a blocking constraint.
    #[arg(long)]
    force: bool,
    /// Worker threads for sweeps.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Replace an existing output directory.
    #[arg(long)]
    overwrite: bool,
    /// Points of the profile-check grid.
    #[arg(long, default_value_t = 100_000)]
    profile_points: usize,
}

/// Failure with a chosen exit status.
#[derive(Debug)]
struct Exit(u8, String);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for Exit {}

fn config_error(e: impl std::fmt::Display) -> anyhow::Error {
    Exit(EXIT_CONFIG, e.to_string()).into()
}

fn load_config(args: &Args) -> Result<RunConfig> {
    let cfg = match &args.config {
        Some(p) => RunConfig::load(p).map_err(config_error)?,
        None => RunConfig::default(),
    };
    if args.mode == Mode::Sweep && args.jobs == 0 {
        return Err(config_error("--jobs must be at least 1"));
    }
    Ok(cfg)
}

/// Sibling scratch directory that is renamed onto `out` at the end.
fn staging_dir(out: &Path, overwrite: bool) -> Result<PathBuf> {
    if out.exists() && !overwrite {
        return Err(config_error(format!("{} exists; pass --overwrite to replace it", out.display())));
    }
    let name = out.file_name().context("output path has no final component")?.to_string_lossy();
    let parent = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    let tmp = parent.join(format!(".{name}.partial-{}", std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    Ok(tmp)
}

fn publish(tmp: &Path, out: &Path) -> Result<()> {
    if out.exists() {
        fs::remove_dir_all(out).with_context(|| format!("removing {}", out.display()))?;
    }
    fs::rename(tmp, out).with_context(|| format!("moving results to {}", out.display()))
}

fn profile_check(dir: &Path, points: usize) -> Result<u8> {
    let grid = log_grid(points, 1.0, 1e-3, 1e6);
    let report = check_profile_properties(&grid, 1e-10)?;
    let mut f = BufWriter::new(fs::File::create(dir.join("profile_report.json"))?);
    serde_json::to_writer_pretty(&mut f, &report)?;
    f.flush()?;
    let coarse = log_grid(2001, 1.0, 1e-3, 1e6);
    write_profile_csv(BufWriter::new(fs::File::create(dir.join("profile.csv"))?), &coarse)?;
    for c in &report.checks {
        eprintln!("{:<4} {:<6} margin {:+.3e}  {}", c.id, if c.passed { "ok" } else { "FAIL" }, c.worst_margin, c.description);
    }
    eprintln!("ode residual {:.3e}", report.max_ode_residual);
    Ok(if report.all_passed() { 0 } else { EXIT_REJECTED })
}

fn initial_check(cfg: &RunConfig, dir: &Path, force: bool) -> Result<u8> {
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    let grid = Arc::new(cfg.make_grid(0.0)?);
    let state = build(&cfg.initial_spec(), grid, cfg.frame_speed())?;
    let report = validate(&state, &cfg.params());
    fs::write(dir.join("initial_constraints.json"), report.to_json()? + "\n")?;
    write_physical_csv(BufWriter::new(fs::File::create(dir.join("initial.csv"))?), &state, &cfg.params())?;
    for c in &report.checks {
        let tag = match (c.passed, c.blocking) {
            (true, _) => "ok",
            (false, true) => "FAIL",
            (false, false) => "warn",
        };
        eprintln!("{:<28} {:<4} ratio {:.4}", c.id, tag, c.ratio);
    }
    Ok(if report.accepted() || force { 0 } else { EXIT_REJECTED })
}

fn exit_code(status: JobStatus) -> u8 {
    match status {
        JobStatus::BlowUp | JobStatus::TimeLimit => 0,
        JobStatus::Unstable => EXIT_UNSTABLE,
        JobStatus::Rejected => EXIT_REJECTED,
        JobStatus::Failed => 1,
    }
}

fn run(args: &Args, cfg: &RunConfig, dir: &Path) -> Result<u8> {
    match args.mode {
        Mode::ProfileCheck => profile_check(dir, args.profile_points),
        Mode::InitialCheck => initial_check(cfg, dir, args.force),
        Mode::Simulate | Mode::Diagnose => {
            if cfg.sweep_axis != chemoshock::pipeline::SweepAxis::None {
                eprintln!("note: sweep settings are ignored outside --mode sweep");
            }
            let depth = if args.mode == Mode::Diagnose { Depth::Diagnose } else { Depth::Simulate };
            let outcome = run_job(cfg, dir, args.force, depth).map_err(|e| match e {
                chemoshock::Error::Config(_) => config_error(e),
                e => e.into(),
            })?;
            if let Some(s) = &outcome.summary {
                let t = s.t_star.map_or(s.t_star_extrapolated, |e| e.value);
                eprintln!("stop {:?} at t = {:.6e}, T* = {:.6e} ({:.4} epsilon)", s.stop_reason, s.t_stop, t, s.t_star_over_epsilon);
                if let Some(r) = s.rate_exponent {
                    eprintln!("rate exponent {:.4} +- {:.4}", r.value, r.uncertainty);
                }
                if let (Some(h), Some(g)) = (s.holder_exponent, s.gradient_exponent) {
                    eprintln!("cusp exponents {h:.4} / {g:.4}");
                }
            }
            if let Some(m) = &outcome.message {
                eprintln!("{m}");
            }
            Ok(exit_code(outcome.status))
        }
        Mode::Sweep => {
            let rows = sweep(cfg, dir, args.jobs, args.force, Depth::Diagnose).map_err(|e| match e {
                chemoshock::Error::Config(_) => config_error(e),
                e => e.into(),
            })?;
            for r in &rows {
                eprintln!(
                    "{:<10} {:<10} T*/eps {}",
                    r.value,
                    format!("{:?}", r.status),
                    r.t_star_over_epsilon.map_or("-".into(), |v| format!("{v:.5}"))
                );
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = load_config(&args).and_then(|cfg| {
        let dir = staging_dir(&args.out, args.overwrite)?;
        let code = match run(&args, &cfg, &dir) {
            Ok(code) => code,
            Err(e) => {
                let _ = fs::remove_dir_all(&dir);
                return Err(e);
            }
        };
        publish(&dir, &args.out)?;
        Ok(code)
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Exit>() {
                Some(Exit(code, _)) => ExitCode::from(*code),
                None => ExitCode::FAILURE,
            }
        }
    }
}
