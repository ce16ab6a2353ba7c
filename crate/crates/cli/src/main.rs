//! `fdspde`: validate stencils, solve, run convergence studies and check
//! against exact solutions, all from TOML run configurations.
//!
//! Exit codes: 0 ok, 1 validation failure, 2 usage, 3 numerical failure.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use fdspde::config::{RunConfig, PRESETS};
use fdspde::harness::run_extrapolation_study;
use fdspde::integrator::{RunManifest, Trajectory};
use fdspde::oracle::deterministic_field;
use fdspde::{Error, GridFunction};

#[derive(Parser, Debug)]
#[command(
    name = "fdspde",
    version,
    about = "Finite difference SPDE solver with Richardson extrapolation"
)]
struct Cli {
    /// Overrides `noise.seed` from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for replicates and levels (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check stencil structure, nonnegativity, coefficient reconstruction and CFL.
    Validate { config: PathBuf },
    /// Integrate every replicate and write trajectory CSVs plus a manifest.
    Solve {
        config: PathBuf,
        /// Output directory (default: `output.directory`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the refinement/extrapolation study and write CSVs plus a summary.
    Study {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve and compare with the exact solution; fails above `output.tolerance`.
    OracleCheck { config: PathBuf },
    /// Print a preset configuration, or list the presets.
    Preset { name: Option<String> },
}

enum Failure {
    Validation(String),
    Usage(anyhow::Error),
    Numerical(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.into())
        } else if matches!(
            e,
            Error::Config(_) | Error::Io(_) | Error::OracleUnavailable(_)
        ) {
            Failure::Usage(e.into())
        } else {
            Failure::Validation(e.to_string())
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<Error>() {
            Ok(inner) => inner.into(),
            Err(e) => Failure::Usage(e),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn load(path: &Path, seed: Option<u64>) -> Result<RunConfig, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))
        .map_err(Failure::Usage)?;
    let mut config = RunConfig::from_toml_str(&text)
        .with_context(|| format!("in {}", path.display()))
        .map_err(Failure::Usage)?;
    if let Some(seed) = seed {
        config.noise.seed = seed;
    }
    Ok(config)
}

fn output_dir(config: &RunConfig, out: Option<PathBuf>) -> Result<PathBuf, Failure> {
    let dir = out.unwrap_or_else(|| config.output.directory.clone());
    fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .map_err(Failure::Usage)?;
    Ok(dir)
}

fn write_file(path: &Path, bytes: &[u8]) -> CmdResult {
    fs::write(path, bytes)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::Usage)
}

fn validate(config: &RunConfig) -> CmdResult {
    let report = config.validate()?;
    let cfl_ok = config.cfl_ok()?;
    for note in &report.notes {
        println!("note: {note}");
    }
    for v in &report.violations {
        println!("violation: {v}");
    }
    if report.is_clean() && cfl_ok {
        println!("ok");
        Ok(())
    } else if !cfl_ok {
        Err(Failure::Validation(
            "explicit step violates the CFL condition".into(),
        ))
    } else {
        Err(Failure::Validation(format!(
            "{} violation(s)",
            report.violations.len()
        )))
    }
}

type Solved = (Trajectory, RunManifest, Option<f64>);

fn solve_all(config: &RunConfig) -> Result<Vec<Solved>, Failure> {
    let runs: Vec<fdspde::Result<Solved>> = (0..config.noise.replicates)
        .into_par_iter()
        .map(|r| config.solve_replicate(r))
        .collect();
    runs.into_iter().map(|r| r.map_err(Failure::from)).collect()
}

/// Sup distance from the exact solution at every recorded time, when one
/// is available.
fn oracle_errors(
    config: &RunConfig,
    replicate: usize,
    traj: &Trajectory,
) -> Result<Option<Vec<f64>>, Failure> {
    let Ok(oracle) = config.oracle_spec() else {
        return Ok(None);
    };
    let grid = traj.grid().clone();
    let steps = config.steps();
    let path = fdspde::sample_path(
        fdspde::noise::replicate_seed(config.noise.seed, replicate),
        config.time.horizon,
        steps,
        config.processes(),
    )?;
    let mut errors = Vec::new();
    for (t, state) in traj.times.iter().zip(&traj.states) {
        let step = (t / path.dt()).round() as usize;
        let field = if oracle.nu == 0.0 {
            deterministic_field(&oracle.coeffs, &oracle.psi, config.period(), *t)?
        } else {
            fdspde::oracle::geometric_field(
                &oracle.coeffs,
                oracle.nu,
                &path,
                step,
                &oracle.psi,
                config.period(),
            )?
        };
        let exact: GridFunction = field.on_grid(&grid);
        errors.push(state.max_abs_diff(&exact)?);
    }
    Ok(Some(errors))
}

fn solve(config: &RunConfig, out: Option<PathBuf>) -> CmdResult {
    let dir = output_dir(config, out)?;
    let runs = solve_all(config)?;
    let mut records = Vec::new();
    for (r, (traj, manifest, epsilon)) in runs.iter().enumerate() {
        let mut buf = Vec::new();
        traj.write_csv(&mut buf)?;
        let name = format!("trajectory_r{r}.csv");
        write_file(&dir.join(&name), &buf)?;
        let errors = oracle_errors(config, r, traj)?;
        if let Some(e) = errors.as_ref().and_then(|e| e.last()) {
            println!("replicate {r}: final sup error vs oracle {e:.6e}");
        }
        records.push(json!({
            "replicate": r,
            "file": name,
            "run": manifest,
            "epsilon": epsilon,
            "oracle_sup_errors": errors,
        }));
    }
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "runs": records,
    });
    write_file(&dir.join("manifest.json"), &to_json(&manifest)?)?;
    println!("wrote {} trajectories to {}", runs.len(), dir.display());
    Ok(())
}

fn to_json(value: &serde_json::Value) -> Result<Vec<u8>, Failure> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Failure::Usage(e.into()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn study(config: &RunConfig, out: Option<PathBuf>) -> CmdResult {
    let dir = output_dir(config, out)?;
    let study = config.study_config()?;
    let report = run_extrapolation_study(&study)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    let mut summary = Vec::new();
    report.write_summary_csv(&mut summary)?;
    let id = &report.id;
    write_file(&dir.join(format!("{id}_study.csv")), &csv)?;
    write_file(&dir.join(format!("{id}_summary.csv")), &summary)?;
    write_file(
        &dir.join(format!("{id}_summary.txt")),
        report.to_string().as_bytes(),
    )?;
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "report": report,
    });
    write_file(
        &dir.join(format!("{id}_manifest.json")),
        &to_json(&manifest)?,
    )?;
    print!("{report}");
    Ok(())
}

fn oracle_check(config: &RunConfig) -> CmdResult {
    config.oracle_spec()?;
    let runs = solve_all(config)?;
    let mut worst = 0.0f64;
    for (r, (traj, _, _)) in runs.iter().enumerate() {
        let errors = oracle_errors(config, r, traj)?.unwrap_or_default();
        let e = errors.into_iter().fold(0.0, f64::max);
        println!("replicate {r}: sup error vs oracle {e:.6e}");
        worst = worst.max(e);
    }
    let tol = config.output.tolerance;
    if worst <= tol {
        println!("ok: {worst:.6e} <= {tol:e}");
        Ok(())
    } else {
        Err(Failure::Validation(format!(
            "sup error {worst:.6e} exceeds tolerance {tol:e}"
        )))
    }
}

fn preset(name: Option<String>) -> CmdResult {
    match name {
        None => {
            for (name, _) in PRESETS {
                println!("{name}");
            }
            Ok(())
        }
        Some(name) => {
            let text = PRESETS
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| t.trim_start())
                .ok_or_else(|| Failure::Usage(anyhow::anyhow!("unknown preset {name:?}")))?;
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| Failure::Usage(e.into()))?;
    }
    match cli.command {
        Command::Validate { config } => validate(&load(&config, cli.seed)?),
        Command::Solve { config, out } => solve(&load(&config, cli.seed)?, out),
        Command::Study { config, out } => study(&load(&config, cli.seed)?, out),
        Command::OracleCheck { config } => oracle_check(&load(&config, cli.seed)?),
        Command::Preset { name } => preset(name),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = run(cli);
    let _ = io::stdout().flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("validation failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("numerical failure: {e:#}");
            ExitCode::from(3)
        }
    }
}
