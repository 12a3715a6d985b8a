//! `rpfcli`: run transfer-operator experiments from a JSON configuration.
//!
//! Exit status: 0 on success, 2 for malformed input or configuration, 3 when a
//! structural assumption fails, 4 for numerical failures, 1 for anything else
//! (I/O errors and the like).

mod commands;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use rpf_core::config::{builtin, PotentialConfig, RunConfig, BUILTINS};
use rpf_core::RpfError;
use serde_json::json;

use commands::Task;
use output::{write_run, Manifest};

#[derive(Parser)]
#[command(name = "rpfcli", version, about = "Transfer-operator experiments for random interval maps with holes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Overrides {
    /// Output directory for the manifest, summary and CSV tables.
    #[arg(long, default_value = "rpf-out")]
    out: PathBuf,
    /// Seed of a random driver.
    #[arg(long)]
    seed: Option<u64>,
    /// Iteration length (block-length cap for certify, largest lag for correlations).
    #[arg(long)]
    n: Option<usize>,
    /// Grid size: Ulam cells for oracle, conformal CDF cells for conformal, function nodes otherwise.
    #[arg(long)]
    grid: Option<usize>,
    /// Number of Monte-Carlo base points.
    #[arg(long)]
    base_points: Option<usize>,
    /// Replace the potential by the geometric potential |T'|^{-t}.
    #[arg(long)]
    t: Option<f64>,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Path to a JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    opts: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Block-length search, cone parameters, sufficient conditions and limit profiles.
    Certify(ConfigArgs),
    /// Equivariant density at the configured fiber.
    Density(ConfigArgs),
    /// Conformal measure distribution function and the multiplier growth.
    Conformal(ConfigArgs),
    /// Invariant density, observable means, duality and invariance checks.
    Invariant(ConfigArgs),
    /// Monte-Carlo Lyapunov exponent.
    Lyapunov(ConfigArgs),
    /// Decay of correlations for f = h = x.
    Correlations(ConfigArgs),
    /// Sup norms of the RPF residual.
    Residual(ConfigArgs),
    /// Lyapunov exponent along the hole family and the escape-rate identity.
    Escape(ConfigArgs),
    /// Cross-check against the Ulam discretization.
    Oracle(ConfigArgs),
    /// Built-in example configurations.
    Builtin {
        #[command(subcommand)]
        action: BuiltinAction,
    },
}

#[derive(Subcommand)]
enum BuiltinAction {
    /// List the built-in examples.
    List,
    /// Print the configuration of a built-in example.
    Show { name: String },
    /// Run a command on a built-in example.
    Run {
        name: String,
        #[arg(value_enum)]
        task: Task,
        #[command(flatten)]
        opts: Overrides,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<RpfError>() {
        Some(RpfError::InvalidInput(_) | RpfError::Domain(_)) => 2,
        Some(RpfError::Assumption(_)) => 3,
        Some(RpfError::Numerical(_)) => 4,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    let (task, args) = match cmd {
        Command::Builtin { action } => return run_builtin(action),
        Command::Certify(a) => (Task::Certify, a),
        Command::Density(a) => (Task::Density, a),
        Command::Conformal(a) => (Task::Conformal, a),
        Command::Invariant(a) => (Task::Invariant, a),
        Command::Lyapunov(a) => (Task::Lyapunov, a),
        Command::Correlations(a) => (Task::Correlations, a),
        Command::Residual(a) => (Task::Residual, a),
        Command::Escape(a) => (Task::Escape, a),
        Command::Oracle(a) => (Task::Oracle, a),
    };
    let cfg = load(&args.config)?;
    execute(task, cfg, &args.opts, None)
}

fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RpfError::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
    RunConfig::from_json(&text).with_context(|| format!("loading {}", path.display()))
}

fn run_builtin(action: BuiltinAction) -> Result<()> {
    match action {
        BuiltinAction::List => {
            for (name, _) in BUILTINS {
                let cfg = builtin(name)?;
                println!("{name:20} {}", cfg.description);
            }
            Ok(())
        }
        BuiltinAction::Show { name } => {
            println!("{}", builtin(&name)?.to_json());
            Ok(())
        }
        BuiltinAction::Run { name, task, opts } => {
            let cfg = builtin(&name)?;
            execute(task, cfg, &opts, Some(&name))
        }
    }
}

fn apply_overrides(task: Task, cfg: &mut RunConfig, o: &Overrides) -> Result<()> {
    if let Some(s) = o.seed {
        cfg.set_seed(s);
    }
    if let Some(n) = o.n {
        if n == 0 {
            return Err(RpfError::InvalidInput("--n must be positive".into()).into());
        }
        match task {
            Task::Certify => cfg.run.n_max = n,
            Task::Correlations => cfg.run.correlation_n = n,
            _ => cfg.run.n = n,
        }
    }
    if let Some(g) = o.grid {
        if g < 2 {
            return Err(RpfError::InvalidInput("--grid must be at least 2".into()).into());
        }
        match task {
            Task::Oracle => cfg.resolution.ulam_cells = g,
            Task::Conformal => cfg.resolution.nu_cells = g,
            _ => cfg.resolution.nodes = g,
        }
    }
    if let Some(k) = o.base_points {
        if k == 0 {
            return Err(RpfError::InvalidInput("--base-points must be positive".into()).into());
        }
        cfg.run.base_points = k;
    }
    if let Some(t) = o.t {
        if !t.is_finite() {
            return Err(RpfError::InvalidInput("--t must be finite".into()).into());
        }
        cfg.potential = PotentialConfig::Geometric { t };
    }
    Ok(())
}

fn execute(task: Task, mut cfg: RunConfig, opts: &Overrides, builtin_name: Option<&str>) -> Result<()> {
    apply_overrides(task, &mut cfg, opts)?;
    let outcome = commands::run(task, &cfg)?;
    let seed = match &cfg.driver {
        rpf_core::driver::DriverSpec::Iid { seed, .. } | rpf_core::driver::DriverSpec::Markov { seed, .. } => {
            Some(*seed)
        }
        rpf_core::driver::DriverSpec::Rotation { .. } => None,
    };
    let manifest = Manifest {
        command: task.name(),
        builtin: builtin_name,
        config: serde_json::to_value(&cfg)?,
        seed,
        overrides: json!({
            "seed": opts.seed,
            "n": opts.n,
            "grid": opts.grid,
            "base_points": opts.base_points,
            "t": opts.t,
        }),
    };
    write_run(&opts.out, &manifest, &outcome)?;
    for line in &outcome.lines {
        println!("{line}");
    }
    println!("results written to {}", opts.out.display());
    Ok(())
}
