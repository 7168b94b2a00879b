use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use hiusac_core::config::{ConfigError, ExperimentConfig};
use hiusac_core::envs::make_env;
use hiusac_core::nets::Checkpoint;
use hiusac_core::qgrid::{qgrid, write_qgrid, GridSpec};
use hiusac_core::trainer::{evaluate, run_experiment, TaskMetrics, DIVERGENCE_DUMP};
use hiusac_core::verify::{grad_suite, oracle_suite, CheckResult, GradSuite};
use hiusac_core::Error;

#[derive(Parser)]
#[command(name = "hiusac", version, about = "Hierarchical intentional-unintentional soft actor-critic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run. Any config key can be overridden with `--key value`.
    Train(RunArgs),
    /// Train one run per seed listed under `seeds`, each in `out_dir/<algo>_seed<N>`.
    Sweep(RunArgs),
    /// Evaluate a checkpoint with deterministic mean actions.
    Eval(EvalArgs),
    /// Run the gradient and composition self-checks.
    Check(CheckArgs),
    /// Export soft-Q values over an action grid.
    Qgrid(QgridArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// `--key value` pairs applied on top of the config file.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Expected environment; rejected if the checkpoint was trained elsewhere.
    #[arg(long)]
    env: Option<String>,
    #[arg(long, default_value_t = 5)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Metrics document path, `eval_metrics.json` beside the checkpoint by default.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Grad,
    Oracle,
    All,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(value_enum)]
    suite: Suite,
    #[arg(long, default_value_t = 20)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Halve the analytic gradient of the named check.
    #[arg(long, value_name = "CHECK")]
    break_gradient: Option<String>,
}

#[derive(Args)]
struct QgridArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output path, `qgrid.csv` in the run directory by default.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 21)]
    resolution: usize,
    /// States as `x,y`; repeat for several.
    #[arg(long = "state", value_parser = parse_state)]
    states: Vec<[f64; 2]>,
}

fn parse_state(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [x, y] => Ok([
            x.parse().map_err(|e| format!("{x}: {e}"))?,
            y.parse().map_err(|e| format!("{y}: {e}"))?,
        ]),
        _ => Err(format!("expected x,y, got `{s}`")),
    }
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    let mut it = raw.iter();
    while let Some(flag) = it.next() {
        let Some(key) = flag.strip_prefix("--") else {
            return Err(ConfigError::Override(format!("expected --key, got `{flag}`")));
        };
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), v.to_string()));
            continue;
        }
        let value = it
            .next()
            .ok_or_else(|| ConfigError::Override(format!("--{key} needs a value")))?;
        out.push((key.to_string(), value.clone()));
    }
    Ok(out)
}

fn load_config(args: &RunArgs) -> anyhow::Result<ExperimentConfig> {
    let overrides = parse_overrides(&args.overrides).map_err(Error::from)?;
    let cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::parse(&text, &overrides).map_err(Error::from)?
        }
        None => ExperimentConfig::parse("", &overrides).map_err(Error::from)?,
    };
    Ok(cfg)
}

fn train(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    eprintln!("training {} on {} (seed {}) into {}", cfg.algo, cfg.env, cfg.seed, cfg.out_dir.display());
    let summary = run_experiment(cfg).map_err(|e| {
        if matches!(e, Error::Divergence(_)) {
            eprintln!("diagnostic dump: {}", cfg.out_dir.join(DIVERGENCE_DUMP).display());
        }
        e
    })?;
    for m in &summary.final_metrics {
        println!(
            "task {}: return {:.2}, final distance {:.3}, entropy {:.3}",
            m.task, m.avg_return, m.final_distance, m.entropy
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalDocument<'a> {
    checkpoint: &'a Path,
    env: &'a str,
    algo: &'a str,
    step: u64,
    episodes: usize,
    seed: u64,
    tasks: Vec<TaskMetrics>,
}

fn eval(args: &EvalArgs) -> anyhow::Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let arch = &ckpt.architecture;
    if let Some(env) = &args.env {
        if *env != arch.env {
            return Err(Error::IncompatibleCheckpoint(format!(
                "checkpoint was trained on `{}`, not `{env}`",
                arch.env
            ))
            .into());
        }
    }
    let actor = ckpt.actor()?;
    let mut env = make_env(&arch.env)?;
    let tasks = evaluate(actor.as_ref(), env.as_mut(), args.episodes, args.seed)?;
    let doc = EvalDocument {
        checkpoint: &args.checkpoint,
        env: &arch.env,
        algo: &arch.algo,
        step: ckpt.step,
        episodes: args.episodes,
        seed: args.seed,
        tasks,
    };
    let text = serde_json::to_string_pretty(&doc)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.checkpoint.with_file_name("eval_metrics.json"));
    std::fs::write(&out, &text).with_context(|| format!("writing {}", out.display()))?;
    println!("{text}");
    Ok(())
}

fn check(args: &CheckArgs) -> anyhow::Result<bool> {
    let mut results: Vec<CheckResult> = Vec::new();
    if matches!(args.suite, Suite::Grad | Suite::All) {
        let suite = GradSuite {
            draws: args.draws,
            seed: args.seed,
            broken: args.break_gradient.clone(),
        };
        results.extend(grad_suite(&suite)?);
    } else if args.break_gradient.is_some() {
        bail!("--break-gradient only applies to the grad suite");
    }
    if matches!(args.suite, Suite::Oracle | Suite::All) {
        results.extend(oracle_suite(args.seed)?);
    }
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    println!("{} checks, {failed} failed", results.len());
    Ok(failed == 0)
}

fn export_qgrid(args: &QgridArgs) -> anyhow::Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let mut spec = GridSpec {
        resolution: args.resolution,
        ..GridSpec::default()
    };
    if !args.states.is_empty() {
        spec.states = args.states.clone();
    }
    let rows = qgrid(&ckpt, &spec)?;
    let out = args.out.clone().unwrap_or_else(|| {
        let dir = args.checkpoint.parent().unwrap_or(Path::new("."));
        let run = if dir.file_name().is_some_and(|n| n == "checkpoints") {
            dir.parent().unwrap_or(dir)
        } else {
            dir
        };
        run.join("qgrid.csv")
    });
    write_qgrid(&out, &rows)?;
    println!("{} rows written to {}", rows.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Train(args) => train(&load_config(&args)?).map(|_| true),
        Command::Sweep(args) => {
            let base = load_config(&args)?;
            for &seed in &base.seeds {
                let mut cfg = base.clone();
                cfg.seed = seed;
                cfg.out_dir = base.out_dir.join(format!("{}_seed{seed}", base.algo));
                train(&cfg)?;
            }
            Ok(true)
        }
        Command::Eval(args) => eval(&args).map(|_| true),
        Command::Check(args) => check(&args),
        Command::Qgrid(args) => export_qgrid(&args).map(|_| true),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        Some(Error::Divergence(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
