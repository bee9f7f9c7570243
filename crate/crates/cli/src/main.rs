use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use chi_core::agent::AgentKind;
use chi_core::env::EnvName;
use chi_core::harness::{self, RunConfig, OUTPUT_ROOT_VAR};
use clap::{Args, Parser, Subcommand};

/// Control as hybrid inference experiments.
#[derive(Parser)]
#[command(name = "chi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics and checkpoints.
    Run(RunArgs),
    /// Run several configs over several seeds and summarise the curves.
    Compare(CompareArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    env: Option<EnvName>,
    #[arg(long)]
    agent: Option<AgentKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[command(flatten)]
    plan: PlanArgs,
    /// Output directory; defaults to a run-named folder under the output root.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    elite_fraction: Option<f64>,
}

#[derive(Args)]
struct CompareArgs {
    /// Comma-separated TOML configs; each file stem labels its curve.
    #[arg(long, value_delimiter = ',', required = true)]
    configs: Vec<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Root directory for all runs and the summary.
    #[arg(long, env = OUTPUT_ROOT_VAR, default_value = "runs/compare")]
    output: PathBuf,
}

fn load(path: &PathBuf) -> Result<RunConfig> {
    RunConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = load(&args.config)?;
    if let Some(v) = args.env {
        cfg.env = v;
    }
    if let Some(v) = args.agent {
        cfg.agent = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.episodes {
        cfg.episodes = v;
    }
    let p = args.plan;
    cfg.plan.horizon = p.horizon.unwrap_or(cfg.plan.horizon);
    cfg.plan.iterations = p.iters.unwrap_or(cfg.plan.iterations);
    cfg.plan.samples = p.samples.unwrap_or(cfg.plan.samples);
    cfg.plan.kappa = p.kappa.unwrap_or(cfg.plan.kappa);
    cfg.plan.elite_fraction = p.elite_fraction.unwrap_or(cfg.plan.elite_fraction);
    if let Some(dir) = args.output {
        cfg.output_dir = Some(dir);
    }
    let dir = cfg.resolve_output_dir();
    let summary = harness::run(&cfg, &dir)?;
    let last = summary.eval_curve().last().copied();
    println!(
        "{} episodes written to {}; last evaluation: {}",
        summary.rows.len(),
        dir.display(),
        last.map_or("none".to_string(), |(ep, v)| format!("{v:.3} at episode {ep}"))
    );
    Ok(())
}

fn compare(args: CompareArgs) -> Result<()> {
    let mut configs = Vec::new();
    for path in &args.configs {
        let mut cfg = load(path)?;
        if let Some(e) = args.episodes {
            cfg.episodes = e;
        }
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| cfg.agent.to_string());
        if configs.iter().any(|(l, _)| l == &label) {
            bail!("duplicate config label {label}");
        }
        configs.push((label, cfg));
    }
    let report = harness::compare(&configs, &args.seeds, &args.output)?;
    print!("{}", report.table());
    println!("curves written to {}", args.output.join("summary.csv").display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(a) => run(a),
        Command::Compare(a) => compare(a),
    }
}
