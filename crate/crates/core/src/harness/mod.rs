//! Experiment orchestration: configuration, seeded runs, metrics export and
//! multi-seed comparison.

mod compare;
mod metrics;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use compare::{compare, quantile, summarise, CompareEntry, CompareReport, RunOutcome};
pub use metrics::{elbo_estimate, read_metrics, MetricsRow, MetricsWriter, HEADER};

use crate::agent::{Agent, AgentConfig, AgentKind, ChiConfig};
use crate::dynamics::EnsembleConfig;
use crate::env::{make_env, EnvConfig, EnvName};
use crate::error::{ChiError, Result};
use crate::planner::PlanConfig;
use crate::policy::SacConfig;
use crate::rng::{stream, Stream};

/// Environment variable naming the directory under which runs are written.
pub const OUTPUT_ROOT_VAR: &str = "CHI_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub env: EnvName,
    pub agent: AgentKind,
    pub episodes: usize,
    pub seed: u64,
    /// An evaluation episode follows every `eval_interval`-th training
    /// episode; 0 disables evaluation.
    pub eval_interval: usize,
    pub replay_capacity: usize,
    /// Wall-clock columns are `NA` unless set, keeping metrics reproducible.
    pub record_timing: bool,
    pub write_checkpoints: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub plan: PlanConfig,
    pub sac: SacConfig,
    pub ensemble: EnsembleConfig,
    pub chi: ChiConfig,
    pub envs: EnvConfig,
}

impl Default for RunConfig {
    /// Desk-scale point-mass run.
    fn default() -> Self {
        let agent = AgentConfig::desk();
        Self {
            env: EnvName::PointMass,
            agent: AgentKind::Chi,
            episodes: 30,
            seed: 0,
            eval_interval: 5,
            replay_capacity: agent.replay_capacity,
            record_timing: false,
            write_checkpoints: true,
            output_dir: None,
            plan: agent.plan,
            sac: agent.sac,
            ensemble: agent.ensemble,
            chi: agent.chi,
            envs: EnvConfig::default(),
        }
    }
}

impl RunConfig {
    /// Full-size networks and sample counts.
    pub fn full_scale() -> Self {
        Self {
            plan: PlanConfig::default(),
            ensemble: EnsembleConfig::default(),
            ..Self::default()
        }
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            plan: self.plan.clone(),
            sac: self.sac.clone(),
            ensemble: self.ensemble.clone(),
            chi: self.chi.clone(),
            replay_capacity: self.replay_capacity,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ChiError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| ChiError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// `output_dir` if set, else `<root>/<env>-<agent>-seed<seed>` where
    /// `root` comes from [`OUTPUT_ROOT_VAR`] or defaults to `runs`.
    pub fn resolve_output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| {
            let root = std::env::var_os(OUTPUT_ROOT_VAR).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
            root.join(format!("{}-{}-seed{}", self.env, self.agent, self.seed))
        })
    }
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub rows: Vec<MetricsRow>,
}

impl RunSummary {
    pub fn eval_curve(&self) -> Vec<(usize, f64)> {
        eval_curve(&self.rows)
    }
}

pub fn eval_curve(rows: &[MetricsRow]) -> Vec<(usize, f64)> {
    rows.iter()
        .filter_map(|r| r.eval_return.map(|v| (r.episode, v)))
        .collect()
}

/// Execute a run, writing `config.toml`, `metrics.csv` and (optionally)
/// `checkpoints/` into `dir`. On failure the partial metrics stay on disk
/// next to a `failure.txt` record.
pub fn run(config: &RunConfig, dir: &Path) -> Result<RunSummary> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), config.to_toml()?)?;
    let mut writer = MetricsWriter::create(&dir.join("metrics.csv"))?;
    let mut rows = Vec::with_capacity(config.episodes);
    let mut episode = 0;
    let result = execute(config, dir, &mut writer, &mut rows, &mut episode);
    match result {
        Ok(()) => Ok(RunSummary {
            dir: dir.to_path_buf(),
            rows,
        }),
        Err(e) => {
            let _ = fs::write(
                dir.join("failure.txt"),
                format!("run failed during episode {episode}: {e}\n"),
            );
            Err(e)
        }
    }
}

fn execute(
    config: &RunConfig,
    dir: &Path,
    writer: &mut MetricsWriter,
    rows: &mut Vec<MetricsRow>,
    episode: &mut usize,
) -> Result<()> {
    let mut env = make_env(config.env, &config.envs)?;
    let mut agent = Agent::new(config.agent, config.agent_config(), env.spec(), config.seed)?;
    let mut env_rng = stream(config.seed, Stream::Env);
    for ep in 1..=config.episodes {
        *episode = ep;
        let start = Instant::now();
        let seen = agent.real_data().len();
        let log = agent.run_episode(env.as_mut(), env_rng.next_u64(), true)?;
        let fresh = agent.real_data()[seen..].to_vec();
        let (nll, _) = agent.train_dynamics(&fresh)?;
        let eval = if config.eval_interval > 0 && ep % config.eval_interval == 0 {
            Some(agent.run_episode(env.as_mut(), env_rng.next_u64(), false)?)
        } else {
            None
        };
        let row = MetricsRow {
            episode: ep,
            train_return: log.total_return(),
            eval_return: eval.as_ref().map(|e| e.total_return()),
            eval_success: eval.as_ref().map(|e| e.success),
            mean_sigma: log.mean_sigma(),
            mean_kl: log.mean_kl(),
            ensemble_nll: nll,
            elbo: elbo_estimate(&log.rewards, &log.acting)?,
            wall_clock_s: config.record_timing.then(|| start.elapsed().as_secs_f64()),
        };
        log::info!(
            "episode {ep}: return {:.3}, eval {:?}",
            row.train_return,
            row.eval_return
        );
        writer.append(&row)?;
        rows.push(row);
    }
    if config.write_checkpoints {
        let ck = dir.join("checkpoints");
        fs::create_dir_all(&ck)?;
        agent.sac().policy.to_checkpoint().write(ck.join("policy.chk"))?;
        agent.sac().critic.to_checkpoint().write(ck.join("critic.chk"))?;
        agent.dynamics().to_checkpoint().write(ck.join("ensemble.chk"))?;
        agent.replay().to_checkpoint().write(ck.join("replay.chk"))?;
    }
    Ok(())
}
