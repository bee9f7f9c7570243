//! The hybrid agent and its two baselines.
//!
//! * `Chi`: the policy is rolled through the model to initialise the
//!   sequence posterior, the planner refines it, and `tanh(μ_0)` is executed.
//! * `Sac`: the amortised policy alone.
//! * `Cem`: elite-refit planning from an uninformative init.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{EnsembleConfig, EnsembleDynamics, TrainReport};
use crate::env::{EnvSpec, Environment, RewardModel};
use crate::error::{check_dim, ChiError, Result};
use crate::planner::{plan, ActionSequenceDist, CandidateSet, PlanConfig, RefitRule};
use crate::policy::{rollout_policy_through_model, Advance, Sac, SacBatch, SacConfig, SacLosses};
use crate::replay::{ReplayBuffer, Transition};
use crate::rng::{standard_normals, stream, RunRng, Stream};
use crate::tensor::DiagGaussian;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    #[default]
    Chi,
    Sac,
    Cem,
}

impl std::str::FromStr for AgentKind {
    type Err = ChiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chi" => Ok(Self::Chi),
            "sac" => Ok(Self::Sac),
            "cem" => Ok(Self::Cem),
            other => Err(ChiError::Config(format!("unknown agent {other:?}"))),
        }
    }
}

impl std::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Chi => "chi",
            Self::Sac => "sac",
            Self::Cem => "cem",
        })
    }
}

/// Where the hybrid agent's planner starts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    /// Policy rolled through the model.
    #[default]
    Amortised,
    /// `μ = 0`, `σ = σ_max`.
    Uninformative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChiConfig {
    /// Highest-scoring candidates harvested per planning step.
    pub m_top: usize,
    /// Uniformly drawn candidates harvested per planning step.
    pub m_rand: usize,
    /// Std of the Gaussian added to normalised actions while training.
    pub noise_std: f64,
    pub init: InitMode,
    pub advance: Advance,
}

impl Default for ChiConfig {
    fn default() -> Self {
        Self {
            m_top: 5,
            m_rand: 5,
            noise_std: 0.3,
            init: InitMode::Amortised,
            advance: Advance::Mean,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub plan: PlanConfig,
    pub sac: SacConfig,
    pub ensemble: EnsembleConfig,
    pub chi: ChiConfig,
    pub replay_capacity: usize,
}

impl AgentConfig {
    pub fn desk() -> Self {
        Self {
            plan: PlanConfig::desk(),
            ensemble: EnsembleConfig::desk(),
            replay_capacity: 100_000,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct StepDiagnostics {
    pub init: Option<ActionSequenceDist>,
    pub refined: Option<ActionSequenceDist>,
    /// `KL(refined ‖ init)` over the whole sequence.
    pub kl: Option<f64>,
    /// Mean policy std at the current state.
    pub amortised_sigma: Option<f64>,
    /// Pre-squash Gaussian the action was derived from.
    pub acting: DiagGaussian,
    /// Executed normalised action.
    pub action: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct EpisodeLog {
    pub rewards: Vec<f64>,
    /// Per-step acting distributions.
    pub acting: Vec<DiagGaussian>,
    pub kls: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub actions: Vec<Vec<f64>>,
    pub success: bool,
    pub synthetic_added: usize,
    pub sac_updates: usize,
    pub last_losses: Option<SacLosses>,
}

impl EpisodeLog {
    pub fn total_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn mean_kl(&self) -> Option<f64> {
        mean(&self.kls)
    }

    pub fn mean_sigma(&self) -> Option<f64> {
        mean(&self.sigmas)
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

struct Streams {
    policy: RunRng,
    planner: RunRng,
    ensemble: RunRng,
    exploration: RunRng,
    replay: RunRng,
}

pub struct Agent {
    kind: AgentKind,
    config: AgentConfig,
    spec: EnvSpec,
    sac: Sac,
    dynamics: EnsembleDynamics,
    replay: ReplayBuffer,
    real: Vec<Transition>,
    rngs: Streams,
}

impl Agent {
    pub fn new(kind: AgentKind, config: AgentConfig, spec: EnvSpec, seed: u64) -> Result<Self> {
        config.plan.validate()?;
        if config.replay_capacity == 0 {
            return Err(ChiError::Config("replay capacity must be positive".into()));
        }
        let mut init = stream(seed, Stream::Init);
        let dynamics = EnsembleDynamics::new(spec.state_dim, spec.action_dim, config.ensemble.clone(), &mut init)?;
        let sac = Sac::new(spec.state_dim, spec.action_dim, config.sac.clone(), &mut init)?;
        Ok(Self {
            kind,
            replay: ReplayBuffer::new(config.replay_capacity),
            config,
            spec,
            sac,
            dynamics,
            real: Vec::new(),
            rngs: Streams {
                policy: stream(seed, Stream::Policy),
                planner: stream(seed, Stream::Planner),
                ensemble: stream(seed, Stream::Ensemble),
                exploration: stream(seed, Stream::Exploration),
                replay: stream(seed, Stream::Replay),
            },
        })
    }

    pub fn kind(&self) -> AgentKind {
        self.kind
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn sac(&self) -> &Sac {
        &self.sac
    }

    pub fn sac_mut(&mut self) -> &mut Sac {
        &mut self.sac
    }

    pub fn dynamics(&self) -> &EnsembleDynamics {
        &self.dynamics
    }

    pub fn dynamics_mut(&mut self) -> &mut EnsembleDynamics {
        &mut self.dynamics
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn replay_mut(&mut self) -> &mut ReplayBuffer {
        &mut self.replay
    }

    /// Real transitions seen so far; the dynamics training set.
    pub fn real_data(&self) -> &[Transition] {
        &self.real
    }

    fn uses_model(&self) -> bool {
        self.kind != AgentKind::Sac
    }

    /// Choose a normalised action. Returns the final candidate set when a
    /// planner ran.
    pub fn select_action(
        &mut self,
        state: &[f64],
        reward: &dyn RewardModel,
        training: bool,
    ) -> Result<(Vec<f64>, StepDiagnostics, Option<CandidateSet>)> {
        check_dim("agent state", self.spec.state_dim, state.len())?;
        let d = self.spec.action_dim;
        let (mut action, diag, candidates) = match self.kind {
            AgentKind::Sac => {
                let head = self.sac.policy.act(state)?;
                let action = if training {
                    self.sac.policy.sample(state, &standard_normals(&mut self.rngs.policy, d))?.0
                } else {
                    head.mean().iter().map(|m| m.tanh()).collect()
                };
                let diag = StepDiagnostics {
                    init: None,
                    refined: None,
                    kl: None,
                    amortised_sigma: Some(mean(&head.std()).unwrap_or(0.0)),
                    acting: head,
                    action: Vec::new(),
                };
                (action, diag, None)
            }
            AgentKind::Chi | AgentKind::Cem => {
                let horizon = self.config.plan.horizon;
                let (init, sigma) = match (self.kind, self.config.chi.init) {
                    (AgentKind::Chi, InitMode::Amortised) => {
                        let r = rollout_policy_through_model(
                            &self.sac.policy,
                            &self.dynamics,
                            state,
                            horizon,
                            self.config.chi.advance,
                            &mut self.rngs.policy,
                        )?;
                        let sigma = r.dist.stds().row(0).mean();
                        (r.dist, sigma)
                    }
                    (AgentKind::Chi, InitMode::Uninformative) => {
                        let sigma = mean(&self.sac.policy.act(state)?.std());
                        (ActionSequenceDist::uninformative(horizon, d), sigma)
                    }
                    _ => (ActionSequenceDist::uninformative(horizon, d), None),
                };
                let rule = if self.kind == AgentKind::Cem {
                    RefitRule::Cem
                } else {
                    RefitRule::Mppi
                };
                let out = plan(
                    &self.dynamics,
                    reward,
                    state,
                    &init,
                    &self.config.plan,
                    rule,
                    &mut self.rngs.planner,
                )?;
                let first = out.dist.step(0)?;
                let action = first.mean().iter().map(|m| m.tanh()).collect();
                let diag = StepDiagnostics {
                    kl: Some(out.dist.kl(&init)?),
                    amortised_sigma: sigma,
                    acting: first,
                    init: Some(init),
                    refined: Some(out.dist),
                    action: Vec::new(),
                };
                (action, diag, out.candidates)
            }
        };
        if training && self.config.chi.noise_std > 0.0 {
            for a in action.iter_mut() {
                let e: f64 = standard_normals(&mut self.rngs.exploration, 1)[0];
                *a = (*a + self.config.chi.noise_std * e).clamp(-1.0, 1.0);
            }
        }
        let diag = StepDiagnostics {
            action: action.clone(),
            ..diag
        };
        Ok((action, diag, candidates))
    }

    /// Unroll the `m_top` best and `m_rand` uniformly drawn candidates into
    /// synthetic transitions. Returns the number added.
    pub fn harvest_counterfactuals(&mut self, candidates: &CandidateSet) -> Result<usize> {
        let (m_top, m_rand) = (self.config.chi.m_top, self.config.chi.m_rand);
        if candidates.is_empty() || candidates.rollouts.len() != candidates.len() {
            return Ok(0);
        }
        let mut picks: Vec<usize> = candidates.ranking().into_iter().take(m_top).collect();
        for _ in 0..m_rand {
            picks.push(self.rngs.replay.random_range(0..candidates.len()));
        }
        let mut added = 0;
        for k in picks {
            let rollout = &candidates.rollouts[k];
            let actions: Array2<f64> = candidates.actions[k].mapv(f64::tanh);
            for t in 0..rollout.states.len().saturating_sub(1) {
                self.replay.push(Transition {
                    state: rollout.states[t].clone(),
                    action: actions.row(t).to_vec(),
                    reward: rollout.rewards[t],
                    next_state: rollout.states[t + 1].clone(),
                    done: false,
                    synthetic: true,
                })?;
                added += 1;
            }
        }
        Ok(added)
    }

    /// Store a real transition for both the replay buffer and model training.
    pub fn observe(&mut self, transition: Transition) -> Result<()> {
        self.replay.push(transition.clone())?;
        self.real.push(transition);
        Ok(())
    }

    /// One SAC update once enough real experience is stored.
    pub fn sac_step(&mut self) -> Result<Option<SacLosses>> {
        let cfg = &self.sac.config;
        if self.replay.real_len() < cfg.warmup.max(1) {
            return Ok(None);
        }
        let sampled = self.replay.sample(&mut self.rngs.replay, cfg.batch_size, cfg.synthetic_cap);
        let batch = SacBatch::from_transitions(&sampled)?;
        self.sac.update(&batch, &mut self.rngs.policy)
    }

    /// Mean ensemble NLL of `data` before training, then train on every real
    /// transition seen so far.
    pub fn train_dynamics(&mut self, fresh: &[Transition]) -> Result<(Option<f64>, TrainReport)> {
        if !self.uses_model() {
            return Ok((None, TrainReport::default()));
        }
        let refs: Vec<&Transition> = fresh.iter().collect();
        let nll = if refs.is_empty() {
            None
        } else {
            Some(self.dynamics.mean_nll(&refs)?)
        };
        let all: Vec<&Transition> = self.real.iter().collect();
        let cfg = self.dynamics.config().clone();
        let report = self.dynamics.train(&all, cfg.epochs, cfg.batch_size, &mut self.rngs.ensemble)?;
        Ok((nll, report))
    }

    /// Run one full episode. Training episodes store transitions, harvest
    /// counterfactuals and update the policy each step; evaluation episodes
    /// act greedily and learn nothing.
    pub fn run_episode(&mut self, env: &mut dyn Environment, seed: u64, training: bool) -> Result<EpisodeLog> {
        let spec = env.spec();
        check_dim("env state", self.spec.state_dim, spec.state_dim)?;
        let mut state = env.reset(seed);
        let mut log = EpisodeLog::default();
        for _ in 0..spec.episode_len {
            let (action, diag, candidates) = self.select_action(&state, &*env, training)?;
            let physical = spec.scale_action(&action);
            let step = env.step(&physical)?;
            log.success |= env.is_success(&step.next_state, &physical);
            log.rewards.push(step.reward);
            log.acting.push(diag.acting);
            log.kls.extend(diag.kl);
            log.sigmas.extend(diag.amortised_sigma);
            log.actions.push(action.clone());
            if training {
                self.observe(Transition {
                    state: state.clone(),
                    action,
                    reward: step.reward,
                    next_state: step.next_state.clone(),
                    done: step.done,
                    synthetic: false,
                })?;
                if self.kind == AgentKind::Chi {
                    if let Some(c) = &candidates {
                        log.synthetic_added += self.harvest_counterfactuals(c)?;
                    }
                }
                if self.kind != AgentKind::Cem {
                    if let Some(l) = self.sac_step()? {
                        log.sac_updates += 1;
                        log.last_losses = Some(l);
                    }
                }
            }
            state = step.next_state;
            if step.done {
                break;
            }
        }
        Ok(log)
    }
}
