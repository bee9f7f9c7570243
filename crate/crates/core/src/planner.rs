//! Sampling-based variational planning over action sequences.
//!
//! Sequences live in pre-squash space: a sampled sequence `u` is executed
//! and rolled out as `tanh(u)`, a normalised action in `[-1, 1]^d`. The same
//! parameterisation is used by the amortised policy, so a policy-produced
//! posterior can initialise the planner without conversion.

use ndarray::{Array2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{rollout_batch, DynamicsModel, Rollout, RolloutMode};
use crate::env::RewardModel;
use crate::error::{check_dim, ChiError, Result};
use crate::rng::standard_normals;
use crate::tensor::{kl_normal, normal_log_density, DiagGaussian};

pub const SIGMA_MIN: f64 = 1e-3;
pub const SIGMA_MAX: f64 = 1.0;

/// Diagonal Gaussian over an `H × d` action sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionSequenceDist {
    means: Array2<f64>,
    stds: Array2<f64>,
}

impl ActionSequenceDist {
    /// Stds are clamped into `[SIGMA_MIN, SIGMA_MAX]`.
    pub fn new(means: Array2<f64>, stds: Array2<f64>) -> Result<Self> {
        check_dim("sequence horizon", means.nrows(), stds.nrows())?;
        check_dim("sequence action dim", means.ncols(), stds.ncols())?;
        if means.iter().any(|m| !m.is_finite()) || stds.iter().any(|s| s.is_nan()) {
            return Err(ChiError::NonFinite("action sequence parameters"));
        }
        Ok(Self {
            means,
            stds: stds.mapv(|s| s.clamp(SIGMA_MIN, SIGMA_MAX)),
        })
    }

    /// `μ = 0`, `σ = SIGMA_MAX`: carries no information.
    pub fn uninformative(horizon: usize, action_dim: usize) -> Self {
        Self {
            means: Array2::zeros((horizon, action_dim)),
            stds: Array2::from_elem((horizon, action_dim), SIGMA_MAX),
        }
    }

    pub fn horizon(&self) -> usize {
        self.means.nrows()
    }

    pub fn action_dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }

    pub fn stds(&self) -> &Array2<f64> {
        &self.stds
    }

    pub fn mean_std(&self) -> f64 {
        self.stds.mean().unwrap_or(0.0)
    }

    /// Marginal of step `t`.
    pub fn step(&self, t: usize) -> Result<DiagGaussian> {
        DiagGaussian::new(
            self.means.row(t).to_vec(),
            self.stds.row(t).iter().map(|s| s.ln()).collect(),
        )
    }

    pub fn sample(&self, noise: &Array2<f64>) -> Array2<f64> {
        &self.means + &(&self.stds * noise)
    }

    pub fn log_prob(&self, seq: &Array2<f64>) -> f64 {
        let mut total = 0.0;
        Zip::from(seq).and(&self.means).and(&self.stds).for_each(|x, m, s| {
            total += normal_log_density(*x, *m, s.ln());
        });
        total
    }

    pub fn entropy(&self) -> f64 {
        self.stds
            .iter()
            .map(|s| 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() + s.ln())
            .sum()
    }

    /// `KL(self ‖ other)`, closed form.
    pub fn kl(&self, other: &ActionSequenceDist) -> Result<f64> {
        check_dim("kl horizon", self.horizon(), other.horizon())?;
        check_dim("kl action dim", self.action_dim(), other.action_dim())?;
        let mut total = 0.0;
        Zip::from(&self.means)
            .and(&self.stds)
            .and(&other.means)
            .and(&other.stds)
            .for_each(|m1, s1, m2, s2| total += kl_normal(*m1, s1.ln(), *m2, s2.ln()));
        Ok(total)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanConfig {
    pub horizon: usize,
    pub iterations: usize,
    pub samples: usize,
    /// Inverse temperature on cumulative reward.
    pub kappa: f64,
    pub elite_fraction: f64,
    pub mode: RolloutMode,
    /// State trajectories averaged per sequence in member mode.
    pub particles: usize,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            horizon: 7,
            iterations: 3,
            samples: 500,
            kappa: 1.0,
            elite_fraction: 0.1,
            mode: RolloutMode::Mean,
            particles: 1,
        }
    }
}

impl PlanConfig {
    pub fn desk() -> Self {
        Self {
            samples: 200,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.samples < 2 || self.particles == 0 {
            return Err(ChiError::Config(format!(
                "planner needs horizon ≥ 1, samples ≥ 2, particles ≥ 1 (got {self:?})"
            )));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(ChiError::Config("kappa must be positive".into()));
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction <= 1.0) {
            return Err(ChiError::Config("elite fraction must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefitRule {
    /// Reward-weighted moments (mirror descent).
    Mppi,
    /// Unweighted moments of the elite set.
    Cem,
}

#[derive(Clone, Debug)]
pub struct CandidateSet {
    /// Pre-squash sequences, each `H × d`.
    pub actions: Vec<Array2<f64>>,
    /// `κ · Σ r̂`, or `-∞` for a truncated rollout.
    pub log_scores: Vec<f64>,
    pub weights: Vec<f64>,
    /// Model rollouts of each sequence (first particle).
    pub rollouts: Vec<Rollout>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.log_scores.iter().map(|l| l.exp()).collect()
    }

    /// `w_k ∝ W_k · q(a_k)`.
    pub fn update_weights(&mut self, q: &ActionSequenceDist) {
        let log_q: Vec<f64> = self.actions.iter().map(|a| q.log_prob(a)).collect();
        self.weights = normalised_weights(&self.log_scores, &log_q);
    }

    /// Indices ordered by descending score; ties keep index order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.log_scores[b].total_cmp(&self.log_scores[a]));
        idx
    }
}

/// Normalise `exp(log_score + log_density)` in the log domain. Falls back to
/// uniform weights when every term is zero or non-finite.
pub fn normalised_weights(log_scores: &[f64], log_densities: &[f64]) -> Vec<f64> {
    let logits: Vec<f64> = log_scores
        .iter()
        .zip(log_densities)
        .map(|(s, q)| {
            let v = s + q;
            if v.is_nan() {
                f64::NEG_INFINITY
            } else {
                v
            }
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = logits.len();
    if !max.is_finite() {
        return vec![1.0 / n as f64; n];
    }
    let raw: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Per-timestep weighted moments of the samples.
pub fn refit(actions: &[Array2<f64>], weights: &[f64]) -> Result<ActionSequenceDist> {
    check_dim("refit weights", actions.len(), weights.len())?;
    let first = actions.first().ok_or_else(|| ChiError::Config("refit needs samples".into()))?;
    let mut mean = Array2::zeros(first.dim());
    for (a, w) in actions.iter().zip(weights) {
        mean.scaled_add(*w, a);
    }
    let mut var = Array2::<f64>::zeros(first.dim());
    for (a, w) in actions.iter().zip(weights) {
        Zip::from(&mut var).and(a).and(&mean).for_each(|v, x, m| *v += w * (x - m) * (x - m));
    }
    ActionSequenceDist::new(mean, var.mapv(f64::sqrt))
}

/// Unweighted moments of the top `⌈fraction · K⌉` sequences by score.
pub fn cem_refit(candidates: &CandidateSet, elite_fraction: f64) -> Result<ActionSequenceDist> {
    let k = candidates.len();
    let n = ((elite_fraction * k as f64).ceil() as usize).clamp(1, k.max(1));
    let elites: Vec<Array2<f64>> = candidates.ranking()[..n]
        .iter()
        .map(|&i| candidates.actions[i].clone())
        .collect();
    refit(&elites, &vec![1.0 / n as f64; n])
}

/// Roll every sequence (squashed) through the model and score it.
pub fn score_sequences<R: Rng + ?Sized>(
    model: &dyn DynamicsModel,
    reward: &dyn RewardModel,
    state: &[f64],
    sequences: &[Array2<f64>],
    config: &PlanConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<Rollout>)> {
    let squashed: Vec<Array2<f64>> = sequences.iter().map(|u| u.mapv(f64::tanh)).collect();
    let k = sequences.len();
    let passes = match config.mode {
        RolloutMode::Mean => 1,
        RolloutMode::Member => config.particles,
    };
    let mut totals = vec![0.0; k];
    let mut truncated = vec![false; k];
    let mut first = Vec::new();
    for p in 0..passes {
        let members: Vec<Option<usize>> = match config.mode {
            RolloutMode::Mean => vec![None; k],
            RolloutMode::Member => (0..k)
                .map(|_| Some(rng.random_range(0..model.num_members())))
                .collect(),
        };
        let rollouts = rollout_batch(model, reward, state, &squashed, &members)?;
        for (i, r) in rollouts.iter().enumerate() {
            totals[i] += r.total_reward();
            truncated[i] |= r.truncated;
        }
        if p == 0 {
            first = rollouts;
        }
    }
    let log_scores = totals
        .iter()
        .zip(&truncated)
        .map(|(t, &bad)| {
            let s = config.kappa * t / passes as f64;
            if bad || !s.is_finite() {
                f64::NEG_INFINITY
            } else {
                s
            }
        })
        .collect();
    Ok((log_scores, first))
}

fn draw<R: Rng + ?Sized>(dist: &ActionSequenceDist, k: usize, rng: &mut R) -> Vec<Array2<f64>> {
    let (h, d) = (dist.horizon(), dist.action_dim());
    (0..k)
        .map(|_| {
            let noise = Array2::from_shape_vec((h, d), standard_normals(rng, h * d)).expect("shape");
            dist.sample(&noise)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct PlanOutcome {
    pub dist: ActionSequenceDist,
    /// Candidates of the final iteration; `None` when no iteration ran.
    pub candidates: Option<CandidateSet>,
}

/// `iterations` rounds of sample → score → reweight → refit from `init`.
pub fn plan<R: Rng + ?Sized>(
    model: &dyn DynamicsModel,
    reward: &dyn RewardModel,
    state: &[f64],
    init: &ActionSequenceDist,
    config: &PlanConfig,
    rule: RefitRule,
    rng: &mut R,
) -> Result<PlanOutcome> {
    config.validate()?;
    check_dim("plan action dim", model.action_dim(), init.action_dim())?;
    let mut dist = init.clone();
    let mut last = None;
    for _ in 0..config.iterations {
        let actions = draw(&dist, config.samples, rng);
        let (log_scores, rollouts) = score_sequences(model, reward, state, &actions, config, rng)?;
        let mut candidates = CandidateSet {
            weights: Vec::new(),
            actions,
            log_scores,
            rollouts,
        };
        candidates.update_weights(&dist);
        dist = match rule {
            RefitRule::Mppi => refit(&candidates.actions, &candidates.weights)?,
            RefitRule::Cem => cem_refit(&candidates, config.elite_fraction)?,
        };
        last = Some(candidates);
    }
    Ok(PlanOutcome {
        dist,
        candidates: last,
    })
}
