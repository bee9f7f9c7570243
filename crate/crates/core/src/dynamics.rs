//! Probabilistic ensemble transition model.
//!
//! Each member maps the normalised `(s ⊕ a)` to a diagonal Gaussian over the
//! normalised state change `Δs = s' - s`. The ensemble is a particle
//! approximation of the posterior over model parameters.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::RewardModel;
use crate::error::{check_dim, ChiError, Result};
use crate::replay::Transition;
use crate::tensor::{soft_bound, Adam, AdamConfig, Checkpoint, DiagGaussian, Mlp, Tensor, LOG_STD_MAX, LOG_STD_MIN};

/// Reward assigned to steps after a rollout went non-finite.
pub const REWARD_FLOOR: f64 = -1.0e6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Anything that can propagate a batch of states under a batch of actions.
pub trait DynamicsModel: Sync {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn num_members(&self) -> usize;
    /// Mean next states for each row. `member = None` averages the ensemble.
    fn mean_next_states(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        member: Option<usize>,
    ) -> Result<Array2<f64>>;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RolloutMode {
    /// Every candidate follows the ensemble-average mean.
    #[default]
    Mean,
    /// Every candidate is propagated by the mean of one random member.
    Member,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub members: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            members: 5,
            hidden: vec![350, 350, 350],
            epochs: 10,
            batch_size: 50,
            lr: 1e-3,
        }
    }
}

impl EnsembleConfig {
    /// Two hidden layers of 64 units, sized for laptop-scale experiments.
    pub fn desk() -> Self {
        Self {
            hidden: vec![64, 64],
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Normaliser {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normaliser {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit(rows: &Array2<f64>) -> Self {
        let n = rows.nrows().max(1) as f64;
        let mean = rows.sum_axis(Axis(0)) / n;
        let var = rows
            .rows()
            .into_iter()
            .fold(Array1::zeros(rows.ncols()), |acc: Array1<f64>, r| acc + (&r - &mean).mapv(|d| d * d))
            / n;
        Self {
            mean: mean.to_vec(),
            std: var
                .iter()
                .map(|v| if v.sqrt() < 1e-6 { 1.0 } else { v.sqrt() })
                .collect(),
        }
    }

    fn apply(&self, rows: &mut Array2<f64>) {
        for mut r in rows.rows_mut() {
            for ((x, m), s) in r.iter_mut().zip(&self.mean).zip(&self.std) {
                *x = (*x - m) / s;
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: usize,
    /// `nll[epoch][member]`: mean Gaussian NLL of Δs over that epoch's batches.
    pub nll: Vec<Vec<f64>>,
}

impl TrainReport {
    pub fn epoch_mean(&self, epoch: usize) -> f64 {
        let row = &self.nll[epoch];
        row.iter().sum::<f64>() / row.len() as f64
    }
}

#[derive(Clone, Debug)]
pub struct EnsembleDynamics {
    config: EnsembleConfig,
    state_dim: usize,
    action_dim: usize,
    members: Vec<Mlp>,
    optimisers: Vec<Adam>,
    input_norm: Normaliser,
    target_norm: Normaliser,
}

impl EnsembleDynamics {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        config: EnsembleConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if config.members == 0 || config.batch_size == 0 {
            return Err(ChiError::Config("ensemble needs members and a batch size".into()));
        }
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend(&config.hidden);
        sizes.push(2 * state_dim);
        let members = (0..config.members)
            .map(|_| Mlp::new(&sizes, rng))
            .collect::<Result<Vec<_>>>()?;
        let optimisers = members
            .iter()
            .map(|m| Adam::new(m, AdamConfig::with_lr(config.lr)))
            .collect();
        Ok(Self {
            config,
            state_dim,
            action_dim,
            members,
            optimisers,
            input_norm: Normaliser::identity(state_dim + action_dim),
            target_norm: Normaliser::identity(state_dim),
        })
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.config
    }

    pub fn members(&self) -> &[Mlp] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [Mlp] {
        &mut self.members
    }

    pub fn input_normaliser(&self) -> &Normaliser {
        &self.input_norm
    }

    pub fn target_normaliser(&self) -> &Normaliser {
        &self.target_norm
    }

    fn check_member(&self, member: usize) -> Result<()> {
        if member < self.members.len() {
            Ok(())
        } else {
            Err(ChiError::MemberOutOfRange {
                index: member,
                len: self.members.len(),
            })
        }
    }

    fn inputs(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim("model state", self.state_dim, states.ncols())?;
        check_dim("model action", self.action_dim, actions.ncols())?;
        check_dim("model batch", states.nrows(), actions.nrows())?;
        let mut x = ndarray::concatenate(Axis(1), &[states, actions])
            .map_err(|e| ChiError::Config(e.to_string()))?;
        self.input_norm.apply(&mut x);
        Ok(x)
    }

    /// Member `member`'s Gaussian over the next state.
    pub fn predict(&self, member: usize, state: &[f64], action: &[f64]) -> Result<DiagGaussian> {
        self.check_member(member)?;
        let s = ArrayView2::from_shape((1, state.len()), state).expect("row");
        let a = ArrayView2::from_shape((1, action.len()), action).expect("row");
        let out = self.members[member].forward_batch(self.inputs(s, a)?.view())?;
        let d = self.state_dim;
        let mut mean = Vec::with_capacity(d);
        let mut log_std = Vec::with_capacity(d);
        for k in 0..d {
            let (m, sd) = (self.target_norm.mean[k], self.target_norm.std[k]);
            mean.push(state[k] + m + sd * out[[0, k]]);
            let (l, _) = soft_bound(out[[0, d + k]], LOG_STD_MIN, LOG_STD_MAX);
            log_std.push(l + sd.ln());
        }
        DiagGaussian::new(mean, log_std)
    }

    /// Variance of the member means, summed over state dimensions.
    pub fn disagreement(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let means = (0..self.members.len())
            .map(|m| self.predict(m, state, action).map(|g| g.mean().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let e = means.len() as f64;
        Ok((0..self.state_dim)
            .map(|k| {
                let mu = means.iter().map(|m| m[k]).sum::<f64>() / e;
                means.iter().map(|m| (m[k] - mu).powi(2)).sum::<f64>() / e
            })
            .sum())
    }

    fn delta_means(&self, member: usize, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let out = self.members[member].forward_batch(x)?;
        let mut delta = out.slice(s![.., ..self.state_dim]).to_owned();
        for mut r in delta.rows_mut() {
            for ((v, m), sd) in r.iter_mut().zip(&self.target_norm.mean).zip(&self.target_norm.std) {
                *v = m + sd * *v;
            }
        }
        Ok(delta)
    }

    fn dataset(&self, data: &[&Transition]) -> (Array2<f64>, Array2<f64>) {
        let n = data.len();
        let (ds, da) = (self.state_dim, self.action_dim);
        let mut x = Array2::zeros((n, ds + da));
        let mut y = Array2::zeros((n, ds));
        for (i, t) in data.iter().enumerate() {
            for k in 0..ds {
                x[[i, k]] = t.state[k];
                y[[i, k]] = t.next_state[k] - t.state[k];
            }
            for k in 0..da {
                x[[i, ds + k]] = t.action[k];
            }
        }
        (x, y)
    }

    /// Mean NLL of Δs in normalised units plus, per row, the output gradient.
    fn nll_and_grad(out: &Array2<f64>, y: ArrayView2<f64>) -> (f64, Array2<f64>) {
        let (b, d) = y.dim();
        let mut grad = Array2::zeros(out.dim());
        let mut total = 0.0;
        for i in 0..b {
            for k in 0..d {
                let (l, dl) = soft_bound(out[[i, d + k]], LOG_STD_MIN, LOG_STD_MAX);
                let z = (y[[i, k]] - out[[i, k]]) * (-l).exp();
                total += 0.5 * z * z + l + HALF_LN_2PI;
                grad[[i, k]] = -z * (-l).exp() / b as f64;
                grad[[i, d + k]] = (1.0 - z * z) * dl / b as f64;
            }
        }
        (total / b as f64, grad)
    }

    /// Gaussian NLL loss (normalised units) and parameter gradients of one
    /// member on a batch of transitions under the current normalisation.
    pub fn loss_and_gradients(&self, member: usize, batch: &[&Transition]) -> Result<(f64, Mlp)> {
        self.check_member(member)?;
        let (mut x, mut y) = self.dataset(batch);
        self.input_norm.apply(&mut x);
        self.target_norm.apply(&mut y);
        let net = &self.members[member];
        let tape = net.forward_tape(x.view())?;
        let (loss, g) = Self::nll_and_grad(tape.output(), y.view());
        Ok((loss, net.backward(&tape, g.view())?.0))
    }

    /// Mean Gaussian NLL of the observed Δs under one member, in physical
    /// units (comparable across normalisations).
    pub fn member_nll(&self, member: usize, data: &[&Transition]) -> Result<f64> {
        self.check_member(member)?;
        if data.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for t in data {
            let g = self.predict(member, &t.state, &t.action)?;
            total -= g.log_prob(&t.next_state)?;
        }
        Ok(total / data.len() as f64)
    }

    pub fn mean_nll(&self, data: &[&Transition]) -> Result<f64> {
        let e = self.members.len() as f64;
        Ok((0..self.members.len())
            .map(|m| self.member_nll(m, data))
            .collect::<Result<Vec<_>>>()?
            .iter()
            .sum::<f64>()
            / e)
    }

    /// Refit normalisation statistics, then train each member on its own
    /// bootstrap resample for `epochs` passes in minibatches.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        data: &[&Transition],
        epochs: usize,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<TrainReport> {
        if data.is_empty() {
            log::warn!("dynamics training skipped: empty dataset");
            return Ok(TrainReport::default());
        }
        if batch_size == 0 {
            return Err(ChiError::Config("batch size must be positive".into()));
        }
        let (x_raw, y_raw) = self.dataset(data);
        self.input_norm = Normaliser::fit(&x_raw);
        self.target_norm = Normaliser::fit(&y_raw);
        let mut x = x_raw;
        let mut y = y_raw;
        self.input_norm.apply(&mut x);
        self.target_norm.apply(&mut y);
        let log_scale: f64 = self.target_norm.std.iter().map(|s| s.ln()).sum();

        let n = data.len();
        let mut nll = vec![vec![0.0; self.members.len()]; epochs];
        for member in 0..self.members.len() {
            let mut order: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            for epoch_nll in nll.iter_mut() {
                order.shuffle(rng);
                let mut sum = 0.0;
                for chunk in order.chunks(batch_size) {
                    let bx = x.select(Axis(0), chunk);
                    let by = y.select(Axis(0), chunk);
                    let net = &self.members[member];
                    let tape = net.forward_tape(bx.view())?;
                    let (loss, g) = Self::nll_and_grad(tape.output(), by.view());
                    if !loss.is_finite() {
                        log::warn!("non-finite dynamics loss; batch skipped");
                        continue;
                    }
                    let (grads, _) = net.backward(&tape, g.view())?;
                    if let Err(e) = self.optimisers[member].step(&mut self.members[member], &grads) {
                        log::warn!("dynamics update rejected: {e}");
                        continue;
                    }
                    sum += loss * chunk.len() as f64;
                }
                epoch_nll[member] = sum / n as f64 + log_scale;
            }
        }
        Ok(TrainReport { epochs, nll })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let layers_per_member = self.members[0].layers().len();
        let mut tensors = vec![
            Tensor::vector(vec![
                self.members.len() as f64,
                self.state_dim as f64,
                self.action_dim as f64,
                layers_per_member as f64,
            ]),
            Tensor::vector(self.input_norm.mean.clone()),
            Tensor::vector(self.input_norm.std.clone()),
            Tensor::vector(self.target_norm.mean.clone()),
            Tensor::vector(self.target_norm.std.clone()),
        ];
        for m in &self.members {
            tensors.extend(m.to_tensors());
        }
        Checkpoint::new(tensors)
    }

    pub fn from_checkpoint(ck: &Checkpoint, config: EnsembleConfig) -> Result<Self> {
        let bad = |m: &str| ChiError::Checkpoint(format!("ensemble record: {m}"));
        let header = &ck.tensors.first().ok_or_else(|| bad("empty"))?.data;
        if header.len() != 4 {
            return Err(bad("header"));
        }
        let (e, ds, da, layers) = (
            header[0] as usize,
            header[1] as usize,
            header[2] as usize,
            header[3] as usize,
        );
        if ck.tensors.len() != 5 + e * layers * 2 {
            return Err(bad("tensor count"));
        }
        let members = ck.tensors[5..]
            .chunks(layers * 2)
            .map(Mlp::from_tensors)
            .collect::<Result<Vec<_>>>()?;
        let optimisers = members
            .iter()
            .map(|m| Adam::new(m, AdamConfig::with_lr(config.lr)))
            .collect();
        let norm = |i: usize, j: usize| Normaliser {
            mean: ck.tensors[i].data.clone(),
            std: ck.tensors[j].data.clone(),
        };
        Ok(Self {
            config: EnsembleConfig { members: e, ..config },
            state_dim: ds,
            action_dim: da,
            members,
            optimisers,
            input_norm: norm(1, 2),
            target_norm: norm(3, 4),
        })
    }
}

impl DynamicsModel for EnsembleDynamics {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn num_members(&self) -> usize {
        self.members.len()
    }

    fn mean_next_states(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        member: Option<usize>,
    ) -> Result<Array2<f64>> {
        let x = self.inputs(states, actions)?;
        let delta = match member {
            Some(m) => {
                self.check_member(m)?;
                self.delta_means(m, x.view())?
            }
            None => {
                let mut acc = self.delta_means(0, x.view())?;
                for m in 1..self.members.len() {
                    acc += &self.delta_means(m, x.view())?;
                }
                acc / self.members.len() as f64
            }
        };
        Ok(&states + &delta)
    }
}

/// Imagined trajectory under a fixed action sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    /// `s_0 ..= s_H`, shorter when truncated.
    pub states: Vec<Vec<f64>>,
    /// One reward per action; steps after truncation get [`REWARD_FLOOR`].
    pub rewards: Vec<f64>,
    pub truncated: bool,
}

impl Rollout {
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Propagate `K` action sequences (each `H × action_dim`, normalised actions)
/// from `s0` in lockstep. `members[k]` picks the member for sequence `k`
/// (`None` = ensemble average). Rewards are `reward(s_{t+1}, a_t)`.
pub fn rollout_batch(
    model: &dyn DynamicsModel,
    reward: &dyn RewardModel,
    s0: &[f64],
    actions: &[Array2<f64>],
    members: &[Option<usize>],
) -> Result<Vec<Rollout>> {
    let k = actions.len();
    check_dim("rollout members", k, members.len())?;
    check_dim("rollout state", model.state_dim(), s0.len())?;
    let horizon = actions.first().map_or(0, |a| a.nrows());
    for a in actions {
        check_dim("rollout horizon", horizon, a.nrows())?;
        check_dim("rollout action", model.action_dim(), a.ncols())?;
    }
    let mut out: Vec<Rollout> = (0..k)
        .map(|_| Rollout {
            states: vec![s0.to_vec()],
            rewards: Vec::with_capacity(horizon),
            truncated: false,
        })
        .collect();
    if k == 0 || horizon == 0 {
        return Ok(out);
    }

    let mut groups: Vec<(Option<usize>, Vec<usize>)> = Vec::new();
    for (i, m) in members.iter().enumerate() {
        match groups.iter_mut().find(|(g, _)| g == m) {
            Some((_, idx)) => idx.push(i),
            None => groups.push((*m, vec![i])),
        }
    }

    let ds = s0.len();
    let mut current = Array2::from_shape_fn((k, ds), |(_, j)| s0[j]);
    for t in 0..horizon {
        let step_actions = Array2::from_shape_fn((k, model.action_dim()), |(i, j)| actions[i][[t, j]]);
        let mut next = Array2::zeros((k, ds));
        for (member, idx) in &groups {
            let s = current.select(Axis(0), idx);
            let a = step_actions.select(Axis(0), idx);
            let n = model.mean_next_states(s.view(), a.view(), *member)?;
            for (row, &i) in idx.iter().enumerate() {
                next.row_mut(i).assign(&n.row(row));
            }
        }
        for (i, r) in out.iter_mut().enumerate() {
            if r.truncated {
                r.rewards.push(REWARD_FLOOR);
                continue;
            }
            let row = next.row(i);
            if row.iter().all(|v| v.is_finite()) {
                let s = row.to_vec();
                let a = step_actions.row(i).to_vec();
                let rew = reward.reward(&s, &a);
                if rew.is_finite() {
                    r.rewards.push(rew);
                    r.states.push(s);
                    continue;
                }
            }
            r.truncated = true;
            r.rewards.push(REWARD_FLOOR);
            next.row_mut(i).assign(&current.row(i));
        }
        current = next;
    }
    if out.iter().any(|r| r.truncated) {
        log::debug!("{} imagined rollouts truncated", out.iter().filter(|r| r.truncated).count());
    }
    Ok(out)
}

/// Single-sequence rollout.
pub fn rollout(
    model: &dyn DynamicsModel,
    reward: &dyn RewardModel,
    s0: &[f64],
    actions: &Array2<f64>,
    member: Option<usize>,
) -> Result<Rollout> {
    let mut r = rollout_batch(model, reward, s0, std::slice::from_ref(actions), &[member])?;
    Ok(r.pop().expect("one rollout"))
}
