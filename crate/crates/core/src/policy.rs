//! Amortised maximum-entropy policy with twin soft-Q critics.
//!
//! The policy maps a state to a diagonal Gaussian over pre-squash actions
//! `u`; the executed normalised action is `tanh(u)`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicsModel;
use crate::error::{check_dim, ChiError, Result};
use crate::planner::{ActionSequenceDist, SIGMA_MAX, SIGMA_MIN};
use crate::replay::Transition;
use crate::rng::standard_normals;
use crate::tensor::{soft_bound, Adam, AdamConfig, Checkpoint, DiagGaussian, Mlp, Tensor};

const INIT_LOG_STD_BIAS: f64 = 3.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(1 - tanh(u)²)` without cancellation for large `|u|`.
pub fn log1m_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

/// Log density of `tanh(u)` when `u ~ dist`.
pub fn squashed_log_prob(dist: &DiagGaussian, u: &[f64]) -> Result<f64> {
    Ok(dist.log_prob(u)? - u.iter().map(|&x| log1m_tanh_sq(x)).sum::<f64>())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    /// Real transitions collected before updates start.
    pub warmup: usize,
    /// Largest fraction of a batch drawn from synthetic transitions.
    pub synthetic_cap: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            gamma: 0.99,
            tau: 0.005,
            batch_size: 256,
            hidden: vec![256, 256],
            lr: 3e-4,
            warmup: 1000,
            synthetic_cap: 0.8,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha >= 0.0
            && (0.0..1.0).contains(&self.gamma)
            && self.tau > 0.0
            && self.tau < 1.0
            && self.batch_size > 0
            && self.lr > 0.0;
        if ok {
            Ok(())
        } else {
            Err(ChiError::Config(format!("invalid SAC config {self:?}")))
        }
    }
}

/// Pre-squash Gaussian heads for a batch of states.
struct Heads {
    mean: Array2<f64>,
    log_std: Array2<f64>,
    /// d log_std / d raw
    dlog: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    net: Mlp,
    action_dim: usize,
}

impl Policy {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let mut sizes = vec![state_dim];
        sizes.extend(hidden);
        sizes.push(2 * action_dim);
        let mut net = Mlp::new(&sizes, rng)?;
        // start near the widest allowed std
        if let Some(head) = net.layers_mut().last_mut() {
            head.bias.slice_mut(ndarray::s![action_dim..]).fill(INIT_LOG_STD_BIAS);
        }
        Ok(Self { net, action_dim })
    }

    pub fn from_net(net: Mlp) -> Result<Self> {
        if net.output_dim() % 2 != 0 {
            return Err(ChiError::Config("policy head must be even".into()));
        }
        Ok(Self {
            action_dim: net.output_dim() / 2,
            net,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn split(&self, out: &Array2<f64>) -> Heads {
        let d = self.action_dim;
        let mean = out.slice(s![.., ..d]).to_owned();
        let raw = out.slice(s![.., d..]);
        let (lo, hi) = (SIGMA_MIN.ln(), SIGMA_MAX.ln());
        let log_std = raw.mapv(|r| soft_bound(r, lo, hi).0);
        let dlog = raw.mapv(|r| soft_bound(r, lo, hi).1);
        Heads { mean, log_std, dlog }
    }

    /// Pre-squash action distribution at `state`.
    pub fn act(&self, state: &[f64]) -> Result<DiagGaussian> {
        let out = self.net.forward(state)?;
        let d = self.action_dim;
        let (lo, hi) = (SIGMA_MIN.ln(), SIGMA_MAX.ln());
        DiagGaussian::new(
            out[..d].to_vec(),
            out[d..].iter().map(|&r| soft_bound(r, lo, hi).0).collect(),
        )
    }

    /// `tanh(μ(s))`.
    pub fn mean_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self.act(state)?.mean().iter().map(|m| m.tanh()).collect())
    }

    /// Reparameterised squashed sample and its log density.
    pub fn sample(&self, state: &[f64], noise: &[f64]) -> Result<(Vec<f64>, f64)> {
        let dist = self.act(state)?;
        let u = dist.sample(noise)?;
        let lp = squashed_log_prob(&dist, &u)?;
        Ok((u.iter().map(|x| x.tanh()).collect(), lp))
    }

    /// Squashed samples and log densities for a batch.
    fn sample_batch(&self, states: ArrayView2<f64>, noise: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        let h = self.split(&self.net.forward_batch(states)?);
        let u = &h.mean + &(h.log_std.mapv(f64::exp) * noise);
        let mut logp = Array1::zeros(states.nrows());
        for i in 0..states.nrows() {
            for k in 0..self.action_dim {
                let e = noise[[i, k]];
                logp[i] += -0.5 * e * e - h.log_std[[i, k]] - HALF_LN_2PI - log1m_tanh_sq(u[[i, k]]);
            }
        }
        Ok((u.mapv(f64::tanh), logp))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.net.to_tensors())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Self::from_net(Mlp::from_tensors(&ck.tensors)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwinCritic {
    pub q: [Mlp; 2],
    pub target: [Mlp; 2],
}

impl TwinCritic {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend(hidden);
        sizes.push(1);
        let q = [Mlp::new(&sizes, rng)?, Mlp::new(&sizes, rng)?];
        Ok(Self {
            target: q.clone(),
            q,
        })
    }

    fn inputs(states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array2<f64>> {
        ndarray::concatenate(Axis(1), &[states, actions]).map_err(|e| ChiError::Config(e.to_string()))
    }

    pub fn value(net: &Mlp, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(net.forward_batch(Self::inputs(states, actions)?.view())?.column(0).to_owned())
    }

    /// `target ← (1 - τ)·target + τ·online`.
    pub fn polyak(&mut self, tau: f64) {
        for (t, q) in self.target.iter_mut().zip(&self.q) {
            t.polyak_from(q, tau);
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors = vec![Tensor::vector(vec![self.q[0].layers().len() as f64])];
        for net in self.q.iter().chain(&self.target) {
            tensors.extend(net.to_tensors());
        }
        Checkpoint::new(tensors)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let bad = || ChiError::Checkpoint("critic record".into());
        let layers = ck.tensors.first().and_then(|t| t.data.first()).ok_or_else(bad)?;
        let per = 2 * *layers as usize;
        if per == 0 || ck.tensors.len() != 1 + 4 * per {
            return Err(bad());
        }
        let nets = ck.tensors[1..]
            .chunks(per)
            .map(Mlp::from_tensors)
            .collect::<Result<Vec<_>>>()?;
        let [q0, q1, t0, t1]: [Mlp; 4] = nets.try_into().map_err(|_| bad())?;
        Ok(Self {
            q: [q0, q1],
            target: [t0, t1],
        })
    }
}

/// Column-stacked transitions.
#[derive(Clone, Debug)]
pub struct SacBatch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    pub dones: Array1<f64>,
}

impl SacBatch {
    pub fn from_transitions(batch: &[&Transition]) -> Result<Self> {
        let first = batch.first().ok_or_else(|| ChiError::Config("empty SAC batch".into()))?;
        let (n, ds, da) = (batch.len(), first.state.len(), first.action.len());
        let rows = |f: &dyn Fn(&Transition) -> &[f64], w: usize| {
            Array2::from_shape_fn((n, w), |(i, j)| f(batch[i])[j])
        };
        Ok(Self {
            states: rows(&|t| &t.state, ds),
            actions: rows(&|t| &t.action, da),
            rewards: batch.iter().map(|t| t.reward).collect(),
            next_states: rows(&|t| &t.next_state, ds),
            dones: batch.iter().map(|t| f64::from(u8::from(t.done))).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SacLosses {
    pub q: [f64; 2],
    pub policy: f64,
    /// `-mean log π` over the policy batch.
    pub entropy: f64,
}

#[derive(Clone, Debug)]
pub struct Sac {
    pub config: SacConfig,
    pub policy: Policy,
    pub critic: TwinCritic,
    policy_opt: Adam,
    q_opt: [Adam; 2],
}

impl Sac {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, config: SacConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let policy = Policy::new(state_dim, action_dim, &config.hidden, rng)?;
        let critic = TwinCritic::new(state_dim, action_dim, &config.hidden, rng)?;
        Ok(Self::assemble(config, policy, critic))
    }

    pub fn assemble(config: SacConfig, policy: Policy, critic: TwinCritic) -> Self {
        let adam = AdamConfig::with_lr(config.lr);
        Self {
            policy_opt: Adam::new(policy.net(), adam),
            q_opt: [Adam::new(&critic.q[0], adam), Adam::new(&critic.q[1], adam)],
            config,
            policy,
            critic,
        }
    }

    /// Soft Bellman targets with next actions `tanh(μ' + σ' ⊙ noise)`.
    pub fn critic_targets(&self, batch: &SacBatch, next_noise: &Array2<f64>) -> Result<Array1<f64>> {
        let (a2, logp2) = self.policy.sample_batch(batch.next_states.view(), next_noise)?;
        let t0 = TwinCritic::value(&self.critic.target[0], batch.next_states.view(), a2.view())?;
        let t1 = TwinCritic::value(&self.critic.target[1], batch.next_states.view(), a2.view())?;
        let c = &self.config;
        Ok(Array1::from_shape_fn(batch.len(), |i| {
            let soft = t0[i].min(t1[i]) - c.alpha * logp2[i];
            batch.rewards[i] + c.gamma * (1.0 - batch.dones[i]) * soft
        }))
    }

    /// Mean squared error of critic `index` against `targets`, with gradients.
    pub fn critic_loss_and_grads(&self, index: usize, batch: &SacBatch, targets: &Array1<f64>) -> Result<(f64, Mlp)> {
        let net = &self.critic.q[index];
        let x = TwinCritic::inputs(batch.states.view(), batch.actions.view())?;
        let tape = net.forward_tape(x.view())?;
        let b = batch.len() as f64;
        let err = &tape.output().column(0) - targets;
        let loss = err.mapv(|e| e * e).sum() / b;
        let g = (err * (2.0 / b)).insert_axis(Axis(1));
        Ok((loss, net.backward(&tape, g.view())?.0))
    }

    /// `mean(α log π(a|s) - min_i Q_i(s, a))` with `a = tanh(μ + σ ⊙ noise)`,
    /// and its gradient with respect to the policy parameters.
    pub fn policy_loss_and_grads(&self, states: ArrayView2<f64>, noise: &Array2<f64>) -> Result<(f64, Mlp)> {
        self.policy_objective(states, noise).map(|(loss, grads, _)| (loss, grads))
    }

    /// Policy loss, its gradients and the batch mean of `log π(a|s)`.
    fn policy_objective(&self, states: ArrayView2<f64>, noise: &Array2<f64>) -> Result<(f64, Mlp, f64)> {
        let net = self.policy.net();
        let d = self.policy.action_dim;
        let ds = states.ncols();
        check_dim("policy noise", d, noise.ncols())?;
        let tape = net.forward_tape(states)?;
        let h = self.policy.split(tape.output());
        let std = h.log_std.mapv(f64::exp);
        let u = &h.mean + &(&std * noise);
        let a = u.mapv(f64::tanh);
        let b = states.nrows();
        let alpha = self.config.alpha;

        let x = TwinCritic::inputs(states, a.view())?;
        let tapes = [
            self.critic.q[0].forward_tape(x.view())?,
            self.critic.q[1].forward_tape(x.view())?,
        ];
        let pick: Vec<usize> = (0..b)
            .map(|i| usize::from(tapes[1].output()[[i, 0]] < tapes[0].output()[[i, 0]]))
            .collect();
        let mut dq_da = Array2::<f64>::zeros((b, d));
        for (n, tape_n) in tapes.iter().enumerate() {
            let mask = Array2::from_shape_fn((b, 1), |(i, _)| if pick[i] == n { 1.0 } else { 0.0 });
            let gx = self.critic.q[n].input_gradient(tape_n, mask.view())?;
            dq_da += &gx.slice(s![.., ds..]);
        }

        let mut loss = 0.0;
        let mut total_logp = 0.0;
        let mut g = Array2::<f64>::zeros((b, 2 * d));
        for i in 0..b {
            let mut logp = 0.0;
            for k in 0..d {
                let e = noise[[i, k]];
                let ak = a[[i, k]];
                logp += -0.5 * e * e - h.log_std[[i, k]] - HALF_LN_2PI - log1m_tanh_sq(u[[i, k]]);
                let gq = dq_da[[i, k]] * (1.0 - ak * ak);
                let se = std[[i, k]] * e;
                g[[i, k]] = (alpha * 2.0 * ak - gq) / b as f64;
                g[[i, d + k]] = (alpha * (-1.0 + 2.0 * ak * se) - gq * se) * h.dlog[[i, k]] / b as f64;
            }
            let qmin = tapes[pick[i]].output()[[i, 0]];
            loss += alpha * logp - qmin;
            total_logp += logp;
        }
        let bf = b as f64;
        Ok((loss / bf, net.backward(&tape, g.view())?.0, total_logp / bf))
    }

    /// One critic step, one policy step, then a polyak target update. A
    /// non-finite loss skips the whole update and returns `None`.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &SacBatch, rng: &mut R) -> Result<Option<SacLosses>> {
        if batch.is_empty() {
            return Err(ChiError::Config("empty SAC batch".into()));
        }
        let (b, d) = (batch.len(), self.policy.action_dim);
        let next_noise = Array2::from_shape_vec((b, d), standard_normals(rng, b * d)).expect("shape");
        let noise = Array2::from_shape_vec((b, d), standard_normals(rng, b * d)).expect("shape");

        let targets = self.critic_targets(batch, &next_noise)?;
        let (l0, g0) = self.critic_loss_and_grads(0, batch, &targets)?;
        let (l1, g1) = self.critic_loss_and_grads(1, batch, &targets)?;
        if !(l0.is_finite() && l1.is_finite()) {
            log::warn!("non-finite critic loss; update skipped");
            return Ok(None);
        }
        let [qa, qb] = &mut self.critic.q;
        let [oa, ob] = &mut self.q_opt;
        if oa.step(qa, &g0).and_then(|_| ob.step(qb, &g1)).is_err() {
            log::warn!("critic update rejected");
            return Ok(None);
        }

        let (lp, gp, mean_logp) = self.policy_objective(batch.states.view(), &noise)?;
        if !lp.is_finite() || self.policy_opt.step(&mut self.policy.net, &gp).is_err() {
            log::warn!("policy update rejected");
            return Ok(None);
        }
        self.critic.polyak(self.config.tau);

        Ok(Some(SacLosses {
            q: [l0, l1],
            policy: lp,
            entropy: -mean_logp,
        }))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Advance {
    /// Propagate with the policy mean.
    #[default]
    Mean,
    /// Propagate with a squashed policy sample.
    Sample,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyRollout {
    pub dist: ActionSequenceDist,
    /// Visited model states, `s_t` first.
    pub states: Vec<Vec<f64>>,
    pub truncated: bool,
}

/// Alternate `θ = f(s)` and `s ← model mean(s, tanh(·))` for `horizon`
/// steps, collecting the per-step policy heads as a sequence posterior.
pub fn rollout_policy_through_model<R: Rng + ?Sized>(
    policy: &Policy,
    model: &dyn DynamicsModel,
    state: &[f64],
    horizon: usize,
    advance: Advance,
    rng: &mut R,
) -> Result<PolicyRollout> {
    if horizon == 0 {
        return Err(ChiError::Config("policy rollout horizon must be ≥ 1".into()));
    }
    let d = policy.action_dim();
    let mut means = Array2::zeros((horizon, d));
    let mut stds = Array2::from_elem((horizon, d), SIGMA_MAX);
    let mut states = vec![state.to_vec()];
    let mut s = state.to_vec();
    let mut truncated = false;
    for t in 0..horizon {
        let head = policy.act(&s)?;
        means.row_mut(t).assign(&ndarray::aview1(head.mean()));
        stds.row_mut(t).assign(&Array1::from(head.std()));
        if t + 1 == horizon {
            break;
        }
        let u = match advance {
            Advance::Mean => head.mean().to_vec(),
            Advance::Sample => head.sample(&standard_normals(rng, d))?,
        };
        let a: Vec<f64> = u.iter().map(|x| x.tanh()).collect();
        let next = model.mean_next_states(
            ArrayView2::from_shape((1, s.len()), &s).expect("row"),
            ArrayView2::from_shape((1, d), &a).expect("row"),
            None,
        )?;
        if next.iter().any(|v| !v.is_finite()) {
            log::debug!("policy rollout truncated at step {t}");
            truncated = true;
            let last = means.row(t).to_owned();
            for r in t + 1..horizon {
                means.row_mut(r).assign(&last);
            }
            break;
        }
        s = next.row(0).to_vec();
        states.push(s.clone());
    }
    Ok(PolicyRollout {
        dist: ActionSequenceDist::new(means, stds)?,
        states,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Additive;

    impl DynamicsModel for Additive {
        fn state_dim(&self) -> usize {
            1
        }
        fn action_dim(&self) -> usize {
            1
        }
        fn num_members(&self) -> usize {
            1
        }
        fn mean_next_states(
            &self,
            states: ArrayView2<f64>,
            actions: ArrayView2<f64>,
            _member: Option<usize>,
        ) -> Result<Array2<f64>> {
            Ok(&states + &actions)
        }
    }

    fn sac(alpha: f64, rng: &mut ChaCha8Rng) -> Sac {
        let cfg = SacConfig {
            alpha,
            hidden: vec![16, 16],
            batch_size: 32,
            ..SacConfig::default()
        };
        Sac::new(2, 1, cfg, rng).unwrap()
    }

    fn batch(rng: &mut ChaCha8Rng, n: usize) -> SacBatch {
        let ts: Vec<Transition> = (0..n)
            .map(|i| Transition {
                state: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                action: vec![rng.random_range(-0.9..0.9)],
                reward: rng.random_range(-1.0..1.0),
                next_state: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                done: i % 5 == 0,
                synthetic: false,
            })
            .collect();
        SacBatch::from_transitions(&ts.iter().collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn zeroed_head_gives_zero_mean_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = Policy::new(3, 2, &[8], &mut rng).unwrap();
        p.net_mut().zero_head();
        assert_eq!(p.act(&[0.1, 0.2, 0.3]).unwrap().mean(), &[0.0, 0.0]);
        assert_eq!(p.mean_action(&[0.1, 0.2, 0.3]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(p.act(&[0.4, 0.0, 1.0]).unwrap(), p.act(&[0.4, 0.0, 1.0]).unwrap());
    }

    #[test]
    fn stable_log_jacobian_matches_naive_form() {
        for &u in &[-3.0, -0.5, 0.0, 0.2, 1.7] {
            let naive = (1.0 - f64::tanh(u).powi(2)).ln();
            assert!((log1m_tanh_sq(u) - naive).abs() < 1e-12);
        }
        assert!(log1m_tanh_sq(40.0).is_finite());
    }

    #[test]
    fn squashed_density_matches_numerical_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Policy::new(2, 1, &[8], &mut rng).unwrap();
        let s = [0.3, -0.4];
        let dist = p.act(&s).unwrap();
        for &e in &[-1.5, -0.2, 0.0, 0.9] {
            let (a, lp) = p.sample(&s, &[e]).unwrap();
            let u = dist.sample(&[e]).unwrap()[0];
            let h = 1e-6;
            let jac = ((u + h).tanh() - (u - h).tanh()) / (2.0 * h);
            let expected = dist.log_prob(&[u]).unwrap() - jac.ln();
            assert!((lp - expected).abs() < 1e-4, "{lp} vs {expected}");
            assert_eq!(a[0], u.tanh());
        }
    }

    #[test]
    fn zero_discount_targets_equal_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut agent = sac(0.2, &mut rng);
        agent.config.gamma = 0.0;
        let b = batch(&mut rng, 16);
        let noise = Array2::from_shape_vec((16, 1), standard_normals(&mut rng, 16)).unwrap();
        assert_eq!(agent.critic_targets(&b, &noise).unwrap(), b.rewards);
    }

    #[test]
    fn constant_critic_gives_zero_policy_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut agent = sac(0.0, &mut rng);
        for q in agent.critic.q.iter_mut() {
            q.zero_head();
            q.layers_mut().last_mut().unwrap().bias[0] = 2.5;
        }
        let b = batch(&mut rng, 8);
        let (loss, g) = agent.policy_loss_and_grads(b.states.view(), &Array2::zeros((8, 1))).unwrap();
        assert!((loss + 2.5).abs() < 1e-12);
        assert!((0..g.num_params()).all(|i| g.param(i) == 0.0));
    }

    fn check_fd(loss: impl Fn(&Mlp) -> f64, params: &Mlp, grads: &Mlp, rng: &mut ChaCha8Rng) {
        let h = 1e-5;
        for _ in 0..60 {
            let i = rng.random_range(0..params.num_params());
            let mut p = params.clone();
            p.set_param(i, params.param(i) + h);
            let up = loss(&p);
            p.set_param(i, params.param(i) - h);
            let down = loss(&p);
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.param(i);
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
            assert!(rel < 1e-4, "param {i}: {analytic} vs {numeric}");
        }
    }

    #[test]
    fn policy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let agent = sac(0.2, &mut rng);
        let b = batch(&mut rng, 12);
        let noise = Array2::from_shape_vec((12, 1), standard_normals(&mut rng, 12)).unwrap();
        let (_, g) = agent.policy_loss_and_grads(b.states.view(), &noise).unwrap();
        let loss = |net: &Mlp| {
            let mut a = agent.clone();
            *a.policy.net_mut() = net.clone();
            a.policy_loss_and_grads(b.states.view(), &noise).unwrap().0
        };
        check_fd(loss, agent.policy.net(), &g, &mut rng);
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let agent = sac(0.2, &mut rng);
        let b = batch(&mut rng, 12);
        let noise = Array2::from_shape_vec((12, 1), standard_normals(&mut rng, 12)).unwrap();
        let y = agent.critic_targets(&b, &noise).unwrap();
        let (_, g) = agent.critic_loss_and_grads(1, &b, &y).unwrap();
        let loss = |net: &Mlp| {
            let mut a = agent.clone();
            a.critic.q[1] = net.clone();
            a.critic_loss_and_grads(1, &b, &y).unwrap().0
        };
        check_fd(loss, &agent.critic.q[1], &g, &mut rng);
    }

    #[test]
    fn polyak_is_an_exact_convex_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut agent = sac(0.2, &mut rng);
        let b = batch(&mut rng, 16);
        let before = agent.critic.target.clone();
        agent.update(&b, &mut rng).unwrap().unwrap();
        let tau = agent.config.tau;
        for n in 0..2 {
            for i in 0..before[n].num_params() {
                let expected = (1.0 - tau) * before[n].param(i) + tau * agent.critic.q[n].param(i);
                assert_eq!(agent.critic.target[n].param(i), expected);
            }
        }
    }

    #[test]
    fn policy_rollout_through_additive_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut p = Policy::new(1, 1, &[4], &mut rng).unwrap();
        p.net_mut().zero_head();
        let c = 0.5f64;
        p.net_mut().layers_mut().last_mut().unwrap().bias[0] = c;
        let out = rollout_policy_through_model(&p, &Additive, &[0.0], 3, Advance::Mean, &mut rng).unwrap();
        assert_eq!(out.dist.means().column(0).to_vec(), vec![c; 3]);
        let step = c.tanh();
        assert_eq!(out.states, vec![vec![0.0], vec![step], vec![step + step]]);
        let sigma = p.act(&[0.0]).unwrap().std()[0];
        assert!(out.dist.stds().iter().all(|s| (s - sigma).abs() < 1e-15));
    }

    #[test]
    fn horizon_one_equals_policy_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = Policy::new(1, 1, &[8, 8], &mut rng).unwrap();
        let out = rollout_policy_through_model(&p, &Additive, &[0.3], 1, Advance::Mean, &mut rng).unwrap();
        let head = p.act(&[0.3]).unwrap();
        assert_eq!(out.dist.means()[[0, 0]], head.mean()[0]);
        assert!((out.dist.stds()[[0, 0]] - head.std()[0]).abs() < 1e-15);
    }

    #[test]
    fn checkpoints_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let agent = sac(0.2, &mut rng);
        let p = Policy::from_checkpoint(&agent.policy.to_checkpoint()).unwrap();
        assert_eq!(p, agent.policy);
        let c = TwinCritic::from_checkpoint(&agent.critic.to_checkpoint()).unwrap();
        assert_eq!(c, agent.critic);
    }
}
