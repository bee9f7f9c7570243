//! Transition records and the FIFO replay buffer.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ChiError, Result};
use crate::tensor::{Checkpoint, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    /// Normalised action in `[-1, 1]^d`.
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    /// Model-generated counterfactual rather than real experience.
    pub synthetic: bool,
}

impl Transition {
    pub fn is_finite(&self) -> bool {
        self.reward.is_finite()
            && self
                .state
                .iter()
                .chain(&self.action)
                .chain(&self.next_state)
                .all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
    synthetic: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            synthetic: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn synthetic_len(&self) -> usize {
        self.synthetic
    }

    pub fn real_len(&self) -> usize {
        self.items.len() - self.synthetic
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Append, evicting the oldest record when full. Non-finite records are
    /// refused.
    pub fn push(&mut self, t: Transition) -> Result<()> {
        if !t.is_finite() {
            return Err(ChiError::NonFinite("replay transition"));
        }
        if self.items.len() == self.capacity {
            if let Some(old) = self.items.pop_front() {
                if old.synthetic {
                    self.synthetic -= 1;
                }
            }
        }
        if t.synthetic {
            self.synthetic += 1;
        }
        self.items.push_back(t);
        Ok(())
    }

    /// Uniform sample with replacement. At most `synthetic_cap · batch`
    /// synthetic records are taken while real ones exist; excess synthetic
    /// draws are redrawn.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        batch: usize,
        synthetic_cap: f64,
    ) -> Vec<&Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        let max_synthetic = (synthetic_cap.clamp(0.0, 1.0) * batch as f64).floor() as usize;
        let enforce = self.real_len() > 0;
        let mut taken_synthetic = 0;
        let mut out = Vec::with_capacity(batch);
        while out.len() < batch {
            let t = &self.items[rng.random_range(0..self.items.len())];
            if t.synthetic {
                if enforce && taken_synthetic >= max_synthetic {
                    continue;
                }
                taken_synthetic += 1;
            }
            out.push(t);
        }
        out
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let n = self.items.len();
        let (ds, da) = self
            .items
            .front()
            .map_or((0, 0), |t| (t.state.len(), t.action.len()));
        let flat = |f: &dyn Fn(&Transition) -> &[f64]| -> Vec<f64> {
            self.items.iter().flat_map(|t| f(t).iter().copied()).collect()
        };
        Checkpoint::new(vec![
            Tensor::vector(vec![self.capacity as f64]),
            Tensor::new(vec![n, ds], flat(&|t| &t.state)),
            Tensor::new(vec![n, da], flat(&|t| &t.action)),
            Tensor::vector(self.items.iter().map(|t| t.reward).collect()),
            Tensor::new(vec![n, ds], flat(&|t| &t.next_state)),
            Tensor::vector(self.items.iter().map(|t| f64::from(u8::from(t.done))).collect()),
            Tensor::vector(self.items.iter().map(|t| f64::from(u8::from(t.synthetic))).collect()),
        ])
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let bad = |m: &str| ChiError::Checkpoint(format!("replay record: {m}"));
        let [cap, states, actions, rewards, next_states, dones, synthetic] = ck.tensors.as_slice() else {
            return Err(bad("expected 7 tensors"));
        };
        let capacity = cap.data.first().copied().ok_or_else(|| bad("missing capacity"))? as usize;
        if capacity == 0 {
            return Err(bad("zero capacity"));
        }
        let n = rewards.data.len();
        let ds = states.shape.get(1).copied().unwrap_or(0);
        let da = actions.shape.get(1).copied().unwrap_or(0);
        if states.data.len() != n * ds
            || next_states.data.len() != n * ds
            || actions.data.len() != n * da
            || dones.data.len() != n
            || synthetic.data.len() != n
        {
            return Err(bad("inconsistent lengths"));
        }
        let mut buffer = Self::new(capacity);
        for i in 0..n {
            buffer.push(Transition {
                state: states.data[i * ds..(i + 1) * ds].to_vec(),
                action: actions.data[i * da..(i + 1) * da].to_vec(),
                reward: rewards.data[i],
                next_state: next_states.data[i * ds..(i + 1) * ds].to_vec(),
                done: dones.data[i] != 0.0,
                synthetic: synthetic.data[i] != 0.0,
            })?;
        }
        Ok(buffer)
    }
}
