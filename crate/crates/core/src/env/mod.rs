//! Finite-horizon environments with analytic rewards.
//!
//! Environments act in physical units. Agents work with actions normalised
//! to `[-1, 1]^d`; [`EnvSpec::scale_action`] maps them onto the physical
//! range and [`RewardModel`] evaluates rewards directly on normalised
//! actions, which is what imagined rollouts need.

mod pendulum;
mod point_mass;

use serde::{Deserialize, Serialize};

pub use pendulum::{Pendulum, PendulumConfig};
pub use point_mass::{PointMassConfig, PointMassWorld};

use crate::error::{ChiError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub episode_len: usize,
    /// Largest physical action magnitude.
    pub action_bound: f64,
}

impl EnvSpec {
    pub fn scale_action(&self, normalised: &[f64]) -> Vec<f64> {
        normalised.iter().map(|a| a * self.action_bound).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Reward on a (state, normalised action) pair, usable on imagined states.
pub trait RewardModel: Sync {
    fn reward(&self, state: &[f64], action: &[f64]) -> f64;
}

impl<F> RewardModel for F
where
    F: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    fn reward(&self, state: &[f64], action: &[f64]) -> f64 {
        self(state, action)
    }
}

pub trait Environment: RewardModel + Send {
    fn spec(&self) -> EnvSpec;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    /// Advance one step with a physical action.
    fn step(&mut self, action: &[f64]) -> Result<StepResult>;
    /// Analytic reward with a physical action.
    fn reward_fn(&self, state: &[f64], action: &[f64]) -> f64;
    fn state(&self) -> Vec<f64>;
    /// Whether a state counts as having reached the task goal.
    fn is_success(&self, state: &[f64], action: &[f64]) -> bool;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvName {
    #[default]
    PointMass,
    Pendulum,
}

impl std::str::FromStr for EnvName {
    type Err = ChiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pointmass" => Ok(Self::PointMass),
            "pendulum" => Ok(Self::Pendulum),
            other => Err(ChiError::Config(format!("unknown environment {other:?}"))),
        }
    }
}

impl std::fmt::Display for EnvName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PointMass => "pointmass",
            Self::Pendulum => "pendulum",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub pointmass: PointMassConfig,
    pub pendulum: PendulumConfig,
}

pub fn make_env(name: EnvName, config: &EnvConfig) -> Result<Box<dyn Environment>> {
    Ok(match name {
        EnvName::PointMass => Box::new(PointMassWorld::new(config.pointmass.clone())?),
        EnvName::Pendulum => Box::new(Pendulum::new(config.pendulum.clone())?),
    })
}
