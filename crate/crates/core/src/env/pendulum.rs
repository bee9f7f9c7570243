//! Torque-limited pendulum swing-up.
//!
//! State is `(cos θ, sin θ, θ̇)` with `θ = 0` upright. Reward is
//! `-(θ² + 0.1 θ̇² + 0.001 u²)` with `θ` wrapped to `[-π, π)`, evaluated on
//! the post-step state.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnvSpec, Environment, RewardModel, StepResult};
use crate::error::{check_dim, ChiError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PendulumConfig {
    pub max_torque: f64,
    pub max_speed: f64,
    pub dt: f64,
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub episode_len: usize,
    /// Half-width of the uniform start perturbation (angle and velocity).
    pub start_noise: f64,
    /// Angle below which the pole counts as upright.
    pub success_angle: f64,
}

impl Default for PendulumConfig {
    fn default() -> Self {
        Self {
            max_torque: 2.0,
            max_speed: 8.0,
            dt: 0.05,
            gravity: 10.0,
            mass: 1.0,
            length: 1.0,
            episode_len: 100,
            start_noise: 0.1,
            success_angle: 0.2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Pendulum {
    config: PendulumConfig,
    theta: f64,
    theta_dot: f64,
    steps: usize,
}

pub fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

impl Pendulum {
    pub fn new(config: PendulumConfig) -> Result<Self> {
        if config.episode_len == 0 || config.max_torque <= 0.0 || config.dt <= 0.0 {
            return Err(ChiError::Config(format!("invalid pendulum config {config:?}")));
        }
        Ok(Self {
            config,
            theta: PI,
            theta_dot: 0.0,
            steps: 0,
        })
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }

    fn cost(&self, state: &[f64], torque: f64) -> f64 {
        let theta = state[1].atan2(state[0]);
        let u = torque.clamp(-self.config.max_torque, self.config.max_torque);
        theta * theta + 0.1 * state[2] * state[2] + 0.001 * u * u
    }
}

impl RewardModel for Pendulum {
    fn reward(&self, state: &[f64], action: &[f64]) -> f64 {
        -self.cost(state, action[0] * self.config.max_torque)
    }
}

impl Environment for Pendulum {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            state_dim: 3,
            action_dim: 1,
            episode_len: self.config.episode_len,
            action_bound: self.config.max_torque,
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = self.config.start_noise;
        self.theta = PI + rng.random_range(-w..=w);
        self.theta_dot = rng.random_range(-w..=w);
        self.steps = 0;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        check_dim("pendulum action", 1, action.len())?;
        if self.steps >= self.config.episode_len {
            return Err(ChiError::EpisodeFinished);
        }
        if !action[0].is_finite() {
            return Err(ChiError::NonFinite("pendulum action"));
        }
        let c = &self.config;
        let u = action[0].clamp(-c.max_torque, c.max_torque);
        let accel = 3.0 * c.gravity / (2.0 * c.length) * self.theta.sin()
            + 3.0 / (c.mass * c.length * c.length) * u;
        self.theta_dot = (self.theta_dot + accel * c.dt).clamp(-c.max_speed, c.max_speed);
        self.theta = wrap_angle(self.theta + self.theta_dot * c.dt);
        self.steps += 1;
        let next_state = self.observe();
        Ok(StepResult {
            reward: self.reward_fn(&next_state, &[u]),
            next_state,
            done: self.steps >= self.config.episode_len,
        })
    }

    fn reward_fn(&self, state: &[f64], action: &[f64]) -> f64 {
        -self.cost(state, action[0])
    }

    fn state(&self) -> Vec<f64> {
        self.observe()
    }

    fn is_success(&self, state: &[f64], _action: &[f64]) -> bool {
        state[1].atan2(state[0]).abs() < self.config.success_angle
    }
}
