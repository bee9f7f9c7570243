//! 2D point mass in the unit square with a vertical wall and one opening.

use serde::{Deserialize, Serialize};

use super::{EnvSpec, Environment, RewardModel, StepResult};
use crate::error::{check_dim, ChiError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PointMassConfig {
    /// Centre line of the wall.
    pub wall_x: f64,
    pub wall_thickness: f64,
    pub opening_low: f64,
    pub opening_high: f64,
    pub goal: [f64; 2],
    /// Maximum displacement norm per step.
    pub max_step: f64,
    pub episode_len: usize,
    /// Reward above which a state counts as inside the goal region.
    pub goal_reward: f64,
}

impl Default for PointMassConfig {
    fn default() -> Self {
        Self {
            wall_x: 0.5,
            wall_thickness: 0.02,
            opening_low: 0.4,
            opening_high: 0.6,
            goal: [1.0, 1.0],
            max_step: 0.05,
            episode_len: 50,
            goal_reward: 0.95,
        }
    }
}

/// Open axis-aligned box; its boundary is not part of it.
#[derive(Clone, Copy, Debug)]
struct Block {
    lo: [f64; 2],
    hi: [f64; 2],
}

impl Block {
    fn contains(&self, p: [f64; 2]) -> bool {
        (0..2).all(|k| p[k] > self.lo[k] && p[k] < self.hi[k])
    }

    /// Earliest `t` in `[0, 1)` at which `p + t d` enters the interior, with
    /// the axes whose faces are crossed at that time.
    fn entry(&self, p: [f64; 2], d: [f64; 2]) -> Option<(f64, [bool; 2])> {
        let mut enter = f64::NEG_INFINITY;
        let mut exit = f64::INFINITY;
        let mut times = [f64::NEG_INFINITY; 2];
        for k in 0..2 {
            if d[k] == 0.0 {
                if p[k] <= self.lo[k] || p[k] >= self.hi[k] {
                    return None;
                }
            } else {
                let t1 = (self.lo[k] - p[k]) / d[k];
                let t2 = (self.hi[k] - p[k]) / d[k];
                times[k] = t1.min(t2);
                enter = enter.max(times[k]);
                exit = exit.min(t1.max(t2));
            }
        }
        if enter < exit && exit > 0.0 && enter < 1.0 {
            let t = enter.max(0.0);
            Some((t, [times[0] == enter, times[1] == enter]))
        } else {
            None
        }
    }

    /// Face coordinate along axis `k` for motion direction `d`.
    fn face(&self, k: usize, d: f64) -> f64 {
        if d > 0.0 {
            self.lo[k]
        } else {
            self.hi[k]
        }
    }
}

#[derive(Clone, Debug)]
pub struct PointMassWorld {
    config: PointMassConfig,
    blocks: Vec<Block>,
    position: [f64; 2],
    steps: usize,
}

impl PointMassWorld {
    pub fn new(config: PointMassConfig) -> Result<Self> {
        if config.episode_len == 0 || config.max_step <= 0.0 || config.wall_thickness < 0.0 {
            return Err(ChiError::Config(format!("invalid point-mass config {config:?}")));
        }
        if config.opening_low > config.opening_high {
            return Err(ChiError::Config("wall opening is inverted".into()));
        }
        let half = config.wall_thickness / 2.0;
        let (x0, x1) = (config.wall_x - half, config.wall_x + half);
        let blocks = vec![
            Block {
                lo: [x0, f64::NEG_INFINITY],
                hi: [x1, config.opening_low],
            },
            Block {
                lo: [x0, config.opening_high],
                hi: [x1, f64::INFINITY],
            },
        ];
        Ok(Self {
            config,
            blocks,
            position: [0.0, 0.0],
            steps: 0,
        })
    }

    pub fn config(&self) -> &PointMassConfig {
        &self.config
    }

    pub fn position(&self) -> [f64; 2] {
        self.position
    }

    /// Place the mass anywhere valid; used by tests and diagnostics.
    pub fn set_position(&mut self, position: [f64; 2]) -> Result<()> {
        if !self.is_free(position) {
            return Err(ChiError::Config(format!(
                "position {position:?} is outside the square or inside the wall"
            )));
        }
        self.position = position;
        Ok(())
    }

    /// Inside `[0, 1]^2` and not in the wall interior.
    pub fn is_free(&self, p: [f64; 2]) -> bool {
        (0..2).all(|k| (0.0..=1.0).contains(&p[k])) && !self.blocks.iter().any(|b| b.contains(p))
    }

    /// Rescale `action` so its norm is at most `max_step`.
    pub fn clip_action(&self, action: &[f64]) -> [f64; 2] {
        let norm = action[0].hypot(action[1]);
        let scale = if norm > self.config.max_step {
            self.config.max_step / norm
        } else {
            1.0
        };
        [action[0] * scale, action[1] * scale]
    }

    /// Move from `from` by the (already clipped) displacement, stopping at
    /// the first wall face the segment would cross.
    pub fn resolve_motion(&self, from: [f64; 2], displacement: [f64; 2]) -> [f64; 2] {
        let target = [
            (from[0] + displacement[0]).clamp(0.0, 1.0),
            (from[1] + displacement[1]).clamp(0.0, 1.0),
        ];
        let d = [target[0] - from[0], target[1] - from[1]];
        let hit = self
            .blocks
            .iter()
            .filter_map(|b| b.entry(from, d).map(|(t, axes)| (t, axes, b)))
            .min_by(|a, b| a.0.total_cmp(&b.0));
        match hit {
            None => target,
            Some((t, axes, block)) => {
                let mut p = [from[0] + t * d[0], from[1] + t * d[1]];
                for k in 0..2 {
                    if axes[k] {
                        p[k] = block.face(k, d[k]);
                    }
                    p[k] = p[k].clamp(0.0, 1.0);
                }
                p
            }
        }
    }
}

impl RewardModel for PointMassWorld {
    fn reward(&self, state: &[f64], _action: &[f64]) -> f64 {
        let g = self.config.goal;
        1.0 - ((state[0] - g[0]).powi(2) + (state[1] - g[1]).powi(2))
    }
}

impl Environment for PointMassWorld {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            state_dim: 2,
            action_dim: 2,
            episode_len: self.config.episode_len,
            action_bound: self.config.max_step,
        }
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.position = [0.0, 0.0];
        self.steps = 0;
        self.position.to_vec()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        check_dim("point-mass action", 2, action.len())?;
        if self.steps >= self.config.episode_len {
            return Err(ChiError::EpisodeFinished);
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(ChiError::NonFinite("point-mass action"));
        }
        let displacement = self.clip_action(action);
        self.position = self.resolve_motion(self.position, displacement);
        self.steps += 1;
        let next_state = self.position.to_vec();
        Ok(StepResult {
            reward: self.reward_fn(&next_state, action),
            next_state,
            done: self.steps >= self.config.episode_len,
        })
    }

    fn reward_fn(&self, state: &[f64], action: &[f64]) -> f64 {
        self.reward(state, action)
    }

    fn state(&self) -> Vec<f64> {
        self.position.to_vec()
    }

    fn is_success(&self, state: &[f64], action: &[f64]) -> bool {
        self.reward(state, action) > self.config.goal_reward
    }
}
