use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use crate::error::{ChiError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Bias-corrected Adam moments for one network.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    first: Mlp,
    second: Mlp,
    step: u64,
}

impl Adam {
    pub fn new(params: &Mlp, config: AdamConfig) -> Self {
        Self {
            config,
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update. A gradient with any non-finite entry is rejected
    /// and leaves both the parameters and the moments untouched.
    pub fn step(&mut self, params: &mut Mlp, grads: &Mlp) -> Result<()> {
        if !params.same_shape(grads) || !params.same_shape(&self.first) {
            return Err(ChiError::Config("gradient shape does not match parameters".into()));
        }
        if !grads.all_finite() {
            return Err(ChiError::NonFinite("gradient"));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let layers = params
            .layers_mut()
            .iter_mut()
            .zip(grads.layers())
            .zip(self.first.layers_mut().iter_mut().zip(self.second.layers_mut()));
        for ((p, g), (m, v)) in layers {
            let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            };
            ndarray::Zip::from(&mut p.weight)
                .and(&g.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut p.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Mlp::new(&[2, 3, 1], &mut rng).unwrap();
        let before = net.clone();
        let mut grads = net.zeros_like();
        for i in 0..grads.num_params() {
            grads.set_param(i, if i % 2 == 0 { 0.7 } else { -2.5 });
        }
        let mut adam = Adam::new(&net, AdamConfig::with_lr(1e-3));
        adam.step(&mut net, &grads).unwrap();
        for i in 0..net.num_params() {
            let delta = net.param(i) - before.param(i);
            let expected = -1e-3 * grads.param(i).signum();
            assert!((delta - expected).abs() < 1e-9, "{delta} vs {expected}");
        }
        assert_eq!(adam.steps_taken(), 1);
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Mlp::new(&[2, 4, 2], &mut rng).unwrap();
        let before = net.clone();
        let zeros = net.zeros_like();
        let mut adam = Adam::new(&net, AdamConfig::default());
        for _ in 0..10 {
            adam.step(&mut net, &zeros).unwrap();
        }
        assert_eq!(net, before);
        assert_eq!(adam.steps_taken(), 10);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Mlp::new(&[2, 2], &mut rng).unwrap();
        let before = net.clone();
        let mut grads = net.zeros_like();
        grads.set_param(1, f64::NAN);
        let mut adam = Adam::new(&net, AdamConfig::default());
        assert!(matches!(adam.step(&mut net, &grads), Err(ChiError::NonFinite(_))));
        assert_eq!(net, before);
        assert_eq!(adam.steps_taken(), 0);
    }

    #[test]
    fn steps_on_quadratic_reduce_loss() {
        // loss = 0.5 * ||W x + b - y||^2 for a single linear layer
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = Mlp::new(&[2, 2], &mut rng).unwrap();
        let x = [1.0, -1.0];
        let y = array![3.0, -2.0];
        let loss = |n: &Mlp| {
            let out = n.forward(&x).unwrap();
            0.5 * out.iter().zip(&y).map(|(o, t)| (o - t).powi(2)).sum::<f64>()
        };
        let mut adam = Adam::new(&net, AdamConfig::with_lr(1e-2));
        let mut previous = loss(&net);
        for _ in 0..2 {
            let out = net.forward(&x).unwrap();
            let g: Vec<f64> = out.iter().zip(&y).map(|(o, t)| o - t).collect();
            let grads = net.gradients(&x, &g).unwrap();
            adam.step(&mut net, &grads).unwrap();
            let current = loss(&net);
            assert!(current < previous);
            previous = current;
        }
    }
}
