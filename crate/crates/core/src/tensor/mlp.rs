//! Feed-forward networks with tanh hidden layers and a linear head.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::activation::{tanh, tanh_inplace};
use super::checkpoint::Tensor;
use crate::error::{check_dim, ChiError, Result};

/// One affine layer; `weight` is stored `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Parameters of a multilayer perceptron. The same container doubles as the
/// gradient and optimiser-moment store, so every shape-mirroring structure
/// shares one type.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Linear>,
}

/// Post-activation outputs of every layer, input first, kept for backprop.
#[derive(Clone, Debug)]
pub struct Tape {
    activations: Vec<Array2<f64>>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("tape always holds the input")
    }
}

impl Mlp {
    /// Uniform fan-in initialisation: `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.input_dim() as f64).sqrt();
            layer
                .weight
                .mapv_inplace(|_| rng.random_range(-bound..bound));
            layer.bias.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(ChiError::Config(format!(
                "network needs at least two non-zero layer sizes, got {sizes:?}"
            )));
        }
        let layers = sizes
            .windows(2)
            .map(|w| Linear::zeros(w[0], w[1]))
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Linear>) -> Result<Self> {
        if layers.is_empty() {
            return Err(ChiError::Config("network has no layers".into()));
        }
        for layer in &layers {
            check_dim("layer bias", layer.output_dim(), layer.bias.len())?;
        }
        for pair in layers.windows(2) {
            check_dim("layer chain", pair[0].output_dim(), pair[1].input_dim())?;
        }
        Ok(Self { layers })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Linear::zeros(l.input_dim(), l.output_dim()))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(Linear::output_dim));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// Zero the output layer so the network emits exactly zero.
    pub fn zero_head(&mut self) {
        let head = self.layers.last_mut().expect("non-empty");
        head.weight.fill(0.0);
        head.bias.fill(0.0);
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|_| ChiError::Config("bad input shape".into()))?;
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    /// Row-wise forward pass over a `batch × input_dim` matrix.
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim("network input", self.input_dim(), input.ncols())?;
        let last = self.layers.len() - 1;
        let mut h = self.affine(0, input);
        for i in 1..=last {
            activate(&mut h);
            h = self.affine(i, h.view());
        }
        Ok(h)
    }

    pub fn forward_tape(&self, input: ArrayView2<f64>) -> Result<Tape> {
        check_dim("network input", self.input_dim(), input.ncols())?;
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_owned());
        for i in 0..=last {
            let mut z = self.affine(i, activations[i].view());
            if i < last {
                activate(&mut z);
            }
            activations.push(z);
        }
        Ok(Tape { activations })
    }

    fn affine(&self, index: usize, h: ArrayView2<f64>) -> Array2<f64> {
        let layer = &self.layers[index];
        let mut z = h.dot(&layer.weight.t());
        z += &layer.bias;
        z
    }

    /// Reverse pass. Parameter gradients are summed over the batch rows; the
    /// second value is the gradient with respect to the input rows.
    pub fn backward(&self, tape: &Tape, output_grad: ArrayView2<f64>) -> Result<(Mlp, Array2<f64>)> {
        check_dim("output gradient", self.output_dim(), output_grad.ncols())?;
        check_dim("output gradient rows", tape.output().nrows(), output_grad.nrows())?;
        let mut grads = self.zeros_like();
        let mut g = output_grad.to_owned();
        for i in (0..self.layers.len()).rev() {
            let prev = &tape.activations[i];
            grads.layers[i].weight = g.t().dot(prev);
            grads.layers[i].bias = g.sum_axis(Axis(0));
            let mut back = g.dot(&self.layers[i].weight);
            if i > 0 {
                back.zip_mut_with(prev, |d, &a| *d *= 1.0 - a * a);
            }
            g = back;
        }
        Ok((grads, g))
    }

    /// Gradient with respect to the input rows only, skipping parameter
    /// gradients.
    pub fn input_gradient(&self, tape: &Tape, output_grad: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim("output gradient", self.output_dim(), output_grad.ncols())?;
        check_dim("output gradient rows", tape.output().nrows(), output_grad.nrows())?;
        let mut g = output_grad.to_owned();
        for i in (0..self.layers.len()).rev() {
            let mut back = g.dot(&self.layers[i].weight);
            if i > 0 {
                back.zip_mut_with(&tape.activations[i], |d, &a| *d *= 1.0 - a * a);
            }
            g = back;
        }
        Ok(g)
    }

    /// Single-sample convenience around [`Mlp::backward`].
    pub fn gradients(&self, input: &[f64], output_grad: &[f64]) -> Result<Mlp> {
        let x = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|_| ChiError::Config("bad input shape".into()))?;
        let g = ArrayView2::from_shape((1, output_grad.len()), output_grad)
            .map_err(|_| ChiError::Config("bad gradient shape".into()))?;
        let tape = self.forward_tape(x)?;
        Ok(self.backward(&tape, g)?.0)
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Flat parameter view in layer order, weights (row-major) before biases.
    pub fn param(&self, index: usize) -> f64 {
        let (layer, offset) = self.locate(index);
        let l = &self.layers[layer];
        if offset < l.weight.len() {
            l.weight[[offset / l.input_dim(), offset % l.input_dim()]]
        } else {
            l.bias[offset - l.weight.len()]
        }
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        let (layer, offset) = self.locate(index);
        let l = &mut self.layers[layer];
        let wlen = l.weight.len();
        if offset < wlen {
            let cols = l.input_dim();
            l.weight[[offset / cols, offset % cols]] = value;
        } else {
            l.bias[offset - wlen] = value;
        }
    }

    fn locate(&self, mut index: usize) -> (usize, usize) {
        for (i, l) in self.layers.iter().enumerate() {
            let n = l.weight.len() + l.bias.len();
            if index < n {
                return (i, index);
            }
            index -= n;
        }
        panic!("parameter index out of range");
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.dim() == b.weight.dim() && a.bias.len() == b.bias.len())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Mlp, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.scaled_add(scale, &b.weight);
            a.bias.scaled_add(scale, &b.bias);
        }
    }

    /// Polyak blend `self = (1 - tau) * self + tau * online`.
    pub fn polyak_from(&mut self, online: &Mlp, tau: f64) {
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            t.weight.zip_mut_with(&o.weight, |t, &o| *t = (1.0 - tau) * *t + tau * o);
            t.bias.zip_mut_with(&o.bias, |t, &o| *t = (1.0 - tau) * *t + tau * o);
        }
    }

    pub fn to_tensors(&self) -> Vec<Tensor> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    Tensor::new(vec![l.output_dim(), l.input_dim()], l.weight.iter().copied().collect()),
                    Tensor::new(vec![l.output_dim()], l.bias.to_vec()),
                ]
            })
            .collect()
    }

    pub fn from_tensors(tensors: &[Tensor]) -> Result<Self> {
        if tensors.is_empty() || tensors.len() % 2 != 0 {
            return Err(ChiError::Checkpoint(
                "network needs weight/bias tensor pairs".into(),
            ));
        }
        let layers = tensors
            .chunks(2)
            .map(|pair| {
                let (w, b) = (&pair[0], &pair[1]);
                if w.shape.len() != 2 || b.shape.len() != 1 {
                    return Err(ChiError::Checkpoint("unexpected tensor rank".into()));
                }
                let weight = Array2::from_shape_vec((w.shape[0], w.shape[1]), w.data.clone())
                    .map_err(|e| ChiError::Checkpoint(e.to_string()))?;
                Ok(Linear {
                    weight,
                    bias: Array1::from_vec(b.data.clone()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }
}

fn activate(h: &mut Array2<f64>) {
    match h.as_slice_memory_order_mut() {
        Some(values) => tanh_inplace(values),
        None => h.mapv_inplace(tanh),
    }
}

/// Gradient of `sum(row · out_grad)` with respect to a single input vector.
pub fn input_gradient(net: &Mlp, input: ArrayView1<f64>, output_grad: &[f64]) -> Result<Vec<f64>> {
    let x = input.insert_axis(Axis(0));
    let tape = net.forward_tape(x)?;
    let g = ArrayView2::from_shape((1, output_grad.len()), output_grad)
        .map_err(|_| ChiError::Config("bad gradient shape".into()))?;
    Ok(net.input_gradient(&tape, g)?.into_raw_vec_and_offset().0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn zero_weights_return_bias() {
        let mut net = Mlp::zeros(&[3, 2]).unwrap();
        net.layers_mut()[0].bias = array![0.5, -1.5];
        assert_eq!(net.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![0.5, -1.5]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut net = Mlp::zeros(&[3, 3]).unwrap();
        net.layers_mut()[0].weight = Array2::eye(3);
        assert_eq!(net.forward(&[0.1, -2.0, 7.0]).unwrap(), vec![0.1, -2.0, 7.0]);
    }

    #[test]
    fn two_layer_net_matches_scalar_evaluation() {
        let net = Mlp::new(&[3, 4, 2], &mut rng()).unwrap();
        let x = [0.3, -0.7, 1.1];
        let (l0, l1) = (&net.layers()[0], &net.layers()[1]);
        let mut hidden = [0.0; 4];
        for (j, h) in hidden.iter_mut().enumerate() {
            let mut z = l0.bias[j];
            for (i, xi) in x.iter().enumerate() {
                z += l0.weight[[j, i]] * xi;
            }
            *h = z.tanh();
        }
        let mut expected = [0.0; 2];
        for (k, out) in expected.iter_mut().enumerate() {
            let mut z = l1.bias[k];
            for (j, h) in hidden.iter().enumerate() {
                z += l1.weight[[k, j]] * h;
            }
            *out = z;
        }
        let got = net.forward(&x).unwrap();
        for (g, e) in got.iter().zip(expected) {
            assert!((g - e).abs() < 1e-14);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let net = Mlp::zeros(&[3, 2]).unwrap();
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(ChiError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        let net = Mlp::new(&[3, 2], &mut rng()).unwrap();
        let x = [1.0, -2.0, 0.5];
        let g = [0.25, -3.0];
        let grads = net.gradients(&x, &g).unwrap();
        let l = &grads.layers()[0];
        for (r, gr) in g.iter().enumerate() {
            assert_eq!(l.bias[r], *gr);
            for (c, xc) in x.iter().enumerate() {
                assert_eq!(l.weight[[r, c]], gr * xc);
            }
        }
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let net = Mlp::new(&[3, 5, 2], &mut rng()).unwrap();
        let grads = net.gradients(&[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert!((0..grads.num_params()).all(|i| grads.param(i) == 0.0));
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut r = rng();
        let mut net = Mlp::new(&[4, 8, 8, 3], &mut r).unwrap();
        let x = array![[0.2, -0.4, 0.9, 0.1], [-1.0, 0.3, 0.0, 0.7]];
        let w = array![[1.0, -0.5, 2.0], [0.3, 0.3, -1.2]];
        // loss = sum(output ⊙ w)
        let loss = |n: &Mlp| (n.forward_batch(x.view()).unwrap() * &w).sum();
        let tape = net.forward_tape(x.view()).unwrap();
        let (grads, _) = net.backward(&tape, w.view()).unwrap();
        let h = 1e-5;
        for _ in 0..60 {
            let i = r.random_range(0..net.num_params());
            let p = net.param(i);
            net.set_param(i, p + h);
            let up = loss(&net);
            net.set_param(i, p - h);
            let down = loss(&net);
            net.set_param(i, p);
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.param(i);
            let rel = (numeric - analytic).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(rel < 1e-4, "param {i}: {analytic} vs {numeric}");
        }
    }

    #[test]
    fn input_gradient_matches_central_differences() {
        let net = Mlp::new(&[3, 6, 1], &mut rng()).unwrap();
        let x = array![0.4, -0.2, 0.8];
        let g = input_gradient(&net, x.view(), &[1.0]).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut up = x.to_vec();
            up[i] += h;
            let mut down = x.to_vec();
            down[i] -= h;
            let numeric = (net.forward(&up).unwrap()[0] - net.forward(&down).unwrap()[0]) / (2.0 * h);
            assert!((numeric - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn polyak_is_convex_combination() {
        let mut r = rng();
        let online = Mlp::new(&[2, 3, 1], &mut r).unwrap();
        let mut target = Mlp::new(&[2, 3, 1], &mut r).unwrap();
        let before = target.clone();
        target.polyak_from(&online, 0.1);
        for i in 0..target.num_params() {
            assert_eq!(target.param(i), (1.0 - 0.1) * before.param(i) + 0.1 * online.param(i));
        }
    }
}
