//! Small fully connected networks with hand-written reverse-mode gradients
//! and an Adam optimizer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    /// Identity; only useful for tests and linear models.
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// Dense layer `y = W x + b`, `W` stored row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.inputs).zip(&self.biases) {
            out.push(b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
        }
    }
}

/// Multi-layer perceptron. Hidden layers use `activation`; the output layer
/// is linear (softmax or value heads are applied by the caller).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
    activation: Activation,
}

/// Activations recorded during a forward pass, needed by [`Mlp::backward`].
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    /// `values[0]` is the input, `values[l + 1]` the output of layer `l`.
    values: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.values.last().map_or(&[], Vec::as_slice)
    }
}

impl Mlp {
    /// All-zero parameters.
    pub fn zeros(sizes: &[usize], activation: Activation) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let layers = sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Self { layers, activation }
    }

    /// Uniform initialisation in `±1/sqrt(fan_in)` for weights and biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes, activation);
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for w in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *w = rng.gen_range(-bound..bound);
            }
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Flat parameter view: per layer, weights then biases.
    pub fn param(&self, k: usize) -> f64 {
        let (l, off) = self.locate(k);
        let layer = &self.layers[l];
        if off < layer.weights.len() {
            layer.weights[off]
        } else {
            layer.biases[off - layer.weights.len()]
        }
    }

    pub fn set_param(&mut self, k: usize, value: f64) {
        let (l, off) = self.locate(k);
        let layer = &mut self.layers[l];
        if off < layer.weights.len() {
            layer.weights[off] = value;
        } else {
            let n = layer.weights.len();
            layer.biases[off - n] = value;
        }
    }

    fn locate(&self, mut k: usize) -> (usize, usize) {
        for (l, layer) in self.layers.iter().enumerate() {
            let n = layer.weights.len() + layer.biases.len();
            if k < n {
                return (l, k);
            }
            k -= n;
        }
        panic!("parameter index out of range");
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "network input",
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(input)?.values.pop().unwrap_or_default())
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache> {
        let mut cache = ForwardCache::default();
        self.forward_into(input, &mut cache)?;
        Ok(cache)
    }

    /// Forward pass reusing the cache's allocations.
    pub fn forward_into(&self, input: &[f64], cache: &mut ForwardCache) -> Result<()> {
        self.check_input(input)?;
        let n = self.layers.len();
        cache.values.resize_with(n + 1, Vec::new);
        cache.values[0].clear();
        cache.values[0].extend_from_slice(input);
        for (l, layer) in self.layers.iter().enumerate() {
            let (done, rest) = cache.values.split_at_mut(l + 1);
            let out = &mut rest[0];
            layer.affine(&done[l], out);
            if l + 1 < n {
                for v in out.iter_mut() {
                    *v = self.activation.apply(*v);
                }
            }
        }
        Ok(())
    }

    /// Accumulates `d loss / d params` into `grads` given `d loss / d output`
    /// for the pass recorded in `cache`.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &[f64], grads: &mut GradBuffer) -> Result<()> {
        let n = self.layers.len();
        if cache.values.len() != n + 1 || cache.values[0].len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "forward cache",
                expected: n + 1,
                got: cache.values.len(),
            });
        }
        if grad_output.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                what: "output gradient",
                expected: self.output_dim(),
                got: grad_output.len(),
            });
        }
        if grads.layers.len() != n {
            return Err(Error::DimensionMismatch {
                what: "gradient buffer",
                expected: n,
                got: grads.layers.len(),
            });
        }
        let mut delta = grad_output.to_vec();
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let input = &cache.values[l];
            let g = &mut grads.layers[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.biases[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, &x) in row.iter_mut().zip(input) {
                    *gw += d * x;
                }
            }
            if l == 0 {
                break;
            }
            let mut next = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (acc, &w) in next.iter_mut().zip(row) {
                    *acc += d * w;
                }
            }
            for (acc, &a) in next.iter_mut().zip(input) {
                *acc *= self.activation.derivative_from_output(a);
            }
            delta = next;
        }
        Ok(())
    }
}

/// Gradient accumulator shaped like an [`Mlp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradBuffer {
    layers: Vec<Layer>,
}

impl GradBuffer {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    pub fn clear(&mut self) {
        for l in &mut self.layers {
            l.weights.fill(0.0);
            l.biases.fill(0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.values_mut() {
            *v *= factor;
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    fn congruent(&self, net: &Mlp) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.inputs == l.inputs && g.outputs == l.outputs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
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

/// Adam with bias-corrected first and second moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: GradBuffer,
    second: GradBuffer,
}

impl Adam {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: GradBuffer::zeros_like(net),
            second: GradBuffer::zeros_like(net),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Descends along `grads` (gradients of a loss to minimise).
    pub fn step(&mut self, net: &mut Mlp, grads: &GradBuffer) -> Result<()> {
        if !grads.congruent(net) || !self.first.congruent(net) {
            return Err(Error::DimensionMismatch {
                what: "optimizer state",
                expected: net.num_params(),
                got: grads.flat().len(),
            });
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let g = &grads.layers[l];
            let m = &mut self.first.layers[l];
            let v = &mut self.second.layers[l];
            let params = layer.weights.iter_mut().chain(layer.biases.iter_mut());
            let gs = g.weights.iter().chain(&g.biases);
            let ms = m.weights.iter_mut().chain(m.biases.iter_mut());
            let vs = v.weights.iter_mut().chain(v.biases.iter_mut());
            for (((p, &g), m), v) in params.zip(gs).zip(ms).zip(vs) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Shannon entropy in nats, `0 log 0 = 0`.
pub fn entropy(dist: &[f64]) -> f64 {
    -dist
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Action distribution of an actor network.
pub fn forward_actor(net: &Mlp, obs: &[f64]) -> Result<Vec<f64>> {
    Ok(softmax(&net.forward(obs)?))
}

/// Scalar value estimate of a critic network.
pub fn forward_critic(net: &Mlp, state: &[f64]) -> Result<f64> {
    let out = net.forward(state)?;
    if out.len() != 1 {
        return Err(Error::DimensionMismatch {
            what: "critic output",
            expected: 1,
            got: out.len(),
        });
    }
    Ok(out[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_actor_is_uniform() {
        let net = Mlp::zeros(&[5, 8, 4], Activation::Tanh);
        let p = forward_actor(&net, &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn zero_critic_is_zero() {
        let net = Mlp::zeros(&[3, 4, 1], Activation::Tanh);
        assert_eq!(forward_critic(&net, &[1.0, -1.0, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let net = Mlp::zeros(&[3, 4, 2], Activation::Tanh);
        assert!(matches!(forward_actor(&net, &[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let z = [0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = z.iter().map(|v| v + 17.0).collect();
        for (a, b) in softmax(&z).iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_values() {
        assert!((entropy(&[0.25; 4]) - 4f64.ln()).abs() < 1e-15);
        assert_eq!(entropy(&[0.0, 1.0, 0.0]), 0.0);
    }

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[3, 2], Activation::Linear, &mut rng);
        let x = [0.5, -2.0, 3.0];
        let g = [1.5, -0.25];
        let cache = net.forward_cached(&x).unwrap();
        let mut grads = GradBuffer::zeros_like(&net);
        net.backward(&cache, &g, &mut grads).unwrap();
        let flat = grads.flat();
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(flat[o * 3 + i], g[o] * x[i]);
            }
            assert_eq!(flat[6 + o], g[o]);
        }
    }

    #[test]
    fn cross_entropy_gradient_vanishes_at_certain_class() {
        // d(-log softmax_k)/dz = p - e_k, which is zero when p = e_k
        let p = softmax(&[0.0, 800.0, 0.0]);
        let grad: Vec<f64> = p.iter().enumerate().map(|(i, v)| v - if i == 1 { 1.0 } else { 0.0 }).collect();
        let net = Mlp::zeros(&[2, 3], Activation::Tanh);
        let cache = net.forward_cached(&[1.0, 1.0]).unwrap();
        let mut grads = GradBuffer::zeros_like(&net);
        net.backward(&cache, &grad, &mut grads).unwrap();
        assert!(grads.flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Mlp::new(&[3, 4, 1], Activation::Tanh, &mut rng);
        let before = net.clone();
        let mut opt = Adam::new(&net, AdamConfig::default());
        let zero = GradBuffer::zeros_like(&net);
        opt.step(&mut net, &zero).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn first_step_moves_against_gradient() {
        let mut net = Mlp::zeros(&[1, 1], Activation::Linear);
        let mut opt = Adam::new(&net, AdamConfig::default());
        let mut g = GradBuffer::zeros_like(&net);
        g.layers[0].weights[0] = 3.0;
        g.layers[0].biases[0] = -2.0;
        opt.step(&mut net, &g).unwrap();
        assert!(net.param(0) < 0.0);
        assert!(net.param(1) > 0.0);
    }
}
