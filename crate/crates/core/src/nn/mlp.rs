use std::ops::{Deref, DerefMut};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::init::orthogonal_init;
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative evaluated at the pre-activation `x`.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            "identity" => Activation::Identity,
            _ => return None,
        })
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Sigmoid => 2,
            Activation::Identity => 3,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Activation::Relu,
            1 => Activation::Tanh,
            2 => Activation::Sigmoid,
            3 => Activation::Identity,
            _ => return None,
        })
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// All weights and biases of a network, flattened.
///
/// Layout per layer: the `n_out × n_in` weight matrix in row-major order
/// (row = output neuron), followed by the `n_out` biases.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterVector(pub Vec<f64>);

impl ParameterVector {
    pub fn zeros(n: usize) -> Self {
        ParameterVector(vec![0.0; n])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }
}

impl Deref for ParameterVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParameterVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Orthogonal hidden layers with `hidden_gain`, output layer with
    /// `output_gain`; biases zero.
    Orthogonal { hidden_gain: f64, output_gain: f64 },
    /// `U(−1/√fan_in, 1/√fan_in)` for weights and biases.
    FanInUniform,
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: ParameterVector,
    version: u64,
}

/// Per-layer intermediates from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    /// `inputs[l]` is the input to layer `l`; the last entry is the output.
    inputs: Vec<Vec<f64>>,
    preacts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.inputs.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn input(&self) -> &[f64] {
        &self.inputs[0]
    }
}

impl Mlp {
    /// Zero-initialized network. `activations[l]` is applied after layer `l`.
    pub fn new(sizes: &[usize], activations: &[Activation]) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::invalid("an MLP needs at least an input and an output layer"));
        }
        if sizes.contains(&0) {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        check_dim(sizes.len() - 1, activations.len())?;
        let count = sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum();
        Ok(Mlp {
            sizes: sizes.to_vec(),
            activations: activations.to_vec(),
            params: ParameterVector::zeros(count),
            version: fresh_version(),
        })
    }

    /// `hidden` activation on every hidden layer and `output` on the last.
    pub fn with_init<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        let mut acts = vec![hidden; sizes.len().saturating_sub(2)];
        acts.push(output);
        let mut mlp = Mlp::new(sizes, &acts)?;
        mlp.initialize(init, rng);
        Ok(mlp)
    }

    pub fn initialize<R: Rng + ?Sized>(&mut self, init: Init, rng: &mut R) {
        let layers = self.num_layers();
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w_off, b_off) = self.layer_offsets(l);
            match init {
                Init::Orthogonal {
                    hidden_gain,
                    output_gain,
                } => {
                    let gain = if l + 1 == layers { output_gain } else { hidden_gain };
                    let q = orthogonal_init(n_out, n_in, gain, rng);
                    self.params[w_off..b_off].copy_from_slice(&q);
                    self.params[b_off..b_off + n_out].fill(0.0);
                }
                Init::FanInUniform => {
                    let bound = 1.0 / (n_in as f64).sqrt();
                    for p in &mut self.params[w_off..b_off + n_out] {
                        *p = rng.random_range(-bound..bound);
                    }
                }
                Init::Zeros => self.params[w_off..b_off + n_out].fill(0.0),
            }
        }
        self.version = fresh_version();
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &ParameterVector {
        &self.params
    }

    /// Mutable access; invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut ParameterVector {
        self.version = fresh_version();
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_dim(self.params.len(), params.len())?;
        self.params_mut().copy_from_slice(params);
        Ok(())
    }

    /// (weights offset, biases offset) of layer `l`.
    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for w in self.sizes.windows(2).take(l) {
            off += w[1] * w[0] + w[1];
        }
        (off, off + self.sizes[l + 1] * self.sizes[l])
    }

    /// Weight from input `j` into neuron `i` of layer `l`.
    pub fn weight(&self, l: usize, i: usize, j: usize) -> f64 {
        let (w_off, _) = self.layer_offsets(l);
        self.params[w_off + i * self.sizes[l] + j]
    }

    pub fn set_weight(&mut self, l: usize, i: usize, j: usize, value: f64) {
        let (w_off, _) = self.layer_offsets(l);
        let n_in = self.sizes[l];
        self.params_mut()[w_off + i * n_in + j] = value;
    }

    pub fn set_bias(&mut self, l: usize, i: usize, value: f64) {
        let (_, b_off) = self.layer_offsets(l);
        self.params_mut()[b_off + i] = value;
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        check_dim(self.input_dim(), input.len())?;
        let mut inputs = Vec::with_capacity(self.sizes.len());
        let mut preacts = Vec::with_capacity(self.num_layers());
        inputs.push(input.to_vec());
        let mut off = 0;
        for l in 0..self.num_layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let weights = &self.params[off..off + n_out * n_in];
            let biases = &self.params[off + n_out * n_in..off + n_out * n_in + n_out];
            off += n_out * n_in + n_out;
            let x = &inputs[l];
            let z: Vec<f64> = (0..n_out)
                .map(|i| {
                    let row = &weights[i * n_in..(i + 1) * n_in];
                    biases[i] + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
                })
                .collect();
            let act = self.activations[l];
            inputs.push(z.iter().map(|&v| act.apply(v)).collect());
            preacts.push(z);
        }
        let output = inputs.last().unwrap().clone();
        Ok((
            output,
            ForwardCache {
                version: self.version,
                inputs,
                preacts,
            },
        ))
    }

    /// Output only.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(input)?.0)
    }

    /// Gradient of `output_gradient · output` w.r.t. every parameter.
    pub fn backward(&self, cache: &ForwardCache, output_gradient: &[f64]) -> Result<ParameterVector> {
        let mut grad = ParameterVector::zeros(self.num_params());
        self.backward_into(cache, output_gradient, &mut grad)?;
        Ok(grad)
    }

    /// Like [`Mlp::backward`] but accumulates into `grad`.
    pub fn backward_into(&self, cache: &ForwardCache, output_gradient: &[f64], grad: &mut [f64]) -> Result<()> {
        if cache.version != self.version {
            return Err(Error::Contract(
                "forward cache is stale: parameters changed since the forward pass".into(),
            ));
        }
        check_dim(self.output_dim(), output_gradient.len())?;
        check_dim(self.num_params(), grad.len())?;
        let layers = self.num_layers();
        let last = layers - 1;
        let mut delta: Vec<f64> = output_gradient
            .iter()
            .zip(&cache.preacts[last])
            .map(|(g, &z)| g * self.activations[last].derivative(z))
            .collect();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w_off, b_off) = self.layer_offsets(l);
            let x = &cache.inputs[l];
            for i in 0..n_out {
                let d = delta[i];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[w_off + i * n_in..w_off + (i + 1) * n_in];
                for (g, &xj) in row.iter_mut().zip(x) {
                    *g += d * xj;
                }
                grad[b_off + i] += d;
            }
            if l == 0 {
                break;
            }
            let weights = &self.params[w_off..b_off];
            let mut next = vec![0.0; n_in];
            for (i, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (n, &w) in next.iter_mut().zip(&weights[i * n_in..(i + 1) * n_in]) {
                    *n += w * d;
                }
            }
            let act = self.activations[l - 1];
            for (n, &z) in next.iter_mut().zip(&cache.preacts[l - 1]) {
                *n *= act.derivative(z);
            }
            delta = next;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn activations() {
        assert_eq!(Activation::Relu.apply(-3.0), 0.0);
        assert_eq!(Activation::Relu.apply(2.0), 2.0);
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert!((Activation::Tanh.apply(1.0) - 0.76159).abs() < 1e-5);
        let s = Activation::Sigmoid.apply(-800.0);
        assert!((0.0..1e-300).contains(&s));
        for act in [Activation::Relu, Activation::Tanh, Activation::Sigmoid, Activation::Identity] {
            assert_eq!(Activation::from_tag(act.tag()), Some(act));
            assert_eq!(Activation::from_name(act.name()), Some(act));
        }
    }

    #[test]
    fn identity_network() {
        let mut net = Mlp::new(&[1, 1], &[Activation::Identity]).unwrap();
        net.set_weight(0, 0, 0, 1.0);
        assert_eq!(net.predict(&[0.37]).unwrap(), vec![0.37]);
    }

    #[test]
    fn relu_clamp() {
        let mut net = Mlp::new(&[1, 1], &[Activation::Relu]).unwrap();
        net.set_weight(0, 0, 0, 2.0);
        net.set_bias(0, 0, -1.0);
        assert_eq!(net.predict(&[0.3]).unwrap(), vec![0.0]);
    }

    #[test]
    fn two_layer_tanh_matches_hand_composition() {
        let mut net = Mlp::new(&[2, 2, 1], &[Activation::Tanh, Activation::Identity]).unwrap();
        let w1 = [[0.5, -0.3], [0.8, 0.2]];
        let b1 = [0.1, -0.2];
        let w2 = [1.5, -0.7];
        let b2 = 0.05;
        for i in 0..2 {
            for j in 0..2 {
                net.set_weight(0, i, j, w1[i][j]);
            }
            net.set_bias(0, i, b1[i]);
            net.set_weight(1, 0, i, w2[i]);
        }
        net.set_bias(1, 0, b2);
        let x = [0.4, -1.2];
        let h0 = (0.1f64 + 0.5 * 0.4 + -0.3 * -1.2).tanh();
        let h1 = (-0.2f64 + 0.8 * 0.4 + 0.2 * -1.2).tanh();
        let expected = 0.05 + 1.5 * h0 - 0.7 * h1;
        assert!((net.predict(&x).unwrap()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn linear_gradient() {
        let mut net = Mlp::new(&[1, 1], &[Activation::Identity]).unwrap();
        net.set_weight(0, 0, 0, 0.7);
        let (_, cache) = net.forward(&[2.5]).unwrap();
        let g = net.backward(&cache, &[1.0]).unwrap();
        assert_eq!(g.0, vec![2.5, 1.0]);
        let zero = net.backward(&cache, &[0.0]).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Mlp::with_init(&[2, 3, 1], Activation::Tanh, Activation::Identity, Init::FanInUniform, &mut rng)
            .unwrap();
        let (_, cache) = net.forward(&[0.1, 0.2]).unwrap();
        net.params_mut()[0] += 0.1;
        assert!(matches!(net.backward(&cache, &[1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn dimension_mismatch() {
        let net = Mlp::new(&[3, 2], &[Activation::Identity]).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(Mlp::new(&[3], &[]).is_err());
        assert!(Mlp::new(&[3, 2], &[]).is_err());
    }
}
