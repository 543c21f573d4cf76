use super::{NetConfig, Tensor};
use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Kernel weights are regularized; biases are not.
    pub is_weight: bool,
}

/// Ordered parameters of the network. Order is the forward order of the
/// layers: stem, encoder levels top-down, bottleneck, decoder levels
/// bottom-up, head. Each convolution contributes `weight` then `bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    params: Vec<Param>,
}

/// Index of a convolution's weight in [`NetParams`]; its bias follows.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    levels: usize,
}

impl Layout {
    pub(crate) fn new(levels: usize) -> Self {
        Self { levels }
    }
    pub(crate) const STEM: usize = 0;
    pub(crate) fn encoder(&self, level: usize, conv: usize) -> usize {
        2 + 4 * level + 2 * conv
    }
    pub(crate) fn bottleneck(&self, conv: usize) -> usize {
        2 + 4 * self.levels + 2 * conv
    }
    pub(crate) fn decoder(&self, level: usize, conv: usize) -> usize {
        6 + 4 * self.levels + 4 * (self.levels - 1 - level) + 2 * conv
    }
    pub(crate) fn head(&self) -> usize {
        6 + 8 * self.levels
    }
    #[cfg(test)]
    pub(crate) fn count(&self) -> usize {
        self.head() + 2
    }
}

/// Names and shapes of every parameter tensor of `config`, in order.
pub fn param_specs(config: &NetConfig) -> Vec<(String, Vec<usize>, bool)> {
    let mut specs = Vec::new();
    let conv = |specs: &mut Vec<(String, Vec<usize>, bool)>, name: String, out: usize, inp: usize, k: usize| {
        specs.push((format!("{name}.weight"), vec![out, inp, k, k], true));
        specs.push((format!("{name}.bias"), vec![out], false));
    };
    specs.push(("stem.weight".to_string(), vec![config.stem_depth, 2, 2], true));
    specs.push(("stem.bias".to_string(), vec![1], false));
    let mut cin = config.stem_channels();
    for s in 0..config.levels {
        let w = config.width(s);
        conv(&mut specs, format!("enc{s}.conv1"), w, cin, 3);
        conv(&mut specs, format!("enc{s}.conv2"), w, w, 3);
        cin = w;
    }
    let wb = config.width(config.levels);
    conv(&mut specs, "bottleneck.conv1".to_string(), wb, cin, 3);
    conv(&mut specs, "bottleneck.conv2".to_string(), wb, wb, 3);
    let mut below = wb;
    for s in (0..config.levels).rev() {
        let w = config.width(s);
        conv(&mut specs, format!("dec{s}.conv1"), w, w + below, 3);
        conv(&mut specs, format!("dec{s}.conv2"), w, w, 3);
        below = w;
    }
    conv(&mut specs, "head".to_string(), 1, below, 1);
    specs
}

/// Receptive fan-in of a weight tensor.
fn fan_in(shape: &[usize]) -> usize {
    match shape.len() {
        // stem: depth x 2 x 2, one input channel
        3 => shape.iter().product(),
        4 => shape[1] * shape[2] * shape[3],
        _ => 1,
    }
}

impl NetParams {
    pub fn zeros(config: &NetConfig) -> Self {
        let params = param_specs(config)
            .into_iter()
            .map(|(name, shape, is_weight)| Param { name, value: Tensor::zeros(&shape), is_weight })
            .collect();
        Self { params }
    }

    /// Kernels drawn from `Normal(0, sqrt(2 / fan_in))`, biases zero.
    pub fn init_kaiming(config: &NetConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Self::zeros(config);
        for p in out.params.iter_mut().filter(|p| p.is_weight) {
            let std = (2.0 / fan_in(p.value.shape()) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for v in p.value.data_mut() {
                *v = normal.sample(&mut rng);
            }
        }
        out
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let params = self
            .params
            .iter()
            .map(|p| Param { name: p.name.clone(), value: Tensor::zeros(p.value.shape()), is_weight: p.is_weight })
            .collect();
        Self { params }
    }

    pub(crate) fn from_params(params: Vec<Param>) -> Self {
        Self { params }
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub(crate) fn tensor(&self, index: usize) -> &Tensor {
        &self.params[index].value
    }

    pub(crate) fn tensor_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.params[index].value
    }

    /// Total number of scalars.
    pub fn len(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sum of squared kernel weights; biases excluded.
    pub fn weight_sq_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.is_weight)
            .flat_map(|p| p.value.data())
            .map(|v| v * v)
            .sum()
    }

    /// `self += alpha * other`, restricted to kernel weights when
    /// `weights_only` is set.
    pub fn add_scaled(&mut self, alpha: f64, other: &NetParams, weights_only: bool) {
        for (p, q) in self.params.iter_mut().zip(&other.params) {
            if weights_only && !p.is_weight {
                continue;
            }
            for (a, b) in p.value.data_mut().iter_mut().zip(q.value.data()) {
                *a += alpha * b;
            }
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.value.data().iter().copied()).collect()
    }

    /// Overwrites scalar `index` of the flat view.
    pub fn set_flat(&mut self, mut index: usize, value: f64) {
        for p in &mut self.params {
            if index < p.value.len() {
                p.value.data_mut()[index] = value;
                return;
            }
            index -= p.value.len();
        }
        panic!("flat index out of range");
    }

    /// Name of the tensor holding flat scalar `index`, and its offset there.
    pub fn locate(&self, mut index: usize) -> Option<(&str, usize)> {
        for p in &self.params {
            if index < p.value.len() {
                return Some((&p.name, index));
            }
            index -= p.value.len();
        }
        None
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    /// Checks names and shapes against `config`.
    pub fn validate(&self, config: &NetConfig) -> Result<()> {
        let specs = param_specs(config);
        if specs.len() != self.params.len() {
            return Err(Error::shape(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                self.params.len()
            )));
        }
        for ((name, shape, _), p) in specs.iter().zip(&self.params) {
            if *name != p.name || shape.as_slice() != p.value.shape() {
                return Err(Error::shape(format!(
                    "parameter {} {:?} does not match expected {name} {shape:?}",
                    p.name,
                    p.value.shape()
                )));
            }
        }
        Ok(())
    }
}
