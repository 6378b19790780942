//! Fully connected feed-forward networks and the Adam optimizer.
//!
//! Parameters live in one flat buffer so the optimizer, gradient buffers and
//! checkpoints all share a single layout: for each layer, the weight matrix
//! (`out x in`, row-major) followed by the bias vector.

use std::ops::Range;

use ndarray::{Array1, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{seed, Error, Result};

/// Hidden-layer nonlinearity. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Sin,
    /// Not twice differentiable; accepted for plain regression networks only.
    Relu,
}

impl Activation {
    /// Whether second input-derivatives of a network using this activation exist everywhere.
    pub fn is_smooth(self) -> bool {
        !matches!(self, Activation::Relu)
    }

    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => tanh(z),
            Activation::Sin => z.sin(),
            Activation::Relu => z.max(0.0),
        }
    }
}

impl Activation {
    /// Elementwise `out[i] = σ(z[i])`.
    pub fn apply_slice(self, z: &[f64], out: &mut [f64]) {
        assert_eq!(z.len(), out.len());
        match self {
            Activation::Tanh => {
                for (o, &v) in out.iter_mut().zip(z) {
                    *o = tanh(v);
                }
            }
            _ => {
                for (o, &v) in out.iter_mut().zip(z) {
                    *o = self.apply(v);
                }
            }
        }
    }
}

/// `tanh` built on [`exp_nonpositive`]; inlines and vectorizes inside slice loops.
#[inline(always)]
pub fn tanh(z: f64) -> f64 {
    let e = exp_nonpositive(-2.0 * z.abs());
    ((1.0 - e) / (1.0 + e)).copysign(z)
}

/// `exp(x)` for `x <= 0`, branch-free. Arguments below -700 are clamped,
/// where the result is already negligible next to 1. NaN passes through.
#[inline(always)]
fn exp_nonpositive(x: f64) -> f64 {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 0.693_147_180_369_123_8;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    // adding 1.5 * 2^52 rounds to an integer held in the low mantissa bits
    const SHIFTER: f64 = 6_755_399_441_055_744.0;
    let x = if x < -700.0 { -700.0 } else { x };
    let t = x * LOG2E + SHIFTER;
    let k = t - SHIFTER;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    // Taylor series to degree 13 on |r| <= ln2/2
    let mut p = 1.0 / 6_227_020_800.0;
    p = p * r + 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    let scale = f64::from_bits(t.to_bits().wrapping_add(1023) << 52);
    p * scale
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerSlot {
    fan_in: usize,
    fan_out: usize,
    weights: usize,
    bias: usize,
}

/// Parameters of a multilayer perceptron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpDocument", into = "MlpDocument")]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    activation: Activation,
    slots: Vec<LayerSlot>,
    params: Vec<f64>,
}

fn layout(layer_sizes: &[usize]) -> Result<(Vec<LayerSlot>, usize)> {
    if layer_sizes.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "an MLP needs at least an input and an output width, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "layer widths must be positive, got {layer_sizes:?}"
        )));
    }
    let mut offset = 0;
    let slots = layer_sizes
        .windows(2)
        .map(|w| {
            let slot = LayerSlot {
                fan_in: w[0],
                fan_out: w[1],
                weights: offset,
                bias: offset + w[0] * w[1],
            };
            offset = slot.bias + w[1];
            slot
        })
        .collect();
    Ok((slots, offset))
}

impl Mlp {
    /// Network with every weight and bias set to zero.
    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        let (slots, n) = layout(layer_sizes)?;
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            slots,
            params: vec![0.0; n],
        })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init_glorot(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, activation)?;
        let mut rng = seed::rng(seed, &[]);
        for slot in net.slots.clone() {
            let bound = (6.0 / (slot.fan_in + slot.fan_out) as f64).sqrt();
            for w in &mut net.params[slot.weights..slot.bias] {
                *w = rng.random_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    /// Network from a flat parameter vector in the canonical layout.
    pub fn from_flat(layer_sizes: &[usize], activation: Activation, params: Vec<f64>) -> Result<Self> {
        let (slots, n) = layout(layer_sizes)?;
        if params.len() != n {
            return Err(Error::Shape(format!(
                "{} parameters supplied for layer sizes {layer_sizes:?} (expected {n})",
                params.len()
            )));
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {i} is {}", params[i])));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            slots,
            params,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Number of affine layers (hidden layers + output layer).
    pub fn n_layers(&self) -> usize {
        self.slots.len()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Flat index range of layer `l`'s weight matrix.
    pub fn weight_range(&self, l: usize) -> Range<usize> {
        let s = self.slots[l];
        s.weights..s.bias
    }

    /// Flat index range of layer `l`'s bias vector.
    pub fn bias_range(&self, l: usize) -> Range<usize> {
        let s = self.slots[l];
        s.bias..s.bias + s.fan_out
    }

    /// Weight matrix of layer `l`, shaped `fan_out x fan_in`.
    pub fn weights(&self, l: usize) -> ArrayView2<'_, f64> {
        let s = self.slots[l];
        ArrayView2::from_shape((s.fan_out, s.fan_in), &self.params[self.weight_range(l)]).unwrap()
    }

    pub fn bias(&self, l: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[self.bias_range(l)])
    }

    pub fn weights_mut(&mut self, l: usize) -> ArrayViewMut2<'_, f64> {
        let s = self.slots[l];
        let r = self.weight_range(l);
        ArrayViewMut2::from_shape((s.fan_out, s.fan_in), &mut self.params[r]).unwrap()
    }

    pub fn bias_mut(&mut self, l: usize) -> ArrayViewMut1<'_, f64> {
        let r = self.bias_range(l);
        ArrayViewMut1::from(&mut self.params[r])
    }

    /// Views into a gradient buffer laid out like this network's parameters.
    pub(crate) fn split_grad<'a>(
        &self,
        l: usize,
        grad: &'a mut [f64],
    ) -> (ArrayViewMut2<'a, f64>, ArrayViewMut1<'a, f64>) {
        let s = self.slots[l];
        let layer = &mut grad[s.weights..s.bias + s.fan_out];
        let (w, b) = layer.split_at_mut(s.fan_in * s.fan_out);
        (
            ArrayViewMut2::from_shape((s.fan_out, s.fan_in), w).unwrap(),
            ArrayViewMut1::from(b),
        )
    }

    fn check_width(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.input_width() {
            return Err(Error::Shape(format!(
                "feature vector has length {}, network expects {}",
                features.len(),
                self.input_width()
            )));
        }
        Ok(())
    }

    /// All outputs for one feature vector.
    pub fn forward_vec(&self, features: &[f64]) -> Result<Array1<f64>> {
        self.check_width(features)?;
        let mut a = Array1::from(features.to_vec());
        let last = self.n_layers() - 1;
        for l in 0..=last {
            let mut z = self.weights(l).dot(&a);
            z += &self.bias(l);
            if l < last {
                z.mapv_inplace(|v| self.activation.apply(v));
            }
            a = z;
        }
        Ok(a)
    }

    /// Scalar output for one feature vector. The network must have output width 1.
    pub fn forward(&self, features: &[f64]) -> Result<f64> {
        if self.output_width() != 1 {
            return Err(Error::Shape(format!(
                "scalar forward on a network with {} outputs",
                self.output_width()
            )));
        }
        Ok(self.forward_vec(features)?[0])
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MlpDocument {
    layer_sizes: Vec<usize>,
    activation: Activation,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl From<Mlp> for MlpDocument {
    fn from(net: Mlp) -> Self {
        let weights = (0..net.n_layers())
            .map(|l| net.params[net.weight_range(l)].to_vec())
            .collect();
        let biases = (0..net.n_layers())
            .map(|l| net.params[net.bias_range(l)].to_vec())
            .collect();
        MlpDocument {
            layer_sizes: net.layer_sizes,
            activation: net.activation,
            weights,
            biases,
        }
    }
}

impl TryFrom<MlpDocument> for Mlp {
    type Error = Error;

    fn try_from(doc: MlpDocument) -> Result<Self> {
        let (slots, _) = layout(&doc.layer_sizes)?;
        if doc.weights.len() != slots.len() || doc.biases.len() != slots.len() {
            return Err(Error::Shape("layer count does not match layer_sizes".into()));
        }
        let mut flat = Vec::new();
        for ((slot, w), b) in slots.iter().zip(&doc.weights).zip(&doc.biases) {
            if w.len() != slot.fan_in * slot.fan_out || b.len() != slot.fan_out {
                return Err(Error::Shape(format!(
                    "layer {}x{} has {} weights and {} biases",
                    slot.fan_out,
                    slot.fan_in,
                    w.len(),
                    b.len()
                )));
            }
            flat.extend_from_slice(w);
            flat.extend_from_slice(b);
        }
        Mlp::from_flat(&doc.layer_sizes, doc.activation, flat)
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moment estimates for a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            step_count: 0,
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
        }
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }

    /// One bias-corrected Adam update of `params` in place.
    ///
    /// The gradient is checked before anything is modified, so a rejected
    /// step leaves both `params` and the moments untouched.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.len() || grad.len() != self.len() {
            return Err(Error::Shape(format!(
                "adam state has {} entries, params {}, gradient {}",
                self.len(),
                params.len(),
                grad.len()
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient entry {i} is {} at optimizer step {}",
                grad[i], self.step_count
            )));
        }
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        self.step_count += 1;
        let t = self.step_count as f64;
        let corr1 = 1.0 - beta1.powf(t);
        let corr2 = 1.0 - beta2.powf(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / corr1;
            let v_hat = *v / corr2;
            *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}
