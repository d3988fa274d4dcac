//! Dense ReLU multilayer perceptrons.
//!
//! A network with architecture `(L, p)` is the map
//! `A_{L+1} ∘ σ ∘ A_L ∘ … ∘ σ ∘ A_1`, where `A_ℓ(v) = W_ℓ v + b_ℓ` and
//! `σ(a) = max(a, 0)` acts coordinatewise. `W_ℓ` has shape `p_ℓ × p_{ℓ-1}`.
//!
//! Batches are row-major: one sample per row. Gradients are computed by a
//! hand-written reverse pass specialised to this topology.

mod adam;
mod loss;

pub use adam::{AdamConfig, AdamState};
pub use loss::{loss_and_output_grad, loss_value, LossKind};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Depth and widths of a feedforward network.
///
/// `widths` has length `L + 2`: input width, `L` hidden widths, output width.
/// Depth 0 (a single affine map) is allowed; it is what composition produces
/// when one factor is affine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    widths: Vec<usize>,
}

impl Architecture {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidArchitecture(format!(
                "need at least input and output widths, got {widths:?}"
            )));
        }
        if let Some(pos) = widths.iter().position(|&w| w == 0) {
            return Err(Error::InvalidArchitecture(format!(
                "width at position {pos} is zero in {widths:?}"
            )));
        }
        Ok(Self { widths })
    }

    /// Builds `(depth, (input, hidden…, output))`, checking that the widths
    /// vector has `depth + 2` entries.
    pub fn with_depth(depth: usize, widths: Vec<usize>) -> Result<Self> {
        if widths.len() != depth + 2 {
            return Err(Error::InvalidArchitecture(format!(
                "depth {depth} needs {} widths, got {}",
                depth + 2,
                widths.len()
            )));
        }
        Self::new(widths)
    }

    /// Number of hidden layers `L`.
    pub fn depth(&self) -> usize {
        self.widths.len() - 2
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("architecture has at least two widths")
    }

    /// `V = Σ_ℓ p_ℓ (p_{ℓ-1} + 1)`.
    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    /// Total number of weight entries (biases excluded).
    pub fn weight_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * w[0]).sum()
    }
}

/// Upper bound on `‖Θ(f)‖₀`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsityBudget(pub usize);

impl SparsityBudget {
    pub fn admits(&self, nonzeros: usize) -> bool {
        nonzeros <= self.0
    }
}

/// One affine map `v ↦ W v + b`. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn zeros(outputs: usize, inputs: usize) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }
}

/// Trainable positions of one layer; `true` means the parameter is free.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerMask {
    pub weight: Array2<bool>,
    pub bias: Array1<bool>,
}

impl LayerMask {
    pub fn full(outputs: usize, inputs: usize) -> Self {
        Self {
            weight: Array2::from_elem((outputs, inputs), true),
            bias: Array1::from_elem(outputs, true),
        }
    }
}

/// Gradient of a scalar loss with respect to every parameter of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad {
    pub layers: Vec<Layer>,
}

impl MlpGrad {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Layer::zeros(l.outputs(), l.inputs()))
                .collect(),
        }
    }

    /// Flattened in the same order as [`Mlp::param_vector`].
    pub fn to_vec(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }
}

/// Feedforward ReLU network in the class `F(L, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    arch: Architecture,
    layers: Vec<Layer>,
    mask: Option<Vec<LayerMask>>,
}

impl Mlp {
    pub fn zeros(arch: Architecture) -> Self {
        let layers = arch
            .widths
            .windows(2)
            .map(|w| Layer::zeros(w[1], w[0]))
            .collect();
        Self {
            arch,
            layers,
            mask: None,
        }
    }

    /// Kaiming-uniform initialisation: weights `U(±√(6/fan_in))`, biases
    /// `U(±1/√fan_in)`.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let mut net = Self::zeros(arch);
        for layer in &mut net.layers {
            kaiming_fill(layer, None, rng);
        }
        net
    }

    /// Assembles a network from explicit affine maps.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArchitecture("no layers".into()));
        }
        let mut widths = vec![layers[0].inputs()];
        for (i, layer) in layers.iter().enumerate() {
            if layer.inputs() != *widths.last().unwrap() {
                return Err(Error::DimensionMismatch {
                    layer: i,
                    expected: *widths.last().unwrap(),
                    got: layer.inputs(),
                });
            }
            if layer.bias.len() != layer.outputs() {
                return Err(Error::Shape(format!(
                    "layer {i}: bias length {} but {} outputs",
                    layer.bias.len(),
                    layer.outputs()
                )));
            }
            widths.push(layer.outputs());
        }
        Ok(Self {
            arch: Architecture::new(widths)?,
            layers,
            mask: None,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Direct parameter access. Callers that write here are responsible for
    /// keeping masked positions at zero; see [`Mlp::apply_mask`].
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub(crate) fn layers_and_mask_mut(&mut self) -> (&mut [Layer], Option<&[LayerMask]>) {
        (&mut self.layers, self.mask.as_deref())
    }

    pub fn input_width(&self) -> usize {
        self.arch.input_width()
    }

    pub fn output_width(&self) -> usize {
        self.arch.output_width()
    }

    pub fn mask(&self) -> Option<&[LayerMask]> {
        self.mask.as_deref()
    }

    /// Installs a mask and zeroes every masked parameter.
    pub fn set_mask(&mut self, mask: Vec<LayerMask>) -> Result<()> {
        if mask.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "mask has {} layers, network has {}",
                mask.len(),
                self.layers.len()
            )));
        }
        for (i, (m, l)) in mask.iter().zip(&self.layers).enumerate() {
            if m.weight.dim() != l.weight.dim() || m.bias.len() != l.bias.len() {
                return Err(Error::Shape(format!("mask shape differs at layer {i}")));
            }
        }
        self.mask = Some(mask);
        self.apply_mask();
        Ok(())
    }

    pub fn clear_mask(&mut self) {
        self.mask = None;
    }

    /// Forces every masked parameter to exactly zero.
    pub fn apply_mask(&mut self) {
        if let Some(mask) = &self.mask {
            for (layer, m) in self.layers.iter_mut().zip(mask) {
                Zip::from(&mut layer.weight)
                    .and(&m.weight)
                    .for_each(|w, &keep| {
                        if !keep {
                            *w = 0.0
                        }
                    });
                Zip::from(&mut layer.bias).and(&m.bias).for_each(|b, &keep| {
                    if !keep {
                        *b = 0.0
                    }
                });
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    /// `‖Θ(f)‖₀`.
    pub fn nonzero_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                l.weight.iter().filter(|v| **v != 0.0).count()
                    + l.bias.iter().filter(|v| **v != 0.0).count()
            })
            .sum()
    }

    /// `Θ(f) = (vec(W₁), b₁, …, vec(W_{L+1}), b_{L+1})`, with `vec` stacking
    /// columns.
    pub fn param_vector(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    /// Inverse of [`Mlp::param_vector`].
    pub fn from_param_vector(arch: Architecture, params: &[f64]) -> Result<Self> {
        let mut net = Self::zeros(arch);
        net.set_param_vector(params)?;
        Ok(net)
    }

    /// Overwrites all parameters from a flat vector. The mask, if any, is
    /// re-applied afterwards.
    pub fn set_param_vector(&mut self, params: &[f64]) -> Result<()> {
        let expected = self.param_count();
        if params.len() != expected {
            return Err(Error::ParamLength {
                expected,
                got: params.len(),
            });
        }
        let mut it = params.iter().copied();
        for layer in &mut self.layers {
            // Column-major traversal of W matches `vec`.
            for mut col in layer.weight.columns_mut() {
                for w in col.iter_mut() {
                    *w = it.next().unwrap();
                }
            }
            for b in layer.bias.iter_mut() {
                *b = it.next().unwrap();
            }
        }
        self.apply_mask();
        Ok(())
    }

    /// Flat mask in parameter-vector order, if a mask is installed.
    pub fn mask_vector(&self) -> Option<Vec<bool>> {
        self.mask.as_ref().map(|mask| {
            let mut out = Vec::with_capacity(self.param_count());
            for m in mask {
                for col in m.weight.columns() {
                    out.extend(col.iter().copied());
                }
                out.extend(m.bias.iter().copied());
            }
            out
        })
    }

    pub fn set_mask_vector(&mut self, flat: &[bool]) -> Result<()> {
        let expected = self.param_count();
        if flat.len() != expected {
            return Err(Error::ParamLength {
                expected,
                got: flat.len(),
            });
        }
        let mut it = flat.iter().copied();
        let mut mask = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut m = LayerMask::full(layer.outputs(), layer.inputs());
            for mut col in m.weight.columns_mut() {
                for v in col.iter_mut() {
                    *v = it.next().unwrap();
                }
            }
            for v in m.bias.iter_mut() {
                *v = it.next().unwrap();
            }
            mask.push(m);
        }
        self.set_mask(mask)
    }

    /// Evaluates the network at a single input.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let input = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.forward_batch(input)?.into_raw_vec_and_offset().0)
    }

    /// Evaluates the network on every row of `x`.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut pre = h.dot(&layer.weight.t());
            pre += &layer.bias;
            check_finite(&pre, i)?;
            if i < last {
                pre.mapv_inplace(relu);
            }
            h = pre;
        }
        Ok(h)
    }

    /// Forward pass keeping the input and every hidden activation for the
    /// reverse pass. Returns `(activations, output)`.
    pub(crate) fn forward_trace(&self, x: ArrayView2<f64>) -> Result<(Vec<Array2<f64>>, Array2<f64>)> {
        self.check_input(x.ncols())?;
        let mut acts = Vec::with_capacity(self.layers.len());
        acts.push(x.to_owned());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut pre = acts[i].dot(&layer.weight.t());
            pre += &layer.bias;
            check_finite(&pre, i)?;
            if i == last {
                return Ok((acts, pre));
            }
            pre.mapv_inplace(relu);
            acts.push(pre);
        }
        unreachable!("network has at least one layer")
    }

    /// Reverse pass given `∂loss/∂output`. Optionally also returns
    /// `∂loss/∂input`. Masked positions receive zero gradient.
    pub(crate) fn backward(
        &self,
        acts: &[Array2<f64>],
        mut delta: Array2<f64>,
        want_input_grad: bool,
    ) -> (MlpGrad, Option<Array2<f64>>) {
        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        let mut input_grad = None;
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let weight = delta.t().dot(&acts[i]);
            let bias = delta.sum_axis(Axis(0));
            grads.push(Layer { weight, bias });
            if i > 0 {
                let mut prev = delta.dot(&layer.weight);
                // σ'(a) = 1{a > 0}; an activation is positive iff its
                // pre-activation is, so the kink at 0 gets subgradient 0.
                Zip::from(&mut prev).and(&acts[i]).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
                delta = prev;
            } else if want_input_grad {
                input_grad = Some(delta.dot(&layer.weight));
            }
        }
        grads.reverse();
        let mut grad = MlpGrad { layers: grads };
        self.mask_grad(&mut grad);
        (grad, input_grad)
    }

    fn mask_grad(&self, grad: &mut MlpGrad) {
        if let Some(mask) = &self.mask {
            for (g, m) in grad.layers.iter_mut().zip(mask) {
                Zip::from(&mut g.weight).and(&m.weight).for_each(|v, &keep| {
                    if !keep {
                        *v = 0.0
                    }
                });
                Zip::from(&mut g.bias).and(&m.bias).for_each(|v, &keep| {
                    if !keep {
                        *v = 0.0
                    }
                });
            }
        }
    }

    /// Mean loss over the batch and its exact gradient.
    pub fn loss_and_grad(
        &self,
        inputs: ArrayView2<f64>,
        targets: ArrayView1<f64>,
        loss: LossKind,
    ) -> Result<(f64, MlpGrad)> {
        if inputs.nrows() == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if inputs.nrows() != targets.len() {
            return Err(Error::Shape(format!(
                "{} inputs but {} targets",
                inputs.nrows(),
                targets.len()
            )));
        }
        let (acts, out) = self.forward_trace(inputs)?;
        let (value, d_out) = loss_and_output_grad(&out, targets, loss)?;
        let (grad, _) = self.backward(&acts, d_out, false);
        Ok((value, grad))
    }

    fn check_input(&self, got: usize) -> Result<()> {
        if got != self.input_width() {
            return Err(Error::DimensionMismatch {
                layer: 0,
                expected: self.input_width(),
                got,
            });
        }
        Ok(())
    }

    /// Redraws every free parameter from the Kaiming-uniform law; masked
    /// positions stay at zero.
    pub fn reinitialize<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let m = self.mask.as_ref().map(|m| &m[i]);
            kaiming_fill(layer, m, rng);
        }
    }
}

#[inline]
pub(crate) fn relu(a: f64) -> f64 {
    if a > 0.0 {
        a
    } else {
        0.0
    }
}

fn check_finite(values: &Array2<f64>, layer: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { layer })
    }
}

fn kaiming_fill<R: Rng + ?Sized>(layer: &mut Layer, mask: Option<&LayerMask>, rng: &mut R) {
    let fan_in = layer.inputs() as f64;
    let w_bound = (6.0 / fan_in).sqrt();
    let b_bound = 1.0 / fan_in.sqrt();
    let w_dist = Uniform::new_inclusive(-w_bound, w_bound).expect("finite bounds");
    let b_dist = Uniform::new_inclusive(-b_bound, b_bound).expect("finite bounds");
    // Draw in column-major order so the stream lines up with `param_vector`.
    for (c, mut col) in layer.weight.columns_mut().into_iter().enumerate() {
        for (r, w) in col.iter_mut().enumerate() {
            let keep = mask.is_none_or(|m| m.weight[[r, c]]);
            *w = if keep { w_dist.sample(rng) } else { 0.0 };
        }
    }
    for (r, b) in layer.bias.iter_mut().enumerate() {
        let keep = mask.is_none_or(|m| m.bias[r]);
        *b = if keep { b_dist.sample(rng) } else { 0.0 };
    }
}

fn flatten_layers(layers: &[Layer]) -> Vec<f64> {
    let total = layers
        .iter()
        .map(|l| l.weight.len() + l.bias.len())
        .sum();
    let mut out = Vec::with_capacity(total);
    for layer in layers {
        for col in layer.weight.columns() {
            out.extend(col.iter().copied());
        }
        out.extend(layer.bias.iter().copied());
    }
    out
}

/// Truncation operator `T_B(y) = (−B) ∨ y ∧ B`.
pub fn truncate(y: f64, bound: f64) -> f64 {
    debug_assert!(bound >= 0.0);
    y.clamp(-bound, bound)
}

/// Serialized form of an [`Mlp`]: architecture, flat parameters, optional
/// flat mask.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpDocument {
    pub format: String,
    pub version: u32,
    pub widths: Vec<usize>,
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<u8>>,
}

pub const MLP_FORMAT: &str = "penn-mlp";

impl From<&Mlp> for MlpDocument {
    fn from(net: &Mlp) -> Self {
        Self {
            format: MLP_FORMAT.to_string(),
            version: 1,
            widths: net.arch.widths.clone(),
            params: net.param_vector(),
            mask: net
                .mask_vector()
                .map(|m| m.into_iter().map(u8::from).collect()),
        }
    }
}

impl TryFrom<MlpDocument> for Mlp {
    type Error = Error;

    fn try_from(doc: MlpDocument) -> Result<Self> {
        if doc.format != MLP_FORMAT || doc.version != 1 {
            return Err(Error::InvalidArgument(format!(
                "unsupported network document {} v{}",
                doc.format, doc.version
            )));
        }
        let mut net = Mlp::from_param_vector(Architecture::new(doc.widths)?, &doc.params)?;
        if let Some(mask) = doc.mask {
            if mask.iter().any(|&b| b > 1) {
                return Err(Error::InvalidArgument("mask entries must be 0 or 1".into()));
            }
            let flat: Vec<bool> = mask.into_iter().map(|b| b == 1).collect();
            // Installing the mask must not alter parameters that were stored.
            let before = net.param_vector();
            net.set_mask_vector(&flat)?;
            if net.param_vector() != before {
                return Err(Error::InvalidArgument(
                    "stored parameters are nonzero at masked positions".into(),
                ));
            }
        }
        Ok(net)
    }
}

impl Serialize for Mlp {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        MlpDocument::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Mlp {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let doc = MlpDocument::deserialize(deserializer)?;
        Mlp::try_from(doc).map_err(serde::de::Error::custom)
    }
}
