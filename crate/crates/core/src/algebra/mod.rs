//! Exact constructions on ReLU networks: enlarging, composition, padding and
//! parallelisation, plus the bump gate and separability certificates.
//!
//! Every construction returns an unmasked [`Mlp`] that agrees pointwise with
//! the mathematical operation; only affine arithmetic is involved, so the
//! agreement is exact up to floating-point rounding.

mod separate;

pub use separate::{
    full_cube, separate_by_coordinates, separate_by_halfspaces, Halfspace, PatternPartition,
    SeparationCertificate, MAX_ENUMERATION_DIM,
};

use ndarray::{concatenate, s, Array1, Array2, Axis};

use crate::nn::{Architecture, Layer, Mlp};
use crate::{Error, Result};

/// `f₂ ∘ f₁` as a single network of depth `L₁ + L₂`. The last affine map of
/// `f₁` and the first of `f₂` are merged into one layer.
pub fn compose(first: &Mlp, second: &Mlp) -> Result<Mlp> {
    if first.output_width() != second.input_width() {
        return Err(Error::DimensionMismatch {
            layer: first.layers().len(),
            expected: second.input_width(),
            got: first.output_width(),
        });
    }
    let (head, tail) = first.layers().split_at(first.layers().len() - 1);
    let inner = &tail[0];
    let outer = &second.layers()[0];
    let merged = Layer {
        weight: outer.weight.dot(&inner.weight),
        bias: outer.weight.dot(&inner.bias) + &outer.bias,
    };
    let mut layers: Vec<Layer> = head.to_vec();
    layers.push(merged);
    layers.extend(second.layers()[1..].iter().cloned());
    Mlp::from_layers(layers)
}

/// Deepens `net` to `target_depth` hidden layers without changing the
/// function it computes.
///
/// The output `y` is split into `(σ(y), σ(−y))`; both halves are
/// nonnegative, so further ReLU layers carry them through an identity map,
/// and the final layer returns `σ(y) − σ(−y) = y`. The nonzero count grows to
/// at most `2s + 2·p_out·(target_depth − depth)`.
pub fn pad(net: &Mlp, target_depth: usize) -> Result<Mlp> {
    let depth = net.architecture().depth();
    if target_depth < depth {
        return Err(Error::InvalidArgument(format!(
            "cannot pad depth {depth} down to {target_depth}"
        )));
    }
    if target_depth == depth {
        let mut out = net.clone();
        out.clear_mask();
        return Ok(out);
    }
    let extra = target_depth - depth;
    let (head, tail) = net.layers().split_at(net.layers().len() - 1);
    let last = &tail[0];
    let p = last.outputs();

    let mut layers: Vec<Layer> = head.to_vec();
    layers.push(Layer {
        weight: concatenate(Axis(0), &[last.weight.view(), (-&last.weight).view()])
            .expect("matching column counts"),
        bias: concatenate(Axis(0), &[last.bias.view(), (-&last.bias).view()])
            .expect("vectors concatenate"),
    });
    for _ in 1..extra {
        layers.push(Layer {
            weight: Array2::eye(2 * p),
            bias: Array1::zeros(2 * p),
        });
    }
    let mut merge = Array2::zeros((p, 2 * p));
    for i in 0..p {
        merge[[i, i]] = 1.0;
        merge[[i, p + i]] = -1.0;
    }
    layers.push(Layer {
        weight: merge,
        bias: Array1::zeros(p),
    });
    Mlp::from_layers(layers)
}

/// Stacks networks sharing input width and depth; the output is the
/// concatenation of the individual outputs.
pub fn parallelize(nets: &[Mlp]) -> Result<Mlp> {
    let first = nets
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to parallelise".into()))?;
    let depth = first.architecture().depth();
    for (i, net) in nets.iter().enumerate() {
        if net.input_width() != first.input_width() {
            return Err(Error::DimensionMismatch {
                layer: 0,
                expected: first.input_width(),
                got: net.input_width(),
            });
        }
        if net.architecture().depth() != depth {
            return Err(Error::InvalidArgument(format!(
                "network {i} has depth {} but network 0 has depth {depth}; pad first",
                net.architecture().depth()
            )));
        }
    }
    let mut layers = Vec::with_capacity(depth + 1);
    for l in 0..=depth {
        let rows: usize = nets.iter().map(|n| n.layers()[l].outputs()).sum();
        let cols: usize = if l == 0 {
            first.input_width()
        } else {
            nets.iter().map(|n| n.layers()[l].inputs()).sum()
        };
        let mut weight = Array2::zeros((rows, cols));
        let mut bias = Array1::zeros(rows);
        let (mut r0, mut c0) = (0, 0);
        for net in nets {
            let layer = &net.layers()[l];
            let (r1, c1) = (r0 + layer.outputs(), c0 + layer.inputs());
            if l == 0 {
                weight.slice_mut(s![r0..r1, ..]).assign(&layer.weight);
            } else {
                weight.slice_mut(s![r0..r1, c0..c1]).assign(&layer.weight);
                c0 = c1;
            }
            bias.slice_mut(s![r0..r1]).assign(&layer.bias);
            r0 = r1;
        }
        layers.push(Layer { weight, bias });
    }
    Mlp::from_layers(layers)
}

/// Embeds `net` into a wider architecture of the same depth by zero-filling
/// the new rows and columns.
pub fn enlarge(net: &Mlp, bigger: &Architecture) -> Result<Mlp> {
    let own = net.architecture().widths();
    let target = bigger.widths();
    if own.len() != target.len() {
        return Err(Error::InvalidArgument(format!(
            "enlarging needs equal depth: {own:?} vs {target:?}"
        )));
    }
    if let Some(pos) = own.iter().zip(target).position(|(a, b)| a > b) {
        return Err(Error::InvalidArgument(format!(
            "width {pos} shrinks from {} to {}",
            own[pos], target[pos]
        )));
    }
    let mut out = Mlp::zeros(bigger.clone());
    for (dst, src) in out.layers_mut().iter_mut().zip(net.layers()) {
        dst.weight
            .slice_mut(s![..src.outputs(), ..src.inputs()])
            .assign(&src.weight);
        dst.bias.slice_mut(s![..src.outputs()]).assign(&src.bias);
    }
    Ok(out)
}

/// The 4-ReLU gate `h_a` in `F(1, (1, 4, 1))`: 1 on `[a − ε/2, a + ε/2]`,
/// 0 outside `(a − ε, a + ε)`, linear in between.
pub fn bump_gate(center: f64, width: f64) -> Result<Mlp> {
    if !(width > 0.0 && width.is_finite() && center.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "bump gate needs finite centre and positive width, got ({center}, {width})"
        )));
    }
    let slope = 2.0 / width;
    let shift = |k: f64| (-2.0 * center + k * width) / width;
    Mlp::from_layers(vec![
        Layer {
            weight: Array2::from_elem((4, 1), slope),
            bias: Array1::from(vec![shift(2.0), shift(1.0), shift(-1.0), shift(-2.0)]),
        },
        Layer {
            weight: Array2::from_shape_vec((1, 4), vec![1.0, -1.0, -1.0, 1.0]).unwrap(),
            bias: Array1::zeros(1),
        },
    ])
}
