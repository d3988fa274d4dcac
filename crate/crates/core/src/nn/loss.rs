use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean of `(f(x) − y)²`; needs a single output.
    Squared,
    /// Mean negative log-likelihood of softmax scores; targets are class
    /// indices stored as `f64`.
    CrossEntropy,
}

/// Batch-mean loss and its derivative with respect to the network output.
pub fn loss_and_output_grad(
    out: &Array2<f64>,
    targets: ArrayView1<f64>,
    kind: LossKind,
) -> Result<(f64, Array2<f64>)> {
    let n = out.nrows();
    if n == 0 || n != targets.len() {
        return Err(Error::Shape(format!("{n} outputs for {} targets", targets.len())));
    }
    let scale = 1.0 / n as f64;
    match kind {
        LossKind::Squared => {
            if out.ncols() != 1 {
                return Err(Error::Shape(format!(
                    "squared loss needs one output column, got {}",
                    out.ncols()
                )));
            }
            let mut grad = Array2::zeros((n, 1));
            let mut total = 0.0;
            for (i, (&o, &y)) in out.column(0).iter().zip(targets).enumerate() {
                let r = o - y;
                total += r * r;
                grad[[i, 0]] = 2.0 * r * scale;
            }
            Ok((total * scale, grad))
        }
        LossKind::CrossEntropy => {
            let classes = out.ncols();
            if classes < 2 {
                return Err(Error::Shape("cross-entropy needs at least two classes".into()));
            }
            let mut grad = Array2::zeros((n, classes));
            let mut total = 0.0;
            for (i, row) in out.rows().into_iter().enumerate() {
                let label = class_index(targets[i], classes)?;
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = row.iter().map(|s| (s - max).exp()).sum();
                let log_norm = max + sum.ln();
                total += log_norm - row[label];
                for (c, s) in row.iter().enumerate() {
                    let p = (s - log_norm).exp();
                    grad[[i, c]] = (p - if c == label { 1.0 } else { 0.0 }) * scale;
                }
            }
            Ok((total * scale, grad))
        }
    }
}

/// Batch-mean loss without the gradient.
pub fn loss_value(out: &Array2<f64>, targets: ArrayView1<f64>, kind: LossKind) -> Result<f64> {
    loss_and_output_grad(out, targets, kind).map(|(v, _)| v)
}

fn class_index(target: f64, classes: usize) -> Result<usize> {
    if target >= 0.0 && target.fract() == 0.0 && (target as usize) < classes {
        Ok(target as usize)
    } else {
        Err(Error::InvalidArgument(format!(
            "class label {target} is not an index below {classes}"
        )))
    }
}
