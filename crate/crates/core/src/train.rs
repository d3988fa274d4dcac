//! Warm training, magnitude pruning, survivor reinitialisation, sparse
//! retraining with early stopping, and validation-based choice of the
//! pruning proportion λ.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{loss_value, AdamConfig, AdamState, LayerMask, LossKind, Mlp, MlpGrad};
use crate::penn::Penn;
use crate::seed::derive_seed;
use crate::{Error, Result};

/// Imputed covariates `Z`, revelation vectors `Ω` (as 0/1 floats) and
/// responses. Regression targets are reals; classification targets are class
/// indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub z: Array2<f64>,
    pub omega: Array2<f64>,
    pub y: Array1<f64>,
}

impl Dataset {
    pub fn new(z: Array2<f64>, omega: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        if z.dim() != omega.dim() || z.nrows() != y.len() {
            return Err(Error::Shape(format!(
                "z {:?}, omega {:?}, y {}",
                z.dim(),
                omega.dim(),
                y.len()
            )));
        }
        Ok(Self { z, omega, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            z: self.z.select(Axis(0), rows),
            omega: self.omega.select(Axis(0), rows),
            y: self.y.select(Axis(0), rows),
        }
    }
}

/// A model trained by the protocol: one or more [`Mlp`]s updated jointly.
pub trait Trainable: Clone {
    fn subnets(&self) -> Vec<&Mlp>;
    fn subnets_mut(&mut self) -> Vec<&mut Mlp>;
    fn predict(&self, z: ArrayView2<f64>, omega: ArrayView2<f64>) -> Result<Array2<f64>>;
    fn loss_and_grads(&self, batch: &Dataset, loss: LossKind) -> Result<(f64, Vec<MlpGrad>)>;

    fn loss(&self, data: &Dataset, loss: LossKind) -> Result<f64> {
        let out = self.predict(data.z.view(), data.omega.view())?;
        loss_value(&out, data.y.view(), loss)
    }

    fn weight_count(&self) -> usize {
        self.subnets().iter().map(|n| n.architecture().weight_count()).sum()
    }

    fn nonzero_count(&self) -> usize {
        self.subnets().iter().map(|n| n.nonzero_count()).sum()
    }
}

/// A plain network fed the imputed covariates only.
impl Trainable for Mlp {
    fn subnets(&self) -> Vec<&Mlp> {
        vec![self]
    }

    fn subnets_mut(&mut self) -> Vec<&mut Mlp> {
        vec![self]
    }

    fn predict(&self, z: ArrayView2<f64>, _omega: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.forward_batch(z)
    }

    fn loss_and_grads(&self, batch: &Dataset, loss: LossKind) -> Result<(f64, Vec<MlpGrad>)> {
        let (v, g) = self.loss_and_grad(batch.z.view(), batch.y.view(), loss)?;
        Ok((v, vec![g]))
    }
}

impl Trainable for Penn {
    fn subnets(&self) -> Vec<&Mlp> {
        Penn::subnets(self).to_vec()
    }

    fn subnets_mut(&mut self) -> Vec<&mut Mlp> {
        Penn::subnets_mut(self).into_iter().collect()
    }

    fn predict(&self, z: ArrayView2<f64>, omega: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.forward_batch(z, omega)
    }

    fn loss_and_grads(&self, batch: &Dataset, loss: LossKind) -> Result<(f64, Vec<MlpGrad>)> {
        let (v, g) = self.loss_and_grad(batch.z.view(), batch.omega.view(), batch.y.view(), loss)?;
        Ok((v, g.into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub warm_epochs: usize,
    pub lambda_grid: Vec<f64>,
    pub early_stop_delta: f64,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            warm_epochs: 10,
            lambda_grid: vec![0.1, 0.2, 0.4, 0.8],
            early_stop_delta: 0.001,
            early_stop_patience: 10,
            max_epochs: 500,
            batch_size: 128,
            adam: AdamConfig::default(),
            loss: LossKind::Squared,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.lambda_grid.is_empty() {
            return bad("λ grid is empty".into());
        }
        if let Some(l) = self.lambda_grid.iter().find(|l| !(**l > 0.0 && **l <= 1.0)) {
            return bad(format!("λ = {l} is outside (0, 1]"));
        }
        if self.early_stop_patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.early_stop_delta.is_nan() || self.early_stop_delta < 0.0 {
            return bad(format!("early-stopping delta {} is negative", self.early_stop_delta));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return bad("max_epochs and batch_size must be positive".into());
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return bad(format!("invalid Adam settings {a:?}"));
        }
        Ok(())
    }
}

/// One pass over `data` in shuffled mini-batches; returns the size-weighted
/// mean of the batch losses.
fn run_epoch<T: Trainable>(
    model: &mut T,
    adam: &mut AdamState,
    data: &Dataset,
    config: &TrainConfig,
    epoch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for (b, rows) in order.chunks(config.batch_size).enumerate() {
        let batch = data.select(rows);
        let (loss, grads) = model.loss_and_grads(&batch, config.loss)?;
        if !loss.is_finite() || grads.iter().any(|g| g.layers.iter().any(|l| !l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))) {
            return Err(Error::NonFiniteLoss { epoch, batch: b + 1 });
        }
        let mut nets = model.subnets_mut();
        adam.step(&mut nets, &grads)?;
        total += loss * rows.len() as f64;
    }
    Ok(total / data.len() as f64)
}

fn non_empty(data: &Dataset, what: &str) -> Result<()> {
    if data.is_empty() {
        Err(Error::InvalidArgument(format!("{what} set is empty")))
    } else {
        Ok(())
    }
}

/// `warm_epochs` passes of dense mini-batch Adam. Returns the per-epoch
/// training losses.
pub fn warm_train<T: Trainable>(model: &mut T, train: &Dataset, config: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    non_empty(train, "training")?;
    for net in model.subnets_mut() {
        net.clear_mask();
    }
    let mut adam = AdamState::new(config.adam, &model.subnets());
    (1..=config.warm_epochs)
        .map(|epoch| run_epoch(model, &mut adam, train, config, epoch, rng))
        .collect()
}

/// Number of weights kept at proportion `lambda` of `total`.
pub fn kept_weights(lambda: f64, total: usize) -> usize {
    ((lambda * total as f64 - 1e-9).ceil().max(0.0) as usize).min(total)
}

/// Masks all but the `⌈λW⌉` weights of largest magnitude, ranked jointly
/// over every weight matrix of every subnetwork. Biases are never masked.
/// Ties keep the entry with the smaller flat index (subnetworks in order,
/// layers in order, weights column-major).
pub fn magnitude_prune<T: Trainable>(model: &mut T, lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::InvalidArgument(format!("λ = {lambda} is outside (0, 1]")));
    }
    let weights: Vec<f64> = model
        .subnets()
        .iter()
        .flat_map(|n| n.layers().iter().flat_map(|l| l.weight.t().iter().copied().collect::<Vec<_>>()))
        .collect();
    let keep = kept_weights(lambda, weights.len());
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].abs().total_cmp(&weights[a].abs()).then(a.cmp(&b)));
    let mut survive = vec![false; weights.len()];
    for &i in &order[..keep] {
        survive[i] = true;
    }
    let mut offset = 0;
    for net in model.subnets_mut() {
        let masks: Vec<LayerMask> = net
            .layers()
            .iter()
            .map(|l| {
                let (rows, cols) = l.weight.dim();
                let mut m = LayerMask::full(rows, cols);
                for c in 0..cols {
                    for r in 0..rows {
                        m.weight[[r, c]] = survive[offset + c * rows + r];
                    }
                }
                offset += rows * cols;
                m
            })
            .collect();
        net.set_mask(masks)?;
    }
    Ok(())
}

/// Redraws every unmasked parameter; masked positions stay zero.
pub fn reinitialize_survivors<T: Trainable, R: Rng + ?Sized>(model: &mut T, rng: &mut R) {
    for net in model.subnets_mut() {
        net.reinitialize(rng);
    }
}

/// Outcome of one early-stopped training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopped {
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    /// 1-based epoch at which training stopped.
    pub stop_epoch: usize,
    /// 1-based epoch of the returned snapshot.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Early-stopping rule: an epoch improves when its validation loss is at
/// least `delta` below the loss at the last improving epoch; training stops
/// after `patience` epochs without improvement or at `max_epochs`.
#[derive(Debug, Clone)]
pub struct StoppingRule {
    delta: f64,
    patience: usize,
    max_epochs: usize,
    reference: f64,
    last_improvement: usize,
}

impl StoppingRule {
    pub fn new(delta: f64, patience: usize, max_epochs: usize) -> Self {
        Self {
            delta,
            patience,
            max_epochs,
            reference: f64::INFINITY,
            last_improvement: 0,
        }
    }

    /// Records the loss of `epoch` (1-based); returns whether to stop.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss <= self.reference - self.delta {
            self.reference = loss;
            self.last_improvement = epoch;
        }
        epoch - self.last_improvement >= self.patience || epoch >= self.max_epochs
    }
}

/// Trains until the stopping rule fires and leaves `model` at the snapshot
/// with the lowest validation loss.
pub fn train_with_early_stopping<T: Trainable>(
    model: &mut T,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<EarlyStopped> {
    non_empty(train, "training")?;
    non_empty(val, "validation")?;
    let mut adam = AdamState::new(config.adam, &model.subnets());
    let mut rule = StoppingRule::new(config.early_stop_delta, config.early_stop_patience, config.max_epochs);
    let mut train_losses = Vec::new();
    let mut val_losses = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.clone());
    let mut epoch = 0;
    loop {
        epoch += 1;
        train_losses.push(run_epoch(model, &mut adam, train, config, epoch, rng)?);
        let v = model.loss(val, config.loss)?;
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: 0 });
        }
        val_losses.push(v);
        if v < best.0 {
            best = (v, epoch, model.clone());
        }
        if rule.observe(epoch, v) {
            break;
        }
    }
    let (best_val_loss, best_epoch, snapshot) = best;
    *model = snapshot;
    Ok(EarlyStopped {
        train_losses,
        val_losses,
        stop_epoch: epoch,
        best_epoch,
        best_val_loss,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaRun<T> {
    pub lambda: f64,
    pub kept_weights: usize,
    pub nonzero_count: usize,
    pub curve: EarlyStopped,
    pub network: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport<T> {
    pub warm_losses: Vec<f64>,
    pub runs: Vec<LambdaRun<T>>,
    /// Index into `runs` of the selected λ.
    pub selected: usize,
    pub wall_clock_secs: f64,
}

/// A row of the loss-curve table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveRow {
    pub phase: &'static str,
    pub lambda: Option<f64>,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

impl<T> TrainReport<T> {
    pub fn selected_run(&self) -> &LambdaRun<T> {
        &self.runs[self.selected]
    }

    pub fn selected_lambda(&self) -> f64 {
        self.selected_run().lambda
    }

    pub fn selected_network(&self) -> &T {
        &self.selected_run().network
    }

    pub fn curve_rows(&self) -> Vec<CurveRow> {
        let warm = self.warm_losses.iter().enumerate().map(|(i, &l)| CurveRow {
            phase: "warm",
            lambda: None,
            epoch: i + 1,
            train_loss: l,
            val_loss: None,
        });
        let sparse = self.runs.iter().flat_map(|r| {
            r.curve
                .train_losses
                .iter()
                .zip(&r.curve.val_losses)
                .enumerate()
                .map(move |(i, (&t, &v))| CurveRow {
                    phase: "sparse",
                    lambda: Some(r.lambda),
                    epoch: i + 1,
                    train_loss: t,
                    val_loss: Some(v),
                })
        });
        warm.chain(sparse).collect()
    }
}

/// Index of the smallest loss; ties go to the smallest λ.
pub fn select_lambda(lambdas: &[f64], losses: &[f64]) -> usize {
    (0..losses.len())
        .min_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(lambdas[a].total_cmp(&lambdas[b])))
        .expect("non-empty grid")
}

/// The full protocol: one warm phase, then for each λ an independent
/// prune → reinitialise → early-stopped retrain branch from the warm network.
pub fn lambda_sweep<T: Trainable>(init: T, train: &Dataset, val: &Dataset, config: &TrainConfig) -> Result<TrainReport<T>> {
    config.validate()?;
    non_empty(val, "validation")?;
    let start = Instant::now();
    let mut warm = init;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0));
    let warm_losses = warm_train(&mut warm, train, config, &mut rng)?;
    let runs = config
        .lambda_grid
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, i as u64 + 1));
            let mut model = warm.clone();
            magnitude_prune(&mut model, lambda)?;
            reinitialize_survivors(&mut model, &mut rng);
            let curve = train_with_early_stopping(&mut model, train, val, config, &mut rng)?;
            Ok(LambdaRun {
                lambda,
                kept_weights: kept_weights(lambda, model.weight_count()),
                nonzero_count: model.nonzero_count(),
                curve,
                network: model,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let lambdas: Vec<f64> = runs.iter().map(|r| r.lambda).collect();
    let losses: Vec<f64> = runs.iter().map(|r| r.curve.best_val_loss).collect();
    Ok(TrainReport {
        warm_losses,
        selected: select_lambda(&lambdas, &losses),
        runs,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

/// Rows of `data` scored by `model`, one output row per input row.
pub fn predict_dataset<T: Trainable>(model: &T, data: &Dataset) -> Result<Array2<f64>> {
    model.predict(data.z.view(), data.omega.view())
}

/// First output column as a vector; convenient for regression.
pub fn regression_predictions<T: Trainable>(model: &T, data: &Dataset) -> Result<Array1<f64>> {
    Ok(predict_dataset(model, data)?.column(0).to_owned())
}
