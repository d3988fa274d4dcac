//! One seeded repetition of the simulation protocol: draw or shuffle the
//! data, split, impute, train the requested estimators and score them on the
//! test split.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{BayesOracle, SimData, SimModel, MIN_MC_SAMPLES};
use crate::eval::MetricsRecord;
use crate::missing::{Imputer, ImputerKind, PartialMatrix};
use crate::nn::Mlp;
use crate::penn::{standard_nn_architecture, Penn, PennArchitecture, Task};
use crate::seed::derive_seed;
use crate::train::{lambda_sweep, predict_dataset, Dataset, TrainConfig, TrainReport, Trainable};
use crate::{Error, Result};

/// Which rows the imputer is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputeScope {
    AllSplits,
    TrainOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Penn,
    Nn,
}

impl Estimator {
    pub fn label(self) -> &'static str {
        match self {
            Estimator::Penn => "penn",
            Estimator::Nn => "nn",
        }
    }
}

/// Where the rows of a repetition come from. Tables carry `NaN` (or any
/// value) at entries with `ω = 0`; a table has no Bayes oracle.
#[derive(Debug, Clone)]
pub enum DataSource {
    Simulated(SimModel),
    Table(SimData),
}

impl DataSource {
    pub fn dim(&self) -> usize {
        match self {
            DataSource::Simulated(m) => m.dim,
            DataSource::Table(t) => t.x.ncols(),
        }
    }
}

/// Settings shared by every repetition. The training loss always follows
/// `task`, whatever `train.loss` says.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub task: Task,
    pub imputer: ImputerKind,
    pub impute_scope: ImputeScope,
    pub width: usize,
    pub estimators: Vec<Estimator>,
    pub train: TrainConfig,
    pub oracle_samples: usize,
}

impl ExperimentConfig {
    pub fn new(n_train: usize, n_val: usize, n_test: usize, imputer: ImputerKind) -> Self {
        Self {
            n_train,
            n_val,
            n_test,
            task: Task::Regression,
            imputer,
            impute_scope: ImputeScope::AllSplits,
            width: 70,
            estimators: vec![Estimator::Penn, Estimator::Nn],
            train: TrainConfig::default(),
            oracle_samples: MIN_MC_SAMPLES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(Error::InvalidArgument("every split needs at least one row".into()));
        }
        if self.width == 0 {
            return Err(Error::InvalidArgument("width must be positive".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidArgument("no estimators requested".into()));
        }
        if let Task::Classification { classes } = self.task {
            if classes < 2 {
                return Err(Error::InvalidArgument("classification needs at least two classes".into()));
            }
        }
        self.train.validate()
    }

    fn rows(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }
}

/// A trained estimator with its test-split scores and metrics.
#[derive(Debug, Clone)]
pub struct Fit<T> {
    pub report: TrainReport<T>,
    pub scores: Array2<f64>,
    pub record: MetricsRecord,
}

impl<T> Fit<T> {
    /// First output column; the prediction in regression.
    pub fn predictions(&self) -> Array1<f64> {
        self.scores.column(0).to_owned()
    }
}

#[derive(Debug, Clone)]
pub struct Repetition {
    pub seed: u64,
    pub test: SimData,
    /// Imputed test covariates.
    pub z_test: Array2<f64>,
    pub bayes: Option<Array1<f64>>,
    pub penn: Option<Fit<Penn>>,
    pub nn: Option<Fit<Mlp>>,
}

impl Repetition {
    pub fn record(&self, estimator: Estimator) -> Option<&MetricsRecord> {
        match estimator {
            Estimator::Penn => self.penn.as_ref().map(|f| &f.record),
            Estimator::Nn => self.nn.as_ref().map(|f| &f.record),
        }
    }
}

fn draw(source: &DataSource, config: &ExperimentConfig, seed: u64) -> Result<SimData> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 100));
    match source {
        DataSource::Simulated(model) => {
            if config.task != Task::Regression {
                return Err(Error::InvalidArgument("simulated models are regression problems".into()));
            }
            model.sample(config.rows(), &mut rng)
        }
        DataSource::Table(table) => {
            if table.len() < config.rows() {
                return Err(Error::InvalidArgument(format!(
                    "splits need {} rows but the table has {}",
                    config.rows(),
                    table.len()
                )));
            }
            let mut order: Vec<usize> = (0..table.len()).collect();
            order.shuffle(&mut rng);
            order.truncate(config.rows());
            Ok(table.select(&order))
        }
    }
}

struct Splits<'a> {
    train: &'a Dataset,
    val: &'a Dataset,
    test: &'a Dataset,
}

fn fit<T: Trainable>(
    init: T,
    splits: &Splits,
    config: &TrainConfig,
    task: Task,
    label: &str,
    bayes: Option<&Array1<f64>>,
) -> Result<Fit<T>> {
    let test = splits.test;
    let report = lambda_sweep(init, splits.train, splits.val, config)?;
    let scores = predict_dataset(report.selected_network(), test)?;
    let record = match task {
        Task::Regression => {
            MetricsRecord::regression(label, scores.column(0), test.y.view(), bayes.map(|b| b.view()))?
        }
        Task::Classification { .. } => MetricsRecord::classification(label, scores.view(), test.y.view())?,
    };
    Ok(Fit { report, scores, record })
}

pub fn run_repetition(config: &ExperimentConfig, source: &DataSource, seed: u64) -> Result<Repetition> {
    config.validate()?;
    let all = draw(source, config, seed)?;
    let (nt, nv) = (config.n_train, config.n_val);
    let rows = |a: usize, b: usize| (a..b).collect::<Vec<_>>();
    let (train_rows, val_rows, test_rows) = (rows(0, nt), rows(nt, nt + nv), rows(nt + nv, config.rows()));

    let partial = all.partial()?;
    let fit_on: PartialMatrix = match config.impute_scope {
        ImputeScope::AllSplits => partial.clone(),
        ImputeScope::TrainOnly => partial.select_rows(&train_rows),
    };
    let z = Imputer::fit(config.imputer, &fit_on)?.transform(&partial)?;
    let split = |r: &[usize]| -> Result<(SimData, Dataset)> {
        let part = all.select(r);
        let ds = Dataset::new(z.select(Axis(0), r), part.omega.mapv(f64::from), part.y.clone())?;
        Ok((part, ds))
    };
    let (_, train) = split(&train_rows)?;
    let (_, val) = split(&val_rows)?;
    let (test, test_ds) = split(&test_rows)?;

    let bayes = match source {
        DataSource::Simulated(model) => {
            let oracle = BayesOracle::preferred(model.clone(), config.oracle_samples, derive_seed(seed, 400))?;
            Some(oracle.values(test_ds.z.view(), test.omega.view())?)
        }
        DataSource::Table(_) => None,
    };

    let d = source.dim();
    let train_config = |stream: u64| TrainConfig {
        seed: derive_seed(seed, stream),
        loss: config.task.loss(),
        ..config.train.clone()
    };
    let splits = Splits { train: &train, val: &val, test: &test_ds };
    let mut penn = None;
    let mut nn = None;
    for &estimator in &config.estimators {
        match estimator {
            Estimator::Penn if penn.is_none() => {
                let arch = PennArchitecture::standard(d, config.task, config.width)?;
                let init = Penn::init(&arch, &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 200)));
                penn = Some(fit(init, &splits, &train_config(300), config.task, "penn", bayes.as_ref())?);
            }
            Estimator::Nn if nn.is_none() => {
                let arch = standard_nn_architecture(d, config.task, config.width)?;
                let init = Mlp::init(arch, &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 201)));
                nn = Some(fit(init, &splits, &train_config(301), config.task, "nn", bayes.as_ref())?);
            }
            _ => {}
        }
    }
    Ok(Repetition {
        seed,
        z_test: test_ds.z,
        test,
        bayes,
        penn,
        nn,
    })
}
