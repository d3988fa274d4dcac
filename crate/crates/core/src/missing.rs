//! Revelation vectors, missingness mechanisms and imputation.
//!
//! A revelation vector `ω ∈ {0,1}^d` marks coordinate `j` as observed when
//! `ω_j = 1`. Partially observed data are stored as a value matrix plus an
//! explicit observed flag per entry; missing values are kept as NaN and never
//! read.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `x ⊛ ω`: entry `j` is `Some(x_j)` when `ω_j = 1`, otherwise `None`.
pub fn mask(x: &[f64], omega: &[u8]) -> Result<Vec<Option<f64>>> {
    if x.len() != omega.len() {
        return Err(Error::Shape(format!(
            "{} covariates but {} revelation entries",
            x.len(),
            omega.len()
        )));
    }
    Ok(x.iter()
        .zip(omega)
        .map(|(&v, &w)| (w == 1).then_some(v))
        .collect())
}

/// An `n × d` matrix with per-entry missing flags.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialMatrix {
    values: Array2<f64>,
    observed: Array2<bool>,
    names: Option<Vec<String>>,
}

impl PartialMatrix {
    /// Missing entries of `values` are overwritten with NaN; observed ones
    /// must be finite.
    pub fn new(mut values: Array2<f64>, observed: Array2<bool>) -> Result<Self> {
        if values.dim() != observed.dim() {
            return Err(Error::Shape(format!(
                "values {:?} but flags {:?}",
                values.dim(),
                observed.dim()
            )));
        }
        for ((i, j), v) in values.indexed_iter_mut() {
            if observed[[i, j]] {
                if !v.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "observed entry ({i}, {j}) is not finite"
                    )));
                }
            } else {
                *v = f64::NAN;
            }
        }
        Ok(Self {
            values,
            observed,
            names: None,
        })
    }

    /// Applies `x ⊛ ω` row by row.
    pub fn from_masked(x: ArrayView2<f64>, omega: ArrayView2<u8>) -> Result<Self> {
        if omega.iter().any(|&w| w > 1) {
            return Err(Error::InvalidArgument("revelation entries must be 0 or 1".into()));
        }
        Self::new(x.to_owned(), omega.mapv(|w| w == 1))
    }

    pub fn from_rows(rows: &[Vec<Option<f64>>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("rows of unequal length".into()));
        }
        let values = Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j].unwrap_or(f64::NAN));
        let observed = Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j].is_some());
        Self::new(values, observed)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.ncols() {
            return Err(Error::Shape(format!(
                "{} names for {} columns",
                names.len(),
                self.ncols()
            )));
        }
        self.names = Some(names);
        Ok(self)
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.observed[[i, j]].then(|| self.values[[i, j]])
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[[i, j]]
    }

    pub fn row(&self, i: usize) -> Vec<Option<f64>> {
        (0..self.ncols()).map(|j| self.get(i, j)).collect()
    }

    /// Values with NaN at missing positions.
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn observed(&self) -> &Array2<bool> {
        &self.observed
    }

    /// The revelation matrix `Ω` with entries in {0, 1}.
    pub fn omega(&self) -> Array2<u8> {
        self.observed.mapv(u8::from)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            values: self.values.select(Axis(0), rows),
            observed: self.observed.select(Axis(0), rows),
            names: self.names.clone(),
        }
    }

    fn observed_mean(&self, j: usize) -> Result<f64> {
        let (sum, count) = self
            .values
            .column(j)
            .iter()
            .zip(self.observed.column(j))
            .filter(|(_, &o)| o)
            .fold((0.0, 0usize), |(s, c), (v, _)| (s + v, c + 1));
        if count == 0 {
            Err(Error::FullyMissingColumn { column: j })
        } else {
            Ok(sum / count as f64)
        }
    }
}

/// Per-coordinate logistic observation law: `P(ω_j = 1 | x_j) =
/// 1/(e^{slope·x_j + offset} + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogisticRule {
    pub coord: usize,
    pub slope: f64,
    pub offset: f64,
}

/// Law of `Ω` given `X`. Coordinates not governed by a threshold or logistic
/// rule are observed independently with probability `observe[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MissingnessMechanism {
    Mcar {
        observe: Vec<f64>,
    },
    /// `ω_j = 1{x_j ≤ τ_j}` on the listed coordinates.
    ThresholdMnar {
        observe: Vec<f64>,
        thresholds: Vec<(usize, f64)>,
    },
    LogisticMnar {
        observe: Vec<f64>,
        rules: Vec<LogisticRule>,
    },
}

impl MissingnessMechanism {
    /// MCAR with the same observation probability on every coordinate.
    pub fn mcar(d: usize, q: f64) -> Result<Self> {
        Self::Mcar { observe: vec![q; d] }.validated()
    }

    /// Threshold rule on `coords` with common `tau`, MCAR(`q`) elsewhere.
    pub fn threshold(d: usize, q: f64, coords: &[usize], tau: f64) -> Result<Self> {
        Self::ThresholdMnar {
            observe: vec![q; d],
            thresholds: coords.iter().map(|&j| (j, tau)).collect(),
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::InvalidArgument("mechanism has no coordinates".into()));
        }
        if self.observe().iter().any(|q| !(0.0..=1.0).contains(q)) {
            return Err(Error::InvalidArgument("observation probabilities must lie in [0, 1]".into()));
        }
        let coords: Vec<usize> = match &self {
            Self::Mcar { .. } => Vec::new(),
            Self::ThresholdMnar { thresholds, .. } => {
                if thresholds.iter().any(|(_, t)| t.is_nan()) {
                    return Err(Error::InvalidArgument("threshold is NaN".into()));
                }
                thresholds.iter().map(|&(j, _)| j).collect()
            }
            Self::LogisticMnar { rules, .. } => {
                if rules.iter().any(|r| !r.slope.is_finite() || !r.offset.is_finite()) {
                    return Err(Error::InvalidArgument("logistic rule is not finite".into()));
                }
                rules.iter().map(|r| r.coord).collect()
            }
        };
        let mut seen = vec![false; d];
        for j in coords {
            if j >= d || std::mem::replace(&mut seen[j], true) {
                return Err(Error::InvalidArgument(format!(
                    "rule coordinate {j} is out of range or repeated"
                )));
            }
        }
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.observe().len()
    }

    fn observe(&self) -> &[f64] {
        match self {
            Self::Mcar { observe } | Self::ThresholdMnar { observe, .. } | Self::LogisticMnar { observe, .. } => {
                observe
            }
        }
    }

    /// `P(ω_j = 1 | x_j)`.
    pub fn observe_probability(&self, j: usize, x_j: f64) -> f64 {
        match self {
            Self::Mcar { observe } => observe[j],
            Self::ThresholdMnar { observe, thresholds } => match thresholds.iter().find(|(c, _)| *c == j) {
                Some(&(_, tau)) => f64::from(u8::from(x_j <= tau)),
                None => observe[j],
            },
            Self::LogisticMnar { observe, rules } => match rules.iter().find(|r| r.coord == j) {
                Some(r) => 1.0 / ((r.slope * x_j + r.offset).exp() + 1.0),
                None => observe[j],
            },
        }
    }

    /// Whether `ω_j` is independent of `x_j`.
    pub fn is_mcar_at(&self, j: usize) -> bool {
        match self {
            Self::Mcar { .. } => true,
            Self::ThresholdMnar { thresholds, .. } => thresholds.iter().all(|(c, _)| *c != j),
            Self::LogisticMnar { rules, .. } => rules.iter().all(|r| r.coord != j),
        }
    }

    /// Draws `ω` given `x`. Deterministic rules consume no randomness.
    pub fn draw_mask<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<Vec<u8>> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "mechanism has {} coordinates, covariate has {}",
                self.dim(),
                x.len()
            )));
        }
        Ok(x.iter()
            .enumerate()
            .map(|(j, &v)| {
                let p = self.observe_probability(j, v);
                let hit = if p >= 1.0 {
                    true
                } else if p <= 0.0 {
                    false
                } else {
                    rng.random::<f64>() < p
                };
                u8::from(hit)
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ImputerKind {
    Zero,
    ColumnMean,
    /// Chained ridge regressions, one column at a time, in natural order.
    Iterative { rounds: usize, ridge: f64 },
}

impl ImputerKind {
    pub const DEFAULT_ITERATIVE: Self = Self::Iterative { rounds: 5, ridge: 1e-3 };
}

/// `z_j ≈ intercept + Σ_{k≠j} weights[k]·z_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnModel {
    pub intercept: f64,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case", deny_unknown_fields)]
enum Fitted {
    Zero,
    ColumnMean {
        means: Vec<f64>,
    },
    /// `models[r][j]` refreshes column `j` in round `r`.
    Iterative {
        means: Vec<f64>,
        models: Vec<Vec<ColumnModel>>,
    },
}

/// An imputation map `ℝ_⋆^d → ℝ^d`. Observed entries always pass through
/// unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Imputer {
    kind: ImputerKind,
    fitted: Option<Fitted>,
}

impl Imputer {
    pub fn new(kind: ImputerKind) -> Result<Self> {
        if let ImputerKind::Iterative { rounds, ridge } = kind {
            if rounds == 0 || !(ridge >= 0.0 && ridge.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "iterative imputer needs rounds ≥ 1 and ridge ≥ 0, got ({rounds}, {ridge})"
                )));
            }
        }
        let fitted = matches!(kind, ImputerKind::Zero).then_some(Fitted::Zero);
        Ok(Self { kind, fitted })
    }

    pub fn fit(kind: ImputerKind, data: &PartialMatrix) -> Result<Self> {
        let mut imputer = Self::new(kind)?;
        let fitted = match kind {
            ImputerKind::Zero => Fitted::Zero,
            ImputerKind::ColumnMean => Fitted::ColumnMean {
                means: column_means(data)?,
            },
            ImputerKind::Iterative { rounds, ridge } => {
                let means = column_means(data)?;
                let mut current = fill(data, &means);
                let mut models = Vec::with_capacity(rounds);
                for _ in 0..rounds {
                    let mut round = Vec::with_capacity(data.ncols());
                    for j in 0..data.ncols() {
                        let model = fit_column(&current, data.observed().column(j), j, ridge)?;
                        refresh(&mut current, data.observed().column(j), j, &model);
                        round.push(model);
                    }
                    models.push(round);
                }
                Fitted::Iterative { means, models }
            }
        };
        imputer.fitted = Some(fitted);
        Ok(imputer)
    }

    pub fn kind(&self) -> ImputerKind {
        self.kind
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted.is_some()
    }

    /// Fitted column means; zero imputation reports `None`.
    pub fn means(&self) -> Option<&[f64]> {
        match self.fitted.as_ref()? {
            Fitted::Zero => None,
            Fitted::ColumnMean { means } | Fitted::Iterative { means, .. } => Some(means),
        }
    }

    pub fn transform(&self, data: &PartialMatrix) -> Result<Array2<f64>> {
        let fitted = self.fitted.as_ref().ok_or(Error::Unfitted)?;
        let d = data.ncols();
        let check = |len: usize| {
            if len == d {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    layer: 0,
                    expected: len,
                    got: d,
                })
            }
        };
        match fitted {
            Fitted::Zero => Ok(fill(data, &vec![0.0; d])),
            Fitted::ColumnMean { means } => {
                check(means.len())?;
                Ok(fill(data, means))
            }
            Fitted::Iterative { means, models } => {
                check(means.len())?;
                let mut current = fill(data, means);
                for round in models {
                    for (j, model) in round.iter().enumerate() {
                        refresh(&mut current, data.observed().column(j), j, model);
                    }
                }
                Ok(current)
            }
        }
    }

    /// Imputes a single row `x ⊛ ω`.
    pub fn impute(&self, row: &[Option<f64>]) -> Result<Vec<f64>> {
        let data = PartialMatrix::from_rows(&[row.to_vec()])?;
        Ok(self.transform(&data)?.row(0).to_vec())
    }
}

fn column_means(data: &PartialMatrix) -> Result<Vec<f64>> {
    (0..data.ncols()).map(|j| data.observed_mean(j)).collect()
}

fn fill(data: &PartialMatrix, with: &[f64]) -> Array2<f64> {
    let mut out = data.values().clone();
    for (((_, j), v), &o) in out.indexed_iter_mut().zip(data.observed()) {
        if !o {
            *v = with[j];
        }
    }
    out
}

fn refresh(current: &mut Array2<f64>, observed: ArrayView1<bool>, j: usize, model: &ColumnModel) {
    let w = ArrayView1::from(&model.weights[..]);
    for (i, &o) in observed.iter().enumerate() {
        if !o {
            current[[i, j]] = model.intercept + current.row(i).dot(&w);
        }
    }
}

/// Ridge regression of the observed entries of column `j` on the other
/// columns, with an unpenalised intercept.
fn fit_column(current: &Array2<f64>, observed: ArrayView1<bool>, j: usize, ridge: f64) -> Result<ColumnModel> {
    let d = current.ncols();
    let rows: Vec<usize> = observed.iter().enumerate().filter(|(_, &o)| o).map(|(i, _)| i).collect();
    let others: Vec<usize> = (0..d).filter(|&k| k != j).collect();
    let y = current.column(j).select(Axis(0), &rows);
    let y_mean = y.mean().unwrap_or(0.0);
    let mut weights = vec![0.0; d];
    if others.is_empty() {
        return Ok(ColumnModel {
            intercept: y_mean,
            weights,
        });
    }
    let x = current.select(Axis(0), &rows).select(Axis(1), &others);
    let x_mean: Array1<f64> = x.mean_axis(Axis(0)).expect("at least one observed row");
    let xc = &x - &x_mean;
    let yc = &y - y_mean;
    let gram = xc.t().dot(&xc);
    let rhs = xc.t().dot(&yc);
    let p = others.len();
    let mut a = DMatrix::from_fn(p, p, |r, c| gram[[r, c]]);
    for k in 0..p {
        a[(k, k)] += ridge;
    }
    let b = DVector::from_fn(p, |r, _| rhs[r]);
    let beta = a
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("normal equations for column {j}")))?
        .solve(&b);
    let mut intercept = y_mean;
    for (pos, &k) in others.iter().enumerate() {
        weights[k] = beta[pos];
        intercept -= beta[pos] * x_mean[pos];
    }
    Ok(ColumnModel { intercept, weights })
}
