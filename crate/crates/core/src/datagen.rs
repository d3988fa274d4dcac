//! Simulated regression models with missing covariates and their Bayes
//! regression functions.
//!
//! The Bayes regression function `f*(z, ω) = E(Y | Z = z, Ω = ω)` depends on
//! `z` only through its observed entries: any deterministic imputation that
//! leaves observed entries alone generates the same σ-algebra as `X ⊛ Ω`.
//! The oracles below therefore read `z_j` only where `ω_j = 1`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::missing::{MissingnessMechanism, PartialMatrix};
use crate::seed::splitmix;
use crate::{Error, Result};

/// Minimum accepted draws per Monte-Carlo query.
pub const MIN_MC_SAMPLES: usize = 10_000;
/// Proposal cap per Monte-Carlo query.
pub const MAX_PROPOSALS: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// `Y = 3X₁² + ε`, `ε ~ N(0, 0.1²)`, MCAR(0.7).
    Example1,
    /// `Y = exp(X₁ + X₂) + 4X₃² + ε`, MCAR(0.7).
    Model1,
    /// `Y = 2 sin(2X₁ + 2X₂) + 2X₃ + ε`, `Ω_j = 1{X_j ≤ 0.4}` for
    /// `j ∈ {2, 3}`, MCAR(0.7) elsewhere.
    Model2,
    /// Model 1 with `X₁ = √(X₄+1) − 0.7 + U₁` and `X₃ = 0.7X₅ + U₃`,
    /// `U₁, U₃ ~ U[−0.3, 0.3]`.
    Model3,
    /// Model 2 with the dependence of Model 3.
    Model4,
}

impl ModelKind {
    pub fn min_dim(self) -> usize {
        match self {
            Self::Example1 => 1,
            Self::Model1 | Self::Model2 => 3,
            Self::Model3 | Self::Model4 => 5,
        }
    }

    fn correlated(self) -> bool {
        matches!(self, Self::Model3 | Self::Model4)
    }

    /// Coordinates that influence the regression function, directly or
    /// through the correlation structure.
    fn relevant(self) -> &'static [usize] {
        match self {
            Self::Example1 => &[0],
            Self::Model1 | Self::Model2 => &[0, 1, 2],
            Self::Model3 | Self::Model4 => &[0, 1, 2, 3, 4],
        }
    }
}

/// A data-generating law for `(X, Ω, Y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimModel {
    pub kind: ModelKind,
    pub dim: usize,
    pub noise_sd: f64,
    pub mechanism: MissingnessMechanism,
}

/// Draws from a [`SimModel`]: covariates, revelation vectors and responses.
#[derive(Debug, Clone, PartialEq)]
pub struct SimData {
    pub x: Array2<f64>,
    pub omega: Array2<u8>,
    pub y: Array1<f64>,
}

impl SimData {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// `X ⊛ Ω`.
    pub fn partial(&self) -> Result<PartialMatrix> {
        PartialMatrix::from_masked(self.x.view(), self.omega.view())
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select(Axis(0), rows),
            omega: self.omega.select(Axis(0), rows),
            y: self.y.select(Axis(0), rows),
        }
    }
}

impl SimModel {
    /// The model with its standard noise level and missingness mechanism.
    pub fn new(kind: ModelKind, dim: usize) -> Result<Self> {
        let (noise_sd, mechanism) = match kind {
            ModelKind::Example1 => (0.1, MissingnessMechanism::mcar(dim, 0.7)),
            ModelKind::Model1 | ModelKind::Model3 => (0.5, MissingnessMechanism::mcar(dim, 0.7)),
            ModelKind::Model2 | ModelKind::Model4 => (0.5, MissingnessMechanism::threshold(dim, 0.7, &[1, 2], 0.4)),
        };
        let mechanism = if dim >= kind.min_dim() {
            mechanism?
        } else {
            return Err(too_small(kind, dim));
        };
        Self {
            kind,
            dim,
            noise_sd,
            mechanism,
        }
        .validated()
    }

    pub fn with_mechanism(mut self, mechanism: MissingnessMechanism) -> Result<Self> {
        self.mechanism = mechanism;
        self.validated()
    }

    pub fn validated(self) -> Result<Self> {
        if self.dim < self.kind.min_dim() {
            return Err(too_small(self.kind, self.dim));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise sd {} is invalid", self.noise_sd)));
        }
        let mechanism = self.mechanism.validated()?;
        if mechanism.dim() != self.dim {
            return Err(Error::Shape(format!(
                "mechanism has {} coordinates, model has {}",
                mechanism.dim(),
                self.dim
            )));
        }
        Ok(Self { mechanism, ..self })
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_sd * self.noise_sd
    }

    /// The regression function `g(x) = E(Y | X = x)`.
    pub fn regression(&self, x: &[f64]) -> f64 {
        regression(self.kind, x)
    }

    fn sample_covariates<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut x: Vec<f64> = (0..self.dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
        if self.kind.correlated() {
            x[0] = (x[3] + 1.0).sqrt() - 0.7 + rng.random_range(-0.3..=0.3);
            x[2] = 0.7 * x[4] + rng.random_range(-0.3..=0.3);
        }
        x
    }

    /// `n` i.i.d. draws of `(X, Ω, Y)`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<SimData> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample size must be positive".into()));
        }
        let noise = Normal::new(0.0, self.noise_sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut x = Array2::zeros((n, self.dim));
        let mut omega = Array2::zeros((n, self.dim));
        let mut y = Array1::zeros(n);
        for i in 0..n {
            let xi = self.sample_covariates(rng);
            let wi = self.mechanism.draw_mask(&xi, rng)?;
            y[i] = self.regression(&xi) + noise.sample(rng);
            x.row_mut(i).assign(&ArrayView1::from(&xi[..]));
            omega.row_mut(i).assign(&ArrayView1::from(&wi[..]));
        }
        Ok(SimData { x, omega, y })
    }
}

fn too_small(kind: ModelKind, dim: usize) -> Error {
    Error::InvalidArgument(format!(
        "{kind:?} needs at least {} coordinates, got {dim}",
        kind.min_dim()
    ))
}

fn regression(kind: ModelKind, x: &[f64]) -> f64 {
    match kind {
        ModelKind::Example1 => 3.0 * x[0] * x[0],
        ModelKind::Model1 | ModelKind::Model3 => (x[0] + x[1]).exp() + 4.0 * x[2] * x[2],
        ModelKind::Model2 | ModelKind::Model4 => 2.0 * (2.0 * x[0] + 2.0 * x[1]).sin() + 2.0 * x[2],
    }
}

/// Evaluates `f*(z, ω)` for a simulated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BayesOracle {
    /// Analytic conditional expectation; available when the relevant
    /// covariates are independent and each missing one has a uniform
    /// conditional law.
    ClosedForm { model: SimModel },
    /// Rejection sampling of the missing covariates from their law given the
    /// observed ones and the pattern.
    MonteCarlo { model: SimModel, samples: usize, seed: u64 },
}

impl BayesOracle {
    pub fn closed_form(model: SimModel) -> Result<Self> {
        let oracle = Self::ClosedForm { model };
        if oracle.model().kind.correlated() {
            return Err(Error::NoClosedForm(format!("{:?}", oracle.model().kind)));
        }
        Ok(oracle)
    }

    pub fn monte_carlo(model: SimModel, samples: usize, seed: u64) -> Result<Self> {
        if samples < MIN_MC_SAMPLES {
            return Err(Error::InvalidArgument(format!(
                "Monte-Carlo oracle needs at least {MIN_MC_SAMPLES} samples, got {samples}"
            )));
        }
        Ok(Self::MonteCarlo { model, samples, seed })
    }

    /// Closed form where one exists, Monte Carlo otherwise.
    pub fn preferred(model: SimModel, samples: usize, seed: u64) -> Result<Self> {
        match Self::closed_form(model.clone()) {
            Ok(oracle) if closed_form_supported(&oracle).is_ok() => Ok(oracle),
            _ => Self::monte_carlo(model, samples, seed),
        }
    }

    pub fn model(&self) -> &SimModel {
        match self {
            Self::ClosedForm { model } | Self::MonteCarlo { model, .. } => model,
        }
    }

    pub fn value(&self, z: &[f64], omega: &[u8]) -> Result<f64> {
        self.value_with_se(z, omega).map(|(v, _)| v)
    }

    /// `f*(z, ω)` and its Monte-Carlo standard error (0 for closed forms).
    pub fn value_with_se(&self, z: &[f64], omega: &[u8]) -> Result<(f64, f64)> {
        let model = self.model();
        if z.len() != model.dim || omega.len() != model.dim {
            return Err(Error::Shape(format!(
                "query has lengths ({}, {}), model dimension is {}",
                z.len(),
                omega.len(),
                model.dim
            )));
        }
        if omega.iter().any(|&w| w > 1) {
            return Err(Error::InvalidArgument("revelation entries must be 0 or 1".into()));
        }
        match self {
            Self::ClosedForm { model } => closed_form(model, z, omega).map(|v| (v, 0.0)),
            Self::MonteCarlo { model, samples, seed } => monte_carlo(model, *samples, *seed, z, omega),
        }
    }

    /// `f*` on every row of `(z, Ω)`.
    pub fn values(&self, z: ArrayView2<f64>, omega: ArrayView2<u8>) -> Result<Array1<f64>> {
        if z.dim() != omega.dim() {
            return Err(Error::Shape("covariate and revelation matrices differ in shape".into()));
        }
        z.rows()
            .into_iter()
            .zip(omega.rows())
            .map(|(zr, wr)| self.value(&zr.to_vec(), &wr.to_vec()))
            .collect()
    }

    /// Monte-Carlo estimate of `R(f*) = E(f*(Z, Ω) − Y)²` over `n_mc` fresh
    /// draws, with its standard error.
    pub fn bayes_risk<R: Rng + ?Sized>(&self, n_mc: usize, rng: &mut R) -> Result<(f64, f64)> {
        if n_mc < MIN_MC_SAMPLES {
            return Err(Error::InvalidArgument(format!(
                "Bayes risk needs at least {MIN_MC_SAMPLES} draws, got {n_mc}"
            )));
        }
        let data = self.model().sample(n_mc, rng)?;
        let f = self.values(data.x.view(), data.omega.view())?;
        let losses: Vec<f64> = f.iter().zip(&data.y).map(|(a, b)| (a - b).powi(2)).collect();
        Ok(mean_and_se(&losses))
    }
}

pub(crate) fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Support `(lo, hi)` of `X_j` given `ω_j = 0` under a uniform `U[−1, 1]`
/// marginal.
fn missing_support(mechanism: &MissingnessMechanism, j: usize) -> Result<(f64, f64)> {
    if mechanism.is_mcar_at(j) {
        if mechanism.observe_probability(j, 0.0) >= 1.0 {
            return Err(Error::InvalidArgument(format!("coordinate {j} is never missing")));
        }
        return Ok((-1.0, 1.0));
    }
    match mechanism {
        MissingnessMechanism::ThresholdMnar { thresholds, .. } => {
            let tau = thresholds
                .iter()
                .find(|(c, _)| *c == j)
                .map(|&(_, t)| t)
                .expect("non-MCAR coordinate has a threshold");
            if tau >= 1.0 {
                Err(Error::InvalidArgument(format!("coordinate {j} is never missing")))
            } else {
                Ok((tau.max(-1.0), 1.0))
            }
        }
        _ => Err(Error::NoClosedForm(format!("logistic missingness on coordinate {j}"))),
    }
}

fn closed_form_supported(oracle: &BayesOracle) -> Result<()> {
    let model = oracle.model();
    for &j in model.kind.relevant() {
        if !model.mechanism.is_mcar_at(j) && !matches!(model.mechanism, MissingnessMechanism::ThresholdMnar { .. }) {
            return Err(Error::NoClosedForm(format!("logistic missingness on coordinate {j}")));
        }
    }
    Ok(())
}

/// Moments of `U(lo, hi)` or of a point mass when observed.
enum Coord {
    Point(f64),
    Uniform(f64, f64),
}

impl Coord {
    fn mean(&self) -> f64 {
        match *self {
            Self::Point(z) => z,
            Self::Uniform(lo, hi) => 0.5 * (lo + hi),
        }
    }

    fn second_moment(&self) -> f64 {
        match *self {
            Self::Point(z) => z * z,
            Self::Uniform(lo, hi) => (lo * lo + lo * hi + hi * hi) / 3.0,
        }
    }

    fn mean_exp(&self) -> f64 {
        match *self {
            Self::Point(z) => z.exp(),
            Self::Uniform(lo, hi) => (hi.exp() - lo.exp()) / (hi - lo),
        }
    }

    /// `(E sin 2X, E cos 2X)`.
    fn mean_sin_cos_2x(&self) -> (f64, f64) {
        match *self {
            Self::Point(z) => ((2.0 * z).sin(), (2.0 * z).cos()),
            Self::Uniform(lo, hi) => {
                let w = 2.0 * (hi - lo);
                (
                    ((2.0 * lo).cos() - (2.0 * hi).cos()) / w,
                    ((2.0 * hi).sin() - (2.0 * lo).sin()) / w,
                )
            }
        }
    }
}

fn closed_form(model: &SimModel, z: &[f64], omega: &[u8]) -> Result<f64> {
    if model.kind.correlated() {
        return Err(Error::NoClosedForm(format!("{:?}", model.kind)));
    }
    let coord = |j: usize| -> Result<Coord> {
        if omega[j] == 1 {
            Ok(Coord::Point(z[j]))
        } else {
            missing_support(&model.mechanism, j).map(|(lo, hi)| Coord::Uniform(lo, hi))
        }
    };
    Ok(match model.kind {
        ModelKind::Example1 => 3.0 * coord(0)?.second_moment(),
        ModelKind::Model1 => coord(0)?.mean_exp() * coord(1)?.mean_exp() + 4.0 * coord(2)?.second_moment(),
        ModelKind::Model2 => {
            let (s0, c0) = coord(0)?.mean_sin_cos_2x();
            let (s1, c1) = coord(1)?.mean_sin_cos_2x();
            2.0 * (s0 * c1 + c0 * s1) + 2.0 * coord(2)?.mean()
        }
        ModelKind::Model3 | ModelKind::Model4 => unreachable!("correlated models rejected above"),
    })
}

fn query_seed(seed: u64, z: &[f64], omega: &[u8]) -> u64 {
    let mut h = splitmix(seed);
    for (&v, &w) in z.iter().zip(omega) {
        let bits = if w == 1 { v.to_bits() } else { 0 };
        h = splitmix(h ^ bits);
        h = splitmix(h ^ u64::from(w));
    }
    h
}

fn monte_carlo(model: &SimModel, samples: usize, seed: u64, z: &[f64], omega: &[u8]) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(query_seed(seed, z, omega));
    let relevant = model.kind.relevant();
    let mut x = vec![0.0; model.dim];
    let mut accepted = Vec::with_capacity(samples);
    let mut proposals = 0u64;
    let dependence_window = 0.3;
    if model.kind.correlated() {
        for (child, parent, centre) in [(0, 3, (z[3] + 1.0).sqrt() - 0.7), (2, 4, 0.7 * z[4])] {
            if omega[child] == 1 && omega[parent] == 1 && (z[child] - centre).abs() > dependence_window {
                return Err(Error::InvalidArgument(format!(
                    "observed coordinates {child} and {parent} are outside the support of the model"
                )));
            }
        }
    }
    if relevant.iter().all(|&j| omega[j] == 1) {
        for &j in relevant {
            x[j] = z[j];
        }
        return Ok((regression(model.kind, &x), 0.0));
    }
    while accepted.len() < samples {
        if proposals >= MAX_PROPOSALS {
            return Err(Error::RejectionExhausted {
                proposals,
                accepted: accepted.len(),
                needed: samples,
            });
        }
        proposals += 1;
        for &j in relevant {
            x[j] = if omega[j] == 1 {
                z[j]
            } else {
                rng.random_range(-1.0..=1.0)
            };
        }
        if model.kind.correlated() {
            // X₁ and X₃ are shifted parents plus uniform noise; an observed
            // child constrains its parent to a window of half-width 0.3.
            let centres = [(0, (x[3] + 1.0).sqrt() - 0.7), (2, 0.7 * x[4])];
            let mut consistent = true;
            for (child, centre) in centres {
                if omega[child] == 1 {
                    consistent &= (z[child] - centre).abs() <= dependence_window;
                } else {
                    x[child] = centre + rng.random_range(-dependence_window..=dependence_window);
                }
            }
            if !consistent {
                continue;
            }
        }
        let mut keep = true;
        for &j in relevant {
            if omega[j] == 0 {
                let p_missing = 1.0 - model.mechanism.observe_probability(j, x[j]);
                keep &= p_missing >= 1.0 || (p_missing > 0.0 && rng.random::<f64>() < p_missing);
            }
        }
        if keep {
            accepted.push(regression(model.kind, &x));
        }
    }
    Ok(mean_and_se(&accepted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sinh1() -> f64 {
        1f64.sinh()
    }

    #[test]
    fn example_one_closed_form() {
        let oracle = BayesOracle::closed_form(SimModel::new(ModelKind::Example1, 2).unwrap()).unwrap();
        assert_abs_diff_eq!(oracle.value(&[0.0, 0.3], &[0, 1]).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(oracle.value(&[0.5, 0.0], &[1, 0]).unwrap(), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn model_one_closed_form() {
        let oracle = BayesOracle::closed_form(SimModel::new(ModelKind::Model1, 4).unwrap()).unwrap();
        let (a, c) = (0.3, -0.6);
        let v = oracle.value(&[a, 0.0, c, 0.0], &[1, 0, 1, 1]).unwrap();
        assert_abs_diff_eq!(v, a.exp() * sinh1() + 4.0 * c * c, epsilon = 1e-12);
        let all_missing = oracle.value(&[0.0; 4], &[0; 4]).unwrap();
        assert_abs_diff_eq!(all_missing, sinh1() * sinh1() + 4.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn model_two_missing_third_coordinate() {
        let oracle = BayesOracle::closed_form(SimModel::new(ModelKind::Model2, 3).unwrap()).unwrap();
        let v = oracle.value(&[0.1, 0.2, 0.0], &[1, 1, 0]).unwrap();
        assert_abs_diff_eq!(v, 2.0 * (0.6f64).sin() + 1.4, epsilon = 1e-12);
    }

    #[test]
    fn correlated_models_have_no_closed_form() {
        let model = SimModel::new(ModelKind::Model3, 5).unwrap();
        assert!(matches!(BayesOracle::closed_form(model.clone()), Err(Error::NoClosedForm(_))));
        assert!(matches!(
            BayesOracle::preferred(model, MIN_MC_SAMPLES, 0).unwrap(),
            BayesOracle::MonteCarlo { .. }
        ));
    }

    #[test]
    fn dimension_constraints() {
        assert!(SimModel::new(ModelKind::Model1, 2).is_err());
        assert!(SimModel::new(ModelKind::Model4, 4).is_err());
        assert!(SimModel::new(ModelKind::Example1, 1).is_ok());
        assert!(BayesOracle::monte_carlo(SimModel::new(ModelKind::Example1, 1).unwrap(), 100, 0).is_err());
    }

    #[test]
    fn monte_carlo_is_deterministic() {
        let model = SimModel::new(ModelKind::Model4, 5).unwrap();
        let oracle = BayesOracle::monte_carlo(model, MIN_MC_SAMPLES, 9).unwrap();
        let q = ([0.4, 0.0, -0.1, 0.5, 0.0], [1, 0, 1, 1, 0]);
        assert_eq!(oracle.value_with_se(&q.0, &q.1).unwrap(), oracle.value_with_se(&q.0, &q.1).unwrap());
        assert!(oracle.value(&[0.2, 0.0, -0.1, 0.5, 0.0], &[1, 0, 1, 1, 0]).is_err());
    }

    #[test]
    fn impossible_pattern_exhausts_sampler() {
        let model = SimModel::new(ModelKind::Model1, 3).unwrap();
        let model = model.with_mechanism(MissingnessMechanism::threshold(3, 0.7, &[0], 1.0).unwrap()).unwrap();
        let oracle = BayesOracle::monte_carlo(model, MIN_MC_SAMPLES, 0).unwrap();
        assert!(matches!(
            oracle.value(&[0.0, 0.0, 0.0], &[0, 1, 1]),
            Err(Error::RejectionExhausted { .. })
        ));
    }
}
