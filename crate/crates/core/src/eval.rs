//! Test-set metrics and paired PENN-versus-baseline summaries.

use std::collections::BTreeMap;

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::datagen::{mean_and_se, BayesOracle};
use crate::{Error, Result};

/// Paired estimate of `E(f̂ − Y)² − E(f* − Y)²` from per-row differences of
/// squared errors, with its standard error.
pub fn paired_excess_risk(pred: ArrayView1<f64>, bayes: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<(f64, f64)> {
    if pred.len() != y.len() || bayes.len() != y.len() || y.is_empty() {
        return Err(Error::Shape(format!(
            "{} predictions, {} oracle values, {} responses",
            pred.len(),
            bayes.len(),
            y.len()
        )));
    }
    let terms: Vec<f64> = pred
        .iter()
        .zip(&bayes)
        .zip(&y)
        .map(|((p, b), t)| (p - t).powi(2) - (b - t).powi(2))
        .collect();
    Ok(mean_and_se(&terms))
}

/// Excess risk of `pred` on test rows `(z, Ω, y)` against the oracle's `f*`.
pub fn excess_risk(
    pred: ArrayView1<f64>,
    oracle: &BayesOracle,
    z: ArrayView2<f64>,
    omega: ArrayView2<u8>,
    y: ArrayView1<f64>,
) -> Result<(f64, f64)> {
    let bayes = oracle.values(z, omega)?;
    paired_excess_risk(pred, bayes.view(), y)
}

pub fn mse(pred: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
    if pred.len() != y.len() || y.is_empty() {
        return Err(Error::Shape(format!("{} predictions for {} responses", pred.len(), y.len())));
    }
    Ok(pred.iter().zip(&y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len() as f64)
}

/// Test MSE over the sample variance of the responses (divisor `n − 1`).
pub fn puv(pred: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
    if y.len() < 2 {
        return Err(Error::InvalidArgument("PUV needs at least two responses".into()));
    }
    let var = y.var(1.0);
    if var == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(mse(pred, y)? / var)
}

/// Index of the largest score; ties go to the smallest index.
pub fn argmax(scores: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax class differs from the label.
pub fn mce(scores: ArrayView2<f64>, labels: ArrayView1<f64>) -> Result<f64> {
    if scores.nrows() != labels.len() || labels.is_empty() {
        return Err(Error::Shape(format!("{} score rows for {} labels", scores.nrows(), labels.len())));
    }
    let wrong = scores
        .rows()
        .into_iter()
        .zip(&labels)
        .filter(|(row, &l)| argmax(*row) as f64 != l)
        .count();
    Ok(wrong as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub excess_risk: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub excess_risk_se: Option<f64>,
    pub mse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mce: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub puv: Option<f64>,
    pub n_test: usize,
}

impl MetricsRecord {
    /// Regression metrics; excess risk only when Bayes values are supplied.
    pub fn regression(label: &str, pred: ArrayView1<f64>, y: ArrayView1<f64>, bayes: Option<ArrayView1<f64>>) -> Result<Self> {
        let er = bayes.map(|b| paired_excess_risk(pred, b, y)).transpose()?;
        Ok(Self {
            label: label.to_string(),
            excess_risk: er.map(|e| e.0),
            excess_risk_se: er.map(|e| e.1),
            mse: mse(pred, y)?,
            mce: None,
            puv: puv(pred, y).ok(),
            n_test: y.len(),
        })
    }

    pub fn classification(label: &str, scores: ArrayView2<f64>, labels: ArrayView1<f64>) -> Result<Self> {
        let rate = mce(scores, labels)?;
        Ok(Self {
            label: label.to_string(),
            excess_risk: None,
            excess_risk_se: None,
            mse: rate,
            mce: Some(rate),
            puv: None,
            n_test: labels.len(),
        })
    }

    pub fn metric(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::ExcessRisk => self.excess_risk,
            Metric::Mse => Some(self.mse),
            Metric::Mce => self.mce,
            Metric::Puv => self.puv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ExcessRisk,
    Mse,
    Mce,
    Puv,
}

/// Five-number summary with type-7 (linear interpolation) quartiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() || values.iter().any(|v| v.is_nan()) {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = p * (v.len() - 1) as f64;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Some(Self {
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSummary {
    pub metric: Metric,
    pub seeds: Vec<u64>,
    pub penn: Vec<f64>,
    pub baseline: Vec<f64>,
    /// `baseline − penn` per seed; positive when PENN is better.
    pub differences: Vec<f64>,
    pub penn_wins: usize,
    pub penn_stats: BoxStats,
    pub baseline_stats: BoxStats,
    pub difference_stats: BoxStats,
}

/// Matches PENN and baseline records by seed. The result is sorted by seed,
/// so input order does not matter.
pub fn paired_comparison(penn: &[(u64, MetricsRecord)], baseline: &[(u64, MetricsRecord)], metric: Metric) -> Result<PairedSummary> {
    let index = |records: &[(u64, MetricsRecord)]| -> Result<BTreeMap<u64, f64>> {
        let mut map = BTreeMap::new();
        for (seed, rec) in records {
            let value = rec
                .metric(metric)
                .ok_or_else(|| Error::InvalidArgument(format!("record for seed {seed} lacks {metric:?}")))?;
            if map.insert(*seed, value).is_some() {
                return Err(Error::InvalidArgument(format!("seed {seed} appears twice")));
            }
        }
        Ok(map)
    };
    let p = index(penn)?;
    let b = index(baseline)?;
    if p.is_empty() || !p.keys().eq(b.keys()) {
        return Err(Error::InvalidArgument(format!(
            "seed sets differ: {:?} vs {:?}",
            p.keys().collect::<Vec<_>>(),
            b.keys().collect::<Vec<_>>()
        )));
    }
    let seeds: Vec<u64> = p.keys().copied().collect();
    let penn: Vec<f64> = p.values().copied().collect();
    let baseline: Vec<f64> = b.values().copied().collect();
    let differences: Vec<f64> = baseline.iter().zip(&penn).map(|(b, p)| b - p).collect();
    let stats = |v: &[f64]| BoxStats::from_values(v).ok_or_else(|| Error::InvalidArgument("NaN metric".into()));
    Ok(PairedSummary {
        metric,
        penn_wins: differences.iter().filter(|&&d| d > 0.0).count(),
        penn_stats: stats(&penn)?,
        baseline_stats: stats(&baseline)?,
        difference_stats: stats(&differences)?,
        seeds,
        penn,
        baseline,
        differences,
    })
}
