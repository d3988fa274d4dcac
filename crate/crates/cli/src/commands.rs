use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use ndarray::{Array1, Array2};
use penn::algebra::{separate_by_coordinates, separate_by_halfspaces, Halfspace, PatternPartition};
use penn::datagen::{BayesOracle, ModelKind};
use penn::eval::{paired_comparison, BoxStats, Metric, MetricsRecord, PairedSummary};
use penn::experiment::{run_repetition, DataSource, Estimator, Fit, Repetition};
use penn::missing::ImputerKind;
use penn::penn::Task;
use penn::seed::derive_seed;
use penn::train::{TrainReport, Trainable};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{Config, DataConfig, ReproduceOverrides, RunSettings, SplitConfig, DESK_SCALE_NOTE, SCHEMA_VERSION};
use crate::manifest::OutputDir;
use crate::plot::{box_plot, BoxGroup};
use crate::table;

/// Thread count for repetitions, from `PENN_THREADS` when set.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("PENN_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| anyhow!("PENN_THREADS: `{v}` is not a positive integer"))?;
        if n == 0 {
            bail!("PENN_THREADS: must be positive");
        }
        builder = builder.num_threads(n);
    }
    Ok(builder.build()?)
}

fn output_dir(out: Option<&Path>, config: Option<&Config>, fallback: &str) -> PathBuf {
    out.map(Path::to_path_buf)
        .or_else(|| config.and_then(|c| c.output.clone()))
        .unwrap_or_else(|| PathBuf::from(fallback))
}

pub fn imputer_label(kind: &ImputerKind) -> &'static str {
    match kind {
        ImputerKind::Zero => "zero",
        ImputerKind::ColumnMean => "column_mean",
        ImputerKind::Iterative { .. } => "iterative",
    }
}

pub fn simulate(config_path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<PathBuf> {
    let config = Config::load(config_path)?;
    if config.data.path.is_some() {
        bail!("data: simulate needs a `model`, not a `path`");
    }
    let model = config.sim_model()?;
    let rows = config
        .data
        .rows
        .or(config.split.map(|s| s.total()))
        .context("data.rows: required by simulate (or give a [split] table)")?;
    if rows == 0 {
        bail!("data.rows: must be positive");
    }
    let seed = seed.unwrap_or(config.experiment.seed);
    let data = model.sample(rows, &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 100)))?;
    let mut buf = Vec::new();
    table::write(&data, &mut buf)?;
    let root = output_dir(out, Some(&config), "penn-simulate");
    let mut dir = OutputDir::create(&root)?;
    dir.write("data.csv", &buf)?;
    dir.finish(json!({
        "schema_version": SCHEMA_VERSION,
        "command": "simulate",
        "seed": seed,
        "rows": rows,
        "model": model,
    }))?;
    println!("wrote {rows} rows of {:?} (d = {}) to {}", model.kind, model.dim, root.display());
    Ok(root)
}

#[derive(Debug, Clone, Serialize)]
struct EstimatorSummary {
    estimator: Estimator,
    selected_lambda: f64,
    nonzero_count: usize,
    weight_count: usize,
    #[serde(flatten)]
    metrics: MetricsRecord,
}

fn summarize<T: Trainable>(estimator: Estimator, fit: &Fit<T>) -> EstimatorSummary {
    let run = fit.report.selected_run();
    EstimatorSummary {
        estimator,
        selected_lambda: run.lambda,
        nonzero_count: run.nonzero_count,
        weight_count: run.network.weight_count(),
        metrics: fit.record.clone(),
    }
}

#[derive(Debug, Clone, Serialize)]
struct SeedRecord {
    seed: u64,
    estimators: Vec<EstimatorSummary>,
}

#[derive(Debug, Clone, Serialize)]
struct Failure {
    seed: u64,
    error: String,
}

#[derive(Debug, Clone, Serialize)]
struct Group {
    imputer: ImputerKind,
    metric: Metric,
    records: Vec<SeedRecord>,
    failures: Vec<Failure>,
    #[serde(skip_serializing_if = "Option::is_none")]
    comparison: Option<PairedSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    box_stats: Vec<(Estimator, BoxStats)>,
}

/// Everything a finished `run` or `reproduce` produced, before writing.
pub struct Outcome {
    groups: Vec<Group>,
    repetitions: Vec<(usize, Repetition)>,
    per_seed_csv: Vec<u8>,
    curves_csv: Vec<u8>,
    results: serde_json::Value,
}

fn metric_for(source: &DataSource, task: Task) -> Metric {
    match (source, task) {
        (_, Task::Classification { .. }) => Metric::Mce,
        (DataSource::Simulated(_), Task::Regression) => Metric::ExcessRisk,
        (DataSource::Table(_), Task::Regression) => Metric::Mse,
    }
}

fn resolve_source(config: &Config, config_dir: &Path) -> Result<(DataSource, SplitConfig)> {
    match &config.data.path {
        Some(p) => {
            let path = if p.is_absolute() { p.clone() } else { config_dir.join(p) };
            let data = table::load(&path)?;
            let split = config.splits(data.len());
            Ok((DataSource::Table(data), split))
        }
        None => {
            let model = config.sim_model()?;
            let split = match (config.split, config.data.rows) {
                (Some(s), _) => s,
                (None, Some(rows)) => SplitConfig::from_ratio(rows),
                (None, None) => bail!("data.rows or a [split] table is required to simulate training data"),
            };
            Ok((DataSource::Simulated(model), split))
        }
    }
}

fn push_curves<T>(
    w: &mut csv::Writer<&mut Vec<u8>>,
    imputer: &str,
    seed: u64,
    estimator: Estimator,
    report: &TrainReport<T>,
) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for row in report.curve_rows() {
        w.write_record([
            imputer.to_string(),
            seed.to_string(),
            estimator.label().to_string(),
            row.phase.to_string(),
            opt(row.lambda),
            row.epoch.to_string(),
            row.train_loss.to_string(),
            opt(row.val_loss),
        ])?;
    }
    Ok(())
}

/// Runs every (imputer, repetition) pair and assembles the result tables.
pub fn execute(config: &Config, source: &DataSource, split: SplitConfig, seed: u64) -> Result<Outcome> {
    let run = &config.experiment;
    let jobs: Vec<(usize, u64)> = (0..run.imputers.len())
        .flat_map(|g| (0..run.repetitions as u64).map(move |r| (g, seed.wrapping_add(r))))
        .collect();
    let experiments: Vec<_> = run.imputers.iter().map(|&k| config.experiment_config(split, k)).collect();
    for e in &experiments {
        e.validate()?;
    }
    let pool = thread_pool()?;
    let results: Vec<_> = pool.install(|| {
        jobs.par_iter()
            .map(|&(g, s)| run_repetition(&experiments[g], source, s))
            .collect()
    });

    let metric = metric_for(source, run.task);
    let mut groups = Vec::new();
    let mut repetitions = Vec::new();
    let mut per_seed = csv::Writer::from_writer(Vec::new());
    per_seed.write_record([
        "imputer",
        "seed",
        "estimator",
        "selected_lambda",
        "nonzero_count",
        "excess_risk",
        "excess_risk_se",
        "mse",
        "puv",
        "mce",
    ])?;
    let mut curves_buf = Vec::new();
    {
        let mut curves = csv::Writer::from_writer(&mut curves_buf);
        curves.write_record(["imputer", "seed", "estimator", "phase", "lambda", "epoch", "train_loss", "val_loss"])?;
        for (g, kind) in run.imputers.iter().enumerate() {
            let label = imputer_label(kind);
            let mut records = Vec::new();
            let mut failures = Vec::new();
            let mut by_estimator: Vec<(Estimator, Vec<(u64, MetricsRecord)>)> = Vec::new();
            for ((job_group, s), result) in jobs.iter().zip(&results) {
                if *job_group != g {
                    continue;
                }
                match result {
                    Err(e) => failures.push(Failure { seed: *s, error: e.to_string() }),
                    Ok(rep) => {
                        let mut estimators = Vec::new();
                        if let Some(f) = &rep.penn {
                            estimators.push(summarize(Estimator::Penn, f));
                            push_curves(&mut curves, label, *s, Estimator::Penn, &f.report)?;
                        }
                        if let Some(f) = &rep.nn {
                            estimators.push(summarize(Estimator::Nn, f));
                            push_curves(&mut curves, label, *s, Estimator::Nn, &f.report)?;
                        }
                        for e in &estimators {
                            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                            per_seed.write_record([
                                label.to_string(),
                                s.to_string(),
                                e.estimator.label().to_string(),
                                e.selected_lambda.to_string(),
                                e.nonzero_count.to_string(),
                                opt(e.metrics.excess_risk),
                                opt(e.metrics.excess_risk_se),
                                e.metrics.mse.to_string(),
                                opt(e.metrics.puv),
                                opt(e.metrics.mce),
                            ])?;
                            match by_estimator.iter_mut().find(|(k, _)| *k == e.estimator) {
                                Some((_, v)) => v.push((*s, e.metrics.clone())),
                                None => by_estimator.push((e.estimator, vec![(*s, e.metrics.clone())])),
                            }
                        }
                        records.push(SeedRecord { seed: *s, estimators });
                        repetitions.push((g, rep.clone()));
                    }
                }
            }
            let find = |k: Estimator| by_estimator.iter().find(|(e, _)| *e == k).map(|(_, v)| v.as_slice());
            let comparison = match (find(Estimator::Penn), find(Estimator::Nn)) {
                (Some(p), Some(n)) => Some(paired_comparison(p, n, metric)?),
                _ => None,
            };
            let box_stats = match &comparison {
                Some(c) => vec![(Estimator::Penn, c.penn_stats), (Estimator::Nn, c.baseline_stats)],
                None => by_estimator
                    .iter()
                    .filter_map(|(e, recs)| {
                        let values: Vec<f64> = recs.iter().filter_map(|(_, r)| r.metric(metric)).collect();
                        BoxStats::from_values(&values).map(|b| (*e, b))
                    })
                    .collect(),
            };
            groups.push(Group {
                imputer: *kind,
                metric,
                records,
                failures,
                comparison,
                box_stats,
            });
        }
        curves.flush()?;
    }
    if groups.iter().all(|g| g.records.is_empty()) {
        let first = groups.iter().flat_map(|g| &g.failures).next();
        bail!(
            "every repetition failed{}",
            first.map(|f| format!("; seed {}: {}", f.seed, f.error)).unwrap_or_default()
        );
    }
    let mut resolved = config.clone();
    resolved.experiment.seed = seed;
    resolved.output = None;
    let mut results_doc = json!({
        "schema_version": SCHEMA_VERSION,
        "seed": seed,
        "repetitions": run.repetitions,
        "split": split,
        "config": resolved,
        "groups": groups,
    });
    if run.repetitions < 100 {
        results_doc["note"] = json!(DESK_SCALE_NOTE);
    }
    Ok(Outcome {
        groups,
        repetitions,
        per_seed_csv: per_seed.into_inner().map_err(|e| anyhow!("{e}"))?,
        curves_csv: curves_buf,
        results: results_doc,
    })
}

fn report(outcome: &Outcome) {
    for g in &outcome.groups {
        let label = imputer_label(&g.imputer);
        for r in &g.records {
            let parts: Vec<String> = r
                .estimators
                .iter()
                .map(|e| format!("{} {:.4}", e.estimator.label(), e.metrics.metric(g.metric).unwrap_or(f64::NAN)))
                .collect();
            println!("[{label}] seed {}: {}", r.seed, parts.join(", "));
        }
        for f in &g.failures {
            println!("[{label}] seed {} failed: {}", f.seed, f.error);
        }
        if let Some(c) = &g.comparison {
            println!(
                "[{label}] {:?}: penn median {:.4}, nn median {:.4}, penn better in {}/{} seeds",
                g.metric,
                c.penn_stats.median,
                c.baseline_stats.median,
                c.penn_wins,
                c.seeds.len()
            );
        }
    }
}

fn write_tables(dir: &mut OutputDir, outcome: &Outcome) -> Result<()> {
    dir.write_json("results.json", &outcome.results)?;
    dir.write("per_seed.csv", &outcome.per_seed_csv)?;
    dir.write("curves.csv", &outcome.curves_csv)?;
    Ok(())
}

pub fn run(config_path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<PathBuf> {
    let config = Config::load(config_path)?;
    let config_dir = config_path.parent().unwrap_or(Path::new("."));
    let (source, split) = resolve_source(&config, config_dir)?;
    let seed = seed.unwrap_or(config.experiment.seed);
    let root = output_dir(out, Some(&config), "penn-run");
    let started = Instant::now();
    let outcome = execute(&config, &source, split, seed)?;
    report(&outcome);
    let mut dir = OutputDir::create(&root)?;
    write_tables(&mut dir, &outcome)?;
    dir.finish(json!({ "schema_version": SCHEMA_VERSION, "command": "run", "seed": seed }))?;
    println!("finished in {:.1}s; outputs in {}", started.elapsed().as_secs_f64(), root.display());
    Ok(root)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Example1,
    Model(ModelKind),
}

impl std::str::FromStr for Preset {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "example1" => Preset::Example1,
            "model1" => Preset::Model(ModelKind::Model1),
            "model2" => Preset::Model(ModelKind::Model2),
            "model3" => Preset::Model(ModelKind::Model3),
            "model4" => Preset::Model(ModelKind::Model4),
            other => bail!("unknown preset `{other}`; expected example1 or model1..model4"),
        })
    }
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Example1 => "example1",
            Preset::Model(ModelKind::Model1) => "model1",
            Preset::Model(ModelKind::Model2) => "model2",
            Preset::Model(ModelKind::Model3) => "model3",
            Preset::Model(_) => "model4",
        }
    }

    pub fn default_scale(self) -> f64 {
        match self {
            Preset::Example1 => 1.0,
            Preset::Model(_) => 0.2,
        }
    }

    /// Preset configuration with split sizes multiplied by `scale`.
    pub fn config(self, scale: f64) -> Result<Config> {
        if !(scale > 0.0 && scale <= 1.0) {
            bail!("scale: must lie in (0, 1], got {scale}");
        }
        let (model, dim, full, imputers) = match self {
            Preset::Example1 => (
                ModelKind::Example1,
                1,
                SplitConfig { train: 1000, validation: 500, test: 500 },
                vec![ImputerKind::Zero],
            ),
            Preset::Model(kind) => (
                kind,
                10,
                SplitConfig { train: 10_000, validation: 5_000, test: 5_000 },
                vec![ImputerKind::Zero, ImputerKind::ColumnMean, ImputerKind::DEFAULT_ITERATIVE],
            ),
        };
        let config = Config {
            schema_version: SCHEMA_VERSION,
            output: None,
            data: DataConfig {
                model: Some(model),
                dim: Some(dim),
                ..DataConfig::default()
            },
            split: Some(full.scaled(scale)),
            experiment: RunSettings {
                imputers,
                ..RunSettings::default()
            },
            train: Default::default(),
        };
        config.validate()?;
        Ok(config)
    }
}

/// Fitted curves on a grid of `z ∈ [−1, 1]` with `ω = 1`, plus the
/// missing-coordinate prediction, for one-dimensional presets.
fn fitted_curve(rep: &Repetition, oracle: &BayesOracle) -> Result<Vec<u8>> {
    let grid: Vec<f64> = (0..=200).map(|i| -1.0 + i as f64 / 100.0).collect();
    let missing_z = (0..rep.test.len()).find(|&i| rep.test.omega[[i, 0]] == 0).map(|i| rep.z_test[[i, 0]]);
    let mut zs = grid.clone();
    let mut omegas = vec![1u8; grid.len()];
    if let Some(z) = missing_z {
        zs.push(z);
        omegas.push(0);
    }
    let z = Array2::from_shape_vec((zs.len(), 1), zs.clone())?;
    let omega = Array2::from_shape_vec((zs.len(), 1), omegas.clone())?;
    let omega_f = omega.mapv(f64::from);
    let bayes = oracle.values(z.view(), omega.view())?;
    let column = |scores: Array2<f64>| -> Array1<f64> { scores.column(0).to_owned() };
    let penn = rep
        .penn
        .as_ref()
        .map(|f| f.report.selected_network().predict(z.view(), omega_f.view()).map(column))
        .transpose()?;
    let nn = rep
        .nn
        .as_ref()
        .map(|f| f.report.selected_network().predict(z.view(), omega_f.view()).map(column))
        .transpose()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["z", "omega", "bayes", "penn", "nn"])?;
    let opt = |v: &Option<Array1<f64>>, i: usize| v.as_ref().map(|a| a[i].to_string()).unwrap_or_default();
    for i in 0..zs.len() {
        w.write_record([zs[i].to_string(), omegas[i].to_string(), bayes[i].to_string(), opt(&penn, i), opt(&nn, i)])?;
    }
    w.into_inner().map_err(|e| anyhow!("{e}"))
}

pub fn reproduce(
    preset: Preset,
    scale: Option<f64>,
    overrides: Option<&Path>,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<PathBuf> {
    let scale = scale.unwrap_or(preset.default_scale());
    let mut config = preset.config(scale)?;
    if let Some(path) = overrides {
        let o = ReproduceOverrides::load(path)?;
        if let Some(e) = o.experiment {
            config.experiment = e;
        }
        if let Some(t) = o.train {
            config.train = t;
        }
        config.validate()?;
    }
    let seed = seed.unwrap_or(config.experiment.seed);
    let split = config.split.expect("presets set their splits");
    let model = config.sim_model()?;
    let source = DataSource::Simulated(model.clone());
    let root = output_dir(out, None, &format!("penn-reproduce-{}", preset.name()));
    let started = Instant::now();
    let mut outcome = execute(&config, &source, split, seed)?;
    outcome.results["preset"] = json!(preset.name());
    outcome.results["scale"] = json!(scale);
    report(&outcome);

    let mut dir = OutputDir::create(&root)?;
    write_tables(&mut dir, &outcome)?;
    let groups: Vec<BoxGroup> = outcome
        .groups
        .iter()
        .filter(|g| !g.box_stats.is_empty())
        .map(|g| BoxGroup {
            label: imputer_label(&g.imputer).to_string(),
            boxes: g.box_stats.iter().map(|(e, b)| (e.label().to_string(), *b)).collect(),
        })
        .collect();
    let metric = outcome.groups[0].metric;
    let title = format!("{} (n = {}): {:?} over {} seeds", preset.name(), split.train, metric, config.experiment.repetitions);
    dir.write("excess_risk.svg", box_plot(&title, &format!("{metric:?}"), &groups).as_bytes())?;
    if preset == Preset::Example1 {
        if let Some((_, rep)) = outcome.repetitions.first() {
            let oracle = BayesOracle::preferred(model, config.experiment.oracle_samples, derive_seed(rep.seed, 400))?;
            dir.write("fitted.csv", &fitted_curve(rep, &oracle)?)?;
        }
    }
    dir.finish(json!({
        "schema_version": SCHEMA_VERSION,
        "command": "reproduce",
        "preset": preset.name(),
        "scale": scale,
        "seed": seed,
    }))?;
    println!("finished in {:.1}s; outputs in {}", started.elapsed().as_secs_f64(), root.display());
    Ok(root)
}

/// How the certificate should be synthesized. Coordinates are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Structure {
    Coordinates(Vec<usize>),
    Halfspaces(Vec<Vec<Halfspace>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyRequest {
    pub partition: PatternPartition,
    #[serde(default)]
    pub structure: Option<Structure>,
}

impl CertifyRequest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let parsed = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(anyhow::Error::from)
        } else {
            serde_json::from_str(&text).map_err(anyhow::Error::from)
        };
        parsed.with_context(|| format!("parsing partition file {}", path.display()))
    }
}

pub fn certify(config_path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<PathBuf> {
    let request = CertifyRequest::load(config_path)?;
    let partition = &request.partition;
    let d = partition.dim();
    let structure = request.structure.clone().unwrap_or_else(|| Structure::Coordinates((1..=d).collect()));
    let certificate = match &structure {
        Structure::Coordinates(coords) => {
            let zero_based: Vec<usize> = coords
                .iter()
                .map(|&c| {
                    if c == 0 || c > d {
                        bail!("structure.coordinates: {c} is outside 1..={d}")
                    }
                    Ok(c - 1)
                })
                .collect::<Result<_>>()?;
            separate_by_coordinates(partition, &zero_based)?
        }
        Structure::Halfspaces(h) => separate_by_halfspaces(partition, h)?,
    };
    let verdict = certificate.verify(partition);
    let root = output_dir(out, None, "penn-certify");
    let mut dir = OutputDir::create(&root)?;
    dir.write_json(
        "certificate.json",
        &json!({
            "verdict": if verdict.is_ok() { "pass" } else { "fail" },
            "failure": verdict.as_ref().err().map(|e| e.to_string()),
            "dim": d,
            "cells": partition.cell_count(),
            "patterns": partition.len(),
            "epsilon": certificate.margin,
            "structure": structure,
            "certificate": certificate,
        }),
    )?;
    dir.finish(json!({ "schema_version": SCHEMA_VERSION, "command": "certify", "seed": seed }))?;
    verdict.context("certificate failed exhaustive verification")?;
    println!(
        "pass: {} cells over {} patterns separated with epsilon = {}; written to {}",
        partition.cell_count(),
        partition.len(),
        certificate.margin,
        root.display()
    );
    Ok(root)
}
