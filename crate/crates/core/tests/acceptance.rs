//! Acceptance suite. Every criterion prints one `criterion N: PASS|FAIL` line
//! and then asserts. Criteria run one at a time so that their runtimes are
//! measured without interference.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use ndarray::{concatenate, Array1, Array2, Axis};
use penn::algebra::{
    compose, enlarge, full_cube, pad, parallelize, separate_by_coordinates, separate_by_halfspaces, Halfspace,
    PatternPartition,
};
use penn::datagen::{BayesOracle, ModelKind, SimModel};
use penn::eval::{excess_risk, mce, paired_excess_risk, puv};
use penn::experiment::{run_repetition, DataSource, ExperimentConfig};
use penn::missing::{Imputer, ImputerKind, MissingnessMechanism, PartialMatrix};
use penn::nn::{AdamConfig, Architecture, LossKind, Mlp};
use penn::penn::{Penn, PennArchitecture};
use penn::train::{
    kept_weights, lambda_sweep, magnitude_prune, select_lambda, train_with_early_stopping, Dataset, StoppingRule,
    TrainConfig, Trainable,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: usize, pass: bool, limit: Duration, started: Instant, detail: String) {
    let took = started.elapsed();
    let in_time = took < limit;
    let ok = pass && in_time;
    println!(
        "criterion {n}: {} ({detail}; {:.1}s of {}s allowed)",
        if ok { "PASS" } else { "FAIL" },
        took.as_secs_f64(),
        limit.as_secs()
    );
    assert!(pass, "criterion {n} failed: {detail}");
    assert!(in_time, "criterion {n} exceeded its time limit");
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, half_width: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-half_width..half_width))
}

fn random_arch(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Architecture {
    let hidden = rng.random_range(1..=4);
    let mut widths = vec![input];
    widths.extend((0..hidden).map(|_| rng.random_range(1..=16)));
    widths.push(output);
    Architecture::new(widths).unwrap()
}

/// Hidden pre-activations of `net` on every row of `x`.
fn pre_activations(net: &Mlp, x: &Array2<f64>) -> Vec<f64> {
    let mut h = x.clone();
    let mut out = Vec::new();
    let layers = net.layers();
    for layer in &layers[..layers.len() - 1] {
        let a = h.dot(&layer.weight.t()) + &layer.bias;
        out.extend(a.iter().copied());
        h = a.mapv(|v| v.max(0.0));
    }
    out
}

fn min_abs(values: &[f64]) -> f64 {
    values.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

fn central_difference(params: &[f64], mut loss: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    const H: f64 = 1e-5;
    let mut theta = params.to_vec();
    (0..theta.len())
        .map(|i| {
            let keep = theta[i];
            theta[i] = keep + H;
            let up = loss(&theta);
            theta[i] = keep - H;
            let down = loss(&theta);
            theta[i] = keep;
            (up - down) / (2.0 * H)
        })
        .collect()
}

/// Relative error with a floor proportional to the loss, below which a
/// central difference at `h = 1e-5` cannot resolve the gradient in `f64`.
fn relative_error(a: f64, b: f64, loss: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6 * loss.abs().max(1.0))
}

fn targets(rng: &mut ChaCha8Rng, n: usize, loss: LossKind, classes: usize) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| match loss {
        LossKind::Squared => rng.random_range(-2.0..2.0),
        LossKind::CrossEntropy => rng.random_range(0..classes) as f64,
    })
}

#[test]
fn criterion_01_gradients() {
    let _guard = serial();
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut coords, mut failures) = (0.0f64, 0usize, Vec::new());
    for config in 0..50 {
        let cross_entropy = rng.random_bool(0.5);
        let (loss, out) = if cross_entropy { (LossKind::CrossEntropy, rng.random_range(2..=4)) } else { (LossKind::Squared, 1) };
        let d = rng.random_range(1..=6);
        let rows = 6;
        let (analytic, numeric, loss_value) = if config % 2 == 0 {
            let arch = random_arch(&mut rng, d, out);
            let net = Mlp::init(arch.clone(), &mut rng);
            let x = (0..200)
                .map(|_| uniform(&mut rng, rows, d, 1.0))
                .find(|x| min_abs(&pre_activations(&net, x)) > 1e-3)
                .expect("inputs away from every kink");
            let y = targets(&mut rng, rows, loss, out);
            let (value, grad) = net.loss_and_grad(x.view(), y.view(), loss).unwrap();
            let numeric = central_difference(&net.param_vector(), |theta| {
                let probe = Mlp::from_param_vector(arch.clone(), theta).unwrap();
                probe.loss_and_grad(x.view(), y.view(), loss).unwrap().0
            });
            (grad.to_vec(), numeric, value)
        } else {
            let p = rng.random_range(1..=6);
            let q = rng.random_range(1..=4);
            let arch = PennArchitecture::new(random_arch(&mut rng, d, p), random_arch(&mut rng, d, q), random_arch(&mut rng, p + q, out))
                .unwrap();
            let net = Penn::init(&arch, &mut rng);
            let [cov, emb, comb] = net.subnets();
            let (z, omega) = (0..200)
                .map(|_| {
                    let omega = Array2::from_shape_fn((rows, d), |_| f64::from(u8::from(rng.random_bool(0.6))));
                    (uniform(&mut rng, rows, d, 1.0) * &omega, omega)
                })
                .find(|(z, omega)| {
                    let joined = concatenate(
                        Axis(1),
                        &[cov.forward_batch(z.view()).unwrap().view(), emb.forward_batch(omega.view()).unwrap().view()],
                    )
                    .unwrap();
                    let all = [pre_activations(cov, z), pre_activations(emb, omega), pre_activations(comb, &joined)].concat();
                    min_abs(&all) > 1e-3
                })
                .expect("inputs away from every kink");
            let y = targets(&mut rng, rows, loss, out);
            let (value, grads) = net.loss_and_grad(z.view(), omega.view(), y.view(), loss).unwrap();
            let numeric = central_difference(&net.param_vector(), |theta| {
                let mut probe = net.clone();
                probe.set_param_vector(theta).unwrap();
                probe.loss_and_grad(z.view(), omega.view(), y.view(), loss).unwrap().0
            });
            (grads.iter().flat_map(|g| g.to_vec()).collect(), numeric, value)
        };
        assert_eq!(analytic.len(), numeric.len());
        for (a, n) in analytic.iter().zip(&numeric) {
            let e = relative_error(*a, *n, loss_value);
            worst = worst.max(e);
            coords += 1;
            if e >= 1e-4 {
                failures.push((config, *a, *n));
            }
        }
    }
    verdict(
        1,
        failures.is_empty(),
        Duration::from_secs(60),
        started,
        format!("50 configurations, {coords} coordinates, worst relative error {worst:.2e}, {} above 1e-4", failures.len()),
    );
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + y.abs()))
}

#[test]
fn criterion_02_network_algebra() {
    let _guard = serial();
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut problems = Vec::new();
    for trial in 0..10 {
        let d = rng.random_range(1..=5);
        let mid = rng.random_range(1..=4);
        let f1 = Mlp::init(random_arch(&mut rng, d, mid), &mut rng);
        let out = rng.random_range(1..=3);
        let f2 = Mlp::init(random_arch(&mut rng, mid, out), &mut rng);
        let h = compose(&f1, &f2).unwrap();
        let w1 = f1.architecture().widths();
        let w2 = f2.architecture().widths();
        let want: Vec<usize> = w1[..w1.len() - 1].iter().chain(&w2[1..]).copied().collect();
        if h.architecture().widths() != want.as_slice() {
            problems.push(format!("compose widths, trial {trial}"));
        }

        let s_before = f1.nonzero_count();
        let target = f1.architecture().depth() + rng.random_range(0..=3);
        let padded = pad(&f1, target).unwrap();
        let bound = 2 * s_before + 2 * f1.output_width() * (target - f1.architecture().depth());
        if padded.nonzero_count() > bound {
            problems.push(format!("pad sparsity {} > {bound}", padded.nonzero_count()));
        }

        let mut g_widths = vec![d];
        g_widths.extend((0..f1.architecture().depth()).map(|_| rng.random_range(1..=8)));
        g_widths.push(rng.random_range(1..=3));
        let g = Mlp::init(Architecture::new(g_widths).unwrap(), &mut rng);
        let par = parallelize(&[f1.clone(), g.clone()]).unwrap();
        if par.nonzero_count() != f1.nonzero_count() + g.nonzero_count() {
            problems.push("parallelize sparsity".into());
        }
        let wide: Vec<usize> = w1
            .iter()
            .enumerate()
            .map(|(i, &w)| if i == 0 || i == w1.len() - 1 { w } else { w + rng.random_range(0..=5) })
            .collect();
        let big = enlarge(&f1, &Architecture::new(wide).unwrap()).unwrap();
        if big.nonzero_count() != f1.nonzero_count() {
            problems.push("enlarge sparsity".into());
        }

        for _ in 0..1000 {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-4.0..4.0)).collect();
            let y1 = f1.forward(&x).unwrap();
            if !close(&h.forward(&x).unwrap(), &f2.forward(&y1).unwrap()) {
                problems.push(format!("compose value, trial {trial}"));
            }
            if !close(&padded.forward(&x).unwrap(), &y1) {
                problems.push(format!("pad value, trial {trial}"));
            }
            let concat = [y1.clone(), g.forward(&x).unwrap()].concat();
            if !close(&par.forward(&x).unwrap(), &concat) {
                problems.push(format!("parallelize value, trial {trial}"));
            }
            if !close(&big.forward(&x).unwrap(), &y1) {
                problems.push(format!("enlarge value, trial {trial}"));
            }
        }
    }
    problems.dedup();
    verdict(
        2,
        problems.is_empty(),
        Duration::from_secs(60),
        started,
        format!("10 trials x 4 operations x 1000 inputs, problems: {problems:?}"),
    );
}

fn coordinate_partition(rng: &mut ChaCha8Rng) -> (PatternPartition, Vec<usize>) {
    let d = rng.random_range(1..=8);
    let coords: Vec<usize> = loop {
        let c: Vec<usize> = (0..d).filter(|_| rng.random_bool(0.5)).collect();
        if !c.is_empty() {
            break c;
        }
    };
    let codes = 1usize << coords.len();
    let k_max = rng.random_range(1..=codes.min(8));
    let label_of_code: Vec<usize> = (0..codes).map(|_| rng.random_range(0..k_max)).collect();
    let mut used: Vec<usize> = label_of_code.clone();
    used.sort_unstable();
    used.dedup();
    let labelled = full_cube(d).unwrap().into_iter().map(|w| {
        let code: usize = coords.iter().enumerate().map(|(pos, &j)| usize::from(w[j]) << pos).sum();
        let label = used.binary_search(&label_of_code[code]).unwrap();
        (w, label)
    });
    (PatternPartition::from_labels(d, labelled).unwrap(), coords)
}

fn halfspace_partition(rng: &mut ChaCha8Rng) -> (PatternPartition, Vec<Vec<Halfspace>>) {
    let d = rng.random_range(1..=8);
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-3..=3) as f64).collect();
    let score = |w: &[u8]| -> i64 { w.iter().zip(&v).map(|(&b, &c)| i64::from(b) * c as i64).sum() };
    let cube = full_cube(d).unwrap();
    let mut values: Vec<i64> = cube.iter().map(|w| score(w)).collect();
    values.sort_unstable();
    values.dedup();
    let mut cuts: Vec<i64> = values[..values.len() - 1].iter().copied().filter(|_| rng.random_bool(0.5)).collect();
    cuts.truncate(7);
    let cell = |w: &[u8]| cuts.iter().filter(|&&c| score(w) > c).count();
    let partition = PatternPartition::from_labels(d, cube.iter().map(|w| (w.clone(), cell(w)))).unwrap();
    let (lowest, highest) = (values[0], values[values.len() - 1]);
    let halfspaces = (0..=cuts.len())
        .map(|k| {
            let upper = if k < cuts.len() { cuts[k] } else { highest };
            let lower = if k > 0 { cuts[k - 1] + 1 } else { lowest };
            vec![
                Halfspace::new(v.clone(), upper as f64),
                Halfspace::new(v.iter().map(|c| -c).collect(), -(lower as f64)),
            ]
        })
        .collect();
    (partition, halfspaces)
}

#[test]
fn criterion_03_separability_certificates() {
    let _guard = serial();
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut problems = Vec::new();
    for i in 0..50 {
        let (partition, coords) = coordinate_partition(&mut rng);
        let cert = separate_by_coordinates(&partition, &coords).unwrap();
        if let Err(e) = cert.verify(&partition) {
            problems.push(format!("coordinate partition {i}: {e}"));
        }
        let k = partition.cell_count() as f64;
        if cert.margin != 1.0 / (2.0 * k) {
            problems.push(format!("coordinate partition {i}: margin {} for K = {k}", cert.margin));
        }
    }
    for i in 0..50 {
        let (partition, halfspaces) = halfspace_partition(&mut rng);
        match separate_by_halfspaces(&partition, &halfspaces) {
            Ok(cert) => {
                if let Err(e) = cert.verify(&partition) {
                    problems.push(format!("halfspace partition {i}: {e}"));
                }
            }
            Err(e) => problems.push(format!("halfspace partition {i}: {e}")),
        }
    }
    verdict(
        3,
        problems.is_empty(),
        Duration::from_secs(120),
        started,
        format!("50 coordinate-induced and 50 halfspace-induced partitions of {{0,1}}^d, d <= 8, failures: {problems:?}"),
    );
}

#[test]
fn criterion_04_bayes_oracle_agreement() {
    let _guard = serial();
    let started = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    for (kind, d) in [(ModelKind::Example1, 1), (ModelKind::Model1, 3), (ModelKind::Model2, 3)] {
        let model = SimModel::new(kind, d).unwrap();
        let exact = BayesOracle::closed_form(model.clone()).unwrap();
        let mc = BayesOracle::monte_carlo(model.clone(), 100_000, 4).unwrap();
        let data = model.sample(100, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let z = &data.x * &data.omega.mapv(f64::from);
        let (mut within, mut worst) = (0, 0.0f64);
        for i in 0..100 {
            let zi = z.row(i).to_vec();
            let wi = data.omega.row(i).to_vec();
            let truth = exact.value(&zi, &wi).unwrap();
            let (est, se) = mc.value_with_se(&zi, &wi).unwrap();
            let gap = (est - truth).abs();
            let rounding = 1e-12 * (1.0 + truth.abs());
            if se > 0.0 {
                worst = worst.max(gap / se);
            }
            within += usize::from(gap <= 3.0 * se + rounding);
        }
        pass &= within == 100;
        lines.push(format!("{kind:?}: {within}/100 within 3 SE, worst {worst:.2} SE"));
    }
    verdict(4, pass, Duration::from_secs(300), started, lines.join("; "));
}

fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

#[test]
fn criterion_05_example_one() {
    let _guard = serial();
    let started = Instant::now();
    let source = DataSource::Simulated(SimModel::new(ModelKind::Example1, 1).unwrap());
    let config = ExperimentConfig::new(1000, 500, 500, ImputerKind::Zero);
    let (mut penn_er, mut nn_er, mut local_wins) = (Vec::new(), Vec::new(), 0);
    for seed in 0..10 {
        let rep = run_repetition(&config, &source, seed).unwrap();
        let (p, n) = (rep.penn.as_ref().unwrap(), rep.nn.as_ref().unwrap());
        penn_er.push(p.record.excess_risk.unwrap());
        nn_er.push(n.record.excess_risk.unwrap());
        let near: Vec<usize> = (0..rep.test.len())
            .filter(|&i| rep.test.omega[[i, 0]] == 1 && rep.z_test[[i, 0]].abs() < 0.15)
            .collect();
        let sq = |pred: &Array1<f64>| near.iter().map(|&i| (pred[i] - rep.test.y[i]).powi(2)).sum::<f64>() / near.len() as f64;
        let (pp, np) = (p.predictions(), n.predictions());
        local_wins += usize::from(sq(&np) > sq(&pp));
    }
    let (pm, nm) = (median(&penn_er), median(&nn_er));
    verdict(
        5,
        pm < 0.5 * nm && local_wins >= 8,
        Duration::from_secs(600),
        started,
        format!("median excess risk PENN {pm:.5} vs NN {nm:.5}; NN worse near the origin in {local_wins}/10 seeds"),
    );
}

fn desk_scale(n: usize, kind: ModelKind) -> (usize, String, bool) {
    let source = DataSource::Simulated(SimModel::new(kind, 10).unwrap());
    let config = ExperimentConfig::new(2000, 1000, 1000, ImputerKind::ColumnMean);
    let (mut wins, mut positive) = (0, true);
    let (mut penn_er, mut nn_er) = (Vec::new(), Vec::new());
    for seed in 0..10 {
        let rep = run_repetition(&config, &source, seed).unwrap();
        let (p, q) = (&rep.penn.as_ref().unwrap().record, &rep.nn.as_ref().unwrap().record);
        let (pe, ne) = (p.excess_risk.unwrap(), q.excess_risk.unwrap());
        wins += usize::from(pe < ne);
        positive &= pe + 2.0 * p.excess_risk_se.unwrap() > 0.0 && ne + 2.0 * q.excess_risk_se.unwrap() > 0.0;
        penn_er.push(pe);
        nn_er.push(ne);
    }
    let detail = format!(
        "criterion {n}, {kind:?}: PENN better in {wins}/10 seeds; median excess risk PENN {:.4} vs NN {:.4}",
        median(&penn_er),
        median(&nn_er)
    );
    (wins, detail, positive)
}

#[test]
fn criterion_06_model_one_desk_scale() {
    let _guard = serial();
    let started = Instant::now();
    let (wins, detail, positive) = desk_scale(6, ModelKind::Model1);
    verdict(
        6,
        wins >= 8 && positive,
        Duration::from_secs(1800),
        started,
        format!("{detail}; every estimate exceeds -2 SE: {positive}"),
    );
}

#[test]
fn criterion_07_model_two_desk_scale() {
    let _guard = serial();
    let started = Instant::now();
    let (wins, detail, _) = desk_scale(7, ModelKind::Model2);
    verdict(7, wins >= 8, Duration::from_secs(1800), started, detail);
}

fn fixture_penn(seed: u64) -> Penn {
    let arch = PennArchitecture::new(
        Architecture::new(vec![3, 10, 6]).unwrap(),
        Architecture::new(vec![3, 5, 2]).unwrap(),
        Architecture::new(vec![8, 10, 1]).unwrap(),
    )
    .unwrap();
    Penn::init(&arch, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn fixture_data(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = Array2::from_shape_fn((n, 3), |_| f64::from(u8::from(rng.random_bool(0.7))));
    let z = uniform(&mut rng, n, 3, 1.0) * &omega;
    let y = Array1::from_shape_fn(n, |i| z[[i, 0]] * z[[i, 1]] + omega[[i, 2]]);
    Dataset::new(z, omega, y).unwrap()
}

#[test]
fn criterion_08_training_protocol() {
    let _guard = serial();
    let started = Instant::now();
    let mut problems = Vec::new();

    let model = fixture_penn(8);
    let total = model.weight_count();
    for lambda in [0.1, 0.25, 0.5, 0.8] {
        let mut pruned = model.clone();
        magnitude_prune(&mut pruned, lambda).unwrap();
        let (mut kept, mut dropped) = (Vec::new(), Vec::new());
        for (before, after) in model.subnets().iter().zip(pruned.subnets()) {
            for (lb, la) in before.layers().iter().zip(after.layers()) {
                if lb.bias != la.bias {
                    problems.push(format!("λ = {lambda}: a bias changed"));
                }
                for (wb, wa) in lb.weight.iter().zip(&la.weight) {
                    if *wa == 0.0 { dropped.push(wb.abs()) } else { kept.push(wb.abs()) }
                }
            }
        }
        let want = (lambda * total as f64).ceil() as usize;
        if kept.len() != want || kept_weights(lambda, total) != want {
            problems.push(format!("λ = {lambda}: kept {} weights, expected {want}", kept.len()));
        }
        let floor = kept.iter().copied().fold(f64::INFINITY, f64::min);
        if dropped.iter().any(|&d| d > floor) {
            problems.push(format!("λ = {lambda}: a larger weight was pruned"));
        }
    }

    let mut rule = StoppingRule::new(0.001, 10, 500);
    let fired = (1..=500).find(|&e| rule.observe(e, 0.7));
    if fired != Some(11) {
        problems.push(format!("stopping rule fired at {fired:?} on a flat curve"));
    }
    let data = fixture_data(64, 80);
    let mut flat = Mlp::zeros(Architecture::new(vec![3, 4, 1]).unwrap());
    let frozen = TrainConfig {
        adam: AdamConfig {
            learning_rate: 1e-300,
            ..AdamConfig::default()
        },
        ..TrainConfig::default()
    };
    let curve = train_with_early_stopping(&mut flat, &data, &data, &frozen, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    if curve.stop_epoch != 11 || curve.val_losses.windows(2).any(|w| w[0] != w[1]) {
        problems.push(format!("flat validation curve stopped at epoch {}", curve.stop_epoch));
    }

    if select_lambda(&[0.1, 0.2, 0.4, 0.8], &[0.5, 0.3, 0.4, 0.3]) != 1 {
        problems.push("grid argmin".into());
    }
    let train = fixture_data(300, 81);
    let val = fixture_data(100, 82);
    let config = TrainConfig {
        max_epochs: 40,
        batch_size: 32,
        seed: 8,
        ..TrainConfig::default()
    };
    let a = lambda_sweep(fixture_penn(9), &train, &val, &config).unwrap();
    let b = lambda_sweep(fixture_penn(9), &train, &val, &config).unwrap();
    let losses: Vec<f64> = a.runs.iter().map(|r| r.curve.best_val_loss).collect();
    let lambdas: Vec<f64> = a.runs.iter().map(|r| r.lambda).collect();
    if a.selected != select_lambda(&lambdas, &losses) || losses.iter().any(|&l| l < losses[a.selected]) {
        problems.push("sweep did not select the validation argmin".into());
    }
    let same = a.warm_losses == b.warm_losses
        && a.selected == b.selected
        && a.runs.iter().zip(&b.runs).all(|(x, y)| {
            x.curve.train_losses == y.curve.train_losses
                && x.curve.val_losses == y.curve.val_losses
                && x.network.param_vector() == y.network.param_vector()
        });
    if !same {
        problems.push("reruns differ".into());
    }
    verdict(
        8,
        problems.is_empty(),
        Duration::from_secs(60),
        started,
        format!("pruning at 4 levels, flat-curve stopping, grid argmin, rerun determinism; problems: {problems:?}"),
    );
}

#[test]
fn criterion_09_imputation() {
    let _guard = serial();
    let started = Instant::now();
    let mut problems = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 100_000;
    let mech = MissingnessMechanism::mcar(5, 0.7).unwrap();
    let x = uniform(&mut rng, n, 5, 1.0);
    let mut omega = Array2::<u8>::zeros((n, 5));
    for i in 0..n {
        let m = mech.draw_mask(&x.row(i).to_vec(), &mut rng).unwrap();
        omega.row_mut(i).assign(&Array1::from(m));
    }
    let data = PartialMatrix::from_masked(x.view(), omega.view()).unwrap();
    for kind in [ImputerKind::Zero, ImputerKind::ColumnMean, ImputerKind::DEFAULT_ITERATIVE] {
        let z = Imputer::fit(kind, &data).unwrap().transform(&data).unwrap();
        let preserved = z.indexed_iter().all(|((i, j), &v)| if omega[[i, j]] == 1 { v == x[[i, j]] } else { v.is_finite() });
        if !preserved {
            problems.push(format!("{kind:?} altered an observed entry"));
        }
    }
    let mut freqs = Vec::new();
    for j in 0..5 {
        let f = omega.column(j).iter().map(|&o| f64::from(o)).sum::<f64>() / n as f64;
        freqs.push(f);
        if (f - 0.7).abs() > 0.01 {
            problems.push(format!("column {j} observed with frequency {f}"));
        }
    }

    let m = 10_000;
    let mut lin = uniform(&mut rng, m, 3, 1.0);
    for i in 0..m {
        lin[[i, 2]] = 2.0 * lin[[i, 0]] - lin[[i, 1]] + 0.5;
    }
    let lin_omega = Array2::from_shape_fn((m, 3), |(_, j)| if j == 2 { u8::from(rng.random_bool(0.7)) } else { 1 });
    let partial = PartialMatrix::from_masked(lin.view(), lin_omega.view()).unwrap();
    let z = Imputer::fit(ImputerKind::DEFAULT_ITERATIVE, &partial).unwrap().transform(&partial).unwrap();
    let worst = (0..m)
        .filter(|&i| lin_omega[[i, 2]] == 0)
        .map(|i| (z[[i, 2]] - lin[[i, 2]]).abs())
        .fold(0.0, f64::max);
    if worst >= 1e-3 {
        problems.push(format!("iterative imputer error {worst}"));
    }
    verdict(
        9,
        problems.is_empty(),
        Duration::from_secs(120),
        started,
        format!("observed frequencies {freqs:.4?}, iterative worst error {worst:.2e}, problems: {problems:?}"),
    );
}

#[test]
fn criterion_10_metric_fixtures() {
    let _guard = serial();
    let started = Instant::now();
    let mut problems = Vec::new();

    let v = puv(ndarray::array![1.0, 2.0, 3.0, 4.0].view(), ndarray::array![1.0, 2.0, 3.0, 8.0].view()).unwrap();
    if (v - 4.0 / (29.0 / 3.0)).abs() > 1e-12 || (v - 0.4138).abs() > 1e-4 {
        problems.push(format!("PUV fixture {v}"));
    }

    let oracle = BayesOracle::closed_form(SimModel::new(ModelKind::Model1, 4).unwrap()).unwrap();
    let data = oracle.model().sample(2000, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
    let z = &data.x * &data.omega.mapv(f64::from);
    let f = oracle.values(z.view(), data.omega.view()).unwrap();
    let (er, _) = excess_risk(f.view(), &oracle, z.view(), data.omega.view(), data.y.view()).unwrap();
    let (er2, _) = paired_excess_risk(f.view(), f.view(), data.y.view()).unwrap();
    if er.abs() > 1e-12 || er2.abs() > 1e-12 {
        problems.push(format!("excess risk of the Bayes predictor {er}"));
    }

    let n = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let labels = Array1::from_shape_fn(n, |_| f64::from(u8::from(rng.random_bool(0.5))));
    let perfect = Array2::from_shape_fn((n, 2), |(i, k)| f64::from(u8::from(labels[i] as usize == k)));
    let wrong = perfect.mapv(|s| 1.0 - s);
    let noise = uniform(&mut rng, n, 2, 1.0);
    let (m0, m1, mr) = (
        mce(perfect.view(), labels.view()).unwrap(),
        mce(wrong.view(), labels.view()).unwrap(),
        mce(noise.view(), labels.view()).unwrap(),
    );
    let band = 3.0 * (0.25 / n as f64).sqrt();
    if m0 != 0.0 || m1 != 1.0 || (mr - 0.5).abs() > band {
        problems.push(format!("MCE fixtures {m0}, {m1}, {mr}"));
    }
    verdict(
        10,
        problems.is_empty(),
        Duration::from_secs(60),
        started,
        format!("PUV {v:.4}, Bayes excess risk {er:.1e}, MCE {m0}/{m1}/{mr:.4} (band ±{band:.3}); problems: {problems:?}"),
    );
}
