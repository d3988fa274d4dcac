use ndarray::{Array1, Array2};
use penn::nn::{AdamConfig, Architecture, LayerMask, Mlp};
use penn::penn::{Penn, PennArchitecture, Task};
use penn::train::{
    kept_weights, lambda_sweep, magnitude_prune, reinitialize_survivors, train_with_early_stopping, warm_train,
    Dataset, TrainConfig, Trainable,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn regression_data(n: usize, d: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
    let omega = Array2::from_shape_fn((n, d), |_| f64::from(u8::from(rng.random_bool(0.7))));
    let y = Array1::from_shape_fn(n, |i| z.row(i).sum() + omega[[i, 0]]);
    Dataset::new(&z * &omega, omega, y).unwrap()
}

fn small_penn(d: usize, seed: u64) -> Penn {
    let arch = PennArchitecture::new(
        Architecture::new(vec![d, 8, 8]).unwrap(),
        Architecture::new(vec![d, 6, 2]).unwrap(),
        Architecture::new(vec![10, 8, 1]).unwrap(),
    )
    .unwrap();
    Penn::init(&arch, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn quick_config(seed: u64) -> TrainConfig {
    TrainConfig {
        warm_epochs: 3,
        max_epochs: 30,
        batch_size: 32,
        adam: AdamConfig {
            learning_rate: 1e-2,
            ..AdamConfig::default()
        },
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn linear_neuron_loss_decreases() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let z = Array2::from_shape_fn((200, 1), |_| rng.random_range(-1.0..1.0));
    let y = z.column(0).mapv(|x| 3.0 * x);
    let data = Dataset::new(z, Array2::ones((200, 1)), y).unwrap();
    let mut net = Mlp::zeros(Architecture::new(vec![1, 1]).unwrap());
    let config = TrainConfig {
        warm_epochs: 10,
        batch_size: 200,
        adam: AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        },
        ..TrainConfig::default()
    };
    let losses = warm_train(&mut net, &data, &config, &mut rng).unwrap();
    assert_eq!(losses.len(), 10);
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn pooled_pruning_keeps_exact_count_and_biases() {
    let mut penn = small_penn(4, 52);
    let total = penn.weight_count();
    for lambda in [0.1, 0.2, 0.4, 0.8, 1.0] {
        let mut model = penn.clone();
        magnitude_prune(&mut model, lambda).unwrap();
        let kept: usize = Trainable::subnets(&model)
            .iter()
            .flat_map(|n| n.layers())
            .map(|l| l.weight.iter().filter(|&&w| w != 0.0).count())
            .sum();
        assert_eq!(kept, kept_weights(lambda, total));
        assert_eq!(kept, (lambda * total as f64).ceil() as usize);
        for net in Trainable::subnets(&model) {
            for layer in net.layers() {
                assert!(layer.bias.iter().all(|&b| b != 0.0));
            }
        }
    }
    magnitude_prune(&mut penn, 0.1).unwrap();
}

#[test]
fn reinitialisation_keeps_support() {
    let mut model = small_penn(3, 53);
    magnitude_prune(&mut model, 0.2).unwrap();
    let masks: Vec<_> = Trainable::subnets(&model).iter().map(|n| n.mask_vector()).collect();
    let mut a = model.clone();
    let mut b = model.clone();
    reinitialize_survivors(&mut a, &mut ChaCha8Rng::seed_from_u64(1));
    reinitialize_survivors(&mut b, &mut ChaCha8Rng::seed_from_u64(2));
    for m in [&a, &b] {
        let now: Vec<_> = Trainable::subnets(m).iter().map(|n| n.mask_vector()).collect();
        assert_eq!(now, masks);
        let support = |p: Vec<f64>| p.iter().map(|&v| v != 0.0).collect::<Vec<_>>();
        assert_eq!(support(m.param_vector()), support(model.param_vector()));
    }
    assert_ne!(a.param_vector(), b.param_vector());

    let mut net = Mlp::init(Architecture::new(vec![2, 3, 1]).unwrap(), &mut ChaCha8Rng::seed_from_u64(3));
    let mut mask: Vec<LayerMask> = net.layers().iter().map(|l| LayerMask::full(l.outputs(), l.inputs())).collect();
    mask[0].weight.fill(false);
    net.set_mask(mask).unwrap();
    reinitialize_survivors(&mut net, &mut ChaCha8Rng::seed_from_u64(4));
    assert!(net.layers()[0].weight.iter().all(|&w| w == 0.0));
}

#[test]
fn early_stopping_on_flat_validation_loss() {
    let data = regression_data(64, 2, 54);
    let mut net = Mlp::zeros(Architecture::new(vec![2, 3, 1]).unwrap());
    let config = TrainConfig {
        adam: AdamConfig {
            learning_rate: 1e-300,
            ..AdamConfig::default()
        },
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let curve = train_with_early_stopping(&mut net, &data, &data, &config, &mut rng).unwrap();
    assert!(curve.val_losses.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(curve.stop_epoch, 1 + config.early_stop_patience);

    let capped = TrainConfig {
        max_epochs: 5,
        ..config
    };
    let curve = train_with_early_stopping(&mut net, &data, &data, &capped, &mut rng).unwrap();
    assert_eq!(curve.stop_epoch, 5);
}

#[test]
fn snapshot_has_the_best_recorded_loss() {
    let data = regression_data(200, 3, 55);
    let val = regression_data(100, 3, 56);
    let mut net = Mlp::init(Architecture::new(vec![3, 8, 1]).unwrap(), &mut ChaCha8Rng::seed_from_u64(5));
    let curve = train_with_early_stopping(&mut net, &data, &val, &quick_config(0), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    assert!(curve.val_losses.iter().all(|&v| curve.best_val_loss <= v));
    let again = net.loss(&val, penn::nn::LossKind::Squared).unwrap();
    assert_eq!(again, curve.best_val_loss);
    assert_eq!(curve.val_losses[curve.best_epoch - 1], curve.best_val_loss);
}

#[test]
fn sweep_is_deterministic_sound_and_sparse() {
    let train = regression_data(300, 3, 57);
    let val = regression_data(100, 3, 58);
    let run = || lambda_sweep(small_penn(3, 59), &train, &val, &quick_config(9)).unwrap();
    let a = run();
    let b = run();
    assert_eq!(a.runs.len(), 4);
    assert_eq!(a.selected_lambda(), b.selected_lambda());
    assert_eq!(a.selected_network().param_vector(), b.selected_network().param_vector());
    let best = a.runs.iter().map(|r| r.curve.best_val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(a.selected_run().curve.best_val_loss, best);
    for run in &a.runs {
        for net in Trainable::subnets(&run.network) {
            let mask = net.mask_vector().unwrap();
            for (p, keep) in net.param_vector().iter().zip(mask) {
                assert!(keep || *p == 0.0);
            }
        }
        assert!(run.nonzero_count <= run.kept_weights + small_penn(3, 0).param_count() - small_penn(3, 0).weight_count());
    }
}

#[test]
fn full_grid_matches_warm_plus_dense_retrain() {
    let train = regression_data(200, 2, 60);
    let val = regression_data(80, 2, 61);
    let config = TrainConfig {
        lambda_grid: vec![1.0],
        ..quick_config(3)
    };
    let init = Mlp::init(Architecture::new(vec![2, 6, 1]).unwrap(), &mut ChaCha8Rng::seed_from_u64(7));
    let report = lambda_sweep(init.clone(), &train, &val, &config).unwrap();
    assert_eq!(report.runs.len(), 1);
    assert_eq!(report.selected, 0);
    let run = report.selected_run();
    assert_eq!(run.kept_weights, init.architecture().weight_count());
    assert!(run.network.mask_vector().unwrap().iter().all(|&k| k));
}

#[test]
fn classification_sweep_runs() {
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    let z = Array2::from_shape_fn((120, 2), |_| rng.random_range(-1.0..1.0));
    let y = z.column(0).mapv(|v| f64::from(u8::from(v > 0.0)));
    let data = Dataset::new(z, Array2::ones((120, 2)), y).unwrap();
    let arch = PennArchitecture::new(
        Architecture::new(vec![2, 6, 4]).unwrap(),
        Architecture::new(vec![2, 4, 2]).unwrap(),
        Architecture::new(vec![6, 6, Task::Classification { classes: 2 }.output_width()]).unwrap(),
    )
    .unwrap();
    let config = TrainConfig {
        loss: Task::Classification { classes: 2 }.loss(),
        ..quick_config(1)
    };
    let report = lambda_sweep(Penn::init(&arch, &mut rng), &data, &data, &config).unwrap();
    assert!(report.selected_run().curve.best_val_loss < std::f64::consts::LN_2);
}
