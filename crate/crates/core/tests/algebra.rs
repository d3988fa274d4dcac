use ndarray::{Array1, Array2};
use penn::algebra::{
    bump_gate, compose, enlarge, full_cube, pad, parallelize, separate_by_coordinates, PatternPartition,
};
use penn::nn::{Architecture, Layer, Mlp};
use penn::penn::Penn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-12;

fn inputs(rng: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    (0..1000)
        .map(|_| (0..d).map(|_| rng.random_range(-4.0..4.0)).collect())
        .collect()
}

fn assert_close(a: &[f64], b: &[f64]) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= TOL * (1.0 + y.abs()), "{a:?} vs {b:?}");
    }
}

#[test]
fn composition_equals_sequential_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let f1 = Mlp::init(Architecture::new(vec![3, 8, 8, 4]).unwrap(), &mut rng);
    let f2 = Mlp::init(Architecture::new(vec![4, 6, 2]).unwrap(), &mut rng);
    let h = compose(&f1, &f2).unwrap();
    assert_eq!(h.architecture().widths(), &[3, 8, 8, 6, 2]);
    for x in inputs(&mut rng, 3) {
        let seq = f2.forward(&f1.forward(&x).unwrap()).unwrap();
        assert_close(&h.forward(&x).unwrap(), &seq);
    }
}

#[test]
fn padding_preserves_function() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let f = Mlp::init(Architecture::new(vec![2, 5, 3]).unwrap(), &mut rng);
    let g = pad(&f, 3).unwrap();
    assert_eq!(g.architecture().depth(), 3);
    assert!(g.nonzero_count() <= 2 * f.nonzero_count() + 2 * 3 * 2);
    let mut negative_seen = false;
    for x in inputs(&mut rng, 2) {
        let want = f.forward(&x).unwrap();
        negative_seen |= want.iter().any(|&v| v < 0.0);
        assert_close(&g.forward(&x).unwrap(), &want);
    }
    assert!(negative_seen);
}

#[test]
fn parallel_output_is_concatenation() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let a = Mlp::init(Architecture::new(vec![3, 4, 5, 1]).unwrap(), &mut rng);
    let b = Mlp::init(Architecture::new(vec![3, 6, 2, 2]).unwrap(), &mut rng);
    let h = parallelize(&[a.clone(), b.clone()]).unwrap();
    assert_eq!(h.architecture().widths(), &[3, 10, 7, 3]);
    assert_eq!(h.nonzero_count(), a.nonzero_count() + b.nonzero_count());
    for x in inputs(&mut rng, 3) {
        let mut want = a.forward(&x).unwrap();
        want.extend(b.forward(&x).unwrap());
        assert_close(&h.forward(&x).unwrap(), &want);
    }
}

#[test]
fn enlarging_is_pointwise_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let f = Mlp::init(Architecture::new(vec![3, 2, 1]).unwrap(), &mut rng);
    let g = enlarge(&f, &Architecture::new(vec![3, 5, 1]).unwrap()).unwrap();
    assert_eq!(g.nonzero_count(), f.nonzero_count());
    for x in inputs(&mut rng, 3) {
        assert_close(&g.forward(&x).unwrap(), &f.forward(&x).unwrap());
    }
}

#[test]
fn bump_gate_matches_closed_form() {
    for (a, eps) in [(0.0, 1.0), (0.3, 0.05), (-2.0, 0.7)] {
        let h = bump_gate(a, eps).unwrap();
        for i in 0..=10_000 {
            let x = a - 2.0 * eps + 4.0 * eps * i as f64 / 10_000.0;
            let t = (x - a).abs();
            let want = if t <= eps / 2.0 {
                1.0
            } else if t >= eps {
                0.0
            } else {
                2.0 - 2.0 * t / eps
            };
            let got = h.forward(&[x]).unwrap()[0];
            assert!((got - want).abs() <= TOL, "h({x}) = {got}, want {want}");
        }
    }
}

#[test]
fn random_partition_of_cube_is_certified() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let cube = full_cube(5).unwrap();
    let mut labels: Vec<usize> = (0..cube.len()).map(|i| i % 4).collect();
    for i in (1..labels.len()).rev() {
        labels.swap(i, rng.random_range(0..=i));
    }
    let partition = PatternPartition::from_labels(5, cube.iter().cloned().zip(labels.iter().copied())).unwrap();
    let cert = separate_by_coordinates(&partition, &[0, 1, 2, 3, 4]).unwrap();
    // Independent exhaustive check of both certificate inequalities.
    for (p, &label) in cube.iter().zip(&labels) {
        let x: Vec<f64> = p.iter().map(|&b| f64::from(b)).collect();
        let y = cert.network.forward(&x).unwrap()[0];
        let anchor = (label + 1) as f64 / 4.0;
        assert!((y - anchor).abs() <= cert.margin / 2.0);
        assert_eq!(y, cert.network.forward(&x).unwrap()[0]);
    }
    for k in 0..4 {
        for k2 in k + 1..4 {
            let gap = (cert.anchors[k][0] - cert.anchors[k2][0]).abs();
            assert!(gap >= 2.0 * cert.margin - 1e-12);
        }
    }
    // Constant on each cell, exactly.
    for cell in partition.cells() {
        let values: Vec<f64> = cell
            .iter()
            .map(|p| {
                let x: Vec<f64> = p.iter().map(|&b| f64::from(b)).collect();
                cert.network.forward(&x).unwrap()[0]
            })
            .collect();
        assert!(values.iter().all(|&v| v == values[0]));
    }
}

#[test]
fn separating_net_as_penn_embedding() {
    let d = 3;
    let cube = full_cube(d).unwrap();
    let partition =
        PatternPartition::from_labels(d, cube.iter().map(|p| (p.clone(), usize::from(p[0] == 0)))).unwrap();
    let cert = separate_by_coordinates(&partition, &[0]).unwrap();
    let covariate = Mlp::from_layers(vec![Layer {
        weight: Array2::eye(d),
        bias: Array1::zeros(d),
    }])
    .unwrap();
    let combiner = Mlp::zeros(Architecture::new(vec![d + 1, 1]).unwrap());
    let penn = Penn::new(covariate, cert.network.clone(), combiner).unwrap();
    for p in &cube {
        let omega: Vec<f64> = p.iter().map(|&b| f64::from(b)).collect();
        let want = if p[0] == 1 { 0.5 } else { 1.0 };
        assert_eq!(penn.embed(&omega).unwrap(), vec![want]);
    }
}
