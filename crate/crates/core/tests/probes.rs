use lumos_core::datamodel::TaskKind;
use lumos_core::embeddings::{
    aggregate, eval_probe, train_probe, AggregationStrategy, ProbeConfig, ProbeKind,
};
use lumos_core::tensor::Mat;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn separable(n: usize, d: usize, seed: u64) -> (Mat<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Mat::zeros(n, d);
    let mut y = Vec::with_capacity(n);
    for r in 0..n {
        let label = r % 2;
        for (j, v) in x.row_mut(r).iter_mut().enumerate() {
            *v = rng.random_range(-1.0..1.0)
                + if j == 0 {
                    3.0 * label as f64 - 1.5
                } else {
                    0.0
                };
        }
        y.push(label as f64);
    }
    (x, y)
}

#[test]
fn logistic_probe_separates_a_separable_toy() {
    let (x, y) = separable(200, 5, 1);
    let probe = train_probe(&x, &y, &ProbeConfig::default()).unwrap();
    assert!(probe.accuracy(&x, &y).unwrap() >= 0.99);
    assert!(eval_probe(&probe, &x, &y).unwrap() >= 0.99);
}

#[test]
fn mlp_probe_separates_a_separable_toy() {
    let (x, y) = separable(200, 5, 2);
    let cfg = ProbeConfig {
        kind: ProbeKind::Mlp,
        ..ProbeConfig::default()
    };
    let probe = train_probe(&x, &y, &cfg).unwrap();
    assert!(eval_probe(&probe, &x, &y).unwrap() >= 0.99);
}

#[test]
fn permuted_labels_give_chance_auc() {
    let (x, y) = separable(4000, 5, 3);
    let half = 2000;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut shuffled = y.clone();
    shuffled.shuffle(&mut rng);
    let train_x = Mat::from_vec(half, 5, x.as_slice()[..half * 5].to_vec()).unwrap();
    let test_x = Mat::from_vec(half, 5, x.as_slice()[half * 5..].to_vec()).unwrap();
    let probe = train_probe(&train_x, &shuffled[..half], &ProbeConfig::default()).unwrap();
    let auc = eval_probe(&probe, &test_x, &shuffled[half..]).unwrap();
    assert!((auc - 0.5).abs() <= 0.05, "auc {auc}");
}

#[test]
fn ridge_probe_fits_a_linear_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut x = Mat::zeros(300, 3);
    let mut y = Vec::new();
    for r in 0..300 {
        let row: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        y.push(10.0 + 2.0 * row[0] - row[2]);
        x.row_mut(r).copy_from_slice(&row);
    }
    let cfg = ProbeConfig {
        target_kind: TaskKind::Continuous,
        ..ProbeConfig::default()
    };
    let probe = train_probe(&x, &y, &cfg).unwrap();
    assert!(eval_probe(&probe, &x, &y).unwrap() < 0.5);
}

#[test]
fn aggregation_limits_at_full_history_width() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (rows, cols) = (360, 512);
    let h = Mat::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap();
    let pad = vec![false; rows];
    let mean = aggregate(&h, AggregationStrategy::MEAN, &pad).unwrap();
    let wide = aggregate(&h, AggregationStrategy::exp_weighted(1e9).unwrap(), &pad).unwrap();
    let last = aggregate(&h, AggregationStrategy::LAST, &pad).unwrap();
    let narrow = aggregate(&h, AggregationStrategy::exp_weighted(1e-3).unwrap(), &pad).unwrap();
    for j in 0..cols {
        assert!((mean[j] - wide[j]).abs() < 1e-6);
        assert!((last[j] - narrow[j]).abs() < 1e-6);
    }
}

#[test]
fn exp_weighting_depends_on_order() {
    let h = Mat::from_vec(3, 1, vec![1.0, 2.0, 4.0]).unwrap();
    let r = Mat::from_vec(3, 1, vec![4.0, 2.0, 1.0]).unwrap();
    let s = AggregationStrategy::exp_weighted(1.0).unwrap();
    let pad = [false; 3];
    assert_ne!(
        aggregate(&h, s, &pad).unwrap(),
        aggregate(&r, s, &pad).unwrap()
    );
}
