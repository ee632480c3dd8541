mod support;

use proptest::prelude::*;
use sasa_core::scorer::{
    loss_and_gradients, mlp_forward, seg_loss, train_segmenter, SegTrainConfig,
};
use sasa_core::{ForegroundScores, Matrix, Mlp, PointCloud, SegmentationLabels, SplitMix64};
use support::{finite_difference, mlp_from_flat, mlp_to_flat, relative_error, separable_set};

#[test]
fn analytic_gradients_match_finite_differences() {
    let widths = [3, 8, 1];
    for seed in 0..10u64 {
        let mlp = Mlp::init_uniform(&widths, seed).unwrap();
        let (features, labels) = separable_set(100 + seed, 20, 7, 3, 1.0);
        let (_, grads) = loss_and_gradients(&mlp, &features, &labels, 1.0, 1.0).unwrap();
        let numeric = finite_difference(&mlp_to_flat(&mlp), 1e-5, |theta| {
            let net = mlp_from_flat(&widths, theta);
            loss_and_gradients(&net, &features, &labels, 1.0, 1.0)
                .unwrap()
                .0
        });
        let err = relative_error(&grads.flatten(), &numeric);
        assert!(err < 1e-4, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn weighted_loss_gradients_match_finite_differences() {
    let widths = [2, 5, 4, 1];
    let mlp = Mlp::init_uniform(&widths, 9).unwrap();
    let (features, labels) = separable_set(4, 30, 5, 2, 2.0);
    let (_, grads) = loss_and_gradients(&mlp, &features, &labels, 0.3, 6.0).unwrap();
    let numeric = finite_difference(&mlp_to_flat(&mlp), 1e-5, |theta| {
        loss_and_gradients(&mlp_from_flat(&widths, theta), &features, &labels, 0.3, 6.0)
            .unwrap()
            .0
    });
    assert!(relative_error(&grads.flatten(), &numeric) < 1e-4);
}

fn toy_scene(seed: u64) -> (PointCloud, SegmentationLabels) {
    let (f, labels) = separable_set(seed, 400, 60, 3, 5.0);
    let coords = (0..400).map(|i| [i as f64, 0.0, 0.0]).collect();
    (PointCloud::new(coords, Some(f)).unwrap(), labels)
}

fn accuracy(mlp: &Mlp, cloud: &PointCloud, labels: &SegmentationLabels) -> f64 {
    let s = mlp_forward(mlp, cloud.features().unwrap()).unwrap();
    let hits = s
        .as_slice()
        .iter()
        .zip(labels.as_slice())
        .filter(|(&p, &y)| (p >= 0.5) == y)
        .count();
    hits as f64 / labels.len() as f64
}

#[test]
fn separable_toy_set_is_learned() {
    let data = vec![toy_scene(1), toy_scene(2)];
    let cfg = SegTrainConfig {
        learning_rate: 1.0,
        epochs: 200,
        level_weights: vec![1.0],
        rng_seed: 5,
        positive_class_weight: 1.0,
    };
    let out = train_segmenter(&data, cfg.initial_mlp(&[3, 16, 1]).unwrap(), &cfg).unwrap();
    let (test_cloud, test_labels) = toy_scene(3);
    assert!(accuracy(&out.mlp, &test_cloud, &test_labels) > 0.95);
}

#[test]
fn loss_decreases_on_toy_set() {
    let data = vec![toy_scene(7)];
    let cfg = SegTrainConfig {
        learning_rate: 0.1,
        epochs: 200,
        level_weights: vec![1.0],
        rng_seed: 2,
        positive_class_weight: 1.0,
    };
    let out = train_segmenter(&data, cfg.initial_mlp(&[3, 16, 1]).unwrap(), &cfg).unwrap();
    let h = &out.loss_history;
    assert_eq!(h.len(), 200);
    for w in h[10..].windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{} then {}", w[0], w[1]);
    }
    assert!(h[199] < h[0]);
}

#[test]
fn model_survives_save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scorer.bin");
    let mlp = Mlp::init_uniform(&[2, 64, 1], 17).unwrap();
    mlp.save(&path).unwrap();
    assert_eq!(Mlp::load(&path).unwrap(), mlp);
    std::fs::write(&path, b"SASAMLP").unwrap();
    assert!(Mlp::load(&path).is_err());
}

fn features(width: usize) -> impl Strategy<Value = Matrix> {
    (1usize..40).prop_flat_map(move |n| {
        prop::collection::vec(-1e3f64..1e3, n * width)
            .prop_map(move |v| Matrix::from_vec(n, width, v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scores_open_interval_and_finite_loss(f in features(2), seed in 0u64..1000, scale in 1.0f64..1e3) {
        let mut mlp = Mlp::init_uniform(&[2, 6, 1], seed).unwrap();
        for l in mlp.layers_mut() {
            l.weights.as_mut_slice().iter_mut().for_each(|w| *w *= scale);
        }
        let s = mlp_forward(&mlp, &f).unwrap();
        prop_assert!(s.as_slice().iter().all(|&p| p > 0.0 && p < 1.0));
        let mut rng = SplitMix64::new(seed);
        let labels = SegmentationLabels::new((0..f.rows()).map(|_| rng.below(2) == 1).collect());
        let loss = seg_loss(&[s], &[labels], &[1.0]).unwrap();
        prop_assert!(loss.is_finite() && loss >= 0.0);
    }

    #[test]
    fn loss_ignores_point_order(p in prop::collection::vec(0.0f64..=1.0, 1..60), seed in 0u64..1000) {
        let mut rng = SplitMix64::new(seed);
        let y: Vec<bool> = p.iter().map(|_| rng.below(2) == 1).collect();
        let perm = support::permutation(&mut rng, p.len());
        let a = seg_loss(
            &[ForegroundScores::new(p.clone()).unwrap()],
            &[SegmentationLabels::new(y.clone())],
            &[0.1],
        ).unwrap();
        let b = seg_loss(
            &[ForegroundScores::new(perm.iter().map(|&i| p[i]).collect()).unwrap()],
            &[SegmentationLabels::new(perm.iter().map(|&i| y[i]).collect())],
            &[0.1],
        ).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn raising_output_bias_raises_every_score(f in features(3), seed in 0u64..1000, delta in 0.01f64..3.0) {
        let mlp = Mlp::init_uniform(&[3, 4, 1], seed).unwrap();
        let mut up = mlp.clone();
        let last = up.layers_mut().last_mut().unwrap();
        last.bias[0] += delta;
        let a = mlp_forward(&mlp, &f).unwrap();
        let b = mlp_forward(&up, &f).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            // Saturated scores are clamped and may only tie.
            prop_assert!(y > x || (y == x && (*x < 1e-9 || *x > 1.0 - 1e-9)));
        }
    }
}
