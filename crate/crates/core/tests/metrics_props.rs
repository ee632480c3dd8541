mod support;

use proptest::prelude::*;
use sasa_core::evalmetrics::{
    aggregate, evaluate_scene, foreground_rate, point_recall, RecallAverage,
};
use sasa_core::experiments::{oracle_scores, scene_score_seed};
use sasa_core::sampling::{fps, s_fps};
use sasa_core::sceneio::gen_scene;
use sasa_core::{OrientedBox, PointCloud, SFpsConfig, SceneGenConfig, SplitMix64};

fn small_scene(seed: u64) -> sasa_core::SceneSample {
    gen_scene(&SceneGenConfig {
        n_points: 512,
        seed,
        ..SceneGenConfig::default()
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn recall_never_drops_along_a_sampling_prefix(seed in 0u64..10_000, gamma in 0.0f64..4.0) {
        let scene = small_scene(seed);
        let n = scene.cloud.len();
        let scores = oracle_scores(&scene.labels, 0.3, scene_score_seed(1, seed)).unwrap();
        let cfg = SFpsConfig::new(gamma).unwrap();
        for order in [
            s_fps(&scene.cloud, &scores, 160, &cfg).unwrap().indices,
            fps(&scene.cloud, 160, seed as usize % n).unwrap().indices,
        ] {
            let mut last = 0.0;
            for m in (1..=order.len()).step_by(7) {
                let r = point_recall(&order[..m], &scene.cloud, &scene.boxes).unwrap();
                prop_assert!(r >= last);
                last = r;
            }
        }
    }

    #[test]
    fn metrics_ignore_point_order(seed in 0u64..10_000, m in 1usize..200) {
        let scene = small_scene(seed);
        let n = scene.cloud.len();
        let mut rng = SplitMix64::new(seed ^ 0xABCD);
        let sampled: Vec<usize> = support::permutation(&mut rng, n)[..m].to_vec();
        let perm = support::permutation(&mut rng, n);
        let mut inverse = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let shuffled = scene.cloud.select(&perm);
        let remapped: Vec<usize> = sampled.iter().map(|&i| inverse[i]).collect();
        let a = evaluate_scene("a", &sampled, &scene.cloud, &scene.boxes).unwrap();
        let b = evaluate_scene("a", &remapped, &shuffled, &scene.boxes).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn all_foreground_cloud_has_unit_rate(
        local in prop::collection::vec(prop::array::uniform3(-0.5f64..=0.5), 1..50),
        yaw in -3.0f64..3.0,
        frac in 0.0f64..1.0,
    ) {
        let b = OrientedBox::new([4.0, -2.0, 0.5], [4.0, 2.0, 1.5], yaw).unwrap();
        let (s, c) = yaw.sin_cos();
        let pts: Vec<_> = local
            .iter()
            .map(|p| {
                let (x, y, z) = (p[0] * 3.9, p[1] * 1.9, p[2] * 1.4);
                [4.0 + c * x - s * y, -2.0 + s * x + c * y, 0.5 + z]
            })
            .collect();
        let cloud = PointCloud::from_coords(pts).unwrap();
        let m = 1 + ((cloud.len() - 1) as f64 * frac) as usize;
        let idx = fps(&cloud, m, 0).unwrap().indices;
        prop_assert_eq!(foreground_rate(&idx, &cloud, &[b]).unwrap(), 1.0);
    }
}

#[test]
fn aggregate_masks_box_free_scenes() {
    let with_boxes = small_scene(1);
    let empty = gen_scene(&SceneGenConfig {
        n_points: 256,
        n_objects: 0,
        seed: 2,
        ..SceneGenConfig::default()
    })
    .unwrap();
    let rows = vec![
        evaluate_scene(
            "a",
            &(0..512).collect::<Vec<_>>(),
            &with_boxes.cloud,
            &with_boxes.boxes,
        )
        .unwrap(),
        evaluate_scene("b", &[0, 1, 2], &empty.cloud, &empty.boxes).unwrap(),
    ];
    let r = aggregate("all", 1, 3, rows, RecallAverage::Macro).unwrap();
    assert_eq!(r.point_recall, Some(1.0));
    assert_eq!(r.recall_scenes, 1);
    assert_eq!(r.scenes, 2);
    assert!(point_recall(&[0], &empty.cloud, &empty.boxes).is_err());
}
