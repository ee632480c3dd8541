use proptest::prelude::*;
use sasa_core::experiments::{
    config_hash, generate_scene_set, read_manifest, regenerate, verify_scene_set, MANIFEST_FILE,
};
use sasa_core::geometry::label_points;
use sasa_core::sceneio::{
    gen_scene, parse_kitti_bin, read_kitti_bin, scene_from_str, scene_load, scene_save,
    scene_to_string, voxel_downsample_indices, write_kitti_bin,
};
use sasa_core::{Matrix, PointCloud, SceneGenConfig, SplitMix64};
use std::path::Path;

fn seven() -> SceneGenConfig {
    SceneGenConfig {
        seed: 7,
        ..SceneGenConfig::default()
    }
}

#[test]
fn default_scene_has_the_requested_foreground_share() {
    let scene = gen_scene(&seven()).unwrap();
    let relabeled = label_points(&scene.cloud, &scene.boxes);
    assert_eq!(relabeled, scene.labels);
    let frac = scene.foreground_fraction();
    assert!((0.035..=0.053).contains(&frac), "{frac}");
    assert_eq!(scene.boxes.len(), 8);
}

#[test]
fn saved_scene_reloads_and_relabels_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.scene");
    let scene = gen_scene(&seven()).unwrap();
    scene_save(&path, &scene).unwrap();
    let back = scene_load(&path).unwrap();
    assert_eq!(back, scene);
    assert_eq!(label_points(&back.cloud, &back.boxes), scene.labels);
    assert_eq!(
        scene_to_string(&back),
        std::fs::read_to_string(&path).unwrap()
    );
}

#[test]
fn scene_text_errors_name_the_line() {
    let text = scene_to_string(
        &gen_scene(&SceneGenConfig {
            n_points: 256,
            seed: 1,
            ..SceneGenConfig::default()
        })
        .unwrap(),
    );
    let broken = text.replacen("sasa-scene 1", "hello", 1);
    assert!(scene_from_str(&broken, Path::new("x")).is_err());
    let mut lines: Vec<&str> = text.lines().collect();
    lines[5] = "1 2 nope 4";
    let err = scene_from_str(&lines.join("\n"), Path::new("x"))
        .unwrap_err()
        .to_string();
    assert!(err.contains("line 6"), "{err}");
}

#[test]
fn kitti_bytes_survive_read_then_write() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = SplitMix64::new(99);
    let mut bytes = Vec::new();
    for _ in 0..1000 {
        for v in [
            rng.uniform(-80.0, 80.0),
            rng.uniform(-80.0, 80.0),
            rng.uniform(-3.0, 3.0),
            rng.next_f64(),
        ] {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let src = dir.path().join("a.bin");
    let dst = dir.path().join("b.bin");
    std::fs::write(&src, &bytes).unwrap();
    let cloud = read_kitti_bin(&src).unwrap();
    assert_eq!(cloud.len(), 1000);
    write_kitti_bin(&dst, &cloud).unwrap();
    assert_eq!(std::fs::read(&dst).unwrap(), bytes);
    assert_eq!(read_kitti_bin(&dst).unwrap(), cloud);
}

#[test]
fn kitti_length_errors() {
    assert_eq!(parse_kitti_bin(&[], Path::new("e")).unwrap().len(), 0);
    let err = parse_kitti_bin(&[0u8; 17], Path::new("t"))
        .unwrap_err()
        .to_string();
    assert!(err.contains("byte offset 16"), "{err}");
}

#[test]
fn scene_sets_regenerate_from_their_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SceneGenConfig {
        n_points: 256,
        ..SceneGenConfig::default()
    };
    let manifest = generate_scene_set(dir.path(), 4, 21, &cfg).unwrap();
    verify_scene_set(dir.path()).unwrap();
    assert_eq!(
        read_manifest(&dir.path().join(MANIFEST_FILE)).unwrap(),
        manifest
    );
    let again = regenerate(&manifest).unwrap();
    for (entry, scene) in manifest.scenes.iter().zip(&again) {
        assert_eq!(&scene_load(&dir.path().join(&entry.file)).unwrap(), scene);
    }
    let victim = dir.path().join(&manifest.scenes[2].file);
    let text = std::fs::read_to_string(&victim).unwrap();
    std::fs::write(&victim, text.replacen("points 256", "points 255", 1)).unwrap();
    assert!(verify_scene_set(dir.path()).is_err());
}

#[test]
fn config_hash_tracks_every_generation_parameter() {
    let base = SceneGenConfig::default();
    let h = config_hash(10, 1, &base);
    assert_eq!(h, config_hash(10, 1, &base.clone()));
    assert_eq!(
        h,
        config_hash(
            10,
            1,
            &SceneGenConfig {
                seed: 5,
                ..base.clone()
            }
        )
    );
    let variants = [
        config_hash(11, 1, &base),
        config_hash(10, 2, &base),
        config_hash(
            10,
            1,
            &SceneGenConfig {
                n_points: 4097,
                ..base.clone()
            },
        ),
        config_hash(
            10,
            1,
            &SceneGenConfig {
                n_objects: 7,
                ..base.clone()
            },
        ),
        config_hash(
            10,
            1,
            &SceneGenConfig {
                foreground_fraction: 0.05,
                ..base.clone()
            },
        ),
        config_hash(
            10,
            1,
            &SceneGenConfig {
                clutter_fraction: 0.3,
                ..base.clone()
            },
        ),
        config_hash(
            10,
            1,
            &SceneGenConfig {
                ground_z: -1.6,
                ..base.clone()
            },
        ),
    ];
    for v in variants {
        assert_ne!(v, h);
    }
}

fn f32_cloud() -> impl Strategy<Value = PointCloud> {
    (0usize..200).prop_flat_map(|n| {
        (
            prop::collection::vec(prop::array::uniform3(-1e4f32..1e4), n),
            prop::collection::vec(0f32..1.0, n),
        )
            .prop_map(move |(c, r)| {
                let coords = c.iter().map(|p| p.map(f64::from)).collect();
                let refl = Matrix::from_vec(n, 1, r.iter().map(|&v| v as f64).collect()).unwrap();
                PointCloud::new(coords, Some(refl)).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kitti_write_read_is_bit_exact(cloud in f32_cloud()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        write_kitti_bin(&path, &cloud).unwrap();
        let back = read_kitti_bin(&path).unwrap();
        prop_assert_eq!(back.len(), cloud.len());
        for (a, b) in back.coords().iter().zip(cloud.coords()) {
            prop_assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        if !cloud.is_empty() {
            let (fa, fb) = (back.features().unwrap(), cloud.features().unwrap());
            prop_assert!(fa.as_slice().iter().zip(fb.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn voxel_output_is_bounded_and_drawn_from_input(
        pts in prop::collection::vec(prop::array::uniform3(-20.0f64..20.0), 1..300),
        size in 0.5f64..8.0,
        budget in 1usize..200,
        seed in any::<u64>(),
    ) {
        let cloud = PointCloud::from_coords(pts).unwrap();
        let idx = voxel_downsample_indices(&cloud, [size; 3], budget, seed).unwrap();
        let mut occupied: Vec<[i64; 3]> = cloud
            .coords()
            .iter()
            .map(|p| p.map(|v| (v / size).floor() as i64))
            .collect();
        occupied.sort_unstable();
        occupied.dedup();
        prop_assert_eq!(idx.len(), budget.min(occupied.len()));
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        let mut voxels: Vec<[i64; 3]> = idx.iter().map(|&i| cloud.point(i).map(|v| (v / size).floor() as i64)).collect();
        voxels.sort_unstable();
        voxels.dedup();
        prop_assert_eq!(voxels.len(), idx.len());
    }

    #[test]
    fn generation_is_deterministic(seed in any::<u64>(), objects in 0usize..10) {
        let cfg = SceneGenConfig { n_points: 300, n_objects: objects, seed, ..SceneGenConfig::default() };
        prop_assert_eq!(gen_scene(&cfg).unwrap(), gen_scene(&cfg).unwrap());
    }
}
