//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use sasa_core::geometry::Point3;
use sasa_core::{ForegroundScores, PointCloud, SplitMix64};

/// Quadratic S-FPS: every step rescans all selected points for every
/// candidate instead of keeping running minima.
pub fn brute_force_s_fps(coords: &[[f64; 3]], scores: &[f64], m: usize, gamma: f64) -> Vec<usize> {
    let n = coords.len();
    assert!(m >= 1 && m <= n);
    let dist = |a: &[f64; 3], b: &[f64; 3]| {
        let dx = a[0] - b[0];
        let dy = a[1] - b[1];
        let dz = a[2] - b[2];
        (dx * dx + dy * dy + dz * dz).sqrt()
    };
    let weight = |p: f64| if gamma == 0.0 { 1.0 } else { p.powf(gamma) };

    let mut first = 0;
    for i in 1..n {
        if scores[i] > scores[first] {
            first = i;
        }
    }
    let mut chosen = vec![first];
    while chosen.len() < m {
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..n {
            if chosen.contains(&j) {
                continue;
            }
            let d = chosen
                .iter()
                .map(|&k| dist(&coords[j], &coords[k]))
                .fold(f64::INFINITY, f64::min);
            let w = weight(scores[j]);
            let wd = if w == 0.0 { 0.0 } else { w * d };
            let take = match best {
                None => true,
                Some((_, bwd, bd)) => wd > bwd || (wd == bwd && d > bd),
            };
            if take {
                best = Some((j, wd, d));
            }
        }
        chosen.push(best.unwrap().0);
    }
    chosen
}

/// Largest distance from any input point to its nearest selected point.
pub fn coverage_radius(coords: &[[f64; 3]], selected: &[usize]) -> f64 {
    coords
        .iter()
        .map(|p| {
            selected
                .iter()
                .map(|&k| {
                    let q = coords[k];
                    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Central finite differences of `f` at `x`.
pub fn finite_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)` over whole vectors; 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Uniform points in a cube of side `extent` and scores in (0, 1].
pub fn random_instance(
    rng: &mut SplitMix64,
    n: usize,
    extent: f64,
) -> (Vec<Point3<f64>>, Vec<f64>) {
    let coords = (0..n)
        .map(|_| {
            [
                rng.uniform(0.0, extent),
                rng.uniform(0.0, extent),
                rng.uniform(0.0, extent),
            ]
        })
        .collect();
    let scores = (0..n).map(|_| 1.0 - rng.next_f64()).collect();
    (coords, scores)
}

pub fn cloud(coords: &[Point3<f64>]) -> PointCloud {
    PointCloud::from_coords(coords.to_vec()).unwrap()
}

pub fn scores(v: &[f64]) -> ForegroundScores {
    ForegroundScores::new(v.to_vec()).unwrap()
}

/// Fisher-Yates permutation of `0..n`.
pub fn permutation(rng: &mut SplitMix64, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut p);
    p
}

/// Rebuilds a network of the given widths from parameters laid out like
/// `MlpGradients::flatten`.
pub fn mlp_from_flat(widths: &[usize], flat: &[f64]) -> sasa_core::Mlp {
    use sasa_core::scorer::DenseLayer;
    let mut at = 0;
    let mut layers = Vec::new();
    for w in widths.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let weights =
            sasa_core::Matrix::from_vec(fan_out, fan_in, flat[at..at + fan_in * fan_out].to_vec())
                .unwrap();
        at += fan_in * fan_out;
        let bias = flat[at..at + fan_out].to_vec();
        at += fan_out;
        layers.push(DenseLayer::new(weights, bias).unwrap());
    }
    assert_eq!(at, flat.len());
    sasa_core::Mlp::new(layers).unwrap()
}

/// Flattened parameters in the same layout as `mlp_from_flat`.
pub fn mlp_to_flat(mlp: &sasa_core::Mlp) -> Vec<f64> {
    let mut out = Vec::new();
    for l in mlp.layers() {
        out.extend_from_slice(l.weights.as_slice());
        out.extend_from_slice(&l.bias);
    }
    out
}

/// Gaussian features with `n_pos` positives shifted by `shift` along the
/// first coordinate.
pub fn separable_set(
    seed: u64,
    n: usize,
    n_pos: usize,
    width: usize,
    shift: f64,
) -> (sasa_core::Matrix, sasa_core::SegmentationLabels) {
    let mut rng = SplitMix64::new(seed);
    let mut data = Vec::with_capacity(n * width);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let pos = i < n_pos;
        for c in 0..width {
            let v = rng.normal() + if pos && c == 0 { shift } else { 0.0 };
            data.push(v);
        }
        labels.push(pos);
    }
    (
        sasa_core::Matrix::from_vec(n, width, data).unwrap(),
        sasa_core::SegmentationLabels::new(labels),
    )
}
