//! Scene generation and file formats.
//!
//! # Native scene format (version 1)
//!
//! Plain UTF-8 text, one record per line, fields separated by single spaces:
//!
//! ```text
//! sasa-scene 1
//! seed <u64>
//! points <N> <C>
//! <x> <y> <z> <f_1> ... <f_C>        (N lines)
//! boxes <B>
//! <cx> <cy> <cz> <length> <width> <height> <yaw>   (B lines)
//! ```
//!
//! Reals are written in Rust's shortest round-trip decimal form, so a reload
//! reproduces every coordinate and box parameter exactly. Boxes are in the
//! LiDAR frame. Labels are not stored; they are re-derived from the boxes.
//!
//! # KITTI velodyne `.bin`
//!
//! Consecutive little-endian `f32` quadruples `(x, y, z, reflectance)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{label_points, rotate_z, OrientedBox, PointCloud, SegmentationLabels};
use crate::linalg::Matrix;
use crate::rng::SplitMix64;

/// One scene: points, boxes, derived labels and the generating seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub cloud: PointCloud<f64>,
    pub boxes: Vec<OrientedBox<f64>>,
    pub labels: SegmentationLabels,
    pub seed: u64,
}

impl SceneSample {
    pub fn new(cloud: PointCloud<f64>, boxes: Vec<OrientedBox<f64>>, seed: u64) -> Self {
        let labels = label_points(&cloud, &boxes);
        Self {
            cloud,
            boxes,
            labels,
            seed,
        }
    }

    pub fn foreground_fraction(&self) -> f64 {
        if self.cloud.is_empty() {
            return 0.0;
        }
        self.labels.foreground_count() as f64 / self.cloud.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGenConfig {
    pub n_points: usize,
    pub n_objects: usize,
    pub foreground_fraction: f64,
    /// Extent of the scene along x and y, meters.
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub ground_z: f64,
    pub length_range: (f64, f64),
    pub width_range: (f64, f64),
    pub height_range: (f64, f64),
    /// Share of background points on vertical clutter rather than the ground.
    pub clutter_fraction: f64,
    pub seed: u64,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        Self {
            n_points: 4096,
            n_objects: 8,
            foreground_fraction: 0.044,
            x_range: (0.0, 40.0),
            y_range: (-20.0, 20.0),
            ground_z: -1.7,
            length_range: (3.2, 4.8),
            width_range: (1.5, 1.9),
            height_range: (1.3, 1.8),
            clutter_fraction: 0.25,
            seed: 0,
        }
    }
}

const GROUND_NOISE: f64 = 0.05;
const BOX_CLEARANCE: f64 = 0.15;
const POLE_POINTS: usize = 24;
const POLE_HEIGHT: f64 = 3.0;
const PLACEMENT_ATTEMPTS: usize = 2000;

fn valid_range(r: (f64, f64), positive: bool) -> bool {
    r.0.is_finite() && r.1.is_finite() && r.0 <= r.1 && (!positive || r.0 > 0.0)
}

impl SceneGenConfig {
    /// Number of foreground points the generator will place.
    pub fn foreground_points(&self) -> usize {
        if self.n_objects == 0 {
            0
        } else {
            (self.foreground_fraction * self.n_points as f64).round() as usize
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_points == 0 {
            return bad("n_points must be positive".into());
        }
        if !(self.foreground_fraction > 0.0 && self.foreground_fraction < 1.0)
            && (self.n_objects > 0 || !(0.0..1.0).contains(&self.foreground_fraction))
        {
            return bad(format!(
                "foreground fraction {} must lie in (0, 1) when objects are requested",
                self.foreground_fraction
            ));
        }
        if !valid_range(self.x_range, false) || !valid_range(self.y_range, false) {
            return bad("scene extent must be finite and ordered".into());
        }
        for (name, r) in [
            ("length", self.length_range),
            ("width", self.width_range),
            ("height", self.height_range),
        ] {
            if !valid_range(r, true) {
                return bad(format!("{name} range must be positive and ordered"));
            }
        }
        if !(0.0..=1.0).contains(&self.clutter_fraction) || !self.ground_z.is_finite() {
            return bad("clutter fraction must lie in [0, 1] and ground height be finite".into());
        }
        if self.n_objects > 0 {
            let fg = self.foreground_points();
            let realized = fg as f64 / self.n_points as f64;
            if fg < self.n_objects {
                return bad(format!(
                    "{fg} foreground points cannot cover {} objects",
                    self.n_objects
                ));
            }
            if (realized - self.foreground_fraction).abs() > 0.2 * self.foreground_fraction {
                return bad(format!(
                    "foreground fraction {} not achievable with {} points",
                    self.foreground_fraction, self.n_points
                ));
            }
            let max_len = self.length_range.1.max(self.width_range.1);
            if self.x_range.1 - self.x_range.0 < max_len + 1.0
                || self.y_range.1 - self.y_range.0 < max_len + 1.0
            {
                return bad("scene extent too small for the requested objects".into());
            }
        }
        Ok(())
    }
}

fn inside_any(p: &[f64; 3], boxes: &[OrientedBox<f64>]) -> bool {
    boxes.iter().any(|b| b.contains(p))
}

fn footprint_radius(b: &OrientedBox<f64>) -> f64 {
    let [l, w, _] = b.dims();
    0.5 * (l * l + w * w).sqrt()
}

fn place_boxes(cfg: &SceneGenConfig, rng: &mut SplitMix64) -> Result<Vec<OrientedBox<f64>>> {
    let mut boxes: Vec<OrientedBox<f64>> = Vec::with_capacity(cfg.n_objects);
    for _ in 0..cfg.n_objects {
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let l = rng.uniform(cfg.length_range.0, cfg.length_range.1);
            let w = rng.uniform(cfg.width_range.0, cfg.width_range.1);
            let h = rng.uniform(cfg.height_range.0, cfg.height_range.1);
            let r = 0.5 * (l * l + w * w).sqrt();
            let x = rng.uniform(cfg.x_range.0 + r, cfg.x_range.1 - r);
            let y = rng.uniform(cfg.y_range.0 + r, cfg.y_range.1 - r);
            let yaw = rng.uniform(-std::f64::consts::PI, std::f64::consts::PI);
            let z = cfg.ground_z + BOX_CLEARANCE + h / 2.0;
            let clear = boxes.iter().all(|b| {
                let c = b.center();
                let d = ((c[0] - x).powi(2) + (c[1] - y).powi(2)).sqrt();
                d > r + footprint_radius(b) + 0.5
            });
            if clear {
                placed = Some(OrientedBox::new([x, y, z], [l, w, h], yaw)?);
                break;
            }
        }
        match placed {
            Some(b) => boxes.push(b),
            None => {
                return Err(Error::Config(format!(
                    "could not place {} non-overlapping objects in the scene extent",
                    cfg.n_objects
                )))
            }
        }
    }
    Ok(boxes)
}

/// Points per object, denser for objects near the sensor at the origin.
fn allocate_object_points(boxes: &[OrientedBox<f64>], total: usize) -> Vec<usize> {
    if boxes.is_empty() {
        return Vec::new();
    }
    let weights: Vec<f64> = boxes
        .iter()
        .map(|b| {
            let c = b.center();
            let r = (c[0] * c[0] + c[1] * c[1]).sqrt().max(5.0);
            1.0 / (r * r)
        })
        .collect();
    let wsum: f64 = weights.iter().sum();
    let spare = total - boxes.len();
    let shares: Vec<f64> = weights.iter().map(|w| w / wsum * spare as f64).collect();
    let mut counts: Vec<usize> = shares.iter().map(|s| 1 + s.floor() as usize).collect();
    let mut left = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = shares[a] - shares[a].floor();
        let fb = shares[b] - shares[b].floor();
        fb.partial_cmp(&fa).expect("finite").then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Seeded synthetic outdoor scene: a noisy ground plane, vertical clutter,
/// and car-sized upright boxes filled with foreground points.
pub fn gen_scene(config: &SceneGenConfig) -> Result<SceneSample> {
    config.validate()?;
    let mut rng = SplitMix64::new(config.seed);
    let boxes = place_boxes(config, &mut rng)?;
    let n_fg = config.foreground_points();
    let n_bg = config.n_points - n_fg;
    let n_clutter = (config.clutter_fraction * n_bg as f64).round() as usize;

    let mut points: Vec<([f64; 3], f64)> = Vec::with_capacity(config.n_points);
    for (b, count) in boxes.iter().zip(allocate_object_points(&boxes, n_fg)) {
        let [l, w, h] = b.dims();
        let c = b.center();
        for _ in 0..count {
            let local = [
                rng.uniform(-0.49 * l, 0.49 * l),
                rng.uniform(-0.49 * w, 0.49 * w),
                rng.uniform(-0.49 * h, 0.49 * h),
            ];
            let r = rotate_z(&local, b.yaw());
            points.push((
                [c[0] + r[0], c[1] + r[1], c[2] + r[2]],
                rng.uniform(0.3, 0.95),
            ));
        }
    }

    let mut pole = None;
    for i in 0..n_clutter {
        if i % POLE_POINTS == 0 {
            pole = Some(loop {
                let px = rng.uniform(config.x_range.0, config.x_range.1);
                let py = rng.uniform(config.y_range.0, config.y_range.1);
                let clear = boxes.iter().all(|b| {
                    let c = b.center();
                    ((c[0] - px).powi(2) + (c[1] - py).powi(2)).sqrt() > footprint_radius(b) + 1.0
                });
                if clear {
                    break (px, py);
                }
            });
        }
        let (px, py) = pole.expect("set on first clutter point");
        let p = loop {
            let p = [
                px + 0.15 * rng.normal(),
                py + 0.15 * rng.normal(),
                config.ground_z + rng.uniform(0.0, POLE_HEIGHT),
            ];
            if !inside_any(&p, &boxes) {
                break p;
            }
        };
        points.push((p, rng.uniform(0.05, 0.6)));
    }

    for _ in n_clutter..n_bg {
        let p = loop {
            let p = [
                rng.uniform(config.x_range.0, config.x_range.1),
                rng.uniform(config.y_range.0, config.y_range.1),
                config.ground_z + rng.uniform(-GROUND_NOISE, GROUND_NOISE),
            ];
            if !inside_any(&p, &boxes) {
                break p;
            }
        };
        points.push((p, rng.uniform(0.0, 0.35)));
    }

    rng.shuffle(&mut points);
    let coords = points.iter().map(|(p, _)| *p).collect();
    let refl = points.iter().map(|(_, r)| *r).collect();
    let cloud = PointCloud::new(coords, Some(Matrix::from_vec(config.n_points, 1, refl)?))?;
    let scene = SceneSample::new(cloud, boxes, config.seed);
    if scene.labels.foreground_count() != n_fg {
        return Err(Error::Invariant(format!(
            "generator placed {n_fg} foreground points but labels count {}",
            scene.labels.foreground_count()
        )));
    }
    Ok(scene)
}

/// Parses KITTI velodyne records from memory.
pub fn parse_kitti_bin(bytes: &[u8], path: &Path) -> Result<PointCloud<f64>> {
    if !bytes.len().is_multiple_of(16) {
        let offset = bytes.len() - bytes.len() % 16;
        return Err(Error::format(
            path,
            format!(
                "truncated record at byte offset {offset}: file length {} is not a multiple of 16",
                bytes.len()
            ),
        ));
    }
    let n = bytes.len() / 16;
    let mut coords = Vec::with_capacity(n);
    let mut refl = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(16) {
        let v: Vec<f64> = rec
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        coords.push([v[0], v[1], v[2]]);
        refl.push(v[3]);
    }
    if let Some(i) = coords.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::format(
            path,
            format!("non-finite coordinate at byte offset {}", i * 16),
        ));
    }
    PointCloud::new(coords, Some(Matrix::from_vec(n, 1, refl)?))
}

pub fn read_kitti_bin(path: &Path) -> Result<PointCloud<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_kitti_bin(&bytes, path)
}

/// Writes `(x, y, z, reflectance)` as `f32`; reflectance is feature column 0
/// (zero when the cloud has no features).
pub fn write_kitti_bin(path: &Path, cloud: &PointCloud<f64>) -> Result<()> {
    let mut buf = Vec::with_capacity(cloud.len() * 16);
    for (i, p) in cloud.coords().iter().enumerate() {
        let r = cloud
            .features()
            .filter(|f| f.cols() > 0)
            .map_or(0.0, |f| f[(i, 0)]);
        for v in [p[0], p[1], p[2], r] {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Indices kept by voxel reduction, ascending.
pub fn voxel_downsample_indices(
    cloud: &PointCloud<f64>,
    voxel: [f64; 3],
    budget: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if !voxel.iter().all(|&v| v > 0.0 && v.is_finite()) {
        return Err(Error::Config(format!(
            "voxel size must be positive, got {voxel:?}"
        )));
    }
    let mut buckets: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.coords().iter().enumerate() {
        let key = [0, 1, 2].map(|k| (p[k] / voxel[k]).floor() as i64);
        buckets.entry(key).or_default().push(i);
    }
    let mut rng = SplitMix64::new(seed);
    let mut voxels: Vec<&Vec<usize>> = buckets.values().collect();
    if voxels.len() > budget {
        // Partial Fisher-Yates: the first `budget` slots become a uniform subset.
        for i in 0..budget {
            let j = i + rng.below(voxels.len() - i);
            voxels.swap(i, j);
        }
        voxels.truncate(budget);
    }
    let mut kept: Vec<usize> = voxels
        .iter()
        .map(|members| members[rng.below(members.len())])
        .collect();
    kept.sort_unstable();
    Ok(kept)
}

/// Keeps one random original point from each of at most `budget` random
/// occupied voxels.
pub fn voxel_downsample(
    cloud: &PointCloud<f64>,
    voxel: [f64; 3],
    budget: usize,
    seed: u64,
) -> Result<PointCloud<f64>> {
    let idx = voxel_downsample_indices(cloud, voxel, budget, seed)?;
    Ok(cloud.select(&idx))
}

pub const SCENE_MAGIC: &str = "sasa-scene";
pub const SCENE_VERSION: u32 = 1;

pub fn scene_to_string(scene: &SceneSample) -> String {
    let cloud = &scene.cloud;
    let c = cloud.feature_width();
    let mut out = String::with_capacity(cloud.len() * 64);
    let _ = writeln!(out, "{SCENE_MAGIC} {SCENE_VERSION}");
    let _ = writeln!(out, "seed {}", scene.seed);
    let _ = writeln!(out, "points {} {c}", cloud.len());
    for (i, p) in cloud.coords().iter().enumerate() {
        let _ = write!(out, "{} {} {}", p[0], p[1], p[2]);
        if let Some(f) = cloud.features() {
            for v in f.row(i) {
                let _ = write!(out, " {v}");
            }
        }
        out.push('\n');
    }
    let _ = writeln!(out, "boxes {}", scene.boxes.len());
    for b in &scene.boxes {
        let c = b.center();
        let d = b.dims();
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {}",
            c[0],
            c[1],
            c[2],
            d[0],
            d[1],
            d[2],
            b.yaw()
        );
    }
    out
}

pub fn scene_save(path: &Path, scene: &SceneSample) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(scene_to_string(scene).as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn scene_from_str(text: &str, path: &Path) -> Result<SceneSample> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let err = |line: usize, m: String| Error::format(path, format!("line {line}: {m}"));
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| Error::format(path, format!("unexpected end of file, expected {what}")))
    };

    let (ln, header) = next("header")?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(SCENE_MAGIC) {
        return Err(err(ln, format!("missing '{SCENE_MAGIC}' header")));
    }
    match parts.next().and_then(|v| v.parse::<u32>().ok()) {
        Some(SCENE_VERSION) => {}
        Some(v) => {
            return Err(err(
                ln,
                format!("unsupported version {v}, expected {SCENE_VERSION}"),
            ))
        }
        None => return Err(err(ln, "missing version".into())),
    }

    let keyed = |(ln, line): (usize, &str), key: &str, count: usize| -> Result<Vec<u64>> {
        let mut it = line.split_whitespace();
        if it.next() != Some(key) {
            return Err(err(ln, format!("expected '{key}' record")));
        }
        let vals: Vec<u64> = it
            .map(|t| {
                t.parse::<u64>()
                    .map_err(|_| err(ln, format!("bad integer '{t}'")))
            })
            .collect::<Result<_>>()?;
        if vals.len() != count {
            return Err(err(ln, format!("'{key}' needs {count} values")));
        }
        Ok(vals)
    };
    let reals = |ln: usize, line: &str, count: usize| -> Result<Vec<f64>> {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| err(ln, format!("bad number '{t}'")))
            })
            .collect::<Result<_>>()?;
        if vals.len() != count {
            return Err(err(
                ln,
                format!("expected {count} values, found {}", vals.len()),
            ));
        }
        if !vals.iter().all(|v| v.is_finite()) {
            return Err(err(ln, "non-finite value".into()));
        }
        Ok(vals)
    };

    let seed = keyed(next("seed")?, "seed", 1)?[0];
    let dims = keyed(next("points")?, "points", 2)?;
    let (n, c) = (dims[0] as usize, dims[1] as usize);
    let mut coords = Vec::with_capacity(n);
    let mut feats = Vec::with_capacity(n * c);
    for _ in 0..n {
        let (ln, line) = next("point row")?;
        let v = reals(ln, line, 3 + c)?;
        coords.push([v[0], v[1], v[2]]);
        feats.extend_from_slice(&v[3..]);
    }
    let nb = keyed(next("boxes")?, "boxes", 1)?[0] as usize;
    let mut boxes = Vec::with_capacity(nb);
    for _ in 0..nb {
        let (ln, line) = next("box row")?;
        let v = reals(ln, line, 7)?;
        boxes.push(
            OrientedBox::new([v[0], v[1], v[2]], [v[3], v[4], v[5]], v[6])
                .map_err(|e| err(ln, e.to_string()))?,
        );
    }
    if let Some((ln, line)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(err(ln, format!("unexpected trailing content '{line}'")));
    }
    let features = (c > 0).then(|| Matrix::from_vec(n, c, feats)).transpose()?;
    let cloud = PointCloud::new(coords, features)?;
    Ok(SceneSample::new(cloud, boxes, seed))
}

pub fn scene_load(path: &Path) -> Result<SceneSample> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    scene_from_str(&text, path)
}
