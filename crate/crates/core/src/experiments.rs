//! Reproducible experiment pipelines: scene-set generation with manifests,
//! scorer training, single-scene sampling, evaluation of saved indices and
//! the sampler comparison benchmark. The CLI is a thin shell over these.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evalmetrics::{aggregate, evaluate_scene, RecallAverage, SamplingReport, SceneMetrics};
use crate::geometry::{PointCloud, SegmentationLabels};
use crate::linalg::Matrix;
use crate::rng::SplitMix64;
use crate::sampling::{
    f_fps, fps, fusion_sample, s_fps, top_k_scores, ForegroundScores, SFpsConfig, SampleResult,
};
use crate::sceneio::{gen_scene, scene_load, scene_save, SceneGenConfig, SceneSample};
use crate::scorer::{mlp_forward, train_segmenter, Mlp, SegTrainConfig, TrainOutcome};

/// Per-level budgets used when none are given.
pub const DEFAULT_LEVEL_BUDGETS: [usize; 3] = [4096, 512, 256];
pub const DEFAULT_GAMMAS: [f64; 5] = [0.0, 0.1, 1.0, 10.0, 100.0];
/// Uniform noise blended into oracle scores.
pub const DEFAULT_ORACLE_NOISE: f64 = 0.2;
pub const DEFAULT_HIDDEN_WIDTH: usize = 64;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Scorer inputs for a raw cloud: point height followed by the cloud's
/// own feature columns (reflectance for KITTI and generated scenes).
pub fn point_descriptors(cloud: &PointCloud<f64>) -> Matrix<f64> {
    let c = cloud.feature_width();
    let mut data = Vec::with_capacity(cloud.len() * (1 + c));
    for (i, p) in cloud.coords().iter().enumerate() {
        data.push(p[2]);
        if let Some(f) = cloud.features() {
            data.extend_from_slice(f.row(i));
        }
    }
    Matrix::from_vec(cloud.len(), 1 + c, data).expect("sized above")
}

pub fn descriptor_width(cloud: &PointCloud<f64>) -> usize {
    1 + cloud.feature_width()
}

/// Labels blended with uniform noise: `(1 - noise) * y + noise * u`.
pub fn oracle_scores(
    labels: &SegmentationLabels,
    noise: f64,
    seed: u64,
) -> Result<ForegroundScores<f64>> {
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::Config(format!(
            "oracle noise must lie in [0, 1], got {noise}"
        )));
    }
    let mut rng = SplitMix64::new(seed);
    ForegroundScores::new(
        labels
            .as_slice()
            .iter()
            .map(|&l| {
                let y = if l { 1.0 } else { 0.0 };
                let u = rng.next_f64();
                (1.0 - noise) * y + noise * u
            })
            .collect(),
    )
}

#[derive(Debug, Clone)]
pub enum ScoreSource {
    Oracle { noise: f64 },
    Model(Mlp<f64>),
}

impl ScoreSource {
    /// Scores for every point of `scene`. `seed` drives oracle noise.
    pub fn scores(&self, scene: &SceneSample, seed: u64) -> Result<ForegroundScores<f64>> {
        match self {
            ScoreSource::Oracle { noise } => oracle_scores(&scene.labels, *noise, seed),
            ScoreSource::Model(mlp) => mlp_forward(mlp, &point_descriptors(&scene.cloud)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplerKind {
    Fps,
    Ffps,
    TopK,
    Sfps,
    Fusion,
}

impl SamplerKind {
    pub fn needs_scores(self) -> bool {
        matches!(
            self,
            SamplerKind::TopK | SamplerKind::Sfps | SamplerKind::Fusion
        )
    }

    pub fn uses_gamma(self) -> bool {
        matches!(self, SamplerKind::Sfps | SamplerKind::Fusion)
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplerKind::Fps => "fps",
            SamplerKind::Ffps => "ffps",
            SamplerKind::TopK => "topk",
            SamplerKind::Sfps => "sfps",
            SamplerKind::Fusion => "fusion",
        })
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fps" => SamplerKind::Fps,
            "ffps" => SamplerKind::Ffps,
            "topk" => SamplerKind::TopK,
            "sfps" => SamplerKind::Sfps,
            "fusion" => SamplerKind::Fusion,
            other => return Err(Error::Config(format!("unknown sampler '{other}'"))),
        })
    }
}

/// One concrete sampler configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerSpec {
    pub kind: SamplerKind,
    pub gamma: f64,
    /// Coordinate weight of feature-FPS.
    pub lambda_c: f64,
    pub start_index: usize,
}

impl SamplerSpec {
    pub fn new(kind: SamplerKind) -> Self {
        Self {
            kind,
            gamma: 1.0,
            lambda_c: 1.0,
            start_index: 0,
        }
    }

    pub fn with_gamma(self, gamma: f64) -> Self {
        Self { gamma, ..self }
    }

    pub fn label(&self) -> String {
        if self.kind.uses_gamma() {
            format!("{}(gamma={})", self.kind, self.gamma)
        } else {
            self.kind.to_string()
        }
    }
}

/// A named selection. Fusion yields two: candidates then context points.
#[derive(Debug, Clone)]
pub struct NamedSample {
    pub method: String,
    pub result: SampleResult<f64>,
}

pub fn run_sampler(
    spec: &SamplerSpec,
    cloud: &PointCloud<f64>,
    scores: Option<&ForegroundScores<f64>>,
    m: usize,
) -> Result<Vec<NamedSample>> {
    let need_scores = || {
        scores
            .ok_or_else(|| Error::Config(format!("sampler {} needs foreground scores", spec.kind)))
    };
    let one = |result| {
        Ok(vec![NamedSample {
            method: spec.label(),
            result,
        }])
    };
    match spec.kind {
        SamplerKind::Fps => one(fps(cloud, m, spec.start_index)?),
        SamplerKind::Ffps => one(f_fps(cloud, m, spec.lambda_c, spec.start_index)?),
        SamplerKind::TopK => one(top_k_scores(need_scores()?, m)?),
        SamplerKind::Sfps => one(s_fps(
            cloud,
            need_scores()?,
            m,
            &SFpsConfig::new(spec.gamma)?,
        )?),
        SamplerKind::Fusion => {
            let (cand, ctx) =
                fusion_sample(cloud, need_scores()?, m, &SFpsConfig::new(spec.gamma)?)?;
            Ok(vec![
                NamedSample {
                    method: format!("fusion:sfps(gamma={})", spec.gamma),
                    result: cand,
                },
                NamedSample {
                    method: "fusion:fps".to_string(),
                    result: ctx,
                },
            ])
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub samplers: Vec<SamplerSpec>,
    /// Budgets of consecutive levels; each level samples from the previous
    /// level's key points.
    pub levels: Vec<usize>,
    pub scores: Option<ScoreSource>,
    pub seed: u64,
    pub averaging: RecallAverage,
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samplers.is_empty() {
            return Err(Error::Config("no samplers requested".into()));
        }
        if self.levels.is_empty() || self.levels.contains(&0) {
            return Err(Error::Config("level budgets must be positive".into()));
        }
        if self.scores.is_none() {
            if let Some(s) = self.samplers.iter().find(|s| s.kind.needs_scores()) {
                return Err(Error::Config(format!(
                    "sampler {} needs a score source",
                    s.kind
                )));
            }
        }
        Ok(())
    }
}

/// Seed of the oracle noise stream for a scene, keyed by the scene's own
/// seed so that single-scene runs reproduce benchmark rows.
pub fn scene_score_seed(run_seed: u64, scene_seed: u64) -> u64 {
    SplitMix64::derive(run_seed, scene_seed).next_u64()
}

/// `(method, original indices)` for every method a sampler yields at one level.
pub type LevelPicks = Vec<(String, Vec<usize>)>;

/// Selected original-point indices of one sampler on one scene, per level
/// and per method (fusion contributes two methods per level).
pub fn cascade_scene(
    spec: &SamplerSpec,
    scene: &SceneSample,
    scores: Option<&ForegroundScores<f64>>,
    levels: &[usize],
) -> Result<Vec<LevelPicks>> {
    let mut current: Vec<usize> = (0..scene.cloud.len()).collect();
    let mut out = Vec::with_capacity(levels.len());
    for &budget in levels {
        let cloud = scene.cloud.select(&current);
        let sub_scores = scores.map(|s| s.select(&current));
        let picks = run_sampler(spec, &cloud, sub_scores.as_ref(), budget)?;
        let mapped: Vec<(String, Vec<usize>)> = picks
            .into_iter()
            .map(|p| {
                (
                    p.method,
                    p.result.indices.iter().map(|&i| current[i]).collect(),
                )
            })
            .collect();
        let mut next: Vec<usize> = Vec::new();
        for (_, idx) in &mapped {
            for &i in idx {
                if !next.contains(&i) {
                    next.push(i);
                }
            }
        }
        current = next;
        out.push(mapped);
    }
    Ok(out)
}

/// Benchmarks every sampler on every scene. Reports are ordered by sampler,
/// then level, then method; scene rows keep input order.
pub fn run_bench(
    scenes: &[(String, SceneSample)],
    config: &BenchConfig,
) -> Result<Vec<SamplingReport>> {
    config.validate()?;
    if scenes.is_empty() {
        return Err(Error::InvalidInput(
            "benchmark needs at least one scene".into(),
        ));
    }
    let scores: Vec<Option<ForegroundScores<f64>>> = scenes
        .par_iter()
        .map(|(_, scene)| {
            config
                .scores
                .as_ref()
                .map(|src| src.scores(scene, scene_score_seed(config.seed, scene.seed)))
                .transpose()
        })
        .collect::<Result<_>>()?;

    let mut reports = Vec::new();
    for spec in &config.samplers {
        let per_scene: Vec<Vec<Vec<(String, SceneMetrics)>>> = scenes
            .par_iter()
            .zip(scores.par_iter())
            .map(|((name, scene), sc)| {
                let spec = SamplerSpec {
                    start_index: 0,
                    ..*spec
                };
                let levels = cascade_scene(&spec, scene, sc.as_ref(), &config.levels)?;
                levels
                    .into_iter()
                    .map(|methods| {
                        methods
                            .into_iter()
                            .map(|(method, idx)| {
                                evaluate_scene(name.clone(), &idx, &scene.cloud, &scene.boxes)
                                    .map(|m| (method, m))
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;

        for (level, &budget) in config.levels.iter().enumerate() {
            let n_methods = per_scene[0][level].len();
            for k in 0..n_methods {
                let method = per_scene[0][level][k].0.clone();
                let rows: Vec<SceneMetrics> =
                    per_scene.iter().map(|s| s[level][k].1.clone()).collect();
                let effective = if spec.kind == SamplerKind::Fusion {
                    budget / 2
                } else {
                    budget
                };
                reports.push(aggregate(
                    &method,
                    level + 1,
                    effective,
                    rows,
                    config.averaging,
                )?);
            }
        }
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub base_seed: u64,
    pub scene_count: usize,
    pub config: SceneGenConfig,
    pub config_hash: String,
    pub scenes: Vec<ManifestEntry>,
}

#[derive(Serialize)]
struct HashedGenConfig<'a> {
    scenes: usize,
    base_seed: u64,
    config: &'a SceneGenConfig,
}

/// SHA-256 over the canonical JSON of every generation parameter.
pub fn config_hash(scenes: usize, base_seed: u64, config: &SceneGenConfig) -> String {
    let template = SceneGenConfig {
        seed: 0,
        ..config.clone()
    };
    let canonical = serde_json::to_vec(&HashedGenConfig {
        scenes,
        base_seed,
        config: &template,
    })
    .expect("config serialises");
    hex::encode(Sha256::digest(canonical))
}

pub fn scene_seed(base_seed: u64, index: usize) -> u64 {
    SplitMix64::derive(base_seed, index as u64).next_u64()
}

pub fn scene_file_name(index: usize) -> String {
    format!("scene_{index:04}.scene")
}

/// Builds the manifest for `scenes` scenes without touching the disk.
pub fn plan_scenes(scenes: usize, base_seed: u64, config: &SceneGenConfig) -> Result<Manifest> {
    if scenes == 0 {
        return Err(Error::Config("at least one scene must be generated".into()));
    }
    config.validate()?;
    let template = SceneGenConfig {
        seed: 0,
        ..config.clone()
    };
    Ok(Manifest {
        format: "sasa-manifest".into(),
        version: 1,
        base_seed,
        scene_count: scenes,
        config_hash: config_hash(scenes, base_seed, &template),
        config: template,
        scenes: (0..scenes)
            .map(|i| ManifestEntry {
                file: scene_file_name(i),
                seed: scene_seed(base_seed, i),
            })
            .collect(),
    })
}

/// Generates every scene listed in a manifest, in manifest order.
pub fn regenerate(manifest: &Manifest) -> Result<Vec<SceneSample>> {
    manifest
        .scenes
        .par_iter()
        .map(|e| {
            gen_scene(&SceneGenConfig {
                seed: e.seed,
                ..manifest.config.clone()
            })
        })
        .collect()
}

/// Writes the scenes and `manifest.json` into `out_dir`.
pub fn generate_scene_set(
    out_dir: &Path,
    scenes: usize,
    base_seed: u64,
    config: &SceneGenConfig,
) -> Result<Manifest> {
    let manifest = plan_scenes(scenes, base_seed, config)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let samples = regenerate(&manifest)?;
    for (entry, scene) in manifest.scenes.iter().zip(&samples) {
        scene_save(&out_dir.join(&entry.file), scene)?;
    }
    write_manifest(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serialises");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    if m.format != "sasa-manifest" || m.version != 1 {
        return Err(Error::format(path, "not a version 1 scene manifest"));
    }
    Ok(m)
}

/// Checks that the files next to a manifest equal a fresh regeneration.
pub fn verify_scene_set(dir: &Path) -> Result<()> {
    let manifest = read_manifest(&dir.join(MANIFEST_FILE))?;
    let expected = config_hash(manifest.scene_count, manifest.base_seed, &manifest.config);
    if expected != manifest.config_hash {
        return Err(Error::format(
            dir.join(MANIFEST_FILE),
            "config hash does not match config",
        ));
    }
    for (entry, fresh) in manifest.scenes.iter().zip(regenerate(&manifest)?) {
        let path = dir.join(&entry.file);
        if scene_load(&path)? != fresh {
            return Err(Error::format(path, "scene differs from its regeneration"));
        }
    }
    Ok(())
}

/// All `*.scene` files in `dir`, sorted by file name.
pub fn load_scene_dir(dir: &Path) -> Result<Vec<(String, SceneSample)>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "scene"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no .scene files in {}",
            dir.display()
        )));
    }
    paths
        .par_iter()
        .map(|p| {
            let name = p
                .file_stem()
                .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
            scene_load(p).map(|s| (name, s))
        })
        .collect()
}

/// Trains a `descriptor -> hidden -> 1` scorer on the given scenes.
pub fn train_on_scenes(
    scenes: &[SceneSample],
    hidden_width: usize,
    config: &SegTrainConfig<f64>,
) -> Result<TrainOutcome<f64>> {
    let first = scenes
        .first()
        .ok_or_else(|| Error::InvalidInput("training needs at least one scene".into()))?;
    let width = descriptor_width(&first.cloud);
    let data = scenes
        .iter()
        .map(|s| {
            let d = point_descriptors(&s.cloud);
            if d.cols() != width {
                return Err(Error::Dimension {
                    what: "scene feature width",
                    expected: width,
                    found: d.cols(),
                });
            }
            let cloud = PointCloud::new(s.cloud.coords().to_vec(), Some(d))?;
            Ok((cloud, s.labels.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mlp = config.initial_mlp(&[width, hidden_width, 1])?;
    train_segmenter(&data, mlp, config)
}

/// Diagnostics written next to a sampled index file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDiagnostics {
    pub method: String,
    pub budget: usize,
    pub input_points: usize,
    pub selected: usize,
    /// `None` entries stand for an infinite weighted distance.
    pub per_step_weighted_distance: Option<Vec<Option<f64>>>,
}

impl SampleDiagnostics {
    pub fn new(sample: &NamedSample, budget: usize, input_points: usize) -> Self {
        Self {
            method: sample.method.clone(),
            budget,
            input_points,
            selected: sample.result.indices.len(),
            per_step_weighted_distance: sample
                .result
                .per_step_weighted_distance
                .as_ref()
                .map(|v| v.iter().map(|&d| d.is_finite().then_some(d)).collect()),
        }
    }
}

pub fn write_indices(path: &Path, indices: &[usize]) -> Result<()> {
    let mut text = String::with_capacity(indices.len() * 6);
    for i in indices {
        text.push_str(&i.to_string());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_indices(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            l.trim()
                .parse::<usize>()
                .map_err(|_| Error::format(path, format!("line {}: bad index '{l}'", n + 1)))
        })
        .collect()
}
