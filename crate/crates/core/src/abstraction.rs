//! Set abstraction: ball-query grouping, a shared per-neighbour MLP and
//! max-pooling, plus the composed layer that scores points, samples key
//! points with S-FPS and abstracts their neighbourhoods.

use crate::error::{Error, Result};
use crate::geometry::{euclidean_distance, PointCloud};
use crate::linalg::Matrix;
use crate::sampling::{s_fps, ForegroundScores, SFpsConfig, SampleResult};
use crate::scalar::Scalar;
use crate::scorer::{mlp_forward, Mlp};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallQueryConfig<T> {
    pub radius: T,
    pub max_neighbors: usize,
}

impl<T: Scalar> BallQueryConfig<T> {
    pub fn new(radius: T, max_neighbors: usize) -> Result<Self> {
        if radius.is_nan() || radius <= T::zero() {
            return Err(Error::Config(format!(
                "ball radius must be positive, got {radius}"
            )));
        }
        if max_neighbors == 0 {
            return Err(Error::Config(
                "ball query needs at least one neighbour".into(),
            ));
        }
        Ok(Self {
            radius,
            max_neighbors,
        })
    }
}

/// Up to `max_neighbors` in-radius indices per center, ascending, padded with
/// the first qualifying index to exactly `max_neighbors` entries.
pub fn ball_query<T: Scalar>(
    cloud: &PointCloud<T>,
    centers: &[usize],
    config: &BallQueryConfig<T>,
) -> Result<Vec<Vec<usize>>> {
    let pts = cloud.coords();
    centers
        .iter()
        .map(|&c| {
            if c >= pts.len() {
                return Err(Error::InvalidInput(format!(
                    "center index {c} out of range for {} points",
                    pts.len()
                )));
            }
            let mut group: Vec<usize> = pts
                .iter()
                .enumerate()
                .filter(|(_, p)| euclidean_distance(p, &pts[c]) <= config.radius)
                .map(|(j, _)| j)
                .take(config.max_neighbors)
                .collect();
            let first = group[0];
            group.resize(config.max_neighbors, first);
            Ok(group)
        })
        .collect()
}

/// Activation after the last layer of a feature MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputActivation {
    Identity,
    #[default]
    Relu,
}

/// Point-wise feature encoder shared across all neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMlp<T> {
    pub mlp: Mlp<T>,
    pub output_activation: OutputActivation,
}

impl<T: Scalar> FeatureMlp<T> {
    pub fn new(mlp: Mlp<T>, output_activation: OutputActivation) -> Self {
        Self {
            mlp,
            output_activation,
        }
    }

    pub fn input_width(&self) -> usize {
        self.mlp.input_width()
    }

    pub fn output_width(&self) -> usize {
        self.mlp.output_width()
    }

    fn encode(&self, input: &[T]) -> Vec<T> {
        let mut out = self.mlp.forward_row(input);
        if self.output_activation == OutputActivation::Relu {
            out.iter_mut().for_each(|v| *v = v.max(T::zero()));
        }
        out
    }
}

/// Encodes every neighbour as `(x_j - x_c) ++ f_j`, runs the shared MLP and
/// max-pools over the group. One output row per center.
pub fn group_and_pool<T: Scalar>(
    cloud: &PointCloud<T>,
    centers: &[usize],
    groups: &[Vec<usize>],
    feature_mlp: &FeatureMlp<T>,
) -> Result<Matrix<T>> {
    if groups.len() != centers.len() {
        return Err(Error::Dimension {
            what: "groups",
            expected: centers.len(),
            found: groups.len(),
        });
    }
    let width = 3 + cloud.feature_width();
    if feature_mlp.input_width() != width {
        return Err(Error::Dimension {
            what: "feature MLP input width",
            expected: width,
            found: feature_mlp.input_width(),
        });
    }
    let out_w = feature_mlp.output_width();
    let pts = cloud.coords();
    let mut pooled = Matrix::zeros(centers.len(), out_w);
    let mut input = Vec::with_capacity(width);
    for (row, (&c, group)) in centers.iter().zip(groups).enumerate() {
        if group.is_empty() {
            return Err(Error::InvalidInput(format!(
                "group for center {c} is empty"
            )));
        }
        let mut acc = vec![T::neg_infinity(); out_w];
        for &j in group {
            if j >= pts.len() || c >= pts.len() {
                return Err(Error::InvalidInput(format!("group index {j} out of range")));
            }
            input.clear();
            input.extend((0..3).map(|k| pts[j][k] - pts[c][k]));
            if let Some(f) = cloud.features() {
                input.extend_from_slice(f.row(j));
            }
            for (a, v) in acc.iter_mut().zip(feature_mlp.encode(&input)) {
                *a = a.max(v);
            }
        }
        pooled.row_mut(row).copy_from_slice(&acc);
    }
    Ok(pooled)
}

/// Scoring, S-FPS key-point selection and set abstraction in one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SasaLayer<T> {
    pub scorer: Mlp<T>,
    pub sampler_config: SFpsConfig<T>,
    pub ball: BallQueryConfig<T>,
    pub feature_mlp: FeatureMlp<T>,
    pub budget: usize,
}

#[derive(Debug, Clone)]
pub struct SasaOutput<T> {
    /// Key points with pooled features.
    pub keys: PointCloud<T>,
    /// Scores of the layer's input points.
    pub scores: ForegroundScores<T>,
    pub sample: SampleResult<T>,
}

impl<T: Scalar> SasaLayer<T> {
    pub fn new(
        scorer: Mlp<T>,
        sampler_config: SFpsConfig<T>,
        ball: BallQueryConfig<T>,
        feature_mlp: FeatureMlp<T>,
        budget: usize,
    ) -> Result<Self> {
        if scorer.output_width() != 1 {
            return Err(Error::Dimension {
                what: "scorer output width",
                expected: 1,
                found: scorer.output_width(),
            });
        }
        let expected = 3 + scorer.input_width();
        if feature_mlp.input_width() != expected {
            return Err(Error::Dimension {
                what: "feature MLP input width",
                expected,
                found: feature_mlp.input_width(),
            });
        }
        if budget == 0 {
            return Err(Error::InvalidBudget {
                requested: 0,
                available: 0,
            });
        }
        Ok(Self {
            scorer,
            sampler_config,
            ball,
            feature_mlp,
            budget,
        })
    }

    pub fn input_feature_width(&self) -> usize {
        self.scorer.input_width()
    }

    pub fn output_feature_width(&self) -> usize {
        self.feature_mlp.output_width()
    }
}

pub fn sasa_forward<T: Scalar>(
    layer: &SasaLayer<T>,
    cloud: &PointCloud<T>,
) -> Result<SasaOutput<T>> {
    let features = cloud.features().ok_or(Error::MissingFeatures)?;
    let scores = mlp_forward(&layer.scorer, features)?;
    let sample = s_fps(cloud, &scores, layer.budget, &layer.sampler_config)?;
    let groups = ball_query(cloud, &sample.indices, &layer.ball)?;
    let pooled = group_and_pool(cloud, &sample.indices, &groups, &layer.feature_mlp)?;
    let coords = sample.indices.iter().map(|&i| *cloud.point(i)).collect();
    let keys = PointCloud::new(coords, Some(pooled))?;
    Ok(SasaOutput {
        keys,
        scores,
        sample,
    })
}
