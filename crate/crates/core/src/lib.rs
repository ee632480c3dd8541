//! Semantics-augmented point cloud down-sampling.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: point clouds, upright oriented boxes, foreground labels.
//! - [`sampling`]: FPS, feature-FPS, top-K, semantics-guided FPS and fusion sampling.
//! - [`scorer`]: the per-point foreground scorer (MLP + sigmoid), its loss and gradients.
//! - [`abstraction`]: ball query, grouping, max-pooling and the composed scoring/sampling layer.
//! - [`evalmetrics`]: point recall, foreground rate and report tables.
//! - [`sceneio`]: synthetic scenes, KITTI `.bin` files, the native scene format, voxel reduction.
//! - [`experiments`]: the reproducible gen/train/sample/eval/bench pipelines behind the CLI.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the double-precision flavour used by file formats and experiments.

pub mod abstraction;
pub mod error;
pub mod evalmetrics;
pub mod experiments;
pub mod geometry;
pub mod linalg;
pub mod rng;
pub mod sampling;
pub mod scalar;
pub mod sceneio;
pub mod scorer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type PointCloud = geometry::PointCloud<f64>;
pub type PointCloud32 = geometry::PointCloud<f32>;
pub type OrientedBox = geometry::OrientedBox<f64>;
pub type OrientedBox32 = geometry::OrientedBox<f32>;
pub type ForegroundScores = sampling::ForegroundScores<f64>;
pub type ForegroundScores32 = sampling::ForegroundScores<f32>;
pub type SFpsConfig = sampling::SFpsConfig<f64>;
pub type SampleResult = sampling::SampleResult<f64>;
pub type Mlp = scorer::Mlp<f64>;
pub type Mlp32 = scorer::Mlp<f32>;
pub type Matrix = linalg::Matrix<f64>;
pub type SasaLayer = abstraction::SasaLayer<f64>;

pub use geometry::SegmentationLabels;
pub use rng::SplitMix64;
pub use sceneio::{SceneGenConfig, SceneSample};
