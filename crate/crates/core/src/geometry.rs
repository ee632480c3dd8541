//! Spatial primitives shared by every other module.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub type Point3<T> = [T; 3];

/// `N` points with coordinates in meters and an optional `N x C` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T> {
    coords: Vec<Point3<T>>,
    features: Option<Matrix<T>>,
}

impl<T: Scalar> PointCloud<T> {
    pub fn new(coords: Vec<Point3<T>>, features: Option<Matrix<T>>) -> Result<Self> {
        if let Some(i) = coords.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        if let Some(f) = &features {
            if f.rows() != coords.len() {
                return Err(Error::Dimension {
                    what: "feature rows",
                    expected: coords.len(),
                    found: f.rows(),
                });
            }
        }
        Ok(Self { coords, features })
    }

    pub fn from_coords(coords: Vec<Point3<T>>) -> Result<Self> {
        Self::new(coords, None)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn coords(&self) -> &[Point3<T>] {
        &self.coords
    }

    #[inline]
    pub fn point(&self, i: usize) -> &Point3<T> {
        &self.coords[i]
    }

    pub fn features(&self) -> Option<&Matrix<T>> {
        self.features.as_ref()
    }

    /// Feature width `C`, zero when the cloud carries no features.
    pub fn feature_width(&self) -> usize {
        self.features.as_ref().map_or(0, Matrix::cols)
    }

    /// Sub-cloud made of the given points, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            coords: indices.iter().map(|&i| self.coords[i]).collect(),
            features: self.features.as_ref().map(|f| f.select_rows(indices)),
        }
    }

    pub fn with_features(self, features: Matrix<T>) -> Result<Self> {
        Self::new(self.coords, Some(features))
    }

    pub fn into_parts(self) -> (Vec<Point3<T>>, Option<Matrix<T>>) {
        (self.coords, self.features)
    }
}

/// Upright 3D box: center, (length, width, height) and a yaw about +z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox<T> {
    center: Point3<T>,
    dims: [T; 3],
    yaw: T,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_yaw<T: Scalar>(yaw: T) -> T {
    let pi = T::lit(std::f64::consts::PI);
    if yaw > -pi && yaw <= pi {
        return yaw;
    }
    let two_pi = pi + pi;
    let r = (pi - yaw) % two_pi;
    let r = if r < T::zero() { r + two_pi } else { r };
    pi - r
}

impl<T: Scalar> OrientedBox<T> {
    pub fn new(center: Point3<T>, dims: [T; 3], yaw: T) -> Result<Self> {
        if !center.iter().chain(dims.iter()).all(|v| v.is_finite()) || !yaw.is_finite() {
            return Err(Error::InvalidInput("box parameters must be finite".into()));
        }
        if dims.iter().any(|&d| d <= T::zero()) {
            return Err(Error::InvalidInput(format!(
                "box dimensions must be positive, got {dims:?}"
            )));
        }
        Ok(Self {
            center,
            dims,
            yaw: normalize_yaw(yaw),
        })
    }

    pub fn center(&self) -> Point3<T> {
        self.center
    }

    /// `(length, width, height)`.
    pub fn dims(&self) -> [T; 3] {
        self.dims
    }

    pub fn yaw(&self) -> T {
        self.yaw
    }

    /// Coordinates of `p` in the box frame: translate by `-center`, rotate by `-yaw`.
    pub fn to_local(&self, p: &Point3<T>) -> Point3<T> {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let dz = p[2] - self.center[2];
        let (s, c) = self.yaw.sin_cos();
        [c * dx + s * dy, -s * dx + c * dy, dz]
    }

    pub fn contains(&self, p: &Point3<T>) -> bool {
        point_in_box(p, self)
    }

    /// The same box after rotating the world by `yaw_delta` about +z and then
    /// translating by `translation`.
    pub fn transformed(&self, translation: Point3<T>, yaw_delta: T) -> Result<Self> {
        let c = rotate_z(&self.center, yaw_delta);
        Self::new(
            [
                c[0] + translation[0],
                c[1] + translation[1],
                c[2] + translation[2],
            ],
            self.dims,
            self.yaw + yaw_delta,
        )
    }
}

pub fn rotate_z<T: Scalar>(p: &Point3<T>, angle: T) -> Point3<T> {
    let (s, c) = angle.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]]
}

/// Boundary-inclusive containment of `point` in an upright oriented box.
pub fn point_in_box<T: Scalar>(point: &Point3<T>, b: &OrientedBox<T>) -> bool {
    let local = b.to_local(point);
    let half = T::lit(0.5);
    local
        .iter()
        .zip(b.dims.iter())
        .all(|(&v, &d)| v.abs() <= d * half)
}

/// Per-point foreground labels: `true` for points inside at least one box.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationLabels(Vec<bool>);

impl SegmentationLabels {
    pub fn new(labels: Vec<bool>) -> Self {
        Self(labels)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn foreground_count(&self) -> usize {
        self.0.iter().filter(|&&l| l).count()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self(indices.iter().map(|&i| self.0[i]).collect())
    }

    /// Labels as `0.0` / `1.0` targets.
    pub fn targets<T: Scalar>(&self) -> Vec<T> {
        self.0
            .iter()
            .map(|&l| if l { T::one() } else { T::zero() })
            .collect()
    }
}

pub fn label_points<T: Scalar>(
    cloud: &PointCloud<T>,
    boxes: &[OrientedBox<T>],
) -> SegmentationLabels {
    SegmentationLabels(
        cloud
            .coords()
            .iter()
            .map(|p| boxes.iter().any(|b| point_in_box(p, b)))
            .collect(),
    )
}

/// Plain (non-squared) Euclidean norm of `a - b`.
#[inline]
pub fn euclidean_distance<T: Scalar>(a: &Point3<T>, b: &Point3<T>) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Euclidean norm of the difference of two equal-length vectors.
#[inline]
pub fn vector_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .fold(T::zero(), |acc, v| acc + v)
        .sqrt()
}
