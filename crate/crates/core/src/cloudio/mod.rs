//! Point-cloud ingestion, serialisation, synthetic data and LiDAR
//! density-shift simulation.

mod dataset;
mod format;
mod synth;

use std::ops::{Add, Mul, Sub};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::rng::rng_from_seed;
use crate::{AscnError, Result};

pub use dataset::{load_dataset, save_dataset, Dataset, LabeledCloud};
pub use format::{load_cloud, parse_csv, parse_ply, save_cloud, write_csv, write_ply, CloudFormat};
pub use synth::{
    assign_rings, generate_dataset, generate_shape, random_rotation, ClassSpec, DatasetSpec,
    ShapeKind, RING_COUNT,
};

/// A point in metres.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ZERO: Point3 = Point3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dot(&self, other: &Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// An ordered, non-empty list of points with an optional scan-ring index
/// per point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    rings: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        Self::build(points, None)
    }

    pub fn with_rings(points: Vec<Point3>, rings: Vec<u32>) -> Result<Self> {
        Self::build(points, Some(rings))
    }

    fn build(points: Vec<Point3>, rings: Option<Vec<u32>>) -> Result<Self> {
        if points.is_empty() {
            return Err(AscnError::InvalidParam("point cloud must hold at least one point".into()));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(AscnError::InvalidParam(format!("point {i} has a non-finite coordinate")));
        }
        if let Some(r) = &rings {
            if r.len() != points.len() {
                return Err(AscnError::DimensionMismatch {
                    expected: points.len(),
                    actual: r.len(),
                });
            }
        }
        Ok(PointCloud { points, rings })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Point3 {
        self.points[i]
    }

    pub fn rings(&self) -> Option<&[u32]> {
        self.rings.as_deref()
    }

    pub fn into_parts(self) -> (Vec<Point3>, Option<Vec<u32>>) {
        (self.points, self.rings)
    }

    pub fn centroid(&self) -> Point3 {
        let n = self.points.len() as f64;
        let sum = self.points.iter().fold(Point3::ZERO, |acc, &p| acc + p);
        sum * (1.0 / n)
    }

    /// The sub-cloud formed by `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<PointCloud> {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let rings = self
            .rings
            .as_ref()
            .map(|r| indices.iter().map(|&i| r[i]).collect());
        PointCloud::build(points, rings)
    }

    /// Applies `f` to every point, keeping ring indices.
    pub fn map_points(&self, f: impl Fn(Point3) -> Point3) -> Result<PointCloud> {
        let points = self.points.iter().map(|&p| f(p)).collect();
        PointCloud::build(points, self.rings.clone())
    }

    pub fn translated(&self, t: Point3) -> PointCloud {
        self.map_points(|p| p + t).expect("translation of a finite cloud")
    }

    pub fn scaled(&self, s: f64) -> PointCloud {
        self.map_points(|p| p * s).expect("scaling of a finite cloud")
    }

    /// Applies a row-major 3×3 matrix to every point.
    pub fn transformed(&self, m: &[[f64; 3]; 3]) -> PointCloud {
        self.map_points(|p| apply3(m, p)).expect("linear map of a finite cloud")
    }

    pub fn without_rings(&self) -> PointCloud {
        PointCloud {
            points: self.points.clone(),
            rings: None,
        }
    }

    pub fn replace_rings(&self, rings: Option<Vec<u32>>) -> Result<PointCloud> {
        PointCloud::build(self.points.clone(), rings)
    }
}

pub(crate) fn apply3(m: &[[f64; 3]; 3], p: Point3) -> Point3 {
    Point3::new(
        m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z,
        m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z,
        m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z,
    )
}

/// Simulates a lower-channel LiDAR.
///
/// With ring indices, keeps the points whose ring is a multiple of
/// `keep_every` (scan-line decimation). Without rings, keeps a seeded
/// uniform random subset of `ceil(N / keep_every)` points in original order.
pub fn decimate_density(cloud: &PointCloud, keep_every: usize, seed: u64) -> Result<PointCloud> {
    if keep_every == 0 {
        return Err(AscnError::InvalidParam("keep_every must be at least 1".into()));
    }
    if keep_every == 1 {
        return Ok(cloud.clone());
    }
    let kept: Vec<usize> = match cloud.rings() {
        Some(rings) => rings
            .iter()
            .enumerate()
            .filter(|(_, &r)| (r as usize).is_multiple_of(keep_every))
            .map(|(i, _)| i)
            .collect(),
        None => {
            let n = cloud.len();
            let amount = n.div_ceil(keep_every);
            let mut rng = rng_from_seed(seed);
            let mut picked = index::sample(&mut rng, n, amount).into_vec();
            picked.sort_unstable();
            picked
        }
    };
    if kept.is_empty() {
        return Err(AscnError::DegenerateCloud(format!(
            "decimation by {keep_every} removes every point"
        )));
    }
    cloud.select(&kept)
}

/// Translates the cloud so its centroid is the origin. No rescaling.
pub fn center_cloud(cloud: &PointCloud) -> PointCloud {
    let c = cloud.centroid();
    cloud.map_points(|p| p - c).expect("centering a finite cloud")
}
