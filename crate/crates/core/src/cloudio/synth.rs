//! Synthetic shapes and labelled datasets.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{apply3, Dataset, LabeledCloud, Point3, PointCloud};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::{AscnError, Result};

/// Number of synthetic scan rings (elevation bins).
pub const RING_COUNT: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    /// Square `[-s, s]²` in the `z = 0` plane.
    Plane,
    /// Sphere of radius `s` about the origin.
    Sphere,
    /// Segment `[-s, s]` along the x axis.
    Line,
    /// Surface of the cube `[-s, s]³`.
    Box,
    /// Lateral surface of a z-aligned cylinder, radius `s / 2`, height `2s`.
    Cylinder,
}

impl std::str::FromStr for ShapeKind {
    type Err = AscnError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
            .map_err(|_| AscnError::InvalidParam(format!("unknown shape kind '{s}'")))
    }
}

fn sample_surface(kind: ShapeKind, scale: f64, rng: &mut Rng) -> Point3 {
    let mut u = || rng.random_range(-1.0..=1.0) * scale;
    match kind {
        ShapeKind::Plane => Point3::new(u(), u(), 0.0),
        ShapeKind::Line => Point3::new(u(), 0.0, 0.0),
        ShapeKind::Sphere => loop {
            let v = Point3::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            );
            let n = v.norm();
            if n > 1e-12 {
                break v * (scale / n);
            }
        },
        ShapeKind::Box => {
            let face = rng.random_range(0..6usize);
            let a = rng.random_range(-1.0..=1.0) * scale;
            let b = rng.random_range(-1.0..=1.0) * scale;
            let side = if face % 2 == 0 { scale } else { -scale };
            match face / 2 {
                0 => Point3::new(side, a, b),
                1 => Point3::new(a, side, b),
                _ => Point3::new(a, b, side),
            }
        }
        ShapeKind::Cylinder => {
            let theta = rng.random_range(0.0..2.0 * PI);
            let h = rng.random_range(-1.0..=1.0) * scale;
            let r = 0.5 * scale;
            Point3::new(r * theta.cos(), r * theta.sin(), h)
        }
    }
}

/// Samples `n_points` uniformly on an ideal surface, adds isotropic Gaussian
/// noise and assigns synthetic scan rings.
pub fn generate_shape(
    kind: ShapeKind,
    n_points: usize,
    noise_sigma: f64,
    scale: f64,
    seed: u64,
) -> Result<PointCloud> {
    if n_points < 8 {
        return Err(AscnError::InvalidParam(format!("n_points must be at least 8, got {n_points}")));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(AscnError::InvalidParam(format!("noise_sigma must be >= 0, got {noise_sigma}")));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(AscnError::InvalidParam(format!("scale must be > 0, got {scale}")));
    }
    let mut rng = rng_from_seed(seed);
    let noise = Normal::new(0.0, noise_sigma).expect("validated sigma");
    let points = (0..n_points)
        .map(|_| {
            let p = sample_surface(kind, scale, &mut rng);
            if noise_sigma > 0.0 {
                p + Point3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                p
            }
        })
        .collect();
    Ok(assign_rings(&PointCloud::new(points)?))
}

/// Replaces ring indices with the elevation angle (seen from the centroid)
/// quantised into [`RING_COUNT`] bins over `[-pi/2, pi/2]`.
pub fn assign_rings(cloud: &PointCloud) -> PointCloud {
    let c = cloud.centroid();
    let rings = cloud
        .points()
        .iter()
        .map(|&p| {
            let d = p - c;
            let elevation = d.z.atan2(d.x.hypot(d.y));
            let bin = ((elevation + FRAC_PI_2) / PI * RING_COUNT as f64).floor();
            bin.clamp(0.0, (RING_COUNT - 1) as f64) as u32
        })
        .collect();
    cloud.replace_rings(Some(rings)).expect("same length")
}

/// A uniformly distributed rotation matrix (row-major), from a random unit
/// quaternion.
pub fn random_rotation(rng: &mut Rng) -> [[f64; 3]; 3] {
    let (w, x, y, z) = loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-9 {
            break (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
        }
    };
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Generator settings for one class. Ranges are inclusive `[lo, hi]` and
/// sampled uniformly per cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub shape: ShapeKind,
    pub count: usize,
    pub points: (usize, usize),
    pub noise: (f64, f64),
    pub scale: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub classes: Vec<ClassSpec>,
    /// Apply a uniformly random rotation to every cloud before ring assignment.
    #[serde(default = "default_true")]
    pub random_rotation: bool,
}

fn default_true() -> bool {
    true
}

impl DatasetSpec {
    /// Line / plane / sphere classes with ~300 points per cloud.
    pub fn three_class(count_per_class: usize) -> Self {
        let class = |name: &str, shape, scale| ClassSpec {
            name: name.to_string(),
            shape,
            count: count_per_class,
            points: (280, 320),
            noise: (0.005, 0.02),
            scale,
        };
        DatasetSpec {
            classes: vec![
                class("line", ShapeKind::Line, (0.8, 1.5)),
                class("plane", ShapeKind::Plane, (0.6, 1.2)),
                class("sphere", ShapeKind::Sphere, (0.5, 1.0)),
            ],
            random_rotation: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(AscnError::InvalidParam(format!(
                "a dataset needs at least 2 classes, got {}",
                self.classes.len()
            )));
        }
        for c in &self.classes {
            let bad = |what: &str| Err(AscnError::InvalidParam(format!("class '{}': {what}", c.name)));
            if c.count == 0 {
                return bad("count must be at least 1");
            }
            if c.points.0 < 8 || c.points.0 > c.points.1 {
                return bad("points range must satisfy 8 <= lo <= hi");
            }
            if !(c.noise.0 >= 0.0 && c.noise.0 <= c.noise.1) {
                return bad("noise range must satisfy 0 <= lo <= hi");
            }
            if !(c.scale.0 > 0.0 && c.scale.0 <= c.scale.1) {
                return bad("scale range must satisfy 0 < lo <= hi");
            }
        }
        Ok(())
    }
}

fn uniform_f64(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Generates a labelled dataset, class by class. Each cloud draws from its
/// own stream derived from `(seed, class, item)`.
pub fn generate_dataset(spec: &DatasetSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut items = Vec::new();
    for (label, class) in spec.classes.iter().enumerate() {
        for i in 0..class.count {
            let mut rng = rng_from_seed(derive_seed(seed, &[label as u64, i as u64]));
            let n = rng.random_range(class.points.0..=class.points.1);
            let noise = uniform_f64(&mut rng, class.noise);
            let scale = uniform_f64(&mut rng, class.scale);
            let shape_seed: u64 = rng.random();
            let mut cloud = generate_shape(class.shape, n, noise, scale, shape_seed)?;
            if spec.random_rotation {
                let rot = random_rotation(&mut rng);
                cloud = assign_rings(&cloud.map_points(|p| apply3(&rot, p))?);
            }
            items.push(LabeledCloud { cloud, label });
        }
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("source".to_string(), "synthetic".to_string());
    metadata.insert("density".to_string(), "dense".to_string());
    metadata.insert("generator_seed".to_string(), seed.to_string());
    metadata.insert("generator_spec".to_string(), serde_json::to_string(spec)?);
    Dataset::new(
        items,
        spec.classes.iter().map(|c| c.name.clone()).collect(),
        metadata,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_plane_is_flat() {
        let c = generate_shape(ShapeKind::Plane, 100, 0.0, 1.0, 1).unwrap();
        assert_eq!(c.len(), 100);
        assert!(c.points().iter().all(|p| p.z == 0.0));
    }

    #[test]
    fn zero_noise_sphere_has_fixed_radius() {
        let c = generate_shape(ShapeKind::Sphere, 500, 0.0, 1.0, 2).unwrap();
        assert!(c.points().iter().all(|p| (p.norm() - 1.0).abs() < 1e-9));
    }

    #[test]
    fn shapes_are_deterministic_and_seed_sensitive() {
        for kind in [ShapeKind::Plane, ShapeKind::Sphere, ShapeKind::Line, ShapeKind::Box, ShapeKind::Cylinder] {
            let a = generate_shape(kind, 64, 0.01, 2.0, 9).unwrap();
            assert_eq!(a, generate_shape(kind, 64, 0.01, 2.0, 9).unwrap());
            assert_ne!(a, generate_shape(kind, 64, 0.01, 2.0, 10).unwrap());
            assert!(a.rings().unwrap().iter().all(|&r| r < RING_COUNT));
        }
    }

    #[test]
    fn zero_noise_surfaces_hold() {
        let boxed = generate_shape(ShapeKind::Box, 200, 0.0, 1.5, 4).unwrap();
        for p in boxed.points() {
            let m = p.x.abs().max(p.y.abs()).max(p.z.abs());
            assert!((m - 1.5).abs() < 1e-12);
        }
        let cyl = generate_shape(ShapeKind::Cylinder, 200, 0.0, 2.0, 4).unwrap();
        for p in cyl.points() {
            assert!((p.x.hypot(p.y) - 1.0).abs() < 1e-12 && p.z.abs() <= 2.0);
        }
        let line = generate_shape(ShapeKind::Line, 50, 0.0, 1.0, 4).unwrap();
        assert!(line.points().iter().all(|p| p.y == 0.0 && p.z == 0.0 && p.x.abs() <= 1.0));
    }

    #[test]
    fn invalid_shape_parameters() {
        assert!(generate_shape(ShapeKind::Plane, 7, 0.0, 1.0, 0).is_err());
        assert!(generate_shape(ShapeKind::Plane, 8, -1.0, 1.0, 0).is_err());
        assert!(generate_shape(ShapeKind::Plane, 8, 0.0, 0.0, 0).is_err());
        assert_eq!("Sphere".parse::<ShapeKind>().unwrap(), ShapeKind::Sphere);
        assert!("torus".parse::<ShapeKind>().is_err());
    }

    #[test]
    fn rotation_is_orthonormal() {
        let mut rng = rng_from_seed(5);
        for _ in 0..20 {
            let r = random_rotation(&mut rng);
            for i in 0..3 {
                for j in 0..3 {
                    let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn dataset_counts_and_determinism() {
        let spec = DatasetSpec::three_class(10);
        let d = generate_dataset(&spec, 3).unwrap();
        assert_eq!(d.items.len(), 30);
        assert_eq!(d.class_names.len(), 3);
        assert_eq!(d.metadata["generator_seed"], "3");
        assert_eq!(d, generate_dataset(&spec, 3).unwrap());

        // Different seeds give different clouds, and no two clouds coincide.
        let e = generate_dataset(&spec, 4).unwrap();
        for a in &d.items {
            for b in &e.items {
                assert_ne!(a.cloud.points(), b.cloud.points());
            }
        }
        for (i, a) in d.items.iter().enumerate() {
            for b in &d.items[i + 1..] {
                assert_ne!(a.cloud.points(), b.cloud.points());
            }
        }
    }

    #[test]
    fn dataset_spec_errors() {
        let mut spec = DatasetSpec::three_class(1);
        spec.classes.clear();
        assert!(generate_dataset(&spec, 0).is_err());
        let mut spec = DatasetSpec::three_class(1);
        spec.classes[0].count = 0;
        assert!(generate_dataset(&spec, 0).is_err());
    }
}
