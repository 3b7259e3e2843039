//! Per-point neighbourhood size selection by minimum eigenentropy.
//!
//! For every candidate size `M` in `[m_min, m_max]`, the centre point and
//! its `M` nearest neighbours form a local structure tensor; the size whose
//! normalised eigenvalues have the lowest Shannon entropy wins. Linear and
//! planar neighbourhoods score low, isotropic blobs score `ln 3`.

use serde::{Deserialize, Serialize};

use crate::cloudio::{Point3, PointCloud};
use crate::spatial::SpatialIndex;
use crate::{AscnError, Result};

pub type Mat3 = [[f64; 3]; 3];

/// Entropies closer than this are treated as equal, so floating-point noise
/// cannot flip the argmin away from the smaller size.
pub const ENTROPY_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub m_min: usize,
    pub m_max: usize,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig { m_min: 3, m_max: 10 }
    }
}

impl AdaptiveConfig {
    pub fn new(m_min: usize, m_max: usize) -> Result<Self> {
        let cfg = AdaptiveConfig { m_min, m_max };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_min < 2 || self.m_min > self.m_max {
            return Err(AscnError::InvalidParam(format!(
                "need 2 <= m_min <= m_max, got m_min = {}, m_max = {}",
                self.m_min, self.m_max
            )));
        }
        Ok(())
    }

    pub fn candidates(&self) -> std::ops::RangeInclusive<usize> {
        self.m_min..=self.m_max
    }
}

/// Eigenvalues (descending, clamped at zero), their normalised shares and
/// the resulting eigenentropy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenAnalysis {
    pub lambda: [f64; 3],
    pub e: [f64; 3],
    pub entropy: f64,
}

impl EigenAnalysis {
    pub fn from_eigenvalues(lambda: [f64; 3]) -> Self {
        let sum: f64 = lambda.iter().sum();
        let e = if sum > 0.0 {
            lambda.map(|l| l / sum)
        } else {
            [0.0; 3]
        };
        EigenAnalysis {
            lambda,
            e,
            entropy: eigenentropy(lambda),
        }
    }
}

/// Mean-centred covariance with `1/K` normalisation.
pub fn covariance3(points: &[Point3]) -> Mat3 {
    let k = points.len() as f64;
    let mean = points.iter().fold(Point3::ZERO, |a, &p| a + p) * (1.0 / k);
    let mut c = [[0.0; 3]; 3];
    for p in points {
        let d = (*p - mean).to_array();
        for i in 0..3 {
            for j in i..3 {
                c[i][j] += d[i] * d[j];
            }
        }
    }
    for i in 0..3 {
        for j in i..3 {
            c[i][j] /= k;
            c[j][i] = c[i][j];
        }
    }
    c
}

/// Eigenvalues of a symmetric 3×3 matrix by cyclic Jacobi rotations,
/// sorted descending. Round-off negatives within `1e-12` (relative to the
/// matrix scale) are clamped to zero.
pub fn eig_sym3(c: &Mat3) -> Result<EigenAnalysis> {
    let scale = c.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if !scale.is_finite() {
        return Err(AscnError::Numerical("matrix has non-finite entries".into()));
    }
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        if (c[i][j] - c[j][i]).abs() > 1e-9 * scale.max(1.0) {
            return Err(AscnError::Numerical(format!(
                "matrix is not symmetric: a[{i}][{j}] = {}, a[{j}][{i}] = {}",
                c[i][j], c[j][i]
            )));
        }
    }
    let mut a = *c;
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let avg = 0.5 * (a[i][j] + a[j][i]);
        a[i][j] = avg;
        a[j][i] = avg;
    }
    jacobi_diagonalize(&mut a);

    let mut lambda = [a[0][0], a[1][1], a[2][2]];
    lambda.sort_by(|x, y| y.total_cmp(x));
    let floor = 1e-12 * scale.max(1.0);
    for l in &mut lambda {
        if *l < 0.0 && *l > -floor {
            *l = 0.0;
        }
    }
    Ok(EigenAnalysis::from_eigenvalues(lambda))
}

fn jacobi_diagonalize(a: &mut Mat3) {
    for _sweep in 0..64 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        let diag = a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2];
        if off == 0.0 || off <= f64::EPSILON * f64::EPSILON * diag * 1e-4 {
            return;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let apq = a[p][q];
            if apq == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let cos = 1.0 / (t * t + 1.0).sqrt();
            let sin = t * cos;
            let r = 3 - p - q;
            let (arp, arq) = (a[r][p], a[r][q]);
            a[p][p] -= t * apq;
            a[q][q] += t * apq;
            a[p][q] = 0.0;
            a[q][p] = 0.0;
            a[r][p] = cos * arp - sin * arq;
            a[p][r] = a[r][p];
            a[r][q] = sin * arp + cos * arq;
            a[q][r] = a[r][q];
        }
    }
}

/// Shannon entropy of the normalised eigenvalues, with `0 ln 0 = 0`.
/// Returns `+inf` when all eigenvalues are zero so fully coincident
/// neighbourhoods lose every comparison.
pub fn eigenentropy(lambda: [f64; 3]) -> f64 {
    let lambda = lambda.map(|l| l.max(0.0));
    let sum: f64 = lambda.iter().sum();
    if sum <= 0.0 {
        return f64::INFINITY;
    }
    0.0 - lambda
        .iter()
        .map(|&l| {
            let e = l / sum;
            if e > 0.0 {
                e * e.ln()
            } else {
                0.0
            }
        })
        .sum::<f64>()
}

/// Outcome of the neighbourhood-size search for one point.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodChoice {
    pub m_star: usize,
    /// Entropy per candidate `M = m_min..=m_max`; `+inf` where the
    /// candidate is unavailable (not enough points) or fully degenerate.
    pub entropies: Vec<f64>,
}

/// Selects `M*` for point `n` given its ascending neighbour list (at least
/// `min(m_max, N - 1)` long). Candidate sizes use prefixes of that list.
pub fn choose_from_neighbors(
    cloud: &PointCloud,
    n: usize,
    neighbors: &[usize],
    cfg: &AdaptiveConfig,
) -> NeighborhoodChoice {
    let mut entropies = Vec::with_capacity(cfg.m_max - cfg.m_min + 1);
    let mut local = Vec::with_capacity(cfg.m_max + 1);
    local.push(cloud.point(n));
    local.extend(neighbors.iter().take(cfg.m_max).map(|&i| cloud.point(i)));

    let mut best: Option<(usize, f64)> = None;
    for m in cfg.candidates() {
        let entropy = if m <= neighbors.len() {
            let cov = covariance3(&local[..=m]);
            eig_sym3(&cov).map(|a| a.entropy).unwrap_or(f64::INFINITY)
        } else {
            f64::INFINITY
        };
        entropies.push(entropy);
        if m <= neighbors.len() {
            match best {
                None => best = Some((m, entropy)),
                Some((_, e)) if entropy < e - ENTROPY_TIE_TOLERANCE => best = Some((m, entropy)),
                _ => {}
            }
        }
    }
    let m_star = match best {
        Some((m, _)) => m,
        None => {
            log::debug!(
                "point {n}: only {} neighbours for m_min = {}; using all of them",
                neighbors.len(),
                cfg.m_min
            );
            neighbors.len()
        }
    };
    NeighborhoodChoice { m_star, entropies }
}

/// Minimum-eigenentropy neighbourhood size for point `n`. Ties go to the
/// smaller size. With fewer than `m_min + 1` points, returns `N - 1`.
pub fn optimal_neighborhood(
    cloud: &PointCloud,
    index: &SpatialIndex,
    n: usize,
    cfg: &AdaptiveConfig,
) -> NeighborhoodChoice {
    let neighbors = index.k_nearest(n, cfg.m_max);
    choose_from_neighbors(cloud, n, &neighbors, cfg)
}

pub fn optimal_neighborhoods_all(
    cloud: &PointCloud,
    index: &SpatialIndex,
    cfg: &AdaptiveConfig,
) -> Vec<NeighborhoodChoice> {
    (0..cloud.len())
        .map(|n| optimal_neighborhood(cloud, index, n, cfg))
        .collect()
}
