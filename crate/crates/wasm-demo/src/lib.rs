//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Clouds cross the boundary as flat `[x0, y0, z0, x1, ...]` arrays; richer
//! results come back as JSON strings.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use ascn::adaptive::{choose_from_neighbors, AdaptiveConfig};
use ascn::cloudio::{decimate_density, generate_shape, Point3, PointCloud, ShapeKind};
use ascn::spatial::{max_distance, ReceptiveField, SpatialIndex};
use ascn::structconv::{conv_dir, conv_dist, init_layer, FeatureMap};
use ascn::Result;

fn js_err(e: ascn::AscnError) -> JsError {
    JsError::new(&e.to_string())
}

pub fn cloud_from_flat(xyz: &[f64]) -> Result<PointCloud> {
    if !xyz.len().is_multiple_of(3) {
        return Err(ascn::AscnError::InvalidParam(format!(
            "flat coordinates need a multiple of 3 values, got {}",
            xyz.len()
        )));
    }
    PointCloud::new(xyz.chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect())
}

fn flat(cloud: &PointCloud) -> Vec<f64> {
    cloud.points().iter().flat_map(|p| p.to_array()).collect()
}

/// Synthetic shape, then ring-wise thinning (`keep_every = 1` keeps all).
pub fn generate_points(shape: &str, n: usize, noise: f64, seed: u64, keep_every: usize) -> Result<Vec<f64>> {
    let kind: ShapeKind = shape.parse()?;
    let cloud = generate_shape(kind, n, noise, 1.0, seed)?;
    let cloud = if keep_every > 1 {
        decimate_density(&cloud, keep_every, seed)?
    } else {
        cloud
    };
    Ok(flat(&cloud))
}

/// `[m_star, entropy at m_star]` per point.
pub fn analyze_points(xyz: &[f64], m_min: usize, m_max: usize) -> Result<Vec<f64>> {
    let cloud = cloud_from_flat(xyz)?;
    let cfg = AdaptiveConfig::new(m_min, m_max)?;
    if cloud.len() < 2 {
        return Err(ascn::AscnError::DegenerateCloud("need at least 2 points".into()));
    }
    let index = SpatialIndex::build(&cloud);
    let mut out = Vec::with_capacity(2 * cloud.len());
    for n in 0..cloud.len() {
        let c = choose_from_neighbors(&cloud, n, &index.k_nearest(n, cfg.m_max), &cfg);
        let e = c
            .m_star
            .checked_sub(cfg.m_min)
            .and_then(|i| c.entropies.get(i))
            .copied()
            .unwrap_or(f64::NAN);
        out.push(c.m_star as f64);
        out.push(e);
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct FieldResponse {
    pub center: usize,
    pub m_star: usize,
    pub neighbors: Vec<usize>,
    pub farthest: f64,
    pub dir: Vec<f64>,
    pub dist: Vec<f64>,
    pub fused: Vec<f64>,
}

/// Receptive field of point `index` at its adaptive size, scored by a
/// freshly initialised layer with `kernels` kernel pairs.
pub fn field_response(xyz: &[f64], index: usize, kernels: usize, seed: u64) -> Result<FieldResponse> {
    let cloud = cloud_from_flat(xyz)?;
    if index >= cloud.len() || cloud.len() < 2 {
        return Err(ascn::AscnError::InvalidParam(format!(
            "point {index} is not in a cloud of {} points",
            cloud.len()
        )));
    }
    let cfg = AdaptiveConfig::default();
    let tree = SpatialIndex::build(&cloud);
    let neighbors = tree.k_nearest(index, cfg.m_max);
    let choice = choose_from_neighbors(&cloud, index, &neighbors, &cfg);
    let rf = ReceptiveField::from_neighbors(&cloud, index, &neighbors[..choice.m_star], cfg.m_max)?;
    let layer = init_layer(kernels, 4, 1, kernels, seed)?;
    let features = FeatureMap::ones(cloud.len(), 1);
    let dir = layer
        .dir_kernels
        .iter()
        .map(|k| conv_dir(&rf, &features, k))
        .collect::<Result<Vec<_>>>()?;
    let dist: Vec<f64> = layer.dist_kernels.iter().map(|k| conv_dist(&rf, k)).collect();
    let fused = layer.fusion.forward(&[dir.clone(), dist.clone()].concat());
    Ok(FieldResponse {
        center: index,
        m_star: choice.m_star,
        neighbors: rf.neighbor_indices.clone(),
        farthest: max_distance(&rf),
        dir,
        dist,
        fused,
    })
}

/// Flat xyz of a generated (and optionally thinned) shape:
/// `plane`, `sphere`, `line`, `box` or `cylinder`.
#[wasm_bindgen]
pub fn generate(shape: &str, n: usize, noise: f64, seed: u64, keep_every: usize) -> std::result::Result<Vec<f64>, JsError> {
    generate_points(shape, n, noise, seed, keep_every).map_err(js_err)
}

/// Interleaved `[m_star, entropy]` per point.
#[wasm_bindgen]
pub fn analyze(xyz: &[f64], m_min: usize, m_max: usize) -> std::result::Result<Vec<f64>, JsError> {
    analyze_points(xyz, m_min, m_max).map_err(js_err)
}

/// JSON description of one point's receptive field and layer response.
#[wasm_bindgen]
pub fn respond(xyz: &[f64], index: usize, kernels: usize, seed: u64) -> std::result::Result<String, JsError> {
    let r = field_response(xyz, index, kernels, seed).map_err(js_err)?;
    Ok(serde_json::to_string(&r).expect("plain data serialises"))
}
