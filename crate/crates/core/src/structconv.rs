//! Structural convolution on receptive fields.
//!
//! A layer holds `J` paired kernels. Each direction kernel scores a
//! receptive field by the centre feature's projection onto a centre weight
//! plus, for every support direction, the best neighbour response
//! `<F(p_m), w_s> * cos(d_mn, k_s)`. Each distance kernel scales the
//! farthest-neighbour distance by its support weights and adds a bias. The
//! `2J` responses are fused per point by a one-hidden-layer MLP.
//!
//! Everything here is a plain evaluator with no gradient bookkeeping; the
//! trainable network in [`crate::network`] re-expresses the same maths on
//! the autodiff tape and is tested against these functions.

use rand::seq::index;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cloudio::{Point3, PointCloud};
use crate::rng::{rng_from_seed, Rng};
use crate::spatial::{max_distance, ReceptiveField};
use crate::{AscnError, Result};

/// Norms below this count as zero in cosine similarity.
pub const ZERO_NORM: f64 = 1e-12;

/// Row-major `N × D` per-point features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(AscnError::DimensionMismatch {
                expected: rows * dim,
                actual: data.len(),
            });
        }
        Ok(FeatureMap { rows, dim, data })
    }

    /// The constant-one input features of the first layer.
    pub fn ones(rows: usize, dim: usize) -> Self {
        FeatureMap {
            rows,
            dim,
            data: vec![1.0; rows * dim],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.data[n * self.dim..(n + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMap {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        FeatureMap {
            rows: rows.len(),
            dim: self.dim,
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Support {
    pub direction: Point3,
    pub weight: Vec<f64>,
}

/// Direction kernel: a centre weight plus `S` (direction, weight) supports.
/// The centre direction is implicitly the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionKernel {
    pub center_weight: Vec<f64>,
    pub supports: Vec<Support>,
}

impl DirectionKernel {
    pub fn dim(&self) -> usize {
        self.center_weight.len()
    }
}

/// Distance kernel: one scalar weight per support plus a scalar bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceKernel {
    pub support_weights: Vec<f64>,
    pub center_weight: f64,
}

/// Which kernel families feed the fusion MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    /// Direction and distance responses, concatenated.
    #[default]
    StrConv,
    DirOnly,
    DistOnly,
}

impl KernelMode {
    pub fn fused_width(self, kernels: usize) -> usize {
        match self {
            KernelMode::StrConv => 2 * kernels,
            KernelMode::DirOnly | KernelMode::DistOnly => kernels,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }
}

/// `input -> hidden (activation) -> output`, weights row-major `in × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionMlp {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub activation: Activation,
}

impl FusionMlp {
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let z = self.b1[j] + (0..self.input).map(|i| x[i] * self.w1[i * self.hidden + j]).sum::<f64>();
                self.activation.apply(z)
            })
            .collect();
        (0..self.output)
            .map(|k| self.b2[k] + (0..self.hidden).map(|j| h[j] * self.w2[j * self.output + k]).sum::<f64>())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrConvLayer {
    pub dir_kernels: Vec<DirectionKernel>,
    pub dist_kernels: Vec<DistanceKernel>,
    pub fusion: FusionMlp,
    pub mode: KernelMode,
}

impl StrConvLayer {
    pub fn kernels(&self) -> usize {
        self.dir_kernels.len()
    }

    pub fn supports(&self) -> usize {
        self.dir_kernels[0].supports.len()
    }

    pub fn input_dim(&self) -> usize {
        self.dir_kernels[0].dim()
    }

    pub fn output_dim(&self) -> usize {
        self.fusion.output
    }
}

/// Pooling subsample rate and seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolConfig {
    pub rate: usize,
    pub seed: u64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig { rate: 4, seed: 0 }
    }
}

/// `<a, b> / (|a| |b|)`, or 0 when either norm is (numerically) zero.
pub fn cosine_similarity(a: &Point3, b: &Point3) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na < ZERO_NORM || nb < ZERO_NORM {
        return 0.0;
    }
    a.dot(b) / (na * nb)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Neighbour response to one support: feature projection times cosine.
pub fn sim(feature: &[f64], weight: &[f64], d_mn: &Point3, k_s: &Point3) -> f64 {
    dot(feature, weight) * cosine_similarity(d_mn, k_s)
}

/// Direction-based convolution of one receptive field. The per-support
/// max runs over every slot, padding included (padded slots score 0).
pub fn conv_dir(rf: &ReceptiveField, features: &FeatureMap, kernel: &DirectionKernel) -> Result<f64> {
    if features.dim() != kernel.dim() {
        return Err(AscnError::DimensionMismatch {
            expected: kernel.dim(),
            actual: features.dim(),
        });
    }
    let mut out = dot(features.row(rf.center_index), &kernel.center_weight);
    for support in &kernel.supports {
        let best = (0..rf.slots())
            .map(|s| {
                sim(
                    features.row(rf.slot_point(s)),
                    &support.weight,
                    &rf.directions[s],
                    &support.direction,
                )
            })
            .fold(f64::NEG_INFINITY, f64::max);
        out += best;
    }
    Ok(out)
}

/// Distance-based convolution: bias plus support weights times the
/// farthest real neighbour distance.
pub fn conv_dist(rf: &ReceptiveField, kernel: &DistanceKernel) -> f64 {
    let far = max_distance(rf);
    kernel.center_weight + kernel.support_weights.iter().map(|w| w * far).sum::<f64>()
}

/// The `[dir_1..dir_J, dist_1..dist_J]` responses of one field (or one
/// half of them, depending on the layer's mode).
pub fn layer_responses(rf: &ReceptiveField, features: &FeatureMap, layer: &StrConvLayer) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(layer.mode.fused_width(layer.kernels()));
    if layer.mode != KernelMode::DistOnly {
        for k in &layer.dir_kernels {
            out.push(conv_dir(rf, features, k)?);
        }
    }
    if layer.mode != KernelMode::DirOnly {
        for k in &layer.dist_kernels {
            out.push(conv_dist(rf, k));
        }
    }
    Ok(out)
}

/// Applies a structural convolution layer independently at every point.
pub fn str_conv_layer(
    cloud: &PointCloud,
    features: &FeatureMap,
    fields: &[ReceptiveField],
    layer: &StrConvLayer,
) -> Result<FeatureMap> {
    if fields.len() != cloud.len() || features.rows() != cloud.len() {
        return Err(AscnError::DimensionMismatch {
            expected: cloud.len(),
            actual: if fields.len() != cloud.len() { fields.len() } else { features.rows() },
        });
    }
    let mut data = Vec::with_capacity(cloud.len() * layer.output_dim());
    for rf in fields {
        let x = layer_responses(rf, features, layer)?;
        data.extend(layer.fusion.forward(&x));
    }
    FeatureMap::new(cloud.len(), layer.output_dim(), data)
}

/// Channel-wise max over each point and its real neighbours.
pub fn pool_features(features: &FeatureMap, fields: &[ReceptiveField]) -> FeatureMap {
    let mut data = Vec::with_capacity(features.data.len());
    for rf in fields {
        let mut row = features.row(rf.center_index).to_vec();
        for &m in &rf.neighbor_indices {
            for (r, v) in row.iter_mut().zip(features.row(m)) {
                *r = r.max(*v);
            }
        }
        data.extend(row);
    }
    FeatureMap {
        rows: fields.len(),
        dim: features.dim,
        data,
    }
}

/// `ceil(n / rate)` distinct indices drawn uniformly, returned ascending.
pub fn pool_select(n: usize, rate: usize, seed: u64) -> Vec<usize> {
    if rate <= 1 {
        return (0..n).collect();
    }
    let mut rng = rng_from_seed(seed);
    let mut kept = index::sample(&mut rng, n, n.div_ceil(rate)).into_vec();
    kept.sort_unstable();
    kept
}

/// Graph max-pooling: neighbourhood max per channel, then a seeded random
/// subsample of `ceil(N / rate)` points.
pub fn graph_max_pool(
    cloud: &PointCloud,
    features: &FeatureMap,
    fields: &[ReceptiveField],
    cfg: &PoolConfig,
) -> Result<(PointCloud, FeatureMap, Vec<usize>)> {
    if cfg.rate == 0 {
        return Err(AscnError::InvalidParam("pool rate must be at least 1".into()));
    }
    if fields.len() != cloud.len() || features.rows() != cloud.len() {
        return Err(AscnError::DimensionMismatch {
            expected: cloud.len(),
            actual: features.rows(),
        });
    }
    let pooled = pool_features(features, fields);
    let kept = pool_select(cloud.len(), cfg.rate, cfg.seed);
    Ok((cloud.select(&kept)?, pooled.select_rows(&kept), kept))
}

/// Channel-wise max over all points.
pub fn global_max_aggregate(features: &FeatureMap) -> Vec<f64> {
    let mut out = vec![f64::NEG_INFINITY; features.dim()];
    for n in 0..features.rows() {
        for (o, v) in out.iter_mut().zip(features.row(n)) {
            *o = o.max(*v);
        }
    }
    out
}

/// Glorot-uniform bound for a `fan_in × fan_out` weight block.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn uniform_vec(rng: &mut Rng, len: usize, bound: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-bound..=bound)).collect()
}

fn unit_direction(rng: &mut Rng) -> Point3 {
    loop {
        let v = Point3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        let n = v.norm();
        if n > 1e-6 {
            return v * (1.0 / n);
        }
    }
}

/// A freshly initialised full structural-convolution layer.
pub fn init_layer(kernels: usize, supports: usize, d_in: usize, d_out: usize, seed: u64) -> Result<StrConvLayer> {
    init_layer_with_mode(kernels, supports, d_in, d_out, KernelMode::StrConv, seed)
}

/// Support directions are uniform on the unit sphere; weights are
/// Glorot-uniform per block; MLP biases start at zero.
pub fn init_layer_with_mode(
    kernels: usize,
    supports: usize,
    d_in: usize,
    d_out: usize,
    mode: KernelMode,
    seed: u64,
) -> Result<StrConvLayer> {
    if kernels == 0 || supports == 0 || d_in == 0 || d_out == 0 {
        return Err(AscnError::InvalidParam(format!(
            "layer sizes must be >= 1 (J = {kernels}, S = {supports}, D_in = {d_in}, D_out = {d_out})"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let center_bound = glorot_bound(d_in, kernels);
    let support_bound = glorot_bound(d_in, kernels * supports);
    let dir_kernels = (0..kernels)
        .map(|_| DirectionKernel {
            center_weight: uniform_vec(&mut rng, d_in, center_bound),
            supports: (0..supports)
                .map(|_| Support {
                    direction: unit_direction(&mut rng),
                    weight: uniform_vec(&mut rng, d_in, support_bound),
                })
                .collect(),
        })
        .collect();
    let dist_support_bound = glorot_bound(1, kernels * supports);
    let dist_center_bound = glorot_bound(1, kernels);
    let dist_kernels = (0..kernels)
        .map(|_| DistanceKernel {
            support_weights: uniform_vec(&mut rng, supports, dist_support_bound),
            center_weight: rng.random_range(-dist_center_bound..=dist_center_bound),
        })
        .collect();
    let input = mode.fused_width(kernels);
    let fusion = FusionMlp {
        input,
        hidden: input,
        output: d_out,
        w1: uniform_vec(&mut rng, input * input, glorot_bound(input, input)),
        b1: vec![0.0; input],
        w2: uniform_vec(&mut rng, input * d_out, glorot_bound(input, d_out)),
        b2: vec![0.0; d_out],
        activation: Activation::Relu,
    };
    Ok(StrConvLayer {
        dir_kernels,
        dist_kernels,
        fusion,
        mode,
    })
}
