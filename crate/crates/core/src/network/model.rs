use rand::Rng as _;

use crate::autodiff::{NodeId, ParamId, ParamStore, Tape, Tensor};
use crate::cloudio::{Point3, PointCloud};
use crate::rng::{derive_seed, rng_from_seed};
use crate::structconv::{
    global_max_aggregate, glorot_bound, init_layer_with_mode, pool_features, pool_select, str_conv_layer,
    Activation, DirectionKernel, DistanceKernel, FeatureMap, FusionMlp, KernelMode, StrConvLayer, Support,
};
use crate::{AscnError, Result};

use super::config::{ModelConfig, Stage};
use super::geometry::{stage_geometry, StageGeometry};

const LAYER_SALT: u64 = 0x4c41_5945;
const HEAD_SALT: u64 = 0x4845_4144;
const EVAL_SALT: u64 = 0x4556_414c;

/// Parameter handles of one structural-convolution layer. Direction and
/// distance blocks are absent when the kernel mode drops them.
#[derive(Debug, Clone)]
pub struct ConvParams {
    pub kernels: usize,
    pub input_dim: usize,
    /// `D_in × J` centre weights.
    pub dir_center: Option<ParamId>,
    /// `D_in × J·S`, column `j·S + s` is support `s` of kernel `j`.
    pub dir_weights: Option<ParamId>,
    /// `J·S × 3` support directions.
    pub dir_directions: Option<ParamId>,
    /// `1 × J·S` distance support weights.
    pub dist_weights: Option<ParamId>,
    /// `1 × J` distance biases.
    pub dist_bias: Option<ParamId>,
    pub mlp_w1: ParamId,
    pub mlp_b1: ParamId,
    pub mlp_w2: ParamId,
    pub mlp_b2: ParamId,
}

#[derive(Debug, Clone)]
pub struct HeadParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// How pooling stages choose the points they keep.
#[derive(Debug, Clone, Copy)]
pub enum Pooling<'a> {
    /// Pool `p` draws from `derive_seed(base, [p])`.
    Seeded(u64),
    /// Kept indices for each pooling stage, in order.
    Explicit(&'a [Vec<usize>]),
}

impl Pooling<'_> {
    fn kept(&self, pool: usize, n: usize, rate: usize) -> Result<Vec<usize>> {
        match self {
            Pooling::Seeded(base) => Ok(pool_select(n, rate, derive_seed(*base, &[pool as u64]))),
            Pooling::Explicit(lists) => {
                let kept = lists.get(pool).ok_or_else(|| {
                    AscnError::InvalidParam(format!("no kept-index list for pooling stage {pool}"))
                })?;
                if kept.is_empty() || kept.iter().any(|&k| k >= n) {
                    return Err(AscnError::InvalidParam(format!(
                        "kept indices for pooling stage {pool} must be non-empty and below {n}"
                    )));
                }
                Ok(kept.clone())
            }
        }
    }
}

/// What a forward pass decided along the way.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForwardTrace {
    /// Kept indices per pooling stage.
    pub kept: Vec<Vec<usize>>,
    /// Neighbourhood sizes per geometry computation (one per distinct
    /// point set the stack sees).
    pub m_star: Vec<Vec<usize>>,
    /// Point count entering each stage.
    pub stage_sizes: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub label: usize,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub convs: Vec<ConvParams>,
    pub head: HeadParams,
}

fn uniform(rng: &mut crate::rng::Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor { rows, cols, data }
}

/// Freshly initialised model for `config`.
pub fn build_model(config: &ModelConfig) -> Result<Model> {
    config.validate()?;
    let mut params = ParamStore::new();
    let mut convs = Vec::new();
    let mut d_in = 1;
    for (l, &kernels) in config.conv_widths().iter().enumerate() {
        let layer = init_layer_with_mode(
            kernels,
            config.supports,
            d_in,
            kernels,
            config.kernel_mode,
            derive_seed(config.seed, &[LAYER_SALT, l as u64]),
        )?;
        convs.push(register_layer(&mut params, l, &layer));
        d_in = kernels;
    }
    let mut rng = rng_from_seed(derive_seed(config.seed, &[HEAD_SALT]));
    let (h, c) = (config.hidden, config.num_classes);
    let head = HeadParams {
        w1: params.add("head.w1", uniform(&mut rng, d_in, h, glorot_bound(d_in, h))),
        b1: params.add("head.b1", Tensor::zeros(1, h)),
        w2: params.add("head.w2", uniform(&mut rng, h, c, glorot_bound(h, c))),
        b2: params.add("head.b2", Tensor::zeros(1, c)),
    };
    Ok(Model {
        config: config.clone(),
        params,
        convs,
        head,
    })
}

fn register_layer(params: &mut ParamStore, l: usize, layer: &StrConvLayer) -> ConvParams {
    let (j, s, d) = (layer.kernels(), layer.supports(), layer.input_dim());
    let mode = layer.mode;
    let name = |part: &str| format!("conv{l}.{part}");
    let mut p = ConvParams {
        kernels: j,
        input_dim: d,
        dir_center: None,
        dir_weights: None,
        dir_directions: None,
        dist_weights: None,
        dist_bias: None,
        mlp_w1: params.add(name("mlp_w1"), tensor(layer.fusion.input, layer.fusion.hidden, &layer.fusion.w1)),
        mlp_b1: params.add(name("mlp_b1"), Tensor::row_vector(layer.fusion.b1.clone())),
        mlp_w2: params.add(name("mlp_w2"), tensor(layer.fusion.hidden, layer.fusion.output, &layer.fusion.w2)),
        mlp_b2: params.add(name("mlp_b2"), Tensor::row_vector(layer.fusion.b2.clone())),
    };
    if mode != KernelMode::DistOnly {
        let mut center = Tensor::zeros(d, j);
        let mut weights = Tensor::zeros(d, j * s);
        let mut dirs = Tensor::zeros(j * s, 3);
        for (k, kernel) in layer.dir_kernels.iter().enumerate() {
            for i in 0..d {
                center.data[i * j + k] = kernel.center_weight[i];
            }
            for (t, support) in kernel.supports.iter().enumerate() {
                let col = k * s + t;
                for i in 0..d {
                    weights.data[i * j * s + col] = support.weight[i];
                }
                dirs.data[col * 3..col * 3 + 3].copy_from_slice(&support.direction.to_array());
            }
        }
        p.dir_center = Some(params.add(name("dir_center"), center));
        p.dir_weights = Some(params.add(name("dir_weights"), weights));
        p.dir_directions = Some(params.add(name("dir_directions"), dirs));
    }
    if mode != KernelMode::DirOnly {
        let w: Vec<f64> = layer.dist_kernels.iter().flat_map(|k| k.support_weights.clone()).collect();
        let b: Vec<f64> = layer.dist_kernels.iter().map(|k| k.center_weight).collect();
        p.dist_weights = Some(params.add(name("dist_weights"), Tensor::row_vector(w)));
        p.dist_bias = Some(params.add(name("dist_bias"), Tensor::row_vector(b)));
    }
    p
}

fn tensor(rows: usize, cols: usize, data: &[f64]) -> Tensor {
    Tensor {
        rows,
        cols,
        data: data.to_vec(),
    }
}

impl Model {
    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Layer `l` as a plain [`StrConvLayer`] (current parameter values).
    pub fn layer(&self, l: usize) -> StrConvLayer {
        let p = &self.convs[l];
        let (j, d, s) = (p.kernels, p.input_dim, self.config.supports);
        let mode = self.config.kernel_mode;
        let dir_kernels = match (p.dir_center, p.dir_weights, p.dir_directions) {
            (Some(c), Some(w), Some(k)) => {
                let (c, w, k) = (self.params.value(c), self.params.value(w), self.params.value(k));
                (0..j)
                    .map(|kj| DirectionKernel {
                        center_weight: (0..d).map(|i| c.at(i, kj)).collect(),
                        supports: (0..s)
                            .map(|t| {
                                let col = kj * s + t;
                                Support {
                                    direction: Point3::new(k.at(col, 0), k.at(col, 1), k.at(col, 2)),
                                    weight: (0..d).map(|i| w.at(i, col)).collect(),
                                }
                            })
                            .collect(),
                    })
                    .collect()
            }
            _ => (0..j)
                .map(|_| DirectionKernel {
                    center_weight: vec![0.0; d],
                    supports: vec![
                        Support {
                            direction: Point3::ZERO,
                            weight: vec![0.0; d]
                        };
                        s
                    ],
                })
                .collect(),
        };
        let dist_kernels = match (p.dist_weights, p.dist_bias) {
            (Some(w), Some(b)) => {
                let (w, b) = (self.params.value(w), self.params.value(b));
                (0..j)
                    .map(|kj| DistanceKernel {
                        support_weights: w.data[kj * s..(kj + 1) * s].to_vec(),
                        center_weight: b.data[kj],
                    })
                    .collect()
            }
            _ => (0..j)
                .map(|_| DistanceKernel {
                    support_weights: vec![0.0; s],
                    center_weight: 0.0,
                })
                .collect(),
        };
        let w1 = self.params.value(p.mlp_w1);
        let w2 = self.params.value(p.mlp_w2);
        StrConvLayer {
            dir_kernels,
            dist_kernels,
            fusion: FusionMlp {
                input: w1.rows,
                hidden: w1.cols,
                output: w2.cols,
                w1: w1.data.clone(),
                b1: self.params.value(p.mlp_b1).data.clone(),
                w2: w2.data.clone(),
                b2: self.params.value(p.mlp_b2).data.clone(),
                activation: Activation::Relu,
            },
            mode,
        }
    }

    fn check_input(&self, cloud: &PointCloud) -> Result<()> {
        let need = self.config.min_neighbors() + 1;
        if cloud.len() < need {
            return Err(AscnError::DegenerateCloud(format!(
                "{} points; the network needs at least {need}",
                cloud.len()
            )));
        }
        if let Some(i) = cloud.points().iter().position(|p| !p.is_finite()) {
            return Err(AscnError::DegenerateCloud(format!("point {i} is not finite")));
        }
        Ok(())
    }

    /// Records the whole network on `tape` and returns the `1×C` logits.
    /// `first` may carry precomputed geometry for the input cloud.
    pub fn forward(
        &self,
        tape: &mut Tape,
        cloud: &PointCloud,
        pooling: Pooling<'_>,
        first: Option<&StageGeometry>,
    ) -> Result<(NodeId, ForwardTrace)> {
        self.check_input(cloud)?;
        let mut trace = ForwardTrace::default();
        let mut cloud = cloud.clone();
        let mut geom: Option<StageGeometry> = match first {
            Some(g) if g.len() == cloud.len() => Some(g.clone()),
            Some(g) => {
                return Err(AscnError::DimensionMismatch {
                    expected: cloud.len(),
                    actual: g.len(),
                })
            }
            None => None,
        };
        if let Some(g) = &geom {
            trace.m_star.push(g.m_star.clone());
        }
        let mut x = tape.constant(Tensor::full(cloud.len(), 1, 1.0));
        let mut conv = 0;
        let mut pool = 0;
        for stage in &self.config.stages {
            trace.stage_sizes.push(cloud.len());
            if geom.is_none() {
                let g = stage_geometry(&cloud, &self.config)?;
                trace.m_star.push(g.m_star.clone());
                geom = Some(g);
            }
            let g = geom.as_ref().expect("geometry computed above");
            match stage {
                Stage::Conv { .. } => {
                    x = self.conv_on_tape(tape, x, g, &self.convs[conv])?;
                    conv += 1;
                }
                Stage::Pool => {
                    let kept = pooling.kept(pool, cloud.len(), self.config.pool_rate)?;
                    let width = self.config.slots() + 1;
                    let mut rows = Vec::with_capacity(kept.len() * width);
                    for &k in &kept {
                        let rf = &g.fields[k];
                        rows.push(k);
                        rows.extend(&rf.neighbor_indices);
                        rows.resize(rows.len() + width - 1 - rf.neighbor_indices.len(), k);
                    }
                    let gathered = tape.gather_rows(x, rows)?;
                    x = tape.segment_max(gathered, width)?;
                    cloud = cloud.select(&kept)?;
                    trace.kept.push(kept);
                    geom = None;
                    pool += 1;
                }
            }
        }
        let global = tape.max_rows(x)?;
        let logits = self.head_on_tape(tape, global)?;
        Ok((logits, trace))
    }

    fn conv_on_tape(&self, tape: &mut Tape, x: NodeId, g: &StageGeometry, p: &ConvParams) -> Result<NodeId> {
        let n = g.len();
        let slots = self.config.slots();
        let s = self.config.supports;
        let dir = match (p.dir_center, p.dir_weights, p.dir_directions) {
            (Some(c), Some(w), Some(k)) => {
                let c = tape.param(&self.params, c);
                let w = tape.param(&self.params, w);
                let k = tape.param(&self.params, k);
                let center = tape.matmul(x, c)?;
                let proj = tape.matmul(x, w)?;
                let mut rows = Vec::with_capacity(n * slots);
                let mut dirs = Vec::with_capacity(n * slots * 3);
                for rf in &g.fields {
                    for t in 0..slots {
                        rows.push(rf.slot_point(t));
                        dirs.extend(rf.directions[t].to_array());
                    }
                }
                let gathered = tape.gather_rows(proj, rows)?;
                let dirs = tape.constant(Tensor {
                    rows: n * slots,
                    cols: 3,
                    data: dirs,
                });
                let cos = tape.cosine(dirs, k)?;
                let responses = tape.mul(gathered, cos)?;
                let best = tape.segment_max(responses, slots)?;
                let summed = tape.col_group_sum(best, s)?;
                Some(tape.add(center, summed)?)
            }
            _ => None,
        };
        let dist = match (p.dist_weights, p.dist_bias) {
            (Some(w), Some(b)) => {
                let w = tape.param(&self.params, w);
                let b = tape.param(&self.params, b);
                let far = tape.constant(Tensor {
                    rows: n,
                    cols: 1,
                    data: g.fields.iter().map(crate::spatial::max_distance).collect(),
                });
                let scaled = tape.matmul(far, w)?;
                let summed = tape.col_group_sum(scaled, s)?;
                Some(tape.add_row_bias(summed, b)?)
            }
            _ => None,
        };
        let fused = match (dir, dist) {
            (Some(a), Some(b)) => tape.concat_cols(a, b)?,
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => unreachable!("a layer always has at least one kernel family"),
        };
        let w1 = tape.param(&self.params, p.mlp_w1);
        let b1 = tape.param(&self.params, p.mlp_b1);
        let w2 = tape.param(&self.params, p.mlp_w2);
        let b2 = tape.param(&self.params, p.mlp_b2);
        let h = tape.affine(fused, w1, b1)?;
        let h = tape.relu(h);
        tape.affine(h, w2, b2)
    }

    fn head_on_tape(&self, tape: &mut Tape, global: NodeId) -> Result<NodeId> {
        let w1 = tape.param(&self.params, self.head.w1);
        let b1 = tape.param(&self.params, self.head.b1);
        let w2 = tape.param(&self.params, self.head.w2);
        let b2 = tape.param(&self.params, self.head.b2);
        let h = tape.affine(global, w1, b1)?;
        let h = tape.relu(h);
        tape.affine(h, w2, b2)
    }

    /// Logits for `cloud` with the given pooling choices.
    pub fn logits(&self, cloud: &PointCloud, pooling: Pooling<'_>) -> Result<(Vec<f64>, ForwardTrace)> {
        let mut tape = Tape::new();
        let (out, trace) = self.forward(&mut tape, cloud, pooling, None)?;
        Ok((tape.value(out).data.clone(), trace))
    }

    /// Pooling used at inference: fixed per model, independent of the
    /// cloud's position in any dataset.
    pub fn eval_pooling(&self) -> Pooling<'static> {
        Pooling::Seeded(derive_seed(self.config.seed, &[EVAL_SALT]))
    }

    pub fn predict(&self, cloud: &PointCloud) -> Result<Prediction> {
        let (logits, _) = self.logits(cloud, self.eval_pooling())?;
        Ok(prediction_from_logits(logits))
    }

    /// Same network evaluated with the plain per-point routines, without
    /// any tape. Used to cross-check [`Model::forward`].
    pub fn reference_logits(&self, cloud: &PointCloud, pooling: Pooling<'_>) -> Result<Vec<f64>> {
        self.check_input(cloud)?;
        let mut cloud = cloud.clone();
        let mut features = FeatureMap::ones(cloud.len(), 1);
        let mut conv = 0;
        let mut pool = 0;
        for stage in &self.config.stages {
            let g = stage_geometry(&cloud, &self.config)?;
            match stage {
                Stage::Conv { .. } => {
                    features = str_conv_layer(&cloud, &features, &g.fields, &self.layer(conv))?;
                    conv += 1;
                }
                Stage::Pool => {
                    let kept = pooling.kept(pool, cloud.len(), self.config.pool_rate)?;
                    features = pool_features(&features, &g.fields).select_rows(&kept);
                    cloud = cloud.select(&kept)?;
                    pool += 1;
                }
            }
        }
        let global = global_max_aggregate(&features);
        let dense = |x: &[f64], w: ParamId, b: ParamId| -> Vec<f64> {
            let (w, b) = (self.params.value(w), self.params.value(b));
            (0..w.cols)
                .map(|k| b.data[k] + x.iter().enumerate().map(|(i, v)| v * w.at(i, k)).sum::<f64>())
                .collect()
        };
        let h: Vec<f64> = dense(&global, self.head.w1, self.head.b1).into_iter().map(|v| v.max(0.0)).collect();
        Ok(dense(&h, self.head.w2, self.head.b2))
    }

    /// Rescales support directions that drifted off unit length (directions
    /// enter only through cosines, so this leaves the function unchanged).
    pub fn normalize_directions(&mut self) {
        for p in &self.convs {
            if let Some(k) = p.dir_directions {
                let t = self.params.value_mut(k);
                for row in t.data.chunks_exact_mut(3) {
                    let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if n > 1e-12 && (n - 1.0).abs() > 1e-12 {
                        row.iter_mut().for_each(|v| *v /= n);
                    }
                }
            }
        }
    }
}

/// Argmax with ties to the lowest index, plus softmax probabilities.
pub fn prediction_from_logits(logits: Vec<f64>) -> Prediction {
    let label = argmax(&logits);
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = exp.iter().sum();
    Prediction {
        label,
        probabilities: exp.iter().map(|e| e / z).collect(),
        logits,
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
