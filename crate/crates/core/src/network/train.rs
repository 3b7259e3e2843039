use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Optimizer, Tape};
use crate::cloudio::Dataset;
use crate::rng::{derive_seed, rng_from_seed};
use crate::{AscnError, Result};

use super::geometry::{stage_geometry, StageGeometry};
use super::model::{argmax, Model, Pooling};
use super::parallel::par_map;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    /// Drives shuffling and the pooling subsamples.
    pub seed: u64,
    #[serde(default)]
    pub schedule: LrSchedule,
    /// Rescale each batch gradient to at most this global norm.
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

/// Per-epoch learning-rate multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from 1 down to `floor` over the run.
    Cosine { floor: f64 },
}

impl LrSchedule {
    pub fn factor(&self, epoch: usize, epochs: usize) -> f64 {
        match *self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine { floor } => {
                let t = if epochs <= 1 { 0.0 } else { epoch as f64 / (epochs - 1) as f64 };
                floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

fn clip_gradients(params: &mut crate::autodiff::ParamStore, max_norm: f64) {
    let ids: Vec<_> = params.ids().collect();
    let norm = ids
        .iter()
        .map(|&id| params.grad(id).data.iter().map(|g| g * g).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for id in ids {
            params.grad_mut(id).data.iter_mut().for_each(|g| *g *= k);
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 25,
            batch_size: 8,
            optimizer: Optimizer::default(),
            seed: 0,
            schedule: LrSchedule::Cosine { floor: 0.05 },
            clip_norm: None,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Items left out because they were too small or degenerate.
    pub skipped: usize,
}

impl TrainLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

/// Fails unless `data` has as many classes as the model, with the same
/// names when both sides name them.
pub fn check_classes(model: &Model, data: &Dataset) -> Result<()> {
    if data.num_classes() != model.num_classes() {
        return Err(AscnError::ClassMismatch(format!(
            "model has {} classes, dataset has {}",
            model.num_classes(),
            data.num_classes()
        )));
    }
    let names = &model.config.class_names;
    if !names.is_empty() && names != &data.class_names {
        return Err(AscnError::ClassMismatch(format!(
            "model classes {:?} differ from dataset classes {:?}",
            names, data.class_names
        )));
    }
    Ok(())
}

pub fn train(model: &mut Model, data: &Dataset, cfg: &TrainConfig) -> Result<TrainLog> {
    train_with(model, data, cfg, 1, |_| {})
}

/// Mini-batch training with softmax cross-entropy, one item at a time.
/// `on_epoch` sees each record as soon as the epoch finishes. `workers`
/// only parallelises the up-front receptive-field computation.
pub fn train_with(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
    workers: usize,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainLog> {
    check_classes(model, data)?;
    if cfg.batch_size == 0 {
        return Err(AscnError::InvalidParam("batch_size must be at least 1".into()));
    }
    let min_points = model.config.min_points();
    let geometry: Vec<Option<StageGeometry>> = par_map(&data.items, workers, |i, item| {
        if item.cloud.len() < min_points {
            log::warn!("item {i}: {} points, below the minimum of {min_points}; skipped", item.cloud.len());
            return None;
        }
        match stage_geometry(&item.cloud, &model.config) {
            Ok(g) => Some(g),
            Err(e) => {
                log::warn!("item {i}: {e}; skipped");
                None
            }
        }
    });
    let usable: Vec<usize> = (0..data.len()).filter(|&i| geometry[i].is_some()).collect();
    if usable.is_empty() {
        return Err(AscnError::DegenerateCloud("no trainable items in the dataset".into()));
    }
    let mut log = TrainLog {
        epochs: Vec::with_capacity(cfg.epochs),
        skipped: data.len() - usable.len(),
    };
    for epoch in 0..cfg.epochs {
        let optimizer = cfg
            .optimizer
            .with_lr(cfg.optimizer.lr() * cfg.schedule.factor(epoch, cfg.epochs));
        let mut order = usable.clone();
        order.shuffle(&mut rng_from_seed(derive_seed(cfg.seed, &[epoch as u64])));
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch in order.chunks(cfg.batch_size) {
            model.params.zero_grad();
            let weight = 1.0 / batch.len() as f64;
            for &i in batch {
                let item = &data.items[i];
                let pooling = Pooling::Seeded(derive_seed(cfg.seed, &[epoch as u64, i as u64]));
                let mut tape = Tape::new();
                let (logits, _) = model.forward(&mut tape, &item.cloud, pooling, geometry[i].as_ref())?;
                correct += (argmax(&tape.value(logits).data) == item.label) as usize;
                let loss = tape.cross_entropy(logits, item.label)?;
                let value = tape.value(loss).item();
                if !value.is_finite() {
                    return Err(AscnError::Numerical(format!("loss is {value} at epoch {epoch}, item {i}")));
                }
                let grads = tape.backward(loss)?;
                tape.accumulate_param_grads(&grads, &mut model.params, weight);
                loss_sum += value;
            }
            if let Some(c) = cfg.clip_norm {
                clip_gradients(&mut model.params, c);
            }
            model.params.step(&optimizer);
            model.normalize_directions();
        }
        let record = EpochRecord {
            epoch,
            loss: loss_sum / usable.len() as f64,
            train_acc: correct as f64 / usable.len() as f64,
        };
        log::info!("epoch {epoch}: loss {:.4}, train accuracy {:.3}", record.loss, record.train_acc);
        on_epoch(&record);
        log.epochs.push(record);
    }
    Ok(log)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
    /// `100 * correct / total`, or 0 for an empty set.
    pub percent: f64,
}

impl Accuracy {
    pub fn new(correct: usize, total: usize) -> Self {
        let percent = if total == 0 { 0.0 } else { 100.0 * correct as f64 / total as f64 };
        Accuracy { correct, total, percent }
    }

    pub fn fraction(&self) -> f64 {
        self.percent / 100.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: Accuracy,
    /// Items that could not be classified (counted as wrong).
    pub failed: usize,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<Option<usize>>,
}

impl Evaluation {
    pub fn per_class_accuracy(&self) -> Vec<f64> {
        self.confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: usize = row.iter().sum();
                if n == 0 {
                    0.0
                } else {
                    row[c] as f64 / n as f64
                }
            })
            .collect()
    }
}

/// Classifies every item with the model's inference pooling.
pub fn evaluate(model: &Model, data: &Dataset, workers: usize) -> Result<Evaluation> {
    check_classes(model, data)?;
    let predictions = par_map(&data.items, workers, |i, item| match model.predict(&item.cloud) {
        Ok(p) => Ok(Some(p.label)),
        Err(AscnError::DegenerateCloud(msg)) => {
            log::warn!("item {i}: {msg}; counted as misclassified");
            Ok(None)
        }
        Err(e) => Err(e),
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let c = model.num_classes();
    let mut confusion = vec![vec![0; c]; c];
    let mut correct = 0;
    let mut failed = 0;
    for (item, p) in data.items.iter().zip(&predictions) {
        match p {
            Some(p) => {
                confusion[item.label][*p] += 1;
                correct += (*p == item.label) as usize;
            }
            None => failed += 1,
        }
    }
    Ok(Evaluation {
        accuracy: Accuracy::new(correct, data.len()),
        failed,
        confusion,
        predictions,
    })
}
