//! The layer stack: structural convolutions and graph pooling over
//! adaptive receptive fields, a global max, and a small classifier head.
//! Training runs on the autodiff tape; a tape-free reference evaluator
//! mirrors the same computation.

mod config;
mod geometry;
mod io;
mod model;
mod parallel;
mod train;

pub use config::{ModelConfig, Neighborhood, Stage};
pub use geometry::{stage_geometry, StageGeometry};
pub use io::{load_model, model_from_bytes, model_to_bytes, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use model::{
    argmax, build_model, prediction_from_logits, ConvParams, ForwardTrace, HeadParams, Model, Pooling, Prediction,
};
pub use parallel::par_map;
pub use train::{check_classes, Accuracy, evaluate, train, train_with, EpochRecord, Evaluation, LrSchedule, TrainConfig, TrainLog};

use crate::autodiff::{NodeId, ParamStore, Tape};
use crate::cloudio::PointCloud;
use crate::Result;

/// A loss closure over an arbitrary parameter store, in the shape the
/// gradient checker expects. Pooling choices are held fixed.
pub fn loss_builder<'a>(
    model: &'a Model,
    cloud: &'a PointCloud,
    label: usize,
    kept: &'a [Vec<usize>],
) -> impl Fn(&ParamStore) -> Result<(Tape, NodeId)> + 'a {
    move |store: &ParamStore| {
        let mut m = model.clone();
        m.params = store.clone();
        let mut tape = Tape::new();
        let (logits, _) = m.forward(&mut tape, cloud, Pooling::Explicit(kept), None)?;
        let loss = tape.cross_entropy(logits, label)?;
        Ok((tape, loss))
    }
}

#[cfg(test)]
mod tests;
