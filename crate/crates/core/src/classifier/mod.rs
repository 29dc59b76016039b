//! Convolutional swallow classifiers, training and evaluation.

mod checkpoint;
mod compare;
mod gradcheck;
pub mod layers;
mod metrics;
mod network;
mod train;

pub use checkpoint::{model_version, Checkpoint, CHECKPOINT_FORMAT};
pub use compare::{compare_models, ComparisonReport, ModelRow, METRIC_NAMES};
pub use gradcheck::{gradient_check, gradient_check_sample, relative_error, GradCheckConfig, GradCheckReport, LayerError};
pub use layers::{Layer, Mode, Shape};
pub use metrics::{auc_trapezoid, health_index, roc_curve, Confusion, HealthIndex, Metrics, RocPoint};
pub use network::{
    bce_with_logit, build_2d_network, build_network, sigmoid, Architecture, ConvSpec, Grads, Model2dConfig,
    ModelConfig, Network, Trace,
};
pub use train::{
    encode_dataset, loss_and_accuracy, predict, train, train_encoded, EncodedSet, EpochStats, TrainConfig,
    TrainLog, TrainOutcome,
};

use crate::dsp::Preprocessor;
use crate::error::{invalid, Result};
use crate::signal::LabeledDataset;

/// Per-item scores alongside the metrics computed from them.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Evaluation {
    pub scores: Vec<f64>,
    pub metrics: Metrics,
}

pub fn evaluate(net: &Network, pre: &Preprocessor, dataset: &LabeledDataset, threshold: f64) -> Result<Evaluation> {
    if dataset.is_empty() {
        return invalid("cannot evaluate an empty dataset");
    }
    let set = encode_dataset(net, pre, dataset)?;
    let scores = predict(net, &set.xs)?;
    let metrics = Metrics::from_scores(&scores, &set.positives(), threshold)?;
    Ok(Evaluation { scores, metrics })
}
