use serde::{Deserialize, Serialize};

use super::metrics::Metrics;
use super::network::{build_2d_network, build_network, Model2dConfig, ModelConfig};
use super::train::{encode_dataset, predict, train, TrainConfig, TrainLog};
use crate::dsp::Preprocessor;
use crate::error::Result;
use crate::signal::LabeledDataset;

pub const METRIC_NAMES: [&str; 5] = ["accuracy", "auc", "precision", "sensitivity", "f1"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub model: String,
    pub accuracy: f64,
    pub auc: f64,
    pub precision: f64,
    pub sensitivity: f64,
    pub f1: f64,
    /// Validation-set patient probabilities, in `val_indices` order.
    pub scores: Vec<f64>,
    pub log: TrainLog,
}

impl ModelRow {
    fn new(model: &str, m: &Metrics, scores: Vec<f64>, log: TrainLog) -> Self {
        Self {
            model: model.to_string(),
            accuracy: m.accuracy,
            auc: m.auc,
            precision: m.precision,
            sensitivity: m.recall,
            f1: m.f1,
            scores,
            log,
        }
    }

    pub fn values(&self) -> [f64; 5] {
        [self.accuracy, self.auc, self.precision, self.sensitivity, self.f1]
    }
}

/// Side-by-side held-out metrics of the time-domain and STFT networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub threshold: f64,
    pub val_indices: Vec<usize>,
    /// 1 for patient, 0 for healthy, aligned with `val_indices`.
    pub val_labels: Vec<u8>,
    pub rows: Vec<ModelRow>,
}

impl ComparisonReport {
    /// Metric-by-metric: is the first row at least as good as the second?
    pub fn first_row_wins(&self) -> [bool; 5] {
        let (a, b) = (self.rows[0].values(), self.rows[1].values());
        std::array::from_fn(|i| a[i] >= b[i])
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<8}", "model");
        for m in METRIC_NAMES {
            s.push_str(&format!(" {m:>11}"));
        }
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("{:<8}", r.model));
            for v in r.values() {
                s.push_str(&format!(" {v:>11.4}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Trains both networks on the same subject split and training seed and
/// scores them on the held-out subjects.
pub fn compare_models(
    corpus: &LabeledDataset,
    pre: &Preprocessor,
    cfg_1d: &ModelConfig,
    cfg_2d: &Model2dConfig,
    tc: &TrainConfig,
    threshold: f64,
) -> Result<ComparisonReport> {
    let mut rows = Vec::new();
    let mut val_indices = Vec::new();
    let mut val_labels = Vec::new();
    for net in [build_network(cfg_1d)?, build_2d_network(cfg_2d)?] {
        let out = train(&net, pre, corpus, tc)?;
        let val = encode_dataset(&out.network, pre, &corpus.subset(&out.val_indices))?;
        let scores = predict(&out.network, &val.xs)?;
        let m = Metrics::from_scores(&scores, &val.positives(), threshold)?;
        rows.push(ModelRow::new(net.arch.name(), &m, scores, out.log));
        val_labels = val.ys.iter().map(|&y| y as u8).collect();
        val_indices = out.val_indices;
    }
    Ok(ComparisonReport { threshold, val_indices, val_labels, rows })
}
