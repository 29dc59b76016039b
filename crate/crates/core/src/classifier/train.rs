use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::Mode;
use super::network::{bce_with_logit, Grads, Network};
use crate::dsp::Preprocessor;
use crate::error::{invalid, Result};
use crate::signal::{Label, LabeledDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Passes over the training split.
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            batch_size: 16,
            learning_rate: 1e-3,
            momentum: 0.9,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return invalid("iterations must be at least 1");
        }
        if self.batch_size == 0 {
            return invalid("batch size must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return invalid(format!("learning rate must be >= 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return invalid(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return invalid(format!("validation fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        Ok(())
    }
}

/// Network inputs with 0/1 targets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EncodedSet {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
}

impl EncodedSet {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn positives(&self) -> Vec<bool> {
        self.ys.iter().map(|&y| y > 0.5).collect()
    }
}

/// High-passes and encodes every item of `dataset` for `net`.
pub fn encode_dataset(net: &Network, pre: &Preprocessor, dataset: &LabeledDataset) -> Result<EncodedSet> {
    let mut set = EncodedSet::default();
    for item in &dataset.items {
        set.xs.push(net.encode(&pre.highpass(&item.segment)?)?);
        set.ys.push(item.label.target());
    }
    Ok(set)
}

/// Inference-mode patient probabilities, in item order.
pub fn predict(net: &Network, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(xs.len());
    for chunk in xs.chunks(64) {
        out.extend(net.forward_batch(chunk, Mode::Infer)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 0 is the untrained network.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Entry 0 is measured before the first update.
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub train_subjects: Vec<String>,
    pub val_subjects: Vec<String>,
}

impl TrainLog {
    pub fn initial(&self) -> &EpochStats {
        &self.epochs[0]
    }

    pub fn last(&self) -> &EpochStats {
        self.epochs.last().expect("log always holds the initial entry")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_accuracy,val_loss,val_accuracy\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy
            ));
        }
        s
    }
}

/// Mean cross-entropy and accuracy at 0.5 in inference mode.
pub fn loss_and_accuracy(net: &Network, set: &EncodedSet) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut loss = 0.0;
    let mut correct = 0;
    for (xs, ys) in set.xs.chunks(64).zip(set.ys.chunks(64)) {
        for (z, &y) in net.logits(xs, Mode::Infer)?.into_iter().zip(ys) {
            loss += bce_with_logit(z, y);
            if (z > 0.0) == (y > 0.5) {
                correct += 1;
            }
        }
    }
    let n = set.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Start offsets of each mini-batch; a trailing batch of one is folded into
/// the previous batch so batch statistics stay defined.
fn batch_bounds(n: usize, batch: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<_> = (0..n).step_by(batch).map(|s| s..(s + batch).min(n)).collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().end = last.end;
    }
    out
}

/// Momentum SGD over `train`, returning the parameters with the lowest
/// validation loss seen (including the starting point).
pub fn train_encoded(net: &Network, train: &EncodedSet, val: &EncodedSet, tc: &TrainConfig) -> Result<(Network, TrainLog)> {
    tc.validate()?;
    if train.is_empty() {
        return invalid("empty training set");
    }
    let mut net = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut velocity: Grads = net
        .layers
        .iter()
        .map(|l| l.params().iter().map(|t| vec![0.0; t.len()]).collect())
        .collect();
    let stats = |net: &Network, epoch| -> Result<EpochStats> {
        let (train_loss, train_accuracy) = loss_and_accuracy(net, train)?;
        let (val_loss, val_accuracy) = loss_and_accuracy(net, val)?;
        Ok(EpochStats { epoch, train_loss, train_accuracy, val_loss, val_accuracy })
    };
    let mut epochs = vec![stats(&net, 0)?];
    let mut best = (epochs[0].val_loss, 0, net.clone());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let frozen = tc.learning_rate == 0.0;
    for epoch in 1..=tc.iterations {
        order.shuffle(&mut rng);
        for range in batch_bounds(order.len(), tc.batch_size) {
            let idx = &order[range];
            let xs: Vec<Vec<f64>> = idx.iter().map(|&i| train.xs[i].clone()).collect();
            let ys: Vec<f64> = idx.iter().map(|&i| train.ys[i]).collect();
            let (_, grads, trace) = net.loss_and_grads(&xs, &ys, Mode::Train)?;
            if frozen {
                continue;
            }
            net.update_running_stats(&trace);
            for ((layer, vl), gl) in net.layers.iter_mut().zip(&mut velocity).zip(&grads) {
                for ((p, v), g) in layer.params_mut().into_iter().zip(vl).zip(gl) {
                    for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                        *vi = tc.momentum * *vi - tc.learning_rate * gi;
                        *pi += *vi;
                    }
                }
            }
        }
        let s = stats(&net, epoch)?;
        if s.val_loss < best.0 {
            best = (s.val_loss, epoch, net.clone());
        }
        epochs.push(s);
    }
    let log = TrainLog {
        epochs,
        best_epoch: best.1,
        train_subjects: Vec::new(),
        val_subjects: Vec::new(),
    };
    Ok((best.2, log))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub log: TrainLog,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Splits `dataset` by subject, encodes both sides and trains.
pub fn train(net: &Network, pre: &Preprocessor, dataset: &LabeledDataset, tc: &TrainConfig) -> Result<TrainOutcome> {
    tc.validate()?;
    if dataset.count_label(Label::Healthy) == 0 || dataset.count_label(Label::Patient) == 0 {
        return invalid("training needs both healthy and patient items");
    }
    let (train_idx, val_idx) = dataset.split_by_subject(tc.val_fraction)?;
    let train_set = dataset.subset(&train_idx);
    let val_set = dataset.subset(&val_idx);
    let (network, mut log) = train_encoded(
        net,
        &encode_dataset(net, pre, &train_set)?,
        &encode_dataset(net, pre, &val_set)?,
        tc,
    )?;
    log.train_subjects = train_set.subjects().into_iter().map(String::from).collect();
    log.val_subjects = val_set.subjects().into_iter().map(String::from).collect();
    Ok(TrainOutcome {
        network,
        log,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}
