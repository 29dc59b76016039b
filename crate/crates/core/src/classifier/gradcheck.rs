//! Central finite-difference check of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::Mode;
use super::network::Network;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    /// Parameters to compare; capped at the network's parameter count.
    pub params: usize,
    pub seed: u64,
    pub mode: Mode,
    /// Parameters whose analytic and numeric gradients are both below this
    /// are skipped: the finite difference there only measures rounding in
    /// the loss. Biases feeding batch norm in training mode sit here.
    pub noise_floor: f64,
    /// Test hook: multiply this layer's analytic gradient by 2.
    pub corrupt_layer: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            params: 256,
            seed: 0,
            mode: Mode::Train,
            noise_floor: 1e-9,
            corrupt_layer: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerError {
    pub layer: usize,
    pub kind: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Draws rejected because a +-epsilon step flipped a ReLU or changed a
    /// pooling winner.
    pub skipped_at_kinks: usize,
    pub skipped_below_floor: usize,
    pub per_layer: Vec<LayerError>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Perturbs a random, layer-spanning subset of parameters and compares
/// `(L(w+e) - L(w-e)) / 2e` with backprop.
pub fn gradient_check(net: &Network, xs: &[Vec<f64>], ys: &[f64], cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    if !(cfg.epsilon > 0.0 && cfg.epsilon.is_finite()) {
        return invalid(format!("epsilon must be positive, got {}", cfg.epsilon));
    }
    if xs.len() != ys.len() {
        return Err(Error::ShapeMismatch(format!("{} inputs but {} labels", xs.len(), ys.len())));
    }
    let (_, mut grads, base) = net.loss_and_grads(xs, ys, cfg.mode)?;
    if let Some(l) = cfg.corrupt_layer {
        for t in grads.get_mut(l).into_iter().flatten() {
            t.iter_mut().for_each(|g| *g *= 2.0);
        }
    }
    let base_routing = base.routing(net);

    // (layer, tensor) pairs with at least one element, visited round-robin.
    let tensors: Vec<(usize, usize, usize)> = net
        .layers
        .iter()
        .enumerate()
        .flat_map(|(li, l)| l.params().into_iter().enumerate().map(move |(ti, t)| (li, ti, t.len())))
        .filter(|t| t.2 > 0)
        .collect();
    let target = cfg.params.min(net.param_count());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut probe = net.clone();
    let mut seen = std::collections::HashSet::new();
    let mut per_layer: Vec<LayerError> = Vec::new();
    let (mut checked, mut skipped, mut below_floor, mut attempts) = (0, 0, 0, 0);
    let loss_at = |probe: &Network| -> (f64, Vec<u64>) {
        let t = probe.trace_unchecked(xs.to_vec(), cfg.mode);
        (probe.batch_loss(&t, ys), t.routing(probe))
    };
    while checked < target && attempts < 50 * target.max(1) {
        let (li, ti, len) = tensors[attempts % tensors.len()];
        attempts += 1;
        let k = rng.random_range(0..len);
        if !seen.insert((li, ti, k)) {
            continue;
        }
        let orig = net.layers[li].params()[ti][k];
        probe.layers[li].params_mut()[ti][k] = orig + cfg.epsilon;
        let (lp, rp) = loss_at(&probe);
        probe.layers[li].params_mut()[ti][k] = orig - cfg.epsilon;
        let (lm, rm) = loss_at(&probe);
        probe.layers[li].params_mut()[ti][k] = orig;
        if rp != base_routing || rm != base_routing {
            skipped += 1;
            continue;
        }
        let (analytic, numeric) = (grads[li][ti][k], (lp - lm) / (2.0 * cfg.epsilon));
        if analytic.abs().max(numeric.abs()) < cfg.noise_floor {
            below_floor += 1;
            continue;
        }
        let err = relative_error(analytic, numeric);
        checked += 1;
        match per_layer.iter_mut().find(|e| e.layer == li) {
            Some(e) => {
                e.checked += 1;
                e.max_rel_error = e.max_rel_error.max(err);
            }
            None => per_layer.push(LayerError {
                layer: li,
                kind: net.layers[li].kind().to_string(),
                checked: 1,
                max_rel_error: err,
            }),
        }
    }
    per_layer.sort_by_key(|e| e.layer);
    Ok(GradCheckReport {
        max_rel_error: per_layer.iter().map(|e| e.max_rel_error).fold(0.0, f64::max),
        checked,
        skipped_at_kinks: skipped,
        skipped_below_floor: below_floor,
        per_layer,
    })
}

/// Checks the gradient for a single labelled input in inference mode.
pub fn gradient_check_sample(net: &Network, x: &[f64], label: f64, epsilon: f64) -> Result<f64> {
    let cfg = GradCheckConfig { epsilon, mode: Mode::Infer, ..Default::default() };
    Ok(gradient_check(net, &[x.to_vec()], &[label], &cfg)?.max_rel_error)
}
