use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{batch_moments, BatchNorm, Cache, Layer, MaxPool, Mode, Shape, BN_DECAY};
use crate::dsp::stft_spectrogram;
use crate::error::{invalid, Error, Result};
use crate::signal::SignalSegment;
use crate::CHANNEL_COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub pool: usize,
}

impl ConvSpec {
    pub const fn new(out_channels: usize, kernel: usize, pool: usize) -> Self {
        Self { out_channels, kernel, pool }
    }
}

/// Time-domain network: three conv/ReLU/max-pool stages over the raw
/// high-passed signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_len: usize,
    pub in_channels: usize,
    pub conv_specs: Vec<ConvSpec>,
    pub fc_width: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_len: 1000,
            in_channels: CHANNEL_COUNT,
            conv_specs: vec![ConvSpec::new(8, 7, 4), ConvSpec::new(16, 5, 4), ConvSpec::new(32, 3, 4)],
            fc_width: 64,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub const STAGES: usize = 3;

    /// Sequence length after each conv/pool stage.
    pub fn stage_lengths(&self) -> Result<Vec<usize>> {
        if self.conv_specs.len() != Self::STAGES {
            return invalid(format!(
                "expected {} conv stages, got {}",
                Self::STAGES,
                self.conv_specs.len()
            ));
        }
        if self.in_channels == 0 || self.fc_width == 0 {
            return invalid("channel counts and fc width must be positive");
        }
        let mut len = self.input_len;
        let mut out = Vec::new();
        for (i, s) in self.conv_specs.iter().enumerate() {
            if s.out_channels == 0 || s.kernel == 0 || s.pool == 0 {
                return invalid(format!("conv stage {i} has a zero dimension"));
            }
            if len < s.kernel || (len + 1 - s.kernel) / s.pool == 0 {
                return invalid(format!("conv stage {i} leaves no samples from length {len}"));
            }
            len = (len + 1 - s.kernel) / s.pool;
            out.push(len);
        }
        Ok(out)
    }

    pub fn flatten_size(&self) -> Result<usize> {
        let lens = self.stage_lengths()?;
        Ok(lens[Self::STAGES - 1] * self.conv_specs[Self::STAGES - 1].out_channels)
    }
}

/// Time-frequency network: two square conv/ReLU/max-pool stages over a
/// log-magnitude STFT stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Model2dConfig {
    pub input_len: usize,
    pub in_channels: usize,
    pub stft_window: usize,
    pub stft_hop: usize,
    pub conv_specs: Vec<ConvSpec>,
    pub fc_width: usize,
    pub seed: u64,
}

impl Default for Model2dConfig {
    fn default() -> Self {
        Self {
            input_len: 1000,
            in_channels: CHANNEL_COUNT,
            stft_window: 64,
            stft_hop: 32,
            conv_specs: vec![ConvSpec::new(8, 3, 2), ConvSpec::new(16, 3, 2)],
            fc_width: 64,
            seed: 0,
        }
    }
}

impl Model2dConfig {
    pub const STAGES: usize = 2;

    /// `(frames, bins)` of the spectrogram fed to the first layer.
    pub fn input_grid(&self) -> Result<(usize, usize)> {
        if self.stft_window == 0 || self.stft_hop == 0 || self.stft_hop > self.stft_window {
            return invalid("STFT window and hop must satisfy 0 < hop <= window");
        }
        if self.input_len < self.stft_window {
            return invalid("input shorter than one STFT window");
        }
        Ok(((self.input_len - self.stft_window) / self.stft_hop + 1, self.stft_window / 2 + 1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Cnn1d(ModelConfig),
    Cnn2d(Model2dConfig),
    /// Hand-assembled layer stack fed pre-encoded inputs.
    Custom { input: Shape },
}

impl Architecture {
    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Cnn1d(_) => "1d-cnn",
            Architecture::Cnn2d(_) => "2d-cnn",
            Architecture::Custom { .. } => "custom",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Architecture::Cnn1d(c) => Some(c.seed),
            Architecture::Cnn2d(c) => Some(c.seed),
            Architecture::Custom { .. } => None,
        }
    }
}

/// Forward activations and caches kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `acts[i]` is the input to layer `i`; the last entry holds the logits.
    pub(crate) acts: Vec<Vec<Vec<f64>>>,
    pub(crate) caches: Vec<Cache>,
    pub(crate) mode: Mode,
}

impl Trace {
    pub fn logits(&self) -> Vec<f64> {
        self.acts.last().map(|a| a.iter().map(|v| v[0]).collect()).unwrap_or_default()
    }

    /// ReLU signs and pool argmax choices, used to spot perturbations that
    /// cross a kink.
    pub(crate) fn routing(&self, net: &Network) -> Vec<u64> {
        net.layers
            .iter()
            .zip(&self.acts)
            .zip(&self.caches)
            .flat_map(|((l, x), c)| l.routing(x, c))
            .collect()
    }
}

/// Gradients laid out as `[layer][tensor][element]`, matching
/// [`Layer::params`].
pub type Grads = Vec<Vec<Vec<f64>>>;

/// Layer stack ending in a single logit; the sigmoid is applied on output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub arch: Architecture,
    pub layers: Vec<Layer>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(z)` against `y`, without forming the
/// probability.
pub fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn conv_pool_stage(rng: &mut ChaCha8Rng, layers: &mut Vec<Layer>, input: Shape, out: usize, kh: usize, kw: usize, ph: usize, pw: usize) -> Shape {
    let conv = Layer::conv(rng, input, out, kh, kw);
    let shape = conv.output_shape();
    layers.push(conv);
    layers.push(Layer::Relu { shape });
    let pool = Layer::MaxPool(MaxPool { input: shape, pool_h: ph, pool_w: pw });
    let shape = pool.output_shape();
    layers.push(pool);
    shape
}

fn head(rng: &mut ChaCha8Rng, layers: &mut Vec<Layer>, features: usize, fc_width: usize) {
    layers.push(Layer::BatchNorm(BatchNorm::new(features)));
    layers.push(Layer::dense(rng, features, fc_width));
    layers.push(Layer::Relu { shape: Shape::flat(fc_width) });
    layers.push(Layer::dense(rng, fc_width, 1));
}

pub fn build_network(cfg: &ModelConfig) -> Result<Network> {
    let flat = cfg.flatten_size()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut layers = Vec::new();
    let mut shape = Shape::new(cfg.in_channels, 1, cfg.input_len);
    for s in &cfg.conv_specs {
        shape = conv_pool_stage(&mut rng, &mut layers, shape, s.out_channels, 1, s.kernel, 1, s.pool);
    }
    debug_assert_eq!(shape.size(), flat);
    head(&mut rng, &mut layers, flat, cfg.fc_width);
    Ok(Network { arch: Architecture::Cnn1d(cfg.clone()), layers })
}

pub fn build_2d_network(cfg: &Model2dConfig) -> Result<Network> {
    let (frames, bins) = cfg.input_grid()?;
    if cfg.conv_specs.len() != Model2dConfig::STAGES {
        return invalid(format!(
            "expected {} conv stages, got {}",
            Model2dConfig::STAGES,
            cfg.conv_specs.len()
        ));
    }
    if cfg.in_channels == 0 || cfg.fc_width == 0 {
        return invalid("channel counts and fc width must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut layers = Vec::new();
    let mut shape = Shape::new(cfg.in_channels, frames, bins);
    for (i, s) in cfg.conv_specs.iter().enumerate() {
        if s.out_channels == 0 || s.kernel == 0 || s.pool == 0 {
            return invalid(format!("conv stage {i} has a zero dimension"));
        }
        let (h, w) = (shape.height, shape.width);
        if h < s.kernel || w < s.kernel || (h + 1 - s.kernel) / s.pool == 0 || (w + 1 - s.kernel) / s.pool == 0 {
            return invalid(format!("conv stage {i} leaves an empty {h}x{w} map"));
        }
        shape = conv_pool_stage(&mut rng, &mut layers, shape, s.out_channels, s.kernel, s.kernel, s.pool, s.pool);
    }
    head(&mut rng, &mut layers, shape.size(), cfg.fc_width);
    Ok(Network { arch: Architecture::Cnn2d(cfg.clone()), layers })
}

impl Network {
    /// Wraps a hand-built stack. Shapes must chain and end in one output.
    pub fn from_layers(input: Shape, layers: Vec<Layer>) -> Result<Self> {
        let mut shape = input;
        for (i, l) in layers.iter().enumerate() {
            if l.input_shape().size() != shape.size() {
                return invalid(format!(
                    "layer {i} ({}) expects {} inputs, previous layer gives {}",
                    l.kind(),
                    l.input_shape().size(),
                    shape.size()
                ));
            }
            shape = l.output_shape();
        }
        if shape.size() != 1 {
            return invalid(format!("network must end in a single output, got {}", shape.size()));
        }
        Ok(Self { arch: Architecture::Custom { input }, layers })
    }

    pub fn input_shape(&self) -> Shape {
        match &self.arch {
            Architecture::Custom { input } => *input,
            _ => self.layers[0].input_shape(),
        }
    }

    pub fn input_size(&self) -> usize {
        self.input_shape().size()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().flat_map(|l| l.params()).map(|t| t.len()).sum()
    }

    /// Turns a high-passed segment into this network's flat input. Shorter
    /// segments are zero-padded and longer ones truncated around the centre.
    pub fn encode(&self, highpassed: &SignalSegment) -> Result<Vec<f64>> {
        highpassed.validate()?;
        let (input_len, in_channels) = match &self.arch {
            Architecture::Cnn1d(c) => (c.input_len, c.in_channels),
            Architecture::Cnn2d(c) => (c.input_len, c.in_channels),
            Architecture::Custom { .. } => return invalid("custom networks take pre-encoded inputs"),
        };
        if highpassed.channel_count() != in_channels {
            return Err(Error::ShapeMismatch(format!(
                "network takes {in_channels} channels, segment has {}",
                highpassed.channel_count()
            )));
        }
        let seg = highpassed.fit_to_len(input_len);
        match &self.arch {
            Architecture::Cnn2d(c) => {
                let spec = stft_spectrogram(&seg, c.stft_window, c.stft_hop)?;
                Ok(spec.channels.iter().flatten().flatten().map(|m| m.ln_1p()).collect())
            }
            _ => Ok(seg.channels.concat()),
        }
    }

    fn check_inputs(&self, xs: &[Vec<f64>]) -> Result<()> {
        if xs.is_empty() {
            return invalid("empty batch");
        }
        let n = self.input_size();
        if let Some(x) = xs.iter().find(|x| x.len() != n) {
            return Err(Error::ShapeMismatch(format!("network takes {n} inputs, got {}", x.len())));
        }
        if xs.iter().flatten().any(|v| !v.is_finite()) {
            return invalid("non-finite input value");
        }
        Ok(())
    }

    pub fn trace(&self, xs: &[Vec<f64>], mode: Mode) -> Result<Trace> {
        self.check_inputs(xs)?;
        Ok(self.trace_unchecked(xs.to_vec(), mode))
    }

    pub(crate) fn trace_unchecked(&self, xs: Vec<Vec<f64>>, mode: Mode) -> Trace {
        let mut acts = vec![xs];
        let mut caches = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (out, cache) = l.forward(acts.last().unwrap(), mode);
            acts.push(out);
            caches.push(cache);
        }
        Trace { acts, caches, mode }
    }

    pub fn logits(&self, xs: &[Vec<f64>], mode: Mode) -> Result<Vec<f64>> {
        Ok(self.trace(xs, mode)?.logits())
    }

    /// Patient probabilities for a batch.
    pub fn forward_batch(&self, xs: &[Vec<f64>], mode: Mode) -> Result<Vec<f64>> {
        Ok(self.logits(xs, mode)?.into_iter().map(sigmoid).collect())
    }

    /// Patient probability for one encoded input.
    pub fn forward(&self, x: &[f64], mode: Mode) -> Result<f64> {
        Ok(self.forward_batch(&[x.to_vec()], mode)?[0])
    }

    /// Mean cross-entropy of a batch and its parameter gradients.
    pub fn loss_and_grads(&self, xs: &[Vec<f64>], ys: &[f64], mode: Mode) -> Result<(f64, Grads, Trace)> {
        if xs.len() != ys.len() {
            return Err(Error::ShapeMismatch(format!("{} inputs but {} labels", xs.len(), ys.len())));
        }
        let trace = self.trace(xs, mode)?;
        let (loss, grads) = self.backward(&trace, ys);
        Ok((loss, grads, trace))
    }

    pub(crate) fn batch_loss(&self, trace: &Trace, ys: &[f64]) -> f64 {
        let z = trace.logits();
        z.iter().zip(ys).map(|(z, y)| bce_with_logit(*z, *y)).sum::<f64>() / ys.len() as f64
    }

    pub(crate) fn backward(&self, trace: &Trace, ys: &[f64]) -> (f64, Grads) {
        let b = ys.len() as f64;
        let loss = self.batch_loss(trace, ys);
        let mut grads: Grads = self
            .layers
            .iter()
            .map(|l| l.params().iter().map(|t| vec![0.0; t.len()]).collect())
            .collect();
        let mut d: Vec<Vec<f64>> = trace
            .logits()
            .iter()
            .zip(ys)
            .map(|(z, y)| vec![(sigmoid(*z) - y) / b])
            .collect();
        for (i, l) in self.layers.iter().enumerate().rev() {
            d = l.backward(&trace.acts[i], &trace.caches[i], &d, &mut grads[i]);
        }
        (loss, grads)
    }

    /// Folds the batch statistics of a training-mode trace into the
    /// batch-norm running averages.
    pub fn update_running_stats(&mut self, trace: &Trace) {
        if trace.mode != Mode::Train {
            return;
        }
        for (l, x) in self.layers.iter_mut().zip(&trace.acts) {
            if let Layer::BatchNorm(bn) = l {
                let (mean, var) = batch_moments(x, bn.features);
                for j in 0..bn.features {
                    bn.running_mean[j] = BN_DECAY * bn.running_mean[j] + (1.0 - BN_DECAY) * mean[j];
                    bn.running_var[j] = BN_DECAY * bn.running_var[j] + (1.0 - BN_DECAY) * var[j];
                }
            }
        }
    }

    /// Every trainable value in layer order, for hashing and comparison.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.layers.iter().flat_map(|l| l.params()).flatten().copied().collect();
        for l in &self.layers {
            if let Layer::BatchNorm(bn) = l {
                out.extend(&bn.running_mean);
                out.extend(&bn.running_var);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::layers::{Conv, Dense};

    #[test]
    fn default_shapes() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.stage_lengths().unwrap(), vec![248, 61, 14]);
        assert_eq!(cfg.flatten_size().unwrap(), 448);
        let net = build_network(&cfg).unwrap();
        assert_eq!(net.input_size(), 4000);
        let p = net.forward(&vec![0.0; 4000], Mode::Infer).unwrap();
        assert!(p > 0.0 && p < 1.0);

        let net2 = build_2d_network(&Model2dConfig::default()).unwrap();
        assert_eq!(net2.input_shape(), Shape::new(4, 30, 33));
        assert_eq!(net2.layers[6].input_shape().size(), 576);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = ModelConfig::default();
        cfg.conv_specs.pop();
        assert!(build_network(&cfg).is_err());
        let cfg = ModelConfig { input_len: 40, ..Default::default() };
        assert!(build_network(&cfg).is_err());
        let mut cfg = ModelConfig::default();
        cfg.conv_specs[1].kernel = 0;
        assert!(build_network(&cfg).is_err());
        let net = build_network(&ModelConfig::default()).unwrap();
        assert!(matches!(net.forward(&[0.0; 999], Mode::Infer), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn same_seed_same_weights() {
        let a = build_network(&ModelConfig { seed: 7, ..Default::default() }).unwrap();
        let b = build_network(&ModelConfig { seed: 7, ..Default::default() }).unwrap();
        let c = build_network(&ModelConfig { seed: 8, ..Default::default() }).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.flat_params(), c.flat_params());
    }

    #[test]
    fn sigmoid_and_bce() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        for z in [-8.0, -2.0, 0.0, 0.7, 6.0] {
            for y in [0.0, 1.0] {
                let p: f64 = sigmoid(z);
                let direct = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
                assert!((bce_with_logit(z, y) - direct).abs() < 1e-12);
            }
        }
        // tails, where 1 - p cancels: loss ~ |z| + e^-|z| or ~ e^-|z|
        for z in [25.0f64, 30.0, 700.0] {
            assert!((bce_with_logit(z, 0.0) - (z + (-z).exp())).abs() <= 1e-12 * z);
            assert!((bce_with_logit(-z, 1.0) - (z + (-z).exp())).abs() <= 1e-12 * z);
            assert!((bce_with_logit(z, 1.0) / (-z).exp() - 1.0).abs() < 1e-9);
            assert!((bce_with_logit(-z, 0.0) / (-z).exp() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn hand_computed_forward() {
        // 1 channel x 8 samples, kernel [1, -1] (+0.5 bias), ReLU, pool 2,
        // dense with weights [1, 2, 3] and bias -4.
        let x = vec![0.0, 1.0, 3.0, 2.0, 2.0, 5.0, 1.0, 0.0];
        let conv = Layer::Conv(Conv {
            input: Shape::new(1, 1, 8),
            out_channels: 1,
            kernel_h: 1,
            kernel_w: 2,
            weight: vec![1.0, -1.0],
            bias: vec![0.5],
        });
        // conv: x[n] - x[n+1] + 0.5 = [-0.5, -1.5, 1.5, 0.5, -2.5, 4.5, 1.5]
        // relu: [0, 0, 1.5, 0.5, 0, 4.5, 1.5]; pool 2 over 7 -> [0, 1.5, 4.5]
        // logit: 0 + 3 + 13.5 - 4 = 12.5
        let layers = vec![
            conv,
            Layer::Relu { shape: Shape::new(1, 1, 7) },
            Layer::MaxPool(MaxPool { input: Shape::new(1, 1, 7), pool_h: 1, pool_w: 2 }),
            Layer::Dense(Dense { inputs: 3, outputs: 1, weight: vec![1.0, 2.0, 3.0], bias: vec![-4.0] }),
        ];
        let net = Network::from_layers(Shape::new(1, 1, 8), layers).unwrap();
        let p = net.forward(&x, Mode::Infer).unwrap();
        assert!((p - 1.0 / (1.0 + (-12.5f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn identical_inputs_identical_outputs() {
        let net = build_network(&ModelConfig::default()).unwrap();
        let x: Vec<f64> = (0..4000).map(|i| (i as f64 * 0.01).sin()).collect();
        for mode in [Mode::Train, Mode::Infer] {
            let p = net.forward_batch(&[x.clone(), x.clone()], mode).unwrap();
            assert_eq!(p[0], p[1]);
        }
    }

    #[test]
    fn running_stats_move_only_in_train_mode() {
        let mut net = build_network(&ModelConfig::default()).unwrap();
        let xs: Vec<Vec<f64>> = (0..3).map(|k| (0..4000).map(|i| ((i * (k + 1)) as f64 * 0.02).sin()).collect()).collect();
        let before = net.flat_params();
        let t = net.trace(&xs, Mode::Infer).unwrap();
        net.update_running_stats(&t);
        assert_eq!(net.flat_params(), before);
        let t = net.trace(&xs, Mode::Train).unwrap();
        net.update_running_stats(&t);
        assert_ne!(net.flat_params(), before);
    }
}
