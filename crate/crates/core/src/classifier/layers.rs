//! Layers with explicit forward and backward passes over a mini-batch.
//!
//! Activations are stored per sample as flat `channels x height x width`
//! vectors. A 1D network is the `height == 1` case of the same layers.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Activation shape of a single sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub fn flat(n: usize) -> Self {
        Self::new(n, 1, 1)
    }

    pub fn size(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Batch-norm statistics decay: `running = decay * running + (1 - decay) * batch`.
pub const BN_DECAY: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Infer,
}

/// Valid (unpadded) stride-1 convolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv {
    pub input: Shape,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    /// `[out][in][kh][kw]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv {
    pub fn output_shape(&self) -> Shape {
        Shape::new(
            self.out_channels,
            self.input.height + 1 - self.kernel_h,
            self.input.width + 1 - self.kernel_w,
        )
    }

    fn w_index(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.input.channels + i) * self.kernel_h + ky) * self.kernel_w + kx
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let Shape { channels: cin, height: ih, width: iw } = self.input;
        let Shape { height: oh, width: ow, .. } = self.output_shape();
        let mut out = vec![0.0; self.out_channels * oh * ow];
        for o in 0..self.out_channels {
            let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
            plane.fill(self.bias[o]);
            for i in 0..cin {
                let src = &x[i * ih * iw..(i + 1) * ih * iw];
                for ky in 0..self.kernel_h {
                    for kx in 0..self.kernel_w {
                        let w = self.weight[self.w_index(o, i, ky, kx)];
                        for y in 0..oh {
                            let row = &src[(y + ky) * iw + kx..(y + ky) * iw + kx + ow];
                            for (p, s) in plane[y * ow..(y + 1) * ow].iter_mut().zip(row) {
                                *p += w * s;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    fn backward(&self, x: &[f64], dout: &[f64], dw: &mut [f64], db: &mut [f64]) -> Vec<f64> {
        let Shape { channels: cin, height: ih, width: iw } = self.input;
        let Shape { height: oh, width: ow, .. } = self.output_shape();
        let mut dx = vec![0.0; self.input.size()];
        for o in 0..self.out_channels {
            let g = &dout[o * oh * ow..(o + 1) * oh * ow];
            db[o] += g.iter().sum::<f64>();
            for i in 0..cin {
                let src = &x[i * ih * iw..(i + 1) * ih * iw];
                let dsrc = &mut dx[i * ih * iw..(i + 1) * ih * iw];
                for ky in 0..self.kernel_h {
                    for kx in 0..self.kernel_w {
                        let wi = self.w_index(o, i, ky, kx);
                        let w = self.weight[wi];
                        let mut acc = 0.0;
                        for y in 0..oh {
                            let off = (y + ky) * iw + kx;
                            let gr = &g[y * ow..(y + 1) * ow];
                            for (s, gv) in src[off..off + ow].iter().zip(gr) {
                                acc += s * gv;
                            }
                            for (d, gv) in dsrc[off..off + ow].iter_mut().zip(gr) {
                                *d += w * gv;
                            }
                        }
                        dw[wi] += acc;
                    }
                }
            }
        }
        dx
    }
}

/// Non-overlapping max pooling; trailing rows/columns that do not fill a
/// window are dropped. Ties go to the first element in scan order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxPool {
    pub input: Shape,
    pub pool_h: usize,
    pub pool_w: usize,
}

impl MaxPool {
    pub fn output_shape(&self) -> Shape {
        Shape::new(self.input.channels, self.input.height / self.pool_h, self.input.width / self.pool_w)
    }

    /// Output values and, for each output, the input index it came from.
    fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<usize>) {
        let Shape { height: ih, width: iw, .. } = self.input;
        let out_shape = self.output_shape();
        let mut out = Vec::with_capacity(out_shape.size());
        let mut arg = Vec::with_capacity(out_shape.size());
        for c in 0..self.input.channels {
            for oy in 0..out_shape.height {
                for ox in 0..out_shape.width {
                    let mut best = usize::MAX;
                    let mut best_v = f64::NEG_INFINITY;
                    for py in 0..self.pool_h {
                        for px in 0..self.pool_w {
                            let idx = (c * ih + oy * self.pool_h + py) * iw + ox * self.pool_w + px;
                            if x[idx] > best_v || best == usize::MAX {
                                best_v = x[idx];
                                best = idx;
                            }
                        }
                    }
                    out.push(best_v);
                    arg.push(best);
                }
            }
        }
        (out, arg)
    }
}

/// Per-feature batch normalisation over a flat feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub features: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        Self {
            features,
            gamma: vec![1.0; features],
            beta: vec![0.0; features],
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
        }
    }
}

/// Fully connected layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `[out][in]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    fn backward(&self, x: &[f64], dout: &[f64], dw: &mut [f64], db: &mut [f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.inputs];
        for (o, &g) in dout.iter().enumerate() {
            db[o] += g;
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            let drow = &mut dw[o * self.inputs..(o + 1) * self.inputs];
            for ((d, w), (dxi, xi)) in drow.iter_mut().zip(row).zip(dx.iter_mut().zip(x)) {
                *d += g * xi;
                *dxi += g * w;
            }
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Conv(Conv),
    Relu { shape: Shape },
    MaxPool(MaxPool),
    BatchNorm(BatchNorm),
    Dense(Dense),
}

/// What a layer remembers from the forward pass for its backward pass.
#[derive(Debug, Clone)]
pub(crate) enum Cache {
    None,
    PoolArgmax(Vec<Vec<usize>>),
    /// Normalised activations and `1 / sqrt(var + eps)` per feature.
    BatchNorm { xhat: Vec<Vec<f64>>, inv_std: Vec<f64>, batch: bool },
}

/// Uniform draw in `+-sqrt(6 / fan_in)`.
pub(crate) fn init_uniform(rng: &mut impl Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
}

impl Layer {
    pub fn conv(rng: &mut impl Rng, input: Shape, out_channels: usize, kernel_h: usize, kernel_w: usize) -> Self {
        let fan_in = input.channels * kernel_h * kernel_w;
        Layer::Conv(Conv {
            input,
            out_channels,
            kernel_h,
            kernel_w,
            weight: init_uniform(rng, fan_in, out_channels * fan_in),
            bias: vec![0.0; out_channels],
        })
    }

    pub fn dense(rng: &mut impl Rng, inputs: usize, outputs: usize) -> Self {
        Layer::Dense(Dense {
            inputs,
            outputs,
            weight: init_uniform(rng, inputs, inputs * outputs),
            bias: vec![0.0; outputs],
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Relu { .. } => "relu",
            Layer::MaxPool(_) => "max_pool",
            Layer::BatchNorm(_) => "batch_norm",
            Layer::Dense(_) => "dense",
        }
    }

    pub fn input_shape(&self) -> Shape {
        match self {
            Layer::Conv(c) => c.input,
            Layer::Relu { shape } => *shape,
            Layer::MaxPool(p) => p.input,
            Layer::BatchNorm(b) => Shape::flat(b.features),
            Layer::Dense(d) => Shape::flat(d.inputs),
        }
    }

    pub fn output_shape(&self) -> Shape {
        match self {
            Layer::Conv(c) => c.output_shape(),
            Layer::Relu { shape } => *shape,
            Layer::MaxPool(p) => p.output_shape(),
            Layer::BatchNorm(b) => Shape::flat(b.features),
            Layer::Dense(d) => Shape::flat(d.outputs),
        }
    }

    /// Trainable tensors in a fixed order.
    pub fn params(&self) -> Vec<&[f64]> {
        match self {
            Layer::Conv(c) => vec![&c.weight, &c.bias],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            Layer::Relu { .. } | Layer::MaxPool(_) => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::Conv(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            Layer::Relu { .. } | Layer::MaxPool(_) => vec![],
        }
    }

    pub(crate) fn forward(&self, xs: &[Vec<f64>], mode: Mode) -> (Vec<Vec<f64>>, Cache) {
        match self {
            Layer::Conv(c) => (xs.iter().map(|x| c.forward(x)).collect(), Cache::None),
            Layer::Dense(d) => (xs.iter().map(|x| d.forward(x)).collect(), Cache::None),
            Layer::Relu { .. } => (
                xs.iter().map(|x| x.iter().map(|v| v.max(0.0)).collect()).collect(),
                Cache::None,
            ),
            Layer::MaxPool(p) => {
                let (out, arg): (Vec<_>, Vec<_>) = xs.iter().map(|x| p.forward(x)).unzip();
                (out, Cache::PoolArgmax(arg))
            }
            Layer::BatchNorm(bn) => {
                let (mean, var, batch) = match mode {
                    Mode::Train => {
                        let (m, v) = batch_moments(xs, bn.features);
                        (m, v, true)
                    }
                    Mode::Infer => (bn.running_mean.clone(), bn.running_var.clone(), false),
                };
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                let xhat: Vec<Vec<f64>> = xs
                    .iter()
                    .map(|x| {
                        x.iter()
                            .zip(&mean)
                            .zip(&inv_std)
                            .map(|((v, m), s)| (v - m) * s)
                            .collect()
                    })
                    .collect();
                let out = xhat
                    .iter()
                    .map(|xh| {
                        xh.iter()
                            .zip(&bn.gamma)
                            .zip(&bn.beta)
                            .map(|((v, g), b)| g * v + b)
                            .collect()
                    })
                    .collect();
                (out, Cache::BatchNorm { xhat, inv_std, batch })
            }
        }
    }

    /// Backpropagates `dout`, adding parameter gradients into `grads` (laid
    /// out like [`params`](Self::params)) and returning input gradients.
    pub(crate) fn backward(
        &self,
        xs: &[Vec<f64>],
        cache: &Cache,
        dout: &[Vec<f64>],
        grads: &mut [Vec<f64>],
    ) -> Vec<Vec<f64>> {
        match (self, cache) {
            (Layer::Conv(c), _) => {
                let (dw, rest) = grads.split_at_mut(1);
                xs.iter()
                    .zip(dout)
                    .map(|(x, g)| c.backward(x, g, &mut dw[0], &mut rest[0]))
                    .collect()
            }
            (Layer::Dense(d), _) => {
                let (dw, rest) = grads.split_at_mut(1);
                xs.iter()
                    .zip(dout)
                    .map(|(x, g)| d.backward(x, g, &mut dw[0], &mut rest[0]))
                    .collect()
            }
            (Layer::Relu { .. }, _) => xs
                .iter()
                .zip(dout)
                .map(|(x, g)| x.iter().zip(g).map(|(v, gv)| if *v > 0.0 { *gv } else { 0.0 }).collect())
                .collect(),
            (Layer::MaxPool(p), Cache::PoolArgmax(args)) => args
                .iter()
                .zip(dout)
                .map(|(arg, g)| {
                    let mut dx = vec![0.0; p.input.size()];
                    for (&i, gv) in arg.iter().zip(g) {
                        dx[i] += gv;
                    }
                    dx
                })
                .collect(),
            (Layer::BatchNorm(bn), Cache::BatchNorm { xhat, inv_std, batch }) => {
                let n = xs.len() as f64;
                let f = bn.features;
                let mut dgamma = vec![0.0; f];
                let mut dbeta = vec![0.0; f];
                let mut sum_dxhat = vec![0.0; f];
                let mut sum_dxhat_xhat = vec![0.0; f];
                for (xh, g) in xhat.iter().zip(dout) {
                    for j in 0..f {
                        dgamma[j] += g[j] * xh[j];
                        dbeta[j] += g[j];
                        let dxh = g[j] * bn.gamma[j];
                        sum_dxhat[j] += dxh;
                        sum_dxhat_xhat[j] += dxh * xh[j];
                    }
                }
                for j in 0..f {
                    grads[0][j] += dgamma[j];
                    grads[1][j] += dbeta[j];
                }
                xhat.iter()
                    .zip(dout)
                    .map(|(xh, g)| {
                        (0..f)
                            .map(|j| {
                                let dxh = g[j] * bn.gamma[j];
                                if *batch {
                                    inv_std[j] / n * (n * dxh - sum_dxhat[j] - xh[j] * sum_dxhat_xhat[j])
                                } else {
                                    dxh * inv_std[j]
                                }
                            })
                            .collect()
                    })
                    .collect()
            }
            (layer, _) => unreachable!("cache does not match layer {}", layer.kind()),
        }
    }

    /// True when the layer's behaviour switches at a kink (ReLU sign, pool
    /// argmax), which finite differences cannot see across.
    pub(crate) fn routing(&self, xs: &[Vec<f64>], cache: &Cache) -> Vec<u64> {
        match (self, cache) {
            (Layer::Relu { .. }, _) => xs
                .iter()
                .flat_map(|x| x.chunks(64).map(|c| c.iter().enumerate().fold(0u64, |m, (i, v)| m | (u64::from(*v > 0.0) << i))))
                .collect(),
            (Layer::MaxPool(_), Cache::PoolArgmax(args)) => args.iter().flatten().map(|&i| i as u64).collect(),
            _ => Vec::new(),
        }
    }
}

/// Per-feature mean and biased variance over the batch.
pub(crate) fn batch_moments(xs: &[Vec<f64>], features: usize) -> (Vec<f64>, Vec<f64>) {
    let n = xs.len() as f64;
    let mut mean = vec![0.0; features];
    for x in xs {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; features];
    for x in xs {
        for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    (mean, var)
}
