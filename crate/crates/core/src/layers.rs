//! Forward and backward passes for the layer types the networks are built from.
//!
//! Image tensors are `[batch, channels, height, width]`; dense tensors are
//! `[batch, features]`. Every backward pass takes the upstream gradient of a
//! scalar loss and returns gradients for the layer input and parameters.

use rand::Rng;

use crate::activations::{ActivationParam, ActivationSpec, ScalarPartials};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Batch normalization behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running averages updated.
    Train,
    /// Running statistics.
    Infer,
}

fn uniform_fill(t: &mut Tensor, bound: f64, rng: &mut impl Rng) {
    for v in t.data_mut() {
        *v = rng.random_range(-bound..=bound);
    }
}

/// Square-kernel 2-D cross-correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// `[filters, in_channels, k, k]`
    pub weights: Tensor,
    /// `[filters]`
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub grad_x: Tensor,
    pub grad_w: Tensor,
    pub grad_b: Tensor,
}

/// Half-open range of output columns whose input column `ox·stride + kj - pad`
/// falls inside `[0, in_w)`.
fn valid_span(kj: usize, pad: usize, stride: usize, in_w: usize, out_w: usize) -> (usize, usize) {
    let lo = if pad > kj { (pad - kj).div_ceil(stride) } else { 0 };
    let last = in_w + pad;
    let hi = if last > kj {
        ((last - kj - 1) / stride + 1).min(out_w)
    } else {
        0
    };
    (lo, hi.max(lo))
}

impl ConvLayer {
    /// Zero-initialized layer.
    pub fn new(
        filters: usize,
        in_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Config("convolution stride must be positive".into()));
        }
        Ok(Self {
            weights: Tensor::zeros(&[filters, in_channels, kernel, kernel])?,
            bias: Tensor::zeros(&[filters])?,
            stride,
            padding,
        })
    }

    /// Uniform `±sqrt(6 / fan_in)` weights, zero bias.
    pub fn init_uniform(&mut self, rng: &mut impl Rng) {
        let fan_in = self.in_channels() * self.kernel() * self.kernel();
        uniform_fill(&mut self.weights, (6.0 / fan_in as f64).sqrt(), rng);
        self.bias.data_mut().fill(0.0);
    }

    pub fn filters(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.kernel();
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < k || pw < k {
            return Err(Error::InvalidShape {
                shape: vec![h, w],
                reason: format!("input smaller than {k}x{k} kernel"),
            });
        }
        Ok(((ph - k) / self.stride + 1, (pw - k) / self.stride + 1))
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
        if x.rank() != 4 || x.shape()[1] != self.in_channels() {
            return Err(Error::ShapeMismatch {
                op: "conv",
                expected: vec![0, self.in_channels(), 0, 0],
                actual: x.shape().to_vec(),
            });
        }
        let (b, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
        let (oh, ow) = self.output_hw(h, w)?;
        Ok((b, h, w, oh, ow))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (batch, h, w, oh, ow) = self.check_input(x)?;
        let (f_n, c_n, k) = (self.filters(), self.in_channels(), self.kernel());
        let (s, p) = (self.stride, self.padding);
        let spans: Vec<_> = (0..k).map(|kj| valid_span(kj, p, s, w, ow)).collect();
        let wts = self.weights.data();
        let xd = x.data();
        let mut out = vec![0.0; batch * f_n * oh * ow];
        for b in 0..batch {
            for f in 0..f_n {
                let plane = &mut out[(b * f_n + f) * oh * ow..(b * f_n + f + 1) * oh * ow];
                plane.fill(self.bias.data()[f]);
                for c in 0..c_n {
                    let xin = &xd[(b * c_n + c) * h * w..(b * c_n + c + 1) * h * w];
                    for ki in 0..k {
                        for oy in 0..oh {
                            let iy = oy * s + ki;
                            if iy < p || iy - p >= h {
                                continue;
                            }
                            let in_row = &xin[(iy - p) * w..(iy - p + 1) * w];
                            let out_row = &mut plane[oy * ow..(oy + 1) * ow];
                            for (kj, &(lo, hi)) in spans.iter().enumerate() {
                                let wv = wts[((f * c_n + c) * k + ki) * k + kj];
                                if s == 1 {
                                    let start = lo + kj - p;
                                    let src = &in_row[start..start + (hi - lo)];
                                    for (o, &v) in out_row[lo..hi].iter_mut().zip(src) {
                                        *o += wv * v;
                                    }
                                } else {
                                    for ox in lo..hi {
                                        out_row[ox] += wv * in_row[ox * s + kj - p];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(Tensor::from_parts(vec![batch, f_n, oh, ow], out))
    }

    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<ConvGrads> {
        let (batch, h, w, oh, ow) = self.check_input(x)?;
        let (f_n, c_n, k) = (self.filters(), self.in_channels(), self.kernel());
        grad_out.expect_shape("conv backward", &[batch, f_n, oh, ow])?;
        let (s, p) = (self.stride, self.padding);
        let spans: Vec<_> = (0..k).map(|kj| valid_span(kj, p, s, w, ow)).collect();
        let wts = self.weights.data();
        let xd = x.data();
        let gd = grad_out.data();
        let mut gx = vec![0.0; xd.len()];
        let mut gw = vec![0.0; wts.len()];
        let mut gb = vec![0.0; f_n];
        for b in 0..batch {
            for f in 0..f_n {
                let gplane = &gd[(b * f_n + f) * oh * ow..(b * f_n + f + 1) * oh * ow];
                gb[f] += gplane.iter().sum::<f64>();
                for c in 0..c_n {
                    let base = (b * c_n + c) * h * w;
                    for ki in 0..k {
                        for oy in 0..oh {
                            let iy = oy * s + ki;
                            if iy < p || iy - p >= h {
                                continue;
                            }
                            let row = base + (iy - p) * w;
                            let g_row = &gplane[oy * ow..(oy + 1) * ow];
                            for (kj, &(lo, hi)) in spans.iter().enumerate() {
                                let widx = ((f * c_n + c) * k + ki) * k + kj;
                                let wv = wts[widx];
                                let mut acc = 0.0;
                                if s == 1 {
                                    let start = row + lo + kj - p;
                                    let in_row = &xd[start..start + (hi - lo)];
                                    let gx_row = &mut gx[start..start + (hi - lo)];
                                    for ((g, &v), gxi) in g_row[lo..hi].iter().zip(in_row).zip(gx_row) {
                                        acc += g * v;
                                        *gxi += wv * g;
                                    }
                                } else {
                                    for ox in lo..hi {
                                        let ix = row + ox * s + kj - p;
                                        acc += g_row[ox] * xd[ix];
                                        gx[ix] += wv * g_row[ox];
                                    }
                                }
                                gw[widx] += acc;
                            }
                        }
                    }
                }
            }
        }
        Ok(ConvGrads {
            grad_x: Tensor::from_parts(x.shape().to_vec(), gx),
            grad_w: Tensor::from_parts(self.weights.shape().to_vec(), gw),
            grad_b: Tensor::from_parts(vec![f_n], gb),
        })
    }
}

/// Per-channel batch normalization with running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer {
    pub gamma: Tensor,
    pub beta_shift: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    /// Weight kept on the old running statistic at each update.
    pub momentum: f64,
    pub epsilon: f64,
}

/// Values saved by [`BatchNormLayer::forward`] for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormCache {
    x_hat: Tensor,
    inv_std: Vec<f64>,
    mode: Mode,
    batch_stats: Vec<(f64, f64)>,
    count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormGrads {
    pub grad_x: Tensor,
    pub grad_gamma: Tensor,
    pub grad_beta_shift: Tensor,
}

/// `(batch, channels, spatial)` view of a rank-2 or rank-4 tensor.
fn channel_layout(x: &Tensor) -> Option<(usize, usize, usize)> {
    match *x.shape() {
        [b, c] => Some((b, c, 1)),
        [b, c, h, w] => Some((b, c, h * w)),
        _ => None,
    }
}

impl BatchNormLayer {
    /// `gamma = 1`, `beta_shift = 0`, momentum 0.9, epsilon 1e-5.
    pub fn new(channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: Tensor::full(&[channels], 1.0)?,
            beta_shift: Tensor::zeros(&[channels])?,
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::full(&[channels], 1.0)?,
            momentum: 0.9,
            epsilon: 1e-5,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn layout(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        match channel_layout(x) {
            Some(l) if l.1 == self.channels() => Ok(l),
            _ => Err(Error::ShapeMismatch {
                op: "batchnorm",
                expected: vec![0, self.channels()],
                actual: x.shape().to_vec(),
            }),
        }
    }

    /// Normalizes `x`; in train mode the running statistics are updated.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, BatchNormCache)> {
        let (out, cache) = self.normalize(x, mode)?;
        self.update_running(&cache);
        Ok((out, cache))
    }

    /// Like [`forward`](Self::forward) but leaves the running statistics alone.
    pub fn normalize(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, BatchNormCache)> {
        let (batch, ch, sp) = self.layout(x)?;
        if mode == Mode::Train && batch < 2 {
            return Err(Error::DegenerateBatch(batch));
        }
        let xd = x.data();
        let n = batch * sp;
        let mut x_hat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; ch];
        let mut batch_stats = Vec::new();
        for c in 0..ch {
            let idx = |b: usize| (b * ch + c) * sp..(b * ch + c + 1) * sp;
            let (mean, var) = match mode {
                Mode::Train => {
                    let nf = n as f64;
                    let mean = (0..batch).map(|b| xd[idx(b)].iter().sum::<f64>()).sum::<f64>() / nf;
                    let var = (0..batch)
                        .map(|b| xd[idx(b)].iter().map(|v| (v - mean).powi(2)).sum::<f64>())
                        .sum::<f64>()
                        / nf;
                    batch_stats.push((mean, var));
                    (mean, var)
                }
                Mode::Infer => (self.running_mean.data()[c], self.running_var.data()[c]),
            };
            let is = 1.0 / (var + self.epsilon).sqrt();
            inv_std[c] = is;
            let (g, bs) = (self.gamma.data()[c], self.beta_shift.data()[c]);
            for b in 0..batch {
                for i in idx(b) {
                    let xh = (xd[i] - mean) * is;
                    x_hat[i] = xh;
                    out[i] = g * xh + bs;
                }
            }
        }
        let shape = x.shape().to_vec();
        Ok((
            Tensor::from_parts(shape.clone(), out),
            BatchNormCache {
                x_hat: Tensor::from_parts(shape, x_hat),
                inv_std,
                mode,
                batch_stats,
                count: n,
            },
        ))
    }

    /// Folds a train-mode cache's batch statistics into the running averages
    /// (unbiased variance). No-op for infer-mode caches.
    pub fn update_running(&mut self, cache: &BatchNormCache) {
        let m = self.momentum;
        let n = cache.count as f64;
        for (c, &(mean, var)) in cache.batch_stats.iter().enumerate() {
            let rm = &mut self.running_mean.data_mut()[c];
            *rm = m * *rm + (1.0 - m) * mean;
            let rv = &mut self.running_var.data_mut()[c];
            *rv = m * *rv + (1.0 - m) * var * n / (n - 1.0);
        }
    }

    pub fn backward(&self, cache: &BatchNormCache, grad_out: &Tensor) -> Result<BatchNormGrads> {
        grad_out.expect_shape("batchnorm backward", cache.x_hat.shape())?;
        let (batch, ch, sp) = self.layout(grad_out)?;
        let gd = grad_out.data();
        let xh = cache.x_hat.data();
        let n = (batch * sp) as f64;
        let mut gx = vec![0.0; gd.len()];
        let mut gg = vec![0.0; ch];
        let mut gbs = vec![0.0; ch];
        for c in 0..ch {
            let idx = |b: usize| (b * ch + c) * sp..(b * ch + c + 1) * sp;
            let (mut sum_g, mut sum_gx) = (0.0, 0.0);
            for b in 0..batch {
                for i in idx(b) {
                    sum_g += gd[i];
                    sum_gx += gd[i] * xh[i];
                }
            }
            gg[c] = sum_gx;
            gbs[c] = sum_g;
            let scale = self.gamma.data()[c] * cache.inv_std[c];
            for b in 0..batch {
                for i in idx(b) {
                    gx[i] = match cache.mode {
                        Mode::Train => scale * (gd[i] - sum_g / n - xh[i] * sum_gx / n),
                        Mode::Infer => scale * gd[i],
                    };
                }
            }
        }
        Ok(BatchNormGrads {
            grad_x: Tensor::from_parts(grad_out.shape().to_vec(), gx),
            grad_gamma: Tensor::from_parts(vec![ch], gg),
            grad_beta_shift: Tensor::from_parts(vec![ch], gbs),
        })
    }
}

/// One activation function per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationLayer {
    pub specs: Vec<ActivationSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationLayerGrads {
    pub grad_x: Tensor,
    /// Summed partials for each channel's learnable parameters.
    pub grad_params: Vec<ScalarPartials>,
}

impl ActivationLayer {
    pub fn new(specs: Vec<ActivationSpec>) -> Self {
        Self { specs }
    }

    pub fn uniform(spec: ActivationSpec, channels: usize) -> Self {
        Self {
            specs: vec![spec; channels],
        }
    }

    fn layout(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        match channel_layout(x) {
            Some(l) if l.1 == self.specs.len() => Ok(l),
            _ => Err(Error::ShapeMismatch {
                op: "activation",
                expected: vec![0, self.specs.len()],
                actual: x.shape().to_vec(),
            }),
        }
    }

    /// Number of learnable scalars across all channels.
    pub fn learnable_count(&self) -> usize {
        self.specs.iter().map(|s| s.family.learnable().len()).sum()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (batch, ch, sp) = self.layout(x)?;
        let mut out = x.data().to_vec();
        for b in 0..batch {
            for (c, spec) in self.specs.iter().enumerate() {
                for v in &mut out[(b * ch + c) * sp..(b * ch + c + 1) * sp] {
                    *v = spec.forward(*v);
                }
            }
        }
        Ok(Tensor::from_parts(x.shape().to_vec(), out))
    }

    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<ActivationLayerGrads> {
        let (batch, ch, sp) = self.layout(x)?;
        grad_out.expect_shape("activation backward", x.shape())?;
        let (xd, gd) = (x.data(), grad_out.data());
        let mut gx = vec![0.0; xd.len()];
        let mut grad_params = vec![ScalarPartials::default(); ch];
        for b in 0..batch {
            for (c, spec) in self.specs.iter().enumerate() {
                let learnable = spec.family.learnable();
                let acc = &mut grad_params[c];
                for i in (b * ch + c) * sp..(b * ch + c + 1) * sp {
                    let g = gd[i];
                    gx[i] = g * spec.dx(xd[i]);
                    if learnable.is_empty() || g == 0.0 {
                        continue;
                    }
                    let d = spec.dparams(xd[i]);
                    for &param in learnable {
                        let slot = match param {
                            ActivationParam::Lambda => &mut acc.d_lambda,
                            ActivationParam::Sigma => &mut acc.d_sigma,
                            ActivationParam::Mu => &mut acc.d_mu,
                            ActivationParam::Alpha => &mut acc.d_alpha,
                            ActivationParam::Xi => &mut acc.d_xi,
                        };
                        *slot += g * d.get(param);
                    }
                }
            }
        }
        Ok(ActivationLayerGrads {
            grad_x: Tensor::from_parts(x.shape().to_vec(), gx),
            grad_params,
        })
    }
}

/// Fully-connected layer; inputs are flattened to `[batch, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `[out, in]`
    pub weights: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub grad_x: Tensor,
    pub grad_w: Tensor,
    pub grad_b: Tensor,
}

impl DenseLayer {
    pub fn new(inputs: usize, outputs: usize) -> Result<Self> {
        Ok(Self {
            weights: Tensor::zeros(&[outputs, inputs])?,
            bias: Tensor::zeros(&[outputs])?,
        })
    }

    pub fn init_uniform(&mut self, rng: &mut impl Rng) {
        let fan_in = self.inputs();
        uniform_fill(&mut self.weights, (6.0 / fan_in as f64).sqrt(), rng);
        self.bias.data_mut().fill(0.0);
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[0]
    }

    fn batch_of(&self, x: &Tensor) -> Result<usize> {
        let batch = x.shape()[0];
        if x.rank() < 2 || x.len() != batch * self.inputs() {
            return Err(Error::ShapeMismatch {
                op: "dense",
                expected: vec![0, self.inputs()],
                actual: x.shape().to_vec(),
            });
        }
        Ok(batch)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let batch = self.batch_of(x)?;
        let (n_in, n_out) = (self.inputs(), self.outputs());
        let w = self.weights.data();
        let mut out = vec![0.0; batch * n_out];
        for b in 0..batch {
            let xr = &x.data()[b * n_in..(b + 1) * n_in];
            for o in 0..n_out {
                let wr = &w[o * n_in..(o + 1) * n_in];
                out[b * n_out + o] =
                    self.bias.data()[o] + wr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        Ok(Tensor::from_parts(vec![batch, n_out], out))
    }

    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<DenseGrads> {
        let batch = self.batch_of(x)?;
        let (n_in, n_out) = (self.inputs(), self.outputs());
        grad_out.expect_shape("dense backward", &[batch, n_out])?;
        let w = self.weights.data();
        let mut gx = vec![0.0; batch * n_in];
        let mut gw = vec![0.0; n_out * n_in];
        let mut gb = vec![0.0; n_out];
        for b in 0..batch {
            let xr = &x.data()[b * n_in..(b + 1) * n_in];
            let gxr = &mut gx[b * n_in..(b + 1) * n_in];
            for o in 0..n_out {
                let g = grad_out.data()[b * n_out + o];
                if g == 0.0 {
                    continue;
                }
                gb[o] += g;
                let wr = &w[o * n_in..(o + 1) * n_in];
                let gwr = &mut gw[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    gwr[i] += g * xr[i];
                    gxr[i] += g * wr[i];
                }
            }
        }
        Ok(DenseGrads {
            grad_x: Tensor::from_parts(x.shape().to_vec(), gx),
            grad_w: Tensor::from_parts(vec![n_out, n_in], gw),
            grad_b: Tensor::from_parts(vec![n_out], gb),
        })
    }
}

/// Row-wise softmax of `[batch, classes]` logits with max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (batch, classes) = match *logits.shape() {
        [b, l] => (b, l),
        _ => {
            return Err(Error::ShapeMismatch {
                op: "softmax",
                expected: vec![0, 0],
                actual: logits.shape().to_vec(),
            })
        }
    };
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(classes).take(batch) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(Tensor::from_parts(logits.shape().to_vec(), out))
}

fn check_labels(probs: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    let (batch, classes) = match *probs.shape() {
        [b, l] if b == labels.len() => (b, l),
        _ => {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                expected: vec![labels.len(), 0],
                actual: probs.shape().to_vec(),
            })
        }
    };
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok((batch, classes))
}

/// Mean of `-log p[label]` over the batch.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let (batch, classes) = check_labels(probs, labels)?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(b, &l)| -probs.data()[b * classes + l].max(f64::MIN_POSITIVE).ln())
        .sum();
    Ok(total / batch as f64)
}

/// Gradient of the mean cross-entropy with respect to the logits:
/// `(probs - onehot(label)) / batch`.
pub fn softmax_cross_entropy_backward(probs: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (batch, classes) = check_labels(probs, labels)?;
    let mut g = probs.data().to_vec();
    for (b, &l) in labels.iter().enumerate() {
        g[b * classes + l] -= 1.0;
    }
    let inv = 1.0 / batch as f64;
    g.iter_mut().for_each(|v| *v *= inv);
    Ok(Tensor::from_parts(probs.shape().to_vec(), g))
}
