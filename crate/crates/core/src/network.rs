//! Sequential networks assembled from declarative layer lists.
//!
//! [`cnn1_spec`] is the shallow `conv → batchnorm → activation → dense → softmax`
//! pipeline; [`cnn2_spec`] stacks five convolution stages and a 4096-wide hidden
//! dense layer, with the chosen activation only after the first stage and ReLU
//! everywhere else.
//!
//! Learnable values are exposed uniformly through [`Network::params_mut`] and
//! [`GradientSet`], which list the same entries in the same order.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activations::{ActivationFamily, ActivationParam, ActivationParams, ActivationSpec};
use crate::error::{Error, Result};
use crate::layers::{
    self, ActivationLayer, BatchNormCache, BatchNormLayer, ConvLayer, DenseLayer, Mode,
};
use crate::tensor::Tensor;

/// Filters per convolution accepted by [`NetworkSpec::validate`].
pub const FILTER_RANGE: std::ops::RangeInclusive<usize> = 1..=512;
/// Kernel sizes accepted by [`NetworkSpec::validate`].
pub const KERNEL_RANGE: std::ops::RangeInclusive<usize> = 1..=11;

/// Default filter count of the shallow network.
pub const CNN1_DEFAULT_FILTERS: usize = 32;
/// Filter count of the first deep-network stage.
pub const CNN2_FIRST_FILTERS: usize = 96;
/// Width of the deep network's hidden dense layer.
pub const CNN2_HIDDEN_UNITS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv {
        filters: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    #[serde(rename = "batchnorm")]
    BatchNorm,
    Activation {
        family: ActivationFamily,
    },
    Dense {
        units: usize,
    },
    Softmax,
}

fn one() -> usize {
    1
}

/// Architecture description. `input_shape` is `[height, width, channels]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
}

impl NetworkSpec {
    /// Checks hyperparameter ranges and shape flow; returns the per-layer
    /// output shapes (without the batch axis).
    pub fn validate(&self) -> Result<Vec<Vec<usize>>> {
        let [h, w, c] = self.input_shape;
        if h == 0 || w == 0 || c == 0 || self.num_classes == 0 {
            return Err(Error::Config(format!(
                "input shape {:?} and class count {} must be positive",
                self.input_shape, self.num_classes
            )));
        }
        let mut shape = vec![c, h, w];
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let last = i + 1 == self.layers.len();
            match *layer {
                LayerSpec::Conv {
                    filters,
                    kernel,
                    stride,
                    padding,
                } => {
                    if !FILTER_RANGE.contains(&filters) || !KERNEL_RANGE.contains(&kernel) {
                        return Err(Error::Config(format!(
                            "layer {i}: filters {filters} must be in {FILTER_RANGE:?}, kernel {kernel} in {KERNEL_RANGE:?}"
                        )));
                    }
                    if shape.len() != 3 {
                        return Err(Error::Config(format!("layer {i}: convolution after dense layer")));
                    }
                    let conv = ConvLayer::new(1, 1, kernel, stride, padding)?;
                    let (oh, ow) = conv.output_hw(shape[1], shape[2])?;
                    shape = vec![filters, oh, ow];
                }
                LayerSpec::BatchNorm | LayerSpec::Activation { .. } => {}
                LayerSpec::Dense { units } => {
                    if units == 0 {
                        return Err(Error::Config(format!("layer {i}: dense layer needs units")));
                    }
                    shape = vec![units];
                }
                LayerSpec::Softmax => {
                    if !last {
                        return Err(Error::Config("softmax must be the final layer".into()));
                    }
                    if shape != [self.num_classes] {
                        return Err(Error::Config(format!(
                            "classification head expects {} logits, got shape {shape:?}",
                            self.num_classes
                        )));
                    }
                }
            }
            shapes.push(shape.clone());
        }
        if self.layers.last() != Some(&LayerSpec::Softmax) {
            return Err(Error::Config("network must end with a softmax head".into()));
        }
        Ok(shapes)
    }
}

/// Shallow network: `conv(ncf, cfs) → batchnorm → activation → dense(L) → softmax`,
/// stride 1 and no padding.
pub fn cnn1_spec(
    ncf: usize,
    cfs: usize,
    family: ActivationFamily,
    num_classes: usize,
    input_shape: [usize; 3],
) -> NetworkSpec {
    NetworkSpec {
        input_shape,
        num_classes,
        layers: vec![
            LayerSpec::Conv {
                filters: ncf,
                kernel: cfs,
                stride: 1,
                padding: 0,
            },
            LayerSpec::BatchNorm,
            LayerSpec::Activation { family },
            LayerSpec::Dense { units: num_classes },
            LayerSpec::Softmax,
        ],
    }
}

/// Deep network with "same" padding on every stage. Only the first stage uses
/// `family`; the rest use ReLU.
pub fn cnn2_spec(family: ActivationFamily, num_classes: usize, input_shape: [usize; 3]) -> NetworkSpec {
    let stages = [
        (CNN2_FIRST_FILTERS, 3),
        (128, 5),
        (384, 7),
        (192, 5),
        (128, 3),
    ];
    let mut layers = Vec::new();
    for (i, &(filters, kernel)) in stages.iter().enumerate() {
        layers.push(LayerSpec::Conv {
            filters,
            kernel,
            stride: 1,
            padding: (kernel - 1) / 2,
        });
        layers.push(LayerSpec::BatchNorm);
        layers.push(LayerSpec::Activation {
            family: if i == 0 { family } else { ActivationFamily::Relu },
        });
    }
    layers.extend([
        LayerSpec::Dense {
            units: CNN2_HIDDEN_UNITS,
        },
        LayerSpec::Activation {
            family: ActivationFamily::Relu,
        },
        LayerSpec::Dense { units: num_classes },
        LayerSpec::Softmax,
    ]);
    NetworkSpec {
        input_shape,
        layers,
        num_classes,
    }
}

pub fn build_cnn1(
    ncf: usize,
    cfs: usize,
    family: ActivationFamily,
    num_classes: usize,
    input_shape: [usize; 3],
    seed: u64,
) -> Result<Network> {
    Network::from_spec(cnn1_spec(ncf, cfs, family, num_classes, input_shape), seed)
}

pub fn build_cnn2(
    family: ActivationFamily,
    num_classes: usize,
    input_shape: [usize; 3],
    seed: u64,
) -> Result<Network> {
    Network::from_spec(cnn2_spec(family, num_classes, input_shape), seed)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvLayer),
    BatchNorm(BatchNormLayer),
    Activation(ActivationLayer),
    Dense(DenseLayer),
    Softmax,
}

/// Whether a value is an ordinary weight or an activation-shape scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamRole {
    Weight,
    Activation(ActivationParam),
}

/// Mutable view of one learnable tensor (or activation scalar).
#[derive(Debug)]
pub struct ParamMut<'a> {
    pub name: String,
    pub role: ParamRole,
    pub values: &'a mut [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub name: String,
    pub role: ParamRole,
    pub values: Vec<f64>,
}

/// Gradients for every learnable value, in [`Network::params_mut`] order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientSet {
    pub entries: Vec<ParamGrad>,
}

impl GradientSet {
    pub fn get(&self, name: &str) -> Option<&ParamGrad> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|e| e.values.iter().all(|v| v.is_finite()))
    }

    fn push(&mut self, name: String, role: ParamRole, values: Vec<f64>) {
        self.entries.push(ParamGrad { name, role, values });
    }
}

#[derive(Debug, Clone)]
enum Cache {
    Input(Tensor),
    BatchNorm(BatchNormCache),
    None,
}

/// Result of a forward pass: logits plus what backward needs.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Tensor,
    caches: Vec<Cache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    pub layers: Vec<Layer>,
}

fn param_name(layer: usize, what: &str) -> String {
    format!("layers.{layer}.{what}")
}

fn activation_param_name(layer: usize, channel: usize, param: ActivationParam) -> String {
    format!("layers.{layer}.c{channel}.{}", param.name())
}

impl Network {
    /// Builds the layers described by `spec` with weights drawn from `seed`.
    /// Activation layers start from their family's default parameters.
    pub fn from_spec(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let shapes = spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut channels = spec.input_shape[2];
        let mut flat = spec.input_shape.iter().product::<usize>();
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (layer, out_shape) in spec.layers.iter().zip(&shapes) {
            let built = match *layer {
                LayerSpec::Conv {
                    filters,
                    kernel,
                    stride,
                    padding,
                } => {
                    let mut conv = ConvLayer::new(filters, channels, kernel, stride, padding)?;
                    conv.init_uniform(&mut rng);
                    Layer::Conv(conv)
                }
                LayerSpec::BatchNorm => Layer::BatchNorm(BatchNormLayer::new(channels)?),
                LayerSpec::Activation { family } => {
                    Layer::Activation(ActivationLayer::uniform(ActivationSpec::of(family), channels))
                }
                LayerSpec::Dense { units } => {
                    let mut dense = DenseLayer::new(flat, units)?;
                    dense.init_uniform(&mut rng);
                    Layer::Dense(dense)
                }
                LayerSpec::Softmax => Layer::Softmax,
            };
            channels = out_shape[0];
            flat = out_shape.iter().product();
            layers.push(built);
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn activation_layers_mut(&mut self) -> impl Iterator<Item = &mut ActivationLayer> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Activation(a) => Some(a),
            _ => None,
        })
    }

    pub fn activation_layers(&self) -> impl Iterator<Item = &ActivationLayer> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Activation(a) => Some(a),
            _ => None,
        })
    }

    /// Every learnable value, in a fixed order.
    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Conv(c) => {
                    out.push(ParamMut {
                        name: param_name(i, "weight"),
                        role: ParamRole::Weight,
                        values: c.weights.data_mut(),
                    });
                    out.push(ParamMut {
                        name: param_name(i, "bias"),
                        role: ParamRole::Weight,
                        values: c.bias.data_mut(),
                    });
                }
                Layer::BatchNorm(bn) => {
                    out.push(ParamMut {
                        name: param_name(i, "gamma"),
                        role: ParamRole::Weight,
                        values: bn.gamma.data_mut(),
                    });
                    out.push(ParamMut {
                        name: param_name(i, "beta_shift"),
                        role: ParamRole::Weight,
                        values: bn.beta_shift.data_mut(),
                    });
                }
                Layer::Activation(a) => {
                    for (c, spec) in a.specs.iter_mut().enumerate() {
                        let family = spec.family;
                        let params = &mut spec.params;
                        // Split the struct so each learnable field is its own slice.
                        let ActivationParams {
                            lambda,
                            sigma,
                            mu,
                            alpha,
                            xi,
                            ..
                        } = params;
                        let mut fields = [
                            (ActivationParam::Lambda, Some(lambda)),
                            (ActivationParam::Sigma, Some(sigma)),
                            (ActivationParam::Mu, Some(mu)),
                            (ActivationParam::Alpha, Some(alpha)),
                            (ActivationParam::Xi, Some(xi)),
                        ];
                        for &param in family.learnable() {
                            let slot = fields
                                .iter_mut()
                                .find(|(p, _)| *p == param)
                                .and_then(|(_, v)| v.take())
                                .expect("each learnable parameter listed once");
                            out.push(ParamMut {
                                name: activation_param_name(i, c, param),
                                role: ParamRole::Activation(param),
                                values: std::slice::from_mut(slot),
                            });
                        }
                    }
                }
                Layer::Dense(d) => {
                    out.push(ParamMut {
                        name: param_name(i, "weight"),
                        role: ParamRole::Weight,
                        values: d.weights.data_mut(),
                    });
                    out.push(ParamMut {
                        name: param_name(i, "bias"),
                        role: ParamRole::Weight,
                        values: d.bias.data_mut(),
                    });
                }
                Layer::Softmax => {}
            }
        }
        out
    }

    /// Total number of learnable scalars.
    pub fn learnable_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => c.weights.len() + c.bias.len(),
                Layer::BatchNorm(bn) => 2 * bn.channels(),
                Layer::Activation(a) => a.learnable_count(),
                Layer::Dense(d) => d.weights.len() + d.bias.len(),
                Layer::Softmax => 0,
            })
            .sum()
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let [h, w, c] = self.spec.input_shape;
        match *batch.shape() {
            [_, bc, bh, bw] if (bc, bh, bw) == (c, h, w) => Ok(()),
            _ => Err(Error::ShapeMismatch {
                op: "network input",
                expected: vec![batch.shape().first().copied().unwrap_or(0), c, h, w],
                actual: batch.shape().to_vec(),
            }),
        }
    }

    fn propagate(&self, batch: &Tensor, mode: Mode, keep: bool) -> Result<ForwardPass> {
        self.check_batch(batch)?;
        let mut x = batch.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = match layer {
                Layer::Conv(c) => (c.forward(&x)?, Cache::Input(x)),
                Layer::BatchNorm(bn) => {
                    let (y, cache) = bn.normalize(&x, mode)?;
                    (y, Cache::BatchNorm(cache))
                }
                Layer::Activation(a) => (a.forward(&x)?, Cache::Input(x)),
                Layer::Dense(d) => (d.forward(&x)?, Cache::Input(x)),
                Layer::Softmax => (x, Cache::None),
            };
            x = next;
            caches.push(if keep { cache } else { Cache::None });
        }
        Ok(ForwardPass { logits: x, caches })
    }

    /// Forward pass keeping caches for [`backward`](Self::backward). In train
    /// mode batch normalization running statistics are updated.
    pub fn forward(&mut self, batch: &Tensor, mode: Mode) -> Result<ForwardPass> {
        let pass = self.propagate(batch, mode, true)?;
        if mode == Mode::Train {
            for (layer, cache) in self.layers.iter_mut().zip(&pass.caches) {
                if let (Layer::BatchNorm(bn), Cache::BatchNorm(c)) = (layer, cache) {
                    bn.update_running(c);
                }
            }
        }
        Ok(pass)
    }

    /// Logits without touching any state.
    pub fn logits(&self, batch: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(self.propagate(batch, mode, false)?.logits)
    }

    /// Mean cross-entropy of `batch` without touching any state.
    pub fn loss(&self, batch: &Tensor, labels: &[usize], mode: Mode) -> Result<f64> {
        let probs = layers::softmax(&self.logits(batch, mode)?)?;
        layers::cross_entropy(&probs, labels)
    }

    /// Argmax class per sample, using running statistics.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(batch, Mode::Infer)?;
        let l = self.num_classes();
        Ok(logits
            .data()
            .chunks(l)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect())
    }

    /// Gradient of the mean cross-entropy of `pass` against `labels`.
    pub fn backward(&self, pass: &ForwardPass, labels: &[usize]) -> Result<GradientSet> {
        let probs = layers::softmax(&pass.logits)?;
        let mut grad = layers::softmax_cross_entropy_backward(&probs, labels)?;
        let mut per_layer: Vec<GradientSet> = Vec::with_capacity(self.layers.len());
        for (i, (layer, cache)) in self.layers.iter().zip(&pass.caches).enumerate().rev() {
            let mut set = GradientSet::default();
            grad = match (layer, cache) {
                (Layer::Softmax, _) => grad,
                (Layer::Conv(c), Cache::Input(x)) => {
                    let g = c.backward(x, &grad)?;
                    set.push(param_name(i, "weight"), ParamRole::Weight, g.grad_w.into_data());
                    set.push(param_name(i, "bias"), ParamRole::Weight, g.grad_b.into_data());
                    g.grad_x
                }
                (Layer::BatchNorm(bn), Cache::BatchNorm(cache)) => {
                    let g = bn.backward(cache, &grad)?;
                    set.push(param_name(i, "gamma"), ParamRole::Weight, g.grad_gamma.into_data());
                    set.push(param_name(i, "beta_shift"), ParamRole::Weight, g.grad_beta_shift.into_data());
                    g.grad_x
                }
                (Layer::Activation(a), Cache::Input(x)) => {
                    let g = a.backward(x, &grad)?;
                    for (c, (spec, partials)) in a.specs.iter().zip(&g.grad_params).enumerate() {
                        for &param in spec.family.learnable() {
                            set.push(
                                activation_param_name(i, c, param),
                                ParamRole::Activation(param),
                                vec![partials.get(param)],
                            );
                        }
                    }
                    g.grad_x
                }
                (Layer::Dense(d), Cache::Input(x)) => {
                    let g = d.backward(x, &grad)?;
                    set.push(param_name(i, "weight"), ParamRole::Weight, g.grad_w.into_data());
                    set.push(param_name(i, "bias"), ParamRole::Weight, g.grad_b.into_data());
                    g.grad_x
                }
                _ => return Err(Error::Config("forward pass was run without caches".into())),
            };
            per_layer.push(set);
        }
        let mut out = GradientSet::default();
        for set in per_layer.into_iter().rev() {
            out.entries.extend(set.entries);
        }
        Ok(out)
    }

    /// Loss and gradients for one batch in train mode (running statistics updated).
    pub fn loss_and_gradients(&mut self, batch: &Tensor, labels: &[usize]) -> Result<(f64, GradientSet)> {
        let pass = self.forward(batch, Mode::Train)?;
        let loss = layers::cross_entropy(&layers::softmax(&pass.logits)?, labels)?;
        let grads = self.backward(&pass, labels)?;
        Ok((loss, grads))
    }

    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv(c) => {
                    out.push((param_name(i, "weight"), &c.weights));
                    out.push((param_name(i, "bias"), &c.bias));
                }
                Layer::BatchNorm(bn) => {
                    out.push((param_name(i, "gamma"), &bn.gamma));
                    out.push((param_name(i, "beta_shift"), &bn.beta_shift));
                    out.push((param_name(i, "running_mean"), &bn.running_mean));
                    out.push((param_name(i, "running_var"), &bn.running_var));
                }
                Layer::Dense(d) => {
                    out.push((param_name(i, "weight"), &d.weights));
                    out.push((param_name(i, "bias"), &d.bias));
                }
                Layer::Activation(_) | Layer::Softmax => {}
            }
        }
        out
    }

    /// Writes `spec.json` (architecture plus tensor manifest) and `weights.bin`
    /// (little-endian f64) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut blob: Vec<u8> = Vec::new();
        let mut manifest = Vec::new();
        let mut add = |name: String, shape: Vec<usize>, values: &mut dyn Iterator<Item = f64>| {
            let offset = blob.len();
            for v in values {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            manifest.push(TensorEntry {
                name,
                shape,
                offset,
                nbytes: blob.len() - offset,
            });
        };
        for (name, t) in self.tensors() {
            add(name, t.shape().to_vec(), &mut t.data().iter().copied());
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if let Layer::Activation(a) = layer {
                for field in ACTIVATION_FIELDS {
                    add(
                        param_name(i, field),
                        vec![a.specs.len()],
                        &mut a.specs.iter().map(|s| activation_field(&s.params, field)),
                    );
                }
            }
        }
        let file = SavedNetwork {
            format: SAVE_FORMAT.into(),
            dtype: "f64le".into(),
            spec: self.spec.clone(),
            tensors: manifest,
        };
        let spec_path = dir.join("spec.json");
        fs::write(&spec_path, serde_json::to_string_pretty(&file)?).map_err(|e| Error::io(&spec_path, e))?;
        let blob_path = dir.join("weights.bin");
        fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))
    }

    /// Inverse of [`save`](Self::save).
    pub fn load(dir: &Path) -> Result<Self> {
        let spec_path = dir.join("spec.json");
        let text = fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
        let file: SavedNetwork = serde_json::from_str(&text)?;
        if file.format != SAVE_FORMAT || file.dtype != "f64le" {
            return Err(Error::Config(format!(
                "unsupported network file {} / {}",
                file.format, file.dtype
            )));
        }
        let blob_path = dir.join("weights.bin");
        let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        let mut net = Network::from_spec(file.spec, 0)?;
        let lookup = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
            let entry = file
                .tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::Config(format!("weights manifest lacks `{name}`")))?;
            let n: usize = shape.iter().product();
            if entry.shape != shape || entry.nbytes != n * 8 {
                return Err(Error::ShapeMismatch {
                    op: "load",
                    expected: shape.to_vec(),
                    actual: entry.shape.clone(),
                });
            }
            let bytes = blob.get(entry.offset..entry.offset + entry.nbytes).ok_or_else(|| Error::Truncated {
                file: blob_path.display().to_string(),
                expected: entry.offset + entry.nbytes,
                actual: blob.len(),
            })?;
            Ok(bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect())
        };
        for (i, layer) in net.layers.iter_mut().enumerate() {
            let fill = |what: &str, t: &mut Tensor| -> Result<()> {
                let values = lookup(&param_name(i, what), t.shape())?;
                t.data_mut().copy_from_slice(&values);
                Ok(())
            };
            match layer {
                Layer::Conv(c) => {
                    fill("weight", &mut c.weights)?;
                    fill("bias", &mut c.bias)?;
                }
                Layer::BatchNorm(bn) => {
                    fill("gamma", &mut bn.gamma)?;
                    fill("beta_shift", &mut bn.beta_shift)?;
                    fill("running_mean", &mut bn.running_mean)?;
                    fill("running_var", &mut bn.running_var)?;
                }
                Layer::Dense(d) => {
                    fill("weight", &mut d.weights)?;
                    fill("bias", &mut d.bias)?;
                }
                Layer::Activation(a) => {
                    for field in ACTIVATION_FIELDS {
                        let values = lookup(&param_name(i, field), &[a.specs.len()])?;
                        for (spec, v) in a.specs.iter_mut().zip(values) {
                            *activation_field_mut(&mut spec.params, field) = v;
                        }
                    }
                    for spec in &a.specs {
                        spec.validate()?;
                    }
                }
                Layer::Softmax => {}
            }
        }
        Ok(net)
    }
}

const SAVE_FORMAT: &str = "repsu-network-v1";
const ACTIVATION_FIELDS: [&str; 6] = ["lambda", "sigma", "mu", "beta", "alpha", "xi"];

fn activation_field(p: &ActivationParams, field: &str) -> f64 {
    match field {
        "lambda" => p.lambda,
        "sigma" => p.sigma,
        "mu" => p.mu,
        "beta" => p.beta,
        "alpha" => p.alpha,
        _ => p.xi,
    }
}

fn activation_field_mut<'a>(p: &'a mut ActivationParams, field: &str) -> &'a mut f64 {
    match field {
        "lambda" => &mut p.lambda,
        "sigma" => &mut p.sigma,
        "mu" => &mut p.mu,
        "beta" => &mut p.beta,
        "alpha" => &mut p.alpha,
        _ => &mut p.xi,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    nbytes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct SavedNetwork {
    format: String,
    dtype: String,
    spec: NetworkSpec,
    tensors: Vec<TensorEntry>,
}
