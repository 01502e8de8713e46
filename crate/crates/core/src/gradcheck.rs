//! Central finite-difference oracle for activations and whole networks.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activations::{ActivationFamily, ActivationParam, ActivationParams, ActivationSpec};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::network::{Layer, Network};
use crate::tensor::Tensor;

/// Points closer than this to `λ` or `μ` are skipped.
pub const KINK_RADIUS: f64 = 1e-3;
pub const ACTIVATION_TOLERANCE: f64 = 1e-6;
pub const NETWORK_TOLERANCE: f64 = 1e-4;

/// Relative step used by every check.
pub fn fd_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

/// `(f(x+h) - f(x-h)) / 2h`.
pub fn fd_scalar(f: impl FnMut(f64) -> f64, x: f64, h: f64) -> Result<f64> {
    Ok(fd_with_noise(f, x, h)?.0)
}

/// Central difference plus a bound on its floating-point roundoff.
fn fd_with_noise(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> Result<(f64, f64)> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config(format!("finite-difference step {h} must be positive")));
    }
    let hi = f(x + h);
    let lo = f(x - h);
    if !hi.is_finite() || !lo.is_finite() {
        return Err(Error::NonFinite(format!("f({}) = {hi}, f({}) = {lo}", x + h, x - h)));
    }
    let noise = 4.0 * f64::EPSILON * (hi.abs() + lo.abs()) / (2.0 * h);
    Ok(((hi - lo) / (2.0 * h), noise))
}

/// Relative disagreement after discounting the oracle's own roundoff.
pub fn relative_error(analytic: f64, fd: f64, noise: f64) -> f64 {
    let gap = ((analytic - fd).abs() - noise).max(0.0);
    gap / analytic.abs().max(fd.abs()).max(1e-8)
}

/// Comparison outcome: `(discounted, raw)` relative errors.
fn compare(analytic: f64, fd: f64, noise: f64) -> (f64, f64) {
    (relative_error(analytic, fd, noise), relative_error(analytic, fd, 0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_error: f64,
    /// Largest relative error before the roundoff discount. Informational.
    pub max_raw_rel_error: f64,
    /// Coordinates of the worst comparison, e.g. `[("x", 0.3), ("lambda", 1.0)]`.
    pub worst_point: Vec<(String, f64)>,
    pub passed: bool,
    pub tolerance: f64,
    /// Number of comparisons made.
    pub checked: usize,
    /// Raw error at `worst_point`; breaks ties when the discounted errors are equal.
    #[serde(skip)]
    worst_raw: f64,
}

impl GradCheckReport {
    fn new(name: impl Into<String>, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            max_rel_error: 0.0,
            max_raw_rel_error: 0.0,
            worst_point: Vec::new(),
            passed: true,
            tolerance,
            checked: 0,
            worst_raw: 0.0,
        }
    }

    fn take_if_worse(&mut self, (err, raw): (f64, f64), first: bool, point: impl FnOnce() -> Vec<(String, f64)>) {
        let worse = first
            || err > self.max_rel_error
            || (err == self.max_rel_error && raw > self.worst_raw)
            || (err.is_nan() && !self.max_rel_error.is_nan());
        if worse {
            self.max_rel_error = err;
            self.worst_raw = raw;
            self.worst_point = point();
        }
        self.passed = self.max_rel_error <= self.tolerance;
    }

    fn record(&mut self, (err, raw): (f64, f64), point: impl FnOnce() -> Vec<(String, f64)>) {
        self.checked += 1;
        self.max_raw_rel_error = self.max_raw_rel_error.max(raw);
        self.take_if_worse((err, raw), self.checked == 1, point);
    }

    fn merge(&mut self, other: GradCheckReport) {
        if other.checked == 0 {
            return;
        }
        let first = self.checked == 0;
        self.checked += other.checked;
        self.max_raw_rel_error = self.max_raw_rel_error.max(other.max_raw_rel_error);
        self.take_if_worse((other.max_rel_error, other.worst_raw), first, || other.worst_point);
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} max_rel_error={:.3e} raw={:.3e} tol={:.0e} checked={} worst=[",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.max_rel_error,
            self.max_raw_rel_error,
            self.tolerance,
            self.checked
        )?;
        for (i, (k, v)) in self.worst_point.iter().enumerate() {
            write!(f, "{}{k}={v}", if i > 0 { ", " } else { "" })?;
        }
        write!(f, "]")
    }
}

fn near_kink(x: f64, p: &ActivationParams) -> bool {
    (x - p.lambda).abs() < KINK_RADIUS || (x - p.mu).abs() < KINK_RADIUS
}

/// Magnitude of the terms that are summed when evaluating `spec` at `x`.
/// The stretch branch subtracts two nearly equal values, so its roundoff is
/// set by `2x` and the shrink unit rather than by the result.
fn evaluation_scale(spec: &ActivationSpec, x: f64) -> f64 {
    let out = spec.forward(x).abs();
    match spec.family {
        ActivationFamily::Repshu | ActivationFamily::Repsu if x >= spec.params.lambda => {
            out + 2.0 * x.abs() + crate::activations::repsku(x, &spec.params).abs()
        }
        _ => out,
    }
}

/// Roundoff bound of a central difference of `f` around `x`, given a scale function.
fn scaled_noise(scale: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    4.0 * f64::EPSILON * (scale(x + h) + scale(x - h)) / (2.0 * h)
}

fn point(x: f64, spec: &ActivationSpec, wrt: &str) -> Vec<(String, f64)> {
    let mut out = vec![(format!("d/d{wrt} at x"), x)];
    for &param in spec.family.learnable() {
        out.push((param.name().to_string(), param.value(&spec.params)));
    }
    if matches!(
        spec.family,
        ActivationFamily::Repsku | ActivationFamily::Repshu | ActivationFamily::Repsu
    ) {
        out.push(("beta".into(), spec.params.beta));
    }
    out
}

/// Compares `dx` and every learnable partial of `spec` against finite
/// differences at each `x` in `grid`, skipping kink neighbourhoods.
pub fn check_activation(spec: &ActivationSpec, grid: &[f64], tol: f64) -> GradCheckReport {
    let mut report = GradCheckReport::new(spec.family.name(), tol);
    for &x in grid {
        if near_kink(x, &spec.params) {
            continue;
        }
        let h = fd_step(x);
        let err = match fd_with_noise(|v| spec.forward(v), x, h) {
            Ok((fd, noise)) => {
                let noise = noise.max(scaled_noise(|v| evaluation_scale(spec, v), x, h));
                compare(spec.dx(x), fd, noise)
            }
            Err(_) => (f64::INFINITY, f64::INFINITY),
        };
        report.record(err, || point(x, spec, "x"));
        let partials = spec.dparams(x);
        for &param in spec.family.learnable() {
            let p0 = param.value(&spec.params);
            let with = |v: f64| {
                let mut probe = *spec;
                *param.value_mut(&mut probe.params) = v;
                probe
            };
            let h = fd_step(p0);
            let err = match fd_with_noise(|v| with(v).forward(x), p0, h) {
                Ok((fd, noise)) => {
                    let noise = noise.max(scaled_noise(|v| evaluation_scale(&with(v), x), p0, h));
                    compare(partials.get(param), fd, noise)
                }
                Err(_) => (f64::INFINITY, f64::INFINITY),
            };
            report.record(err, || point(x, spec, param.name()));
        }
    }
    report
}

/// `x ∈ [-5, 5]` in steps of 0.1.
pub fn default_x_grid() -> Vec<f64> {
    (0..=100).map(|i| -5.0 + 0.1 * i as f64).collect()
}

/// Parameter settings exercised for each family.
pub fn default_param_grid(family: ActivationFamily) -> Vec<ActivationSpec> {
    use ActivationFamily::*;
    let mut out = Vec::new();
    match family {
        Relu | Sigmoid | Mish | Swish => out.push(ActivationSpec::of(family)),
        Resku => {
            for lambda in [0.0, 1.0] {
                for xi in [0.5, 1.0, 3.0] {
                    for mu in [-1.0, 0.0, 2.0] {
                        out.push(ActivationSpec {
                            family,
                            params: ActivationParams::resku(lambda, xi, mu),
                        });
                    }
                }
            }
        }
        Repsku | Repshu | Repsu => {
            let alphas: &[f64] = match family {
                Repsku => &[0.0],
                Repshu => &[1.0],
                _ => &[0.0, 0.3, 1.0],
            };
            for lambda in [-1.0, 0.0, 1.0] {
                for sigma in [0.5, 2.0] {
                    for mu in [-1.0, 0.5] {
                        for beta in [0.5, 1.0, 2.0] {
                            for &alpha in alphas {
                                out.push(ActivationSpec {
                                    family,
                                    params: ActivationParams::repsu(lambda, sigma, mu, beta, alpha),
                                });
                            }
                        }
                    }
                }
            }
        }
        Pmish | Pswish => {
            for xi in [0.25, 1.0, 4.0] {
                out.push(ActivationSpec {
                    family,
                    params: ActivationParams { xi, ..ActivationParams::default() },
                });
            }
        }
    }
    out
}

/// [`check_activation`] over [`default_param_grid`] and [`default_x_grid`].
pub fn check_family(family: ActivationFamily, tol: f64) -> GradCheckReport {
    let grid = default_x_grid();
    let mut report = GradCheckReport::new(family.name(), tol);
    for spec in default_param_grid(family) {
        report.merge(check_activation(&spec, &grid, tol));
    }
    report
}

/// Compares end-to-end loss gradients of `n_samples` randomly chosen
/// parameters against finite differences of the train-mode loss.
///
/// When the network has a ReSKU layer, its `λ`, `ξ` and `μ` on one random
/// channel are always among the samples.
pub fn check_network(
    net: &Network,
    batch: &Tensor,
    labels: &[usize],
    n_samples: usize,
    tol: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let (_, grads) = net.clone().loss_and_gradients(batch, labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut picks: Vec<(usize, usize)> = Vec::new();
    let resku_layer = net.layers.iter().enumerate().find_map(|(i, l)| match l {
        Layer::Activation(a) if a.specs.first().map(|s| s.family) == Some(ActivationFamily::Resku) => {
            Some((i, a.specs.len()))
        }
        _ => None,
    });
    if let Some((layer, channels)) = resku_layer {
        let c = rng.random_range(0..channels);
        for param in [ActivationParam::Lambda, ActivationParam::Xi, ActivationParam::Mu] {
            let name = format!("layers.{layer}.c{c}.{}", param.name());
            if let Some(k) = grads.entries.iter().position(|e| e.name == name) {
                picks.push((k, 0));
            }
        }
    }
    while picks.len() < n_samples && !grads.entries.is_empty() {
        let k = rng.random_range(0..grads.entries.len());
        let i = rng.random_range(0..grads.entries[k].values.len());
        picks.push((k, i));
    }

    let mut report = GradCheckReport::new("network", tol);
    let mut probe = net.clone();
    for (k, i) in picks {
        let entry = &grads.entries[k];
        let p0 = probe.params_mut()[k].values[i];
        let mut eval = |v: f64| {
            probe.params_mut()[k].values[i] = v;
            probe.loss(batch, labels, Mode::Train).unwrap_or(f64::NAN)
        };
        let outcome = fd_with_noise(&mut eval, p0, fd_step(p0));
        eval(p0);
        let err = match outcome {
            Ok((fd, noise)) => compare(entry.values[i], fd, noise),
            Err(_) => (f64::INFINITY, f64::INFINITY),
        };
        report.record(err, || vec![(format!("{}[{i}]", entry.name), p0)]);
    }
    Ok(report)
}
