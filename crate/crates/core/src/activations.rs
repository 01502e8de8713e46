//! Scalar activation functions and their analytic derivatives.
//!
//! The rectified power sigmoid family is built from a shrinkage unit
//!
//! ```text
//! f(x) = (x - λ)·1[x ≥ λ] / (1 + exp(-sgn(x - μ)·(|x - μ| / σ)^β))
//! ```
//!
//! a stretch unit `g(x) = 2x·1[x ≥ λ] - f(x)` and their mix
//! `A(x) = α·g(x) + (1 - α)·f(x)`. ReSKU is the `β = 1`, `α = 0` member written
//! with the inverse scale `ξ = 1/σ`.
//!
//! Derivatives at the threshold `x = λ` are taken from the lower branch (0).
//! `β` is a constant: forward evaluation supports any `β > 0` but no partial
//! with respect to `β` is ever produced.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Arguments to `exp` are clamped to this magnitude.
pub const EXP_CLAMP: f64 = 700.0;

/// `max(0, x)`.
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Logistic sigmoid `1 / (1 + e^{-x})`, stable over the whole real line.
pub fn sigmoid(x: f64) -> f64 {
    let x = x.clamp(-EXP_CLAMP, EXP_CLAMP);
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `s(x)·(1 - s(x))` without cancellation in the tails.
fn sigmoid_slope(x: f64) -> f64 {
    sigmoid(x) * sigmoid(-x)
}

/// 1 if `x ≥ lambda`, else 0.
pub fn indicator_ge(x: f64, lambda: f64) -> f64 {
    if x >= lambda {
        1.0
    } else {
        0.0
    }
}

/// Sign with `sgn(0) = 0`.
fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Parameters of the rectified power sigmoid family and the parametric
/// baselines. Unused fields are ignored by a given family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationParams {
    /// Threshold below which the output is zero.
    pub lambda: f64,
    /// Scale of the sigmoid factor.
    pub sigma: f64,
    /// Shift of the sigmoid factor.
    pub mu: f64,
    /// Shape (power) of the sigmoid factor. Never trained.
    pub beta: f64,
    /// Stretch/shrink mixing weight.
    pub alpha: f64,
    /// Inverse scale used by ReSKU, PMISH and PSWISH.
    pub xi: f64,
}

impl Default for ActivationParams {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            sigma: 1.0,
            mu: 0.0,
            beta: 1.0,
            alpha: 0.0,
            xi: 1.0,
        }
    }
}

impl ActivationParams {
    pub fn resku(lambda: f64, xi: f64, mu: f64) -> Self {
        Self {
            lambda,
            xi,
            mu,
            ..Self::default()
        }
    }

    pub fn repsu(lambda: f64, sigma: f64, mu: f64, beta: f64, alpha: f64) -> Self {
        Self {
            lambda,
            sigma,
            mu,
            beta,
            alpha,
            xi: 1.0 / sigma,
        }
    }
}

/// `sgn(x - μ)·(|x - μ| / σ)^β`, clamped for `exp`.
fn power_exponent(x: f64, p: &ActivationParams) -> f64 {
    let d = x - p.mu;
    let t = sgn(d) * (d.abs() / p.sigma).powf(p.beta);
    t.clamp(-EXP_CLAMP, EXP_CLAMP)
}

/// `∂/∂x` of the power exponent.
fn power_exponent_dx(x: f64, p: &ActivationParams) -> f64 {
    let d = x - p.mu;
    if d == 0.0 {
        // Only β = 1 is differentiable at the shift; β > 1 has slope 0 there
        // and β < 1 has an infinite slope, which is reported as 0.
        return if p.beta == 1.0 { 1.0 / p.sigma } else { 0.0 };
    }
    p.beta * (d.abs() / p.sigma).powf(p.beta - 1.0) / p.sigma
}

/// Rectified power sigmoid shrinkage unit.
pub fn repsku(x: f64, p: &ActivationParams) -> f64 {
    if x < p.lambda {
        return 0.0;
    }
    let t = power_exponent(x, p);
    (x - p.lambda) / (1.0 + (-t).exp())
}

/// Rectified power sigmoid stretch unit, `2x·1[x ≥ λ] - repsku(x)`.
pub fn repshu(x: f64, p: &ActivationParams) -> f64 {
    2.0 * x * indicator_ge(x, p.lambda) - repsku(x, p)
}

/// Rectified power sigmoid unit, the `α`-mix of [`repshu`] and [`repsku`].
pub fn repsu(x: f64, p: &ActivationParams) -> f64 {
    p.alpha * repshu(x, p) + (1.0 - p.alpha) * repsku(x, p)
}

/// ReSKU, parameterised by `(λ, ξ, μ)`.
pub fn resku(x: f64, p: &ActivationParams) -> f64 {
    if x < p.lambda {
        return 0.0;
    }
    let z = (p.xi * (x - p.mu)).clamp(-EXP_CLAMP, EXP_CLAMP);
    (x - p.lambda) / (1.0 + (-z).exp())
}

/// Closed-form ReSKU derivative:
/// `(1 + ξ·u(x)·e^{-ξ(x-μ)}) / (1 + e^{-ξ(x-μ)})` above the threshold, 0 otherwise.
pub fn resku_dx(x: f64, p: &ActivationParams) -> f64 {
    if x <= p.lambda {
        return 0.0;
    }
    let e = (-(p.xi * (x - p.mu)).clamp(-EXP_CLAMP, EXP_CLAMP)).exp();
    let u = resku(x, p);
    (1.0 + p.xi * u * e) / (1.0 + e)
}

/// Partials of a scalar activation with respect to its learnable parameters.
/// Fields a family does not use are 0.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ScalarPartials {
    pub d_lambda: f64,
    pub d_sigma: f64,
    pub d_mu: f64,
    pub d_alpha: f64,
    pub d_xi: f64,
}

impl ScalarPartials {
    pub fn get(&self, param: ActivationParam) -> f64 {
        match param {
            ActivationParam::Lambda => self.d_lambda,
            ActivationParam::Sigma => self.d_sigma,
            ActivationParam::Mu => self.d_mu,
            ActivationParam::Alpha => self.d_alpha,
            ActivationParam::Xi => self.d_xi,
        }
    }
}

/// `∂A/∂x` for the RePSU mix (covers RePSKU at `α = 0`, RePSHU at `α = 1`).
pub fn repsu_dx(x: f64, p: &ActivationParams) -> f64 {
    if x <= p.lambda {
        return 0.0;
    }
    let t = power_exponent(x, p);
    let s = sigmoid(t);
    let shrink_dx = s + (x - p.lambda) * sigmoid_slope(t) * power_exponent_dx(x, p);
    2.0 * p.alpha + (1.0 - 2.0 * p.alpha) * shrink_dx
}

/// Partials of the RePSU mix with respect to `λ, σ, μ, α` (β held fixed).
pub fn repsu_dparams(x: f64, p: &ActivationParams) -> ScalarPartials {
    let d_alpha = repshu(x, p) - repsku(x, p);
    if x <= p.lambda {
        return ScalarPartials {
            d_alpha,
            ..Default::default()
        };
    }
    let t = power_exponent(x, p);
    let s = sigmoid(t);
    let slope = sigmoid_slope(t);
    let gain = x - p.lambda;
    // Partials of the shrinkage unit; the stretch unit contributes their negation.
    let f_lambda = -s;
    let f_sigma = gain * slope * (-p.beta * t / p.sigma);
    let f_mu = -gain * slope * power_exponent_dx(x, p);
    let mix = 1.0 - 2.0 * p.alpha;
    ScalarPartials {
        d_lambda: mix * f_lambda,
        d_sigma: mix * f_sigma,
        d_mu: mix * f_mu,
        d_alpha,
        d_xi: 0.0,
    }
}

/// Partials of ReSKU with respect to `λ, ξ, μ`.
pub fn resku_dparams(x: f64, p: &ActivationParams) -> ScalarPartials {
    if x <= p.lambda {
        return ScalarPartials::default();
    }
    let z = (p.xi * (x - p.mu)).clamp(-EXP_CLAMP, EXP_CLAMP);
    let s = sigmoid(z);
    let slope = sigmoid_slope(z);
    let gain = x - p.lambda;
    ScalarPartials {
        d_lambda: -s,
        d_xi: gain * slope * (x - p.mu),
        d_mu: -gain * slope * p.xi,
        ..Default::default()
    }
}

/// `(1/ξ)·log(1 + e^{ξx})`, computed without overflow.
pub fn softplus(x: f64, xi: f64) -> f64 {
    let z = xi * x;
    (z.max(0.0) + (-z.abs()).exp().ln_1p()) / xi
}

/// Parametric MISH, `x·tanh(softplus_ξ(x))`.
pub fn pmish(x: f64, xi: f64) -> f64 {
    x * softplus(x, xi).tanh()
}

pub fn mish(x: f64) -> f64 {
    pmish(x, 1.0)
}

pub fn pmish_dx(x: f64, xi: f64) -> f64 {
    let th = softplus(x, xi).tanh();
    th + x * (1.0 - th * th) * sigmoid(xi * x)
}

pub fn pmish_dxi(x: f64, xi: f64) -> f64 {
    let sp = softplus(x, xi);
    let th = sp.tanh();
    let dsp_dxi = (x * sigmoid(xi * x) - sp) / xi;
    x * (1.0 - th * th) * dsp_dxi
}

/// Parametric SWISH, `x·s(ξx)`.
pub fn pswish(x: f64, xi: f64) -> f64 {
    x * sigmoid(xi * x)
}

pub fn swish(x: f64) -> f64 {
    pswish(x, 1.0)
}

pub fn pswish_dx(x: f64, xi: f64) -> f64 {
    let z = xi * x;
    sigmoid(z) + z * sigmoid_slope(z)
}

pub fn pswish_dxi(x: f64, xi: f64) -> f64 {
    x * x * sigmoid_slope(xi * x)
}

/// A learnable scalar of an activation function. `β` is deliberately absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationParam {
    Lambda,
    Sigma,
    Mu,
    Alpha,
    Xi,
}

impl ActivationParam {
    pub fn name(self) -> &'static str {
        match self {
            Self::Lambda => "lambda",
            Self::Sigma => "sigma",
            Self::Mu => "mu",
            Self::Alpha => "alpha",
            Self::Xi => "xi",
        }
    }

    pub fn value(self, p: &ActivationParams) -> f64 {
        match self {
            Self::Lambda => p.lambda,
            Self::Sigma => p.sigma,
            Self::Mu => p.mu,
            Self::Alpha => p.alpha,
            Self::Xi => p.xi,
        }
    }

    pub fn value_mut(self, p: &mut ActivationParams) -> &mut f64 {
        match self {
            Self::Lambda => &mut p.lambda,
            Self::Sigma => &mut p.sigma,
            Self::Mu => &mut p.mu,
            Self::Alpha => &mut p.alpha,
            Self::Xi => &mut p.xi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationFamily {
    Relu,
    Sigmoid,
    Resku,
    Repsku,
    Repshu,
    Repsu,
    Mish,
    Pmish,
    Swish,
    Pswish,
}

impl ActivationFamily {
    pub const ALL: [ActivationFamily; 10] = [
        Self::Relu,
        Self::Sigmoid,
        Self::Resku,
        Self::Repsku,
        Self::Repshu,
        Self::Repsu,
        Self::Mish,
        Self::Pmish,
        Self::Swish,
        Self::Pswish,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Relu => "relu",
            Self::Sigmoid => "sigmoid",
            Self::Resku => "resku",
            Self::Repsku => "repsku",
            Self::Repshu => "repshu",
            Self::Repsu => "repsu",
            Self::Mish => "mish",
            Self::Pmish => "pmish",
            Self::Swish => "swish",
            Self::Pswish => "pswish",
        }
    }

    /// Scalars the optimizer updates, per channel.
    pub fn learnable(self) -> &'static [ActivationParam] {
        use ActivationParam::*;
        match self {
            Self::Relu | Self::Sigmoid | Self::Mish | Self::Swish => &[],
            Self::Resku => &[Lambda, Xi, Mu],
            Self::Repsku | Self::Repshu => &[Lambda, Sigma, Mu],
            Self::Repsu => &[Lambda, Sigma, Mu, Alpha],
            Self::Pmish | Self::Pswish => &[Xi],
        }
    }

    pub fn is_parametric(self) -> bool {
        !self.learnable().is_empty()
    }

    /// Parameters a fresh spec of this family starts from.
    pub fn default_params(self) -> ActivationParams {
        let alpha = match self {
            Self::Repshu => 1.0,
            Self::Repsu => 0.5,
            _ => 0.0,
        };
        ActivationParams {
            alpha,
            ..ActivationParams::default()
        }
    }
}

impl fmt::Display for ActivationFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|f| f.name() == lower)
            .ok_or_else(|| Error::Config(format!("unknown activation family `{s}`")))
    }
}

/// An activation family together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecRepr", into = "SpecRepr")]
pub struct ActivationSpec {
    pub family: ActivationFamily,
    pub params: ActivationParams,
}

impl ActivationSpec {
    pub fn new(family: ActivationFamily, params: ActivationParams) -> Result<Self> {
        let spec = Self { family, params };
        spec.validate()?;
        Ok(spec)
    }

    pub fn of(family: ActivationFamily) -> Self {
        Self {
            family,
            params: family.default_params(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        use ActivationFamily::*;
        let p = &self.params;
        let fail = |what: &str| {
            Err(Error::Config(format!(
                "{} activation requires {what}, got {p:?}",
                self.family
            )))
        };
        let finite = [p.lambda, p.sigma, p.mu, p.beta, p.alpha, p.xi]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return fail("finite parameters");
        }
        match self.family {
            Resku | Pmish | Pswish if p.xi <= 0.0 => fail("xi > 0"),
            Repsku | Repshu | Repsu if p.sigma <= 0.0 || p.beta <= 0.0 => {
                fail("sigma > 0 and beta > 0")
            }
            Repsu if !(0.0..=1.0).contains(&p.alpha) => fail("alpha in [0, 1]"),
            _ => Ok(()),
        }
    }

    pub fn forward(&self, x: f64) -> f64 {
        use ActivationFamily::*;
        let p = &self.params;
        match self.family {
            Relu => relu(x),
            Sigmoid => sigmoid(x),
            Resku => resku(x, p),
            Repsku => repsku(x, p),
            Repshu => repshu(x, p),
            Repsu => repsu(x, p),
            Mish => mish(x),
            Pmish => pmish(x, p.xi),
            Swish => swish(x),
            Pswish => pswish(x, p.xi),
        }
    }

    /// `∂output/∂x`.
    pub fn dx(&self, x: f64) -> f64 {
        use ActivationFamily::*;
        let p = &self.params;
        match self.family {
            Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Sigmoid => sigmoid_slope(x),
            Resku => resku_dx(x, p),
            Repsku => repsu_dx(x, &ActivationParams { alpha: 0.0, ..*p }),
            Repshu => repsu_dx(x, &ActivationParams { alpha: 1.0, ..*p }),
            Repsu => repsu_dx(x, p),
            Mish => pmish_dx(x, 1.0),
            Pmish => pmish_dx(x, p.xi),
            Swish => pswish_dx(x, 1.0),
            Pswish => pswish_dx(x, p.xi),
        }
    }

    /// Partials with respect to the family's learnable parameters.
    pub fn dparams(&self, x: f64) -> ScalarPartials {
        use ActivationFamily::*;
        let p = &self.params;
        match self.family {
            Relu | Sigmoid | Mish | Swish => ScalarPartials::default(),
            Resku => resku_dparams(x, p),
            Repsku | Repshu => {
                let alpha = if self.family == Repsku { 0.0 } else { 1.0 };
                ScalarPartials {
                    d_alpha: 0.0,
                    ..repsu_dparams(x, &ActivationParams { alpha, ..*p })
                }
            }
            Repsu => repsu_dparams(x, p),
            Pmish => ScalarPartials {
                d_xi: pmish_dxi(x, p.xi),
                ..Default::default()
            },
            Pswish => ScalarPartials {
                d_xi: pswish_dxi(x, p.xi),
                ..Default::default()
            },
        }
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        x.map(|v| self.forward(v))
    }

    /// Elementwise partials over a whole tensor.
    pub fn grads(&self, x: &Tensor) -> ActivationGrads {
        let d_input = x.map(|v| self.dx(v));
        let mut grads = ActivationGrads {
            d_input,
            d_lambda: None,
            d_sigma: None,
            d_mu: None,
            d_alpha: None,
            d_xi: None,
        };
        for &param in self.family.learnable() {
            let t = x.map(|v| self.dparams(v).get(param));
            let slot = match param {
                ActivationParam::Lambda => &mut grads.d_lambda,
                ActivationParam::Sigma => &mut grads.d_sigma,
                ActivationParam::Mu => &mut grads.d_mu,
                ActivationParam::Alpha => &mut grads.d_alpha,
                ActivationParam::Xi => &mut grads.d_xi,
            };
            *slot = Some(t);
        }
        grads
    }
}

/// Elementwise derivatives of an activation over a tensor. Partials for
/// parameters the family does not learn are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationGrads {
    pub d_input: Tensor,
    pub d_lambda: Option<Tensor>,
    pub d_sigma: Option<Tensor>,
    pub d_mu: Option<Tensor>,
    pub d_alpha: Option<Tensor>,
    pub d_xi: Option<Tensor>,
}

#[derive(Serialize, Deserialize)]
struct SpecRepr {
    family: ActivationFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    xi: Option<f64>,
}

impl TryFrom<SpecRepr> for ActivationSpec {
    type Error = Error;

    fn try_from(r: SpecRepr) -> Result<Self> {
        let d = r.family.default_params();
        let mut params = ActivationParams {
            lambda: r.lambda.unwrap_or(d.lambda),
            sigma: r.sigma.unwrap_or(d.sigma),
            mu: r.mu.unwrap_or(d.mu),
            beta: r.beta.unwrap_or(d.beta),
            alpha: r.alpha.unwrap_or(d.alpha),
            xi: r.xi.unwrap_or(d.xi),
        };
        // ReSKU may be written with either scale convention.
        if r.family == ActivationFamily::Resku && r.xi.is_none() {
            if let Some(sigma) = r.sigma {
                params.xi = 1.0 / sigma;
            }
        }
        ActivationSpec::new(r.family, params)
    }
}

impl From<ActivationSpec> for SpecRepr {
    fn from(s: ActivationSpec) -> Self {
        use ActivationFamily::*;
        let p = s.params;
        let mut r = SpecRepr {
            family: s.family,
            lambda: None,
            sigma: None,
            mu: None,
            beta: None,
            alpha: None,
            xi: None,
        };
        match s.family {
            Relu | Sigmoid | Mish | Swish => {}
            Resku => {
                r.lambda = Some(p.lambda);
                r.xi = Some(p.xi);
                r.mu = Some(p.mu);
            }
            Repsku | Repshu | Repsu => {
                r.lambda = Some(p.lambda);
                r.sigma = Some(p.sigma);
                r.mu = Some(p.mu);
                r.beta = Some(p.beta);
                if s.family == Repsu {
                    r.alpha = Some(p.alpha);
                }
            }
            Pmish | Pswish => r.xi = Some(p.xi),
        }
        r
    }
}
