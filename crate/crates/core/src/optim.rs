//! Momentum SGD over weights and activation scalars, followed by projection of
//! the constrained activation parameters back into their feasible sets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::activations::ActivationParam;
use crate::error::{Error, Result};
use crate::network::{GradientSet, ParamMut, ParamRole};

pub const DEFAULT_LR: f64 = 0.01;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_BATCH_SIZE: usize = 128;
pub const DEFAULT_PARAM_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_weights: f64,
    pub lr_activation: f64,
    pub momentum: f64,
    pub seed: u64,
    pub sigma_min: f64,
    pub xi_min: f64,
    pub alpha_bounds: [f64; 2],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            batch_size: DEFAULT_BATCH_SIZE,
            lr_weights: DEFAULT_LR,
            lr_activation: DEFAULT_LR / 10.0,
            momentum: DEFAULT_MOMENTUM,
            seed: 0,
            sigma_min: DEFAULT_PARAM_FLOOR,
            xi_min: DEFAULT_PARAM_FLOOR,
            alpha_bounds: [0.0, 1.0],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch size {} is below 2", self.batch_size));
        }
        for (name, v) in [
            ("lr_weights", self.lr_weights),
            ("lr_activation", self.lr_activation),
            ("sigma_min", self.sigma_min),
            ("xi_min", self.xi_min),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        let [lo, hi] = self.alpha_bounds;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return bad(format!("alpha bounds {:?} must satisfy 0 <= lo <= hi <= 1", self.alpha_bounds));
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    fn learning_rate(&self, role: ParamRole) -> f64 {
        match role {
            ParamRole::Weight => self.lr_weights,
            ParamRole::Activation(_) => self.lr_activation,
        }
    }

    fn project(&self, role: ParamRole, v: f64) -> f64 {
        match role {
            ParamRole::Activation(ActivationParam::Sigma) => v.max(self.sigma_min),
            ParamRole::Activation(ActivationParam::Xi) => v.max(self.xi_min),
            ParamRole::Activation(ActivationParam::Alpha) => v.clamp(self.alpha_bounds[0], self.alpha_bounds[1]),
            _ => v,
        }
    }
}

/// Momentum buffers, one per parameter entry. Created lazily on the first step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Velocity {
    buffers: Vec<Vec<f64>>,
}

impl Velocity {
    pub fn buffers(&self) -> &[Vec<f64>] {
        &self.buffers
    }
}

/// `v ← momentum·v − lr·g; p ← p + v`, then projection.
///
/// Every gradient is checked before anything is written, so a non-finite
/// gradient leaves parameters and velocity untouched.
pub fn sgd_step(
    params: &mut [ParamMut<'_>],
    grads: &GradientSet,
    velocity: &mut Velocity,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.entries.len() {
        return Err(Error::ShapeMismatch {
            op: "sgd_step",
            expected: vec![params.len()],
            actual: vec![grads.entries.len()],
        });
    }
    for (p, g) in params.iter().zip(&grads.entries) {
        if p.name != g.name || p.values.len() != g.values.len() {
            return Err(Error::ShapeMismatch {
                op: "sgd_step",
                expected: vec![p.values.len()],
                actual: vec![g.values.len()],
            });
        }
        if g.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(g.name.clone()));
        }
    }
    if velocity.buffers.is_empty() {
        velocity.buffers = params.iter().map(|p| vec![0.0; p.values.len()]).collect();
    }
    for ((p, g), v) in params.iter_mut().zip(&grads.entries).zip(&mut velocity.buffers) {
        let lr = cfg.learning_rate(p.role);
        for ((x, &dx), vel) in p.values.iter_mut().zip(&g.values).zip(v.iter_mut()) {
            *vel = cfg.momentum * *vel - lr * dx;
            *x = cfg.project(p.role, *x + *vel);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ParamGrad;
    use proptest::prelude::*;

    fn one(name: &str, role: ParamRole, g: f64) -> GradientSet {
        GradientSet {
            entries: vec![ParamGrad {
                name: name.into(),
                role,
                values: vec![g],
            }],
        }
    }

    fn step_scalar(p: &mut f64, role: ParamRole, g: f64, v: &mut Velocity, cfg: &TrainConfig) -> Result<()> {
        let mut params = vec![ParamMut {
            name: "p".into(),
            role,
            values: std::slice::from_mut(p),
        }];
        sgd_step(&mut params, &one("p", role, g), v, cfg)
    }

    fn plain(lr: f64) -> TrainConfig {
        TrainConfig {
            lr_weights: lr,
            lr_activation: lr,
            momentum: 0.0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn vanilla_step() {
        let mut p = 1.0;
        step_scalar(&mut p, ParamRole::Weight, 2.0, &mut Velocity::default(), &plain(0.1)).unwrap();
        assert!((p - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sigma_projected_to_floor() {
        let mut p = 0.5;
        let role = ParamRole::Activation(ActivationParam::Sigma);
        step_scalar(&mut p, role, 10.0, &mut Velocity::default(), &plain(0.1)).unwrap();
        assert_eq!(p, DEFAULT_PARAM_FLOOR);
    }

    #[test]
    fn zero_gradient_decays_velocity() {
        let cfg = TrainConfig {
            lr_weights: 0.1,
            momentum: 0.5,
            ..TrainConfig::default()
        };
        let mut p = 1.0;
        let mut v = Velocity::default();
        step_scalar(&mut p, ParamRole::Weight, 0.0, &mut v, &cfg).unwrap();
        assert_eq!(p, 1.0);
        v.buffers[0][0] = -0.2;
        step_scalar(&mut p, ParamRole::Weight, 0.0, &mut v, &cfg).unwrap();
        assert_eq!(v.buffers()[0][0], -0.1);
        assert!((p - 0.9).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = 1.0;
        let err = step_scalar(&mut p, ParamRole::Weight, f64::NAN, &mut Velocity::default(), &plain(0.1)).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "p"));
        assert_eq!(p, 1.0);
    }

    #[test]
    fn activation_rate_is_separate() {
        let cfg = TrainConfig {
            momentum: 0.0,
            ..TrainConfig::default()
        };
        let mut p = 1.0;
        step_scalar(&mut p, ParamRole::Activation(ActivationParam::Mu), 1.0, &mut Velocity::default(), &cfg).unwrap();
        assert!((p - (1.0 - DEFAULT_LR / 10.0)).abs() < 1e-15);
    }

    #[test]
    fn config_validation_and_json() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: 1, ..TrainConfig::default() },
            TrainConfig { lr_weights: f64::INFINITY, ..TrainConfig::default() },
            TrainConfig { momentum: 1.0, ..TrainConfig::default() },
            TrainConfig { alpha_bounds: [0.6, 0.4], ..TrainConfig::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.json");
        let cfg = TrainConfig { seed: 99, lr_activation: 0.003, ..TrainConfig::default() };
        cfg.to_json_file(&path).unwrap();
        assert_eq!(TrainConfig::from_json_file(&path).unwrap(), cfg);
        let partial: TrainConfig = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
        assert_eq!(partial.epochs, 3);
        assert_eq!(partial.batch_size, DEFAULT_BATCH_SIZE);
    }

    proptest! {
        #[test]
        fn projection_holds_after_many_steps(
            grads in proptest::collection::vec(-1e3f64..1e3, 1..40),
            momentum in 0.0f64..0.99,
        ) {
            let cfg = TrainConfig { lr_activation: 0.5, momentum, ..TrainConfig::default() };
            let roles = [ActivationParam::Sigma, ActivationParam::Xi, ActivationParam::Alpha];
            for param in roles {
                let role = ParamRole::Activation(param);
                let mut p = 0.5;
                let mut v = Velocity::default();
                for &g in &grads {
                    step_scalar(&mut p, role, g, &mut v, &cfg).unwrap();
                    match param {
                        ActivationParam::Alpha => prop_assert!((0.0..=1.0).contains(&p)),
                        _ => prop_assert!(p >= DEFAULT_PARAM_FLOOR),
                    }
                }
            }
        }

        #[test]
        fn zero_momentum_is_plain_descent(p0 in -10.0f64..10.0, g in -10.0f64..10.0, lr in 1e-4f64..1.0) {
            let mut p = p0;
            step_scalar(&mut p, ParamRole::Weight, g, &mut Velocity::default(), &plain(lr)).unwrap();
            prop_assert_eq!(p.to_bits(), (p0 - lr * g).to_bits());
        }
    }
}
