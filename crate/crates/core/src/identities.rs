//! Randomized checks of the algebraic identities of the ReSKU and RePSU
//! families, as run by the `identities` subcommand.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::activations::{indicator_ge, pswish, relu, repshu, repsku, resku, ActivationParams};

pub const IDENTITY_TOLERANCE: f64 = 1e-12;
pub const RELU_LIMIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    pub name: &'static str,
    pub cases: usize,
    /// Cases skipped because a rounded argument fell on the threshold.
    pub skipped: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl fmt::Display for IdentityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} max_error={:.3e} tol={:.0e} cases={} skipped={}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.max_error,
            self.tolerance,
            self.cases,
            self.skipped
        )
    }
}

struct Tally {
    name: &'static str,
    tolerance: f64,
    cases: usize,
    skipped: usize,
    max_error: f64,
}

impl Tally {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            tolerance,
            cases: 0,
            skipped: 0,
            max_error: 0.0,
        }
    }

    fn add(&mut self, err: f64) {
        self.cases += 1;
        if err.is_nan() || err > self.max_error {
            self.max_error = err;
        }
    }

    fn skip(&mut self) {
        self.skipped += 1;
    }

    fn finish(self) -> IdentityReport {
        IdentityReport {
            name: self.name,
            cases: self.cases,
            skipped: self.skipped,
            max_error: self.max_error,
            tolerance: self.tolerance,
            passed: self.max_error <= self.tolerance,
        }
    }
}

fn resku_params(rng: &mut impl Rng) -> (f64, f64, f64) {
    (rng.random_range(-2.0..2.0), rng.random_range(0.05..5.0), rng.random_range(-3.0..3.0))
}

/// `resku(x - τ; λ, ξ, μ) = resku(x; τ + λ, ξ, τ + μ)`, absolute error.
pub fn translation(n: usize, seed: u64) -> IdentityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new("translation", IDENTITY_TOLERANCE);
    for _ in 0..n {
        let (l, xi, mu) = resku_params(&mut rng);
        let x = rng.random_range(-6.0..6.0);
        let tau = rng.random_range(-3.0..3.0);
        if (x - tau - l).abs() < IDENTITY_TOLERANCE {
            t.skip();
            continue;
        }
        let lhs = resku(x - tau, &ActivationParams::resku(l, xi, mu));
        let rhs = resku(x, &ActivationParams::resku(tau + l, xi, tau + mu));
        t.add((lhs - rhs).abs());
    }
    t.finish()
}

/// `resku(a·x; λ, ξ, μ) = a·resku(x; λ/a, a·ξ, μ/a)`, relative error.
pub fn scaling(n: usize, seed: u64) -> IdentityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new("scaling", IDENTITY_TOLERANCE);
    for _ in 0..n {
        let (l, xi, mu) = resku_params(&mut rng);
        let x = rng.random_range(-6.0..6.0);
        let a = rng.random_range(0.1..10.0);
        if (a * x - l).abs() < IDENTITY_TOLERANCE {
            t.skip();
            continue;
        }
        let lhs = resku(a * x, &ActivationParams::resku(l, xi, mu));
        let rhs = a * resku(x, &ActivationParams::resku(l / a, a * xi, mu / a));
        t.add((lhs - rhs).abs() / lhs.abs().max(1.0));
    }
    t.finish()
}

/// `repsku(x) + repshu(x) = 2x·1[x ≥ λ]`.
pub fn complement(n: usize, seed: u64) -> IdentityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new("complement", IDENTITY_TOLERANCE);
    for _ in 0..n {
        let p = ActivationParams::repsu(
            rng.random_range(-2.0..2.0),
            rng.random_range(0.05..5.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(0.2..4.0),
            rng.random_range(0.0..=1.0),
        );
        let x = rng.random_range(-6.0..6.0);
        let sum = repsku(x, &p) + repshu(x, &p);
        t.add((sum - 2.0 * x * indicator_ge(x, p.lambda)).abs() / x.abs().max(1.0));
    }
    t.finish()
}

/// `resku(x; 0, ξ, 0) = pswish(x, ξ)` for `x ≥ 0`.
pub fn swish_embedding(n: usize, seed: u64) -> IdentityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new("swish-embedding", IDENTITY_TOLERANCE);
    for _ in 0..n {
        let xi = rng.random_range(0.05..5.0);
        let x = rng.random_range(0.0..10.0);
        let a = resku(x, &ActivationParams::resku(0.0, xi, 0.0));
        t.add((a - pswish(x, xi)).abs());
    }
    t.finish()
}

/// `resku(x; 0, 10⁴, 0)` against ReLU for `0.01 < |x| < 10`.
pub fn relu_limit(n: usize, seed: u64) -> IdentityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new("relu-limit", RELU_LIMIT_TOLERANCE);
    let p = ActivationParams::resku(0.0, 1e4, 0.0);
    for _ in 0..n {
        let x: f64 = rng.random_range(0.01..10.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        t.add((resku(x, &p) - relu(x)).abs());
    }
    t.finish()
}

/// Every identity with `n` random cases each.
pub fn run_all(n: usize, seed: u64) -> Vec<IdentityReport> {
    vec![
        translation(n, seed),
        scaling(n, seed.wrapping_add(1)),
        complement(n, seed.wrapping_add(2)),
        swish_embedding(n, seed.wrapping_add(3)),
        relu_limit(n, seed.wrapping_add(4)),
    ]
}
