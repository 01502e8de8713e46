//! Monte Carlo experiments: independent train/test trials over a grid of
//! activation families, filter counts, kernel sizes and epoch counts.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::activations::{ActivationFamily, ActivationParam};
use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::network::{build_cnn1, build_cnn2, Network};
use crate::optim::{sgd_step, TrainConfig, Velocity};

/// Support of the uniform law for positive activation scalars (`σ`, `ξ`).
pub const SCALE_INIT: (f64, f64) = (0.25, 1.75);
/// Support of the uniform law for the mixing weight `α`.
pub const ALPHA_INIT: (f64, f64) = (0.25, 0.75);
/// Support of the uniform law for the shift `μ`.
pub const SHIFT_INIT: (f64, f64) = (0.0, 2.0);

/// Samples evaluated per inference call.
const EVAL_CHUNK: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Cnn1,
    Cnn2,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Cnn1 => "cnn1",
            Arch::Cnn2 => "cnn2",
        }
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cnn1" => Ok(Arch::Cnn1),
            "cnn2" => Ok(Arch::Cnn2),
            _ => Err(Error::Config(format!("unknown architecture `{s}` (expected cnn1 or cnn2)"))),
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One grid cell: which network to train and for how long.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub arch: Arch,
    pub family: ActivationFamily,
    pub ncf: usize,
    pub cfs: usize,
    pub epochs: usize,
}

impl Cell {
    /// Builds the cell's network. CNN-2 ignores `ncf` and `cfs`.
    pub fn build(&self, num_classes: usize, input_shape: [usize; 3], seed: u64) -> Result<Network> {
        match self.arch {
            Arch::Cnn1 => build_cnn1(self.ncf, self.cfs, self.family, num_classes, input_shape, seed),
            Arch::Cnn2 => build_cnn2(self.family, num_classes, input_shape, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial_index: usize,
    pub seed: u64,
    pub activation_family: ActivationFamily,
    pub ncf: usize,
    pub cfs: usize,
    pub epochs: usize,
    pub test_accuracy: f64,
    /// Mean batch loss of the last epoch; absent when the trial failed.
    pub final_train_loss: Option<f64>,
    pub wall_time_s: f64,
    /// Set when training diverged; such trials are left out of cell statistics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Train and test sets shared read-only by every trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialData {
    pub train: Dataset,
    pub test: Dataset,
}

impl TrialData {
    pub fn new(train: Dataset, test: Dataset) -> Result<Self> {
        if train.input_shape() != test.input_shape() {
            return Err(Error::Config(format!(
                "train images {:?} and test images {:?} differ in shape",
                train.input_shape(),
                test.input_shape()
            )));
        }
        if train.num_classes() != test.num_classes() {
            return Err(Error::Config(format!(
                "train set has {} classes, test set {}",
                train.num_classes(),
                test.num_classes()
            )));
        }
        Ok(Self { train, test })
    }

    /// Synthetic digits with `train_per_class` and `test_per_class` samples of
    /// each class, drawn from one generator run and split by class.
    pub fn synthetic(train_per_class: usize, test_per_class: usize, num_classes: usize, size: usize, seed: u64) -> Result<Self> {
        let total = train_per_class + test_per_class;
        let all = data::synth_digits(total, num_classes, size, seed)?;
        let (train, test) = data::split(&all, train_per_class as f64 / total as f64, seed ^ 0x5eed)?;
        Self::new(train, test)
    }
}

/// Deterministic per-trial seed from everything that identifies the trial.
pub fn trial_seed(master_seed: u64, family: ActivationFamily, ncf: usize, cfs: usize, epochs: usize, trial_index: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update(family.name().as_bytes());
    for v in [ncf, cfs, epochs, trial_index] {
        h.update((v as u64).to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Draws positive activation scalars: `σ` and `ξ` from [`SCALE_INIT`], `α`
/// from [`ALPHA_INIT`], `μ` from [`SHIFT_INIT`]; `λ` starts at 0 and `β` at 1.
/// Only families with learnable parameters are touched.
pub fn init_activation_params(net: &mut Network, rng: &mut impl Rng) {
    for layer in net.activation_layers_mut() {
        for spec in &mut layer.specs {
            if !spec.family.is_parametric() {
                continue;
            }
            for &param in spec.family.learnable() {
                let v = param.value_mut(&mut spec.params);
                *v = match param {
                    ActivationParam::Lambda => 0.0,
                    ActivationParam::Mu => rng.random_range(SHIFT_INIT.0..=SHIFT_INIT.1),
                    ActivationParam::Alpha => rng.random_range(ALPHA_INIT.0..=ALPHA_INIT.1),
                    ActivationParam::Sigma | ActivationParam::Xi => rng.random_range(SCALE_INIT.0..=SCALE_INIT.1),
                };
            }
        }
    }
}

/// [`init_activation_params`] driven by a fresh generator seeded with `seed`.
pub fn init_activation_params_seeded(net: &mut Network, seed: u64) {
    init_activation_params(net, &mut ChaCha8Rng::seed_from_u64(seed));
}

/// Fraction of `ds` that `net` classifies correctly.
pub fn accuracy(net: &Network, ds: &Dataset) -> Result<f64> {
    let mut correct = 0;
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, y) = ds.gather(chunk);
        let pred = net.predict(&x)?;
        correct += pred.iter().zip(&y).filter(|(p, t)| p == t).count();
    }
    Ok(correct as f64 / ds.len().max(1) as f64)
}

/// Trains `net` in place. Returns the mean batch loss of the last epoch.
pub fn train(net: &mut Network, train: &Dataset, cfg: &TrainConfig, shuffle_seed: u64) -> Result<f64> {
    cfg.validate()?;
    let mut velocity = Velocity::default();
    let mut last = f64::NAN;
    for epoch in 0..cfg.epochs {
        let (mut total, mut count) = (0.0, 0usize);
        for (x, y) in data::batches(train, cfg.batch_size, shuffle_seed.wrapping_add(epoch as u64))? {
            let (loss, grads) = net.loss_and_gradients(&x, &y)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss {loss} in epoch {}", epoch + 1)));
            }
            sgd_step(&mut net.params_mut(), &grads, &mut velocity, cfg)?;
            total += loss;
            count += 1;
        }
        last = total / count.max(1) as f64;
    }
    Ok(last)
}

/// One independent train/test run. Divergence is reported in
/// [`TrialReport::failure`] rather than returned as an error; configuration
/// problems are errors.
pub fn run_trial(cell: Cell, trial_index: usize, seed: u64, data: &TrialData, train_cfg: &TrainConfig) -> Result<TrialReport> {
    Ok(run_trial_with_network(cell, trial_index, seed, data, train_cfg)?.0)
}

/// [`run_trial`] that also hands back the trained network.
pub fn run_trial_with_network(
    cell: Cell,
    trial_index: usize,
    seed: u64,
    data: &TrialData,
    train_cfg: &TrainConfig,
) -> Result<(TrialReport, Network)> {
    let cfg = TrainConfig {
        epochs: cell.epochs,
        seed,
        ..train_cfg.clone()
    };
    cfg.validate()?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (init_seed, shuffle_seed) = (rng.random::<u64>(), rng.random::<u64>());
    let mut net = cell.build(data.train.num_classes(), data.train.input_shape(), init_seed)?;
    init_activation_params(&mut net, &mut rng);

    let mut report = TrialReport {
        trial_index,
        seed,
        activation_family: cell.family,
        ncf: cell.ncf,
        cfs: cell.cfs,
        epochs: cell.epochs,
        test_accuracy: 0.0,
        final_train_loss: None,
        wall_time_s: 0.0,
        failure: None,
    };
    match train(&mut net, &data.train, &cfg, shuffle_seed) {
        Ok(loss) => {
            report.final_train_loss = Some(loss);
            report.test_accuracy = accuracy(&net, &data.test)?;
        }
        Err(e @ (Error::NonFinite(_) | Error::NonFiniteGradient(_))) => report.failure = Some(e.to_string()),
        Err(e) => return Err(e),
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok((report, net))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub arch: Arch,
    pub families: Vec<ActivationFamily>,
    pub ncf: Vec<usize>,
    pub cfs: Vec<usize>,
    pub epochs: Vec<usize>,
}

impl SweepGrid {
    /// Cells ordered by family, then filter count, kernel size and epochs.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &family in &self.families {
            for &ncf in &self.ncf {
                for &cfs in &self.cfs {
                    for &epochs in &self.epochs {
                        out.push(Cell {
                            arch: self.arch,
                            family,
                            ncf,
                            cfs,
                            epochs,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub grid: SweepGrid,
    pub trials: usize,
    pub master_seed: u64,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub family: ActivationFamily,
    pub ncf: usize,
    pub cfs: usize,
    pub epochs: usize,
    /// Trials that finished; failed ones are counted separately.
    pub trials: usize,
    pub failed: usize,
    pub mean_acc: Option<f64>,
    pub sd_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub config: SweepConfig,
    pub cells: Vec<CellSummary>,
    pub trials: Vec<TrialReport>,
}

/// Mean and sample standard deviation. The deviation needs two values.
pub fn mean_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (None, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (Some(mean), Some(var.sqrt()))
}

pub fn summarize(cell: &Cell, trials: &[TrialReport]) -> CellSummary {
    let ok: Vec<f64> = trials.iter().filter(|t| t.failure.is_none()).map(|t| t.test_accuracy).collect();
    let (mean_acc, sd_acc) = mean_sd(&ok);
    CellSummary {
        family: cell.family,
        ncf: cell.ncf,
        cfs: cell.cfs,
        epochs: cell.epochs,
        trials: ok.len(),
        failed: trials.len() - ok.len(),
        mean_acc,
        sd_acc,
    }
}

/// Runs every cell × trial on a pool of `parallelism` threads. The report is
/// ordered by cell then trial index whatever order the work finishes in.
pub fn run_sweep(config: &SweepConfig, data: &TrialData, parallelism: usize) -> Result<MonteCarloReport> {
    if config.trials == 0 {
        return Err(Error::Config("a sweep needs at least one trial".into()));
    }
    config.train.validate()?;
    let cells = config.grid.cells();
    if cells.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let work: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..config.trials).map(move |t| (c, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<TrialReport>> = pool.install(|| {
        work.par_iter()
            .map(|&(c, t)| {
                let cell = cells[c];
                let seed = trial_seed(config.master_seed, cell.family, cell.ncf, cell.cfs, cell.epochs, t);
                run_trial(cell, t, seed, data, &config.train)
            })
            .collect()
    });
    let trials = results.into_iter().collect::<Result<Vec<_>>>()?;
    let summaries = cells
        .iter()
        .zip(trials.chunks(config.trials))
        .map(|(cell, ts)| summarize(cell, ts))
        .collect();
    Ok(MonteCarloReport {
        config: config.clone(),
        cells: summaries,
        trials,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(Error::Config(format!("unknown report format `{s}` (expected csv or json)"))),
        }
    }
}

pub const CSV_HEADER: &str = "family,ncf,cfs,epochs,trials,mean_acc,sd_acc";

/// `printf("%g")`: six significant digits, trailing zeros removed.
pub fn format_g(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific notation");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa), exp.abs())
    } else {
        let decimals = (5 - exp).max(0) as usize;
        trim(&format!("{v:.decimals$}"))
    }
}

pub fn to_csv(report: &MonteCarloReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    let opt = |v: Option<f64>| v.map(format_g).unwrap_or_default();
    for c in &report.cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            c.family,
            c.ncf,
            c.cfs,
            c.epochs,
            c.trials,
            opt(c.mean_acc),
            opt(c.sd_acc)
        );
    }
    out
}

/// JSON keeps full float precision so that it parses back to an equal report.
pub fn to_json(report: &MonteCarloReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

pub fn emit(report: &MonteCarloReport, format: ReportFormat, path: &Path) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => to_csv(report),
        ReportFormat::Json => to_json(report)?,
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
