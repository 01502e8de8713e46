//! Command-line runner for training, Monte Carlo sweeps and derivative checks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use repsu::activations::ActivationFamily;
use repsu::data::{self, DEFAULT_SYNTH_SIZE};
use repsu::gradcheck::{self, ACTIVATION_TOLERANCE, NETWORK_TOLERANCE};
use repsu::harness::{self, Arch, Cell, ReportFormat, SweepConfig, SweepGrid, TrialData};
use repsu::identities;
use repsu::network::{build_cnn1, CNN1_DEFAULT_FILTERS, CNN2_FIRST_FILTERS};
use repsu::optim::TrainConfig;
use repsu::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_CHECK_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "repsu", version, about = "Trainable rectified power sigmoid activations in small CNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one network.
    Train(TrainArgs),
    /// Run repeated trials over a grid of activations, filter counts, kernel sizes and epochs.
    Sweep(SweepArgs),
    /// Compare analytic derivatives with finite differences.
    Gradcheck(GradcheckArgs),
    /// Check translation, scaling and complement identities on random parameters.
    Identities(IdentitiesArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Use generated seven-segment digits instead of IDX files.
    #[arg(long)]
    synthetic: bool,
    #[arg(long)]
    train_images: Option<PathBuf>,
    #[arg(long)]
    train_labels: Option<PathBuf>,
    #[arg(long)]
    test_images: Option<PathBuf>,
    #[arg(long)]
    test_labels: Option<PathBuf>,
    /// Synthetic training samples per class.
    #[arg(long, default_value_t = 500)]
    train_per_class: usize,
    /// Synthetic test samples per class.
    #[arg(long, default_value_t = 100)]
    test_per_class: usize,
    /// Synthetic class count.
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Synthetic image side length.
    #[arg(long, default_value_t = DEFAULT_SYNTH_SIZE)]
    image_size: usize,
    /// Seed of the synthetic generator.
    #[arg(long, default_value_t = 2024)]
    data_seed: u64,
}

impl DataArgs {
    fn load(&self) -> repsu::Result<TrialData> {
        let paths = [&self.train_images, &self.train_labels, &self.test_images, &self.test_labels];
        let given = paths.iter().filter(|p| p.is_some()).count();
        match (self.synthetic, given) {
            (_, 0) => TrialData::synthetic(
                self.train_per_class,
                self.test_per_class,
                self.classes,
                self.image_size,
                self.data_seed,
            ),
            (false, 4) => {
                let p = |o: &Option<PathBuf>| o.clone().expect("checked above");
                let train = data::load_idx(&p(&self.train_images), &p(&self.train_labels))?;
                let test = data::load_idx(&p(&self.test_images), &p(&self.test_labels))?;
                let classes = train.num_classes().max(test.num_classes());
                let relabel = |ds: data::Dataset| data::Dataset::new(ds.images().clone(), ds.labels().to_vec(), classes);
                TrialData::new(relabel(train)?, relabel(test)?)
            }
            (true, _) => Err(Error::Config("--synthetic cannot be combined with IDX paths".into())),
            _ => Err(Error::Config(
                "IDX input needs all of --train-images, --train-labels, --test-images, --test-labels".into(),
            )),
        }
    }
}

#[derive(Args)]
struct OptimArgs {
    /// JSON training config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    /// Learning rate of activation parameters (default: lr / 10).
    #[arg(long)]
    lr_act: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    sigma_min: Option<f64>,
    #[arg(long)]
    xi_min: Option<f64>,
}

impl OptimArgs {
    fn config(&self) -> repsu::Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::from_json_file(path)?,
            None => TrainConfig::default(),
        };
        if let Some(lr) = self.lr {
            cfg.lr_weights = lr;
            if self.lr_act.is_none() && self.config.is_none() {
                cfg.lr_activation = lr / 10.0;
            }
        }
        if let Some(v) = self.lr_act {
            cfg.lr_activation = v;
        }
        if let Some(v) = self.momentum {
            cfg.momentum = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.sigma_min {
            cfg.sigma_min = v;
        }
        if let Some(v) = self.xi_min {
            cfg.xi_min = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = "cnn1")]
    arch: Arch,
    #[arg(long, default_value = "resku")]
    activation: ActivationFamily,
    /// Number of convolution filters (CNN-1 only).
    #[arg(long, default_value_t = CNN1_DEFAULT_FILTERS)]
    ncf: usize,
    /// Convolution filter size (CNN-1 only).
    #[arg(long, default_value_t = 3)]
    cfs: usize,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving spec.json, weights.bin and report.json.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    optim: OptimArgs,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value = "cnn1")]
    arch: Arch,
    /// Comma-separated activation families.
    #[arg(long, value_delimiter = ',', default_value = "relu,resku")]
    activation: Vec<ActivationFamily>,
    #[arg(long, value_delimiter = ',')]
    ncf: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    cfs: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    epochs: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Master seed from which every trial seed is derived.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
    /// Report path; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    optim: OptimArgs,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Families to check (default: all).
    #[arg(long, value_delimiter = ',')]
    activation: Vec<ActivationFamily>,
    #[arg(long, default_value_t = ACTIVATION_TOLERANCE)]
    tol: f64,
    #[arg(long, default_value_t = NETWORK_TOLERANCE)]
    network_tol: f64,
    /// Parameters sampled in the end-to-end network check.
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct IdentitiesArgs {
    /// Random parameterizations per identity.
    #[arg(long, default_value_t = 10_000)]
    cases: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn exit_code(err: &Error) -> ExitCode {
    match err {
        Error::NonFinite(_) | Error::NonFiniteGradient(_) | Error::DegenerateBatch(_) => ExitCode::FAILURE,
        _ => ExitCode::from(EXIT_CONFIG),
    }
}

fn write_or_print(path: Option<&Path>, text: &str) -> repsu::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|source| Error::Io {
            path: p.to_path_buf(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn train(args: &TrainArgs) -> repsu::Result<ExitCode> {
    let data = args.data.load()?;
    let cfg = args.optim.config()?;
    let cell = Cell {
        arch: args.arch,
        family: args.activation,
        ncf: args.ncf,
        cfs: args.cfs,
        epochs: args.epochs,
    };
    let (report, net) = harness::run_trial_with_network(cell, 0, args.seed, &data, &cfg)?;
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(dir) = &args.out {
        net.save(dir)?;
        write_or_print(Some(&dir.join("report.json")), &json)?;
    }
    println!("{json}");
    Ok(if report.failure.is_some() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}

fn sweep(args: &SweepArgs) -> repsu::Result<ExitCode> {
    let data = args.data.load()?;
    let (default_ncf, default_cfs) = match args.arch {
        Arch::Cnn1 => (CNN1_DEFAULT_FILTERS, 3),
        Arch::Cnn2 => (CNN2_FIRST_FILTERS, 3),
    };
    let or_default = |v: &Vec<usize>, d: usize| if v.is_empty() { vec![d] } else { v.clone() };
    let config = SweepConfig {
        grid: SweepGrid {
            arch: args.arch,
            families: args.activation.clone(),
            ncf: or_default(&args.ncf, default_ncf),
            cfs: or_default(&args.cfs, default_cfs),
            epochs: args.epochs.clone(),
        },
        trials: args.trials,
        master_seed: args.seed,
        train: args.optim.config()?,
    };
    let report = harness::run_sweep(&config, &data, args.jobs)?;
    let text = match args.format {
        ReportFormat::Csv => harness::to_csv(&report),
        ReportFormat::Json => harness::to_json(&report)?,
    };
    write_or_print(args.out.as_deref(), &text)?;
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(args: &GradcheckArgs) -> repsu::Result<ExitCode> {
    let families = if args.activation.is_empty() {
        ActivationFamily::ALL.to_vec()
    } else {
        args.activation.clone()
    };
    let mut ok = true;
    for family in families {
        let r = gradcheck::check_family(family, args.tol);
        ok &= r.passed;
        println!("{r}");
    }
    let ds = data::synth_digits(1, 4, data::MIN_SYNTH_SIZE, args.seed)?;
    let mut net = build_cnn1(4, 3, ActivationFamily::Resku, 4, ds.input_shape(), args.seed)?;
    harness::init_activation_params_seeded(&mut net, args.seed);
    let mut r = gradcheck::check_network(&net, ds.images(), ds.labels(), args.samples, args.network_tol, args.seed)?;
    r.name = "cnn1-resku".into();
    ok &= r.passed;
    println!("{r}");
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(EXIT_CHECK_FAILED) })
}

fn identities(args: &IdentitiesArgs) -> repsu::Result<ExitCode> {
    let mut ok = true;
    for r in identities::run_all(args.cases, args.seed) {
        ok &= r.passed;
        println!("{r}");
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(EXIT_CHECK_FAILED) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => train(a),
        Command::Sweep(a) => sweep(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Identities(a) => identities(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
