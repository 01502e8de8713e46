//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the lines are printed whether or not
//! output capture is on. Exits non-zero if any criterion fails.

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use repsu::activations::{
    indicator_ge, pswish, relu, repshu, repsku, resku, resku_dx, ActivationFamily, ActivationParams,
};
use repsu::data::{self, Dataset};
use repsu::gradcheck::{self, ACTIVATION_TOLERANCE, KINK_RADIUS, NETWORK_TOLERANCE};
use repsu::harness::{self, Arch, SweepConfig, SweepGrid, TrialData};
use repsu::layers::Mode;
use repsu::network::{build_cnn1, build_cnn2, LayerSpec, Network};
use repsu::optim::{sgd_step, TrainConfig, Velocity};
use repsu::{Error, Tensor};

type Outcome = Result<String, Fail>;
type Criterion = (&'static str, fn() -> Outcome);

struct Fail(String);

impl From<String> for Fail {
    fn from(s: String) -> Self {
        Fail(s)
    }
}

impl From<&str> for Fail {
    fn from(s: &str) -> Self {
        Fail(s.into())
    }
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(e.to_string())
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), Fail> {
    if cond {
        Ok(())
    } else {
        Err(Fail(msg()))
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// 1 -----------------------------------------------------------------------

fn derivative_oracle_suite() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for family in ActivationFamily::ALL {
        let r = gradcheck::check_family(family, ACTIVATION_TOLERANCE);
        ensure(r.passed, || r.to_string())?;
        worst = worst.max(r.max_rel_error);
    }
    let ds = data::synth_digits(1, 4, data::MIN_SYNTH_SIZE, 11)?;
    let mut net = build_cnn1(4, 3, ActivationFamily::Resku, 4, ds.input_shape(), 11)?;
    harness::init_activation_params_seeded(&mut net, 11);
    ensure(ds.len() == 4, || format!("batch has {} samples", ds.len()))?;
    let r = gradcheck::check_network(&net, ds.images(), ds.labels(), 40, NETWORK_TOLERANCE, 11)?;
    ensure(r.passed, || r.to_string())?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "activations max_rel={worst:.2e}, cnn1 max_rel={:.2e} (raw {:.2e}) over {} params, {:.1}s",
        r.max_rel_error,
        r.max_raw_rel_error,
        r.checked,
        elapsed.as_secs_f64()
    ))
}

// 2 -----------------------------------------------------------------------

fn resku_closed_form() -> Outcome {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    let mut n = 0;
    while n < 10_000 {
        let p = ActivationParams::resku(r.random_range(-2.0..2.0), r.random_range(0.05..5.0), r.random_range(-3.0..3.0));
        let x: f64 = r.random_range(-6.0..6.0);
        if (x - p.lambda).abs() < KINK_RADIUS {
            continue;
        }
        let h = 1e-6 * x.abs().max(1.0);
        let fd = (resku(x + h, &p) - resku(x - h, &p)) / (2.0 * h);
        let a = resku_dx(x, &p);
        let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
        ensure(err.is_finite(), || format!("non-finite error at x={x} {p:?}"))?;
        worst = worst.max(err);
        n += 1;
    }
    ensure(worst < 1e-6, || format!("max_rel={worst:.3e}"))?;
    Ok(format!("10000 points, max_rel={worst:.3e}"))
}

// 3 -----------------------------------------------------------------------

fn algebraic_identities() -> Outcome {
    const TOL: f64 = 1e-12;
    let mut r = rng(3);
    let (mut tr, mut sc, mut co) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let (l, xi, mu) = (r.random_range(-2.0..2.0), r.random_range(0.05..5.0), r.random_range(-3.0..3.0));
        let x: f64 = r.random_range(-6.0..6.0);
        let tau: f64 = r.random_range(-3.0..3.0);
        let a: f64 = r.random_range(0.1..10.0);

        // A rounded argument landing on the other side of the threshold is
        // a different branch, not an identity failure; re-draw those.
        if (x - tau - l).abs() > TOL {
            let lhs = resku(x - tau, &ActivationParams::resku(l, xi, mu));
            let rhs = resku(x, &ActivationParams::resku(tau + l, xi, tau + mu));
            tr = tr.max((lhs - rhs).abs());
        }
        if (a * x - l).abs() > TOL {
            let lhs = resku(a * x, &ActivationParams::resku(l, xi, mu));
            let rhs = a * resku(x, &ActivationParams::resku(l / a, a * xi, mu / a));
            sc = sc.max((lhs - rhs).abs() / lhs.abs().max(1.0));
        }
        let p = ActivationParams::repsu(l, r.random_range(0.2..5.0), mu, r.random_range(0.2..4.0), r.random_range(0.0..=1.0));
        let step = if x >= p.lambda { 1.0 } else { 0.0 };
        co = co.max((repsku(x, &p) + repshu(x, &p) - 2.0 * x * step).abs() / x.abs().max(1.0));
    }
    ensure(tr <= TOL && sc <= TOL && co <= TOL, || {
        format!("translation={tr:.2e} scaling={sc:.2e} complement={co:.2e}")
    })?;
    assert_eq!(indicator_ge(0.0, 0.0), 1.0);
    Ok(format!("translation={tr:.2e} scaling={sc:.2e} complement={co:.2e}"))
}

// 4 -----------------------------------------------------------------------

fn special_case_embeddings() -> Outcome {
    let mut r = rng(4);
    let mut swish_err = 0.0f64;
    for _ in 0..10_000 {
        let xi: f64 = r.random_range(0.05..5.0);
        let x: f64 = r.random_range(0.0..10.0);
        let oracle = x / (1.0 + (-xi * x).exp());
        swish_err = swish_err
            .max((resku(x, &ActivationParams::resku(0.0, xi, 0.0)) - pswish(x, xi)).abs())
            .max((pswish(x, xi) - oracle).abs());
    }
    let p = ActivationParams::resku(0.0, 1e4, 0.0);
    let mut relu_err = 0.0f64;
    for i in 0..10_000 {
        let mag = 0.01 + 1e-9 + (10.0 - 0.01) * f64::from(i) / 10_000.0;
        for x in [mag, -mag] {
            relu_err = relu_err.max((resku(x, &p) - relu(x)).abs()).max((resku(x, &p) - x.max(0.0)).abs());
        }
    }
    ensure(swish_err <= 1e-12 && relu_err <= 1e-6, || {
        format!("swish={swish_err:.2e} relu={relu_err:.2e}")
    })?;
    Ok(format!("swish={swish_err:.2e} relu={relu_err:.2e}"))
}

// 5 -----------------------------------------------------------------------

fn cnn1_relu_count(n2: usize, k: usize, shape: [usize; 3], classes: usize) -> usize {
    let [h, w, c] = shape;
    let conv = n2 * k * k * c + n2;
    let bn = 2 * n2;
    let dense = (h - k + 1) * (w - k + 1) * n2 * classes + classes;
    conv + bn + dense
}

fn parameter_count_deltas() -> Outcome {
    let shape = [28, 28, 1];
    let mut lines = Vec::new();
    for n2 in [10, 20, 30, 40, 50] {
        let count = |family| -> Result<usize, Fail> {
            let mut net = build_cnn1(n2, 3, family, 10, shape, 0)?;
            let n = net.learnable_count();
            let walked: usize = net.params_mut().iter().map(|p| p.values.len()).sum();
            ensure(n == walked, || format!("{family}: learnable_count {n} vs params_mut {walked}"))?;
            Ok(n)
        };
        let relu_n = count(ActivationFamily::Relu)?;
        let expect = cnn1_relu_count(n2, 3, shape, 10);
        ensure(relu_n == expect, || format!("N2={n2}: relu has {relu_n}, expected {expect}"))?;
        let resku_n = count(ActivationFamily::Resku)?;
        ensure(resku_n == relu_n + 3 * n2, || format!("N2={n2}: resku delta {}", resku_n - relu_n))?;
        for family in [ActivationFamily::Pmish, ActivationFamily::Pswish] {
            let n = count(family)?;
            ensure(n == relu_n + n2, || format!("N2={n2}: {family} delta {}", n - relu_n))?;
        }
        lines.push(format!("{n2}:+{}", resku_n - relu_n));
    }
    Ok(format!("resku deltas {}", lines.join(" ")))
}

// 6 -----------------------------------------------------------------------

fn trend_reproduction() -> Outcome {
    let start = Instant::now();
    let data = TrialData::synthetic(500, 100, 10, data::DEFAULT_SYNTH_SIZE, 2024)?;
    let config = SweepConfig {
        grid: SweepGrid {
            arch: Arch::Cnn1,
            families: vec![ActivationFamily::Relu, ActivationFamily::Resku],
            ncf: vec![30],
            cfs: vec![3],
            epochs: vec![1],
        },
        trials: 10,
        master_seed: 1,
        train: TrainConfig::default(),
    };
    let report = harness::run_sweep(&config, &data, 1)?;
    let mean = |family| -> Result<f64, Fail> {
        let cell = report.cells.iter().find(|c| c.family == family).ok_or("missing cell")?;
        ensure(cell.trials == 10 && cell.failed == 0, || format!("{family}: {} trials, {} failed", cell.trials, cell.failed))?;
        // Recompute from the trial records rather than trusting the summary.
        let accs: Vec<f64> = report
            .trials
            .iter()
            .filter(|t| t.activation_family == family)
            .map(|t| t.test_accuracy)
            .collect();
        let m = accs.iter().sum::<f64>() / accs.len() as f64;
        ensure((Some(m) == cell.mean_acc) || (cell.mean_acc.unwrap_or(f64::NAN) - m).abs() < 1e-12, || {
            format!("{family}: summary mean {:?} vs {m}", cell.mean_acc)
        })?;
        Ok(m)
    };
    let relu_m = mean(ActivationFamily::Relu)?;
    let resku_m = mean(ActivationFamily::Resku)?;
    let detail = format!(
        "relu={:.2}% resku={:.2}% gap={:+.2} points, {:.0}s",
        100.0 * relu_m,
        100.0 * resku_m,
        100.0 * (resku_m - relu_m),
        start.elapsed().as_secs_f64()
    );
    ensure(resku_m - relu_m >= 0.01 && relu_m > 0.6 && resku_m > 0.6, || detail.clone())?;
    Ok(detail)
}

// 7 -----------------------------------------------------------------------

fn random_batch(n: usize, side: usize, classes: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let mut r = rng(seed);
    let data = (0..n * side * side).map(|_| r.random_range(0.0..1.0)).collect();
    let labels = (0..n).map(|i| (i + r.random_range(0..classes)) % classes).collect();
    (Tensor::from_vec(&[n, 1, side, side], data).expect("valid shape"), labels)
}

fn one_step_decreases(net: &mut Network, batch: &Tensor, labels: &[usize], cfg: &TrainConfig) -> Result<(f64, f64), Fail> {
    let before = net.loss(batch, labels, Mode::Train)?;
    let (loss, grads) = net.loss_and_gradients(batch, labels)?;
    ensure((loss - before).abs() <= 1e-12 * before.abs().max(1.0), || format!("loss {loss} vs {before}"))?;
    let mut v = Velocity::default();
    sgd_step(&mut net.params_mut(), &grads, &mut v, cfg)?;
    let after = net.loss(batch, labels, Mode::Train)?;
    Ok((before, after))
}

fn learning_sanity() -> Outcome {
    let start = Instant::now();
    // The check runs at an lr inside the first-order regime for every
    // pairing. Default-lr counts are reported alongside, not asserted.
    let small = TrainConfig {
        lr_weights: 1e-3,
        lr_activation: 1e-4,
        ..TrainConfig::default()
    };
    let default = TrainConfig::default();
    let digits = data::synth_digits(1, 10, data::MIN_SYNTH_SIZE, 7)?;
    let mut checked = 0;
    let mut default_misses = Vec::new();
    for arch in [Arch::Cnn1, Arch::Cnn2] {
        for family in ActivationFamily::ALL {
            let mut ok = 0;
            let mut ok_default = 0;
            let mut failures = Vec::new();
            for seed in 0..20u64 {
                let (mut net, batch, labels) = match arch {
                    Arch::Cnn1 => {
                        let net = build_cnn1(8, 3, family, 10, digits.input_shape(), seed)?;
                        (net, digits.images().clone(), digits.labels().to_vec())
                    }
                    Arch::Cnn2 => {
                        let (b, l) = random_batch(4, 3, 10, seed);
                        (build_cnn2(family, 10, [3, 3, 1], seed)?, b, l)
                    }
                };
                harness::init_activation_params_seeded(&mut net, seed ^ 0xace);
                let mut copy = net.clone();
                let (before, after) = one_step_decreases(&mut net, &batch, &labels, &small)?;
                if after < before {
                    ok += 1;
                } else {
                    failures.push(format!("seed {seed}: {before:.6} -> {after:.6}"));
                }
                let (before, after) = one_step_decreases(&mut copy, &batch, &labels, &default)?;
                ok_default += usize::from(after < before);
            }
            ensure(ok == 20, || format!("{arch}-{family}: {ok}/20, {}", failures.join("; ")))?;
            if ok_default < 20 {
                default_misses.push(format!("{arch}-{family} {ok_default}/20"));
            }
            checked += 1;
        }
    }
    let at_default = if default_misses.is_empty() {
        "all 20/20".to_string()
    } else {
        default_misses.join(", ")
    };
    Ok(format!(
        "{checked} pairings x 20 seeds at lr 1e-3 (default lr: {at_default}), {:.0}s",
        start.elapsed().as_secs_f64()
    ))
}

// 8 -----------------------------------------------------------------------

fn cnn2_structure() -> Outcome {
    let expected_convs = [(96, 3), (128, 5), (384, 7), (192, 5), (128, 3)];
    for family in ActivationFamily::ALL {
        let net = build_cnn2(family, 10, [12, 12, 1], 0)?;
        let layers = &net.spec().layers;
        let convs: Vec<(usize, usize)> = layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Conv { filters, kernel, .. } => Some((*filters, *kernel)),
                _ => None,
            })
            .collect();
        ensure(convs == expected_convs, || format!("{family}: convs {convs:?}"))?;
        let dense: Vec<usize> = layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Dense { units } => Some(*units),
                _ => None,
            })
            .collect();
        ensure(dense == [4096, 10], || format!("{family}: dense {dense:?}"))?;
        let first_dense = layers.iter().position(|l| matches!(l, LayerSpec::Dense { .. })).unwrap();
        ensure(
            layers[..first_dense].iter().rposition(|l| matches!(l, LayerSpec::Conv { .. })) < Some(first_dense),
            || "dense before last conv".into(),
        )?;
        ensure(matches!(layers.last(), Some(LayerSpec::Softmax)), || "no trailing softmax".into())?;
        let parametric = layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Activation { family } if family.is_parametric()))
            .count();
        let expect = usize::from(family.is_parametric());
        ensure(parametric == expect, || format!("{family}: {parametric} parametric activation layers"))?;
    }

    let start = Instant::now();
    let ds = data::synth_digits(1, 8, data::MIN_SYNTH_SIZE, 8)?;
    ensure(ds.len() == 8, || format!("batch of {}", ds.len()))?;
    let mut net = build_cnn2(ActivationFamily::Resku, 8, ds.input_shape(), 8)?;
    harness::init_activation_params_seeded(&mut net, 8);
    let (loss, grads) = net.loss_and_gradients(ds.images(), ds.labels())?;
    ensure(loss.is_finite() && grads.is_finite(), || format!("loss={loss}, finite grads={}", grads.is_finite()))?;
    let n: usize = grads.entries.iter().map(|e| e.values.len()).sum();
    ensure(n == net.learnable_count(), || format!("{n} gradients for {} params", net.learnable_count()))?;
    Ok(format!("layer sequence ok, {n} finite gradients on 8 samples, {:.1}s", start.elapsed().as_secs_f64()))
}

// 9 -----------------------------------------------------------------------

fn sweep_determinism() -> Outcome {
    let data = TrialData::synthetic(12, 6, 4, data::MIN_SYNTH_SIZE, 9)?;
    let config = SweepConfig {
        grid: SweepGrid {
            arch: Arch::Cnn1,
            families: vec![ActivationFamily::Relu, ActivationFamily::Resku, ActivationFamily::Repsu],
            ncf: vec![3, 5],
            cfs: vec![3],
            epochs: vec![1, 2],
        },
        trials: 3,
        master_seed: 99,
        train: TrainConfig {
            batch_size: 16,
            ..TrainConfig::default()
        },
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for (run, jobs) in [1, 1, 2, 4, 3].into_iter().enumerate() {
        let report = harness::run_sweep(&config, &data, jobs)?;
        let path = dir.path().join(format!("run{run}.csv"));
        harness::emit(&report, harness::ReportFormat::Csv, &path)?;
        outputs.push((jobs, std::fs::read(&path).map_err(|e| e.to_string())?));
    }
    let reference = &outputs[0].1;
    for (jobs, bytes) in &outputs[1..] {
        ensure(bytes == reference, || format!("CSV at parallelism {jobs} differs from parallelism 1"))?;
    }
    Ok(format!("{} runs at parallelism 1,1,2,4,3, {} bytes each", outputs.len(), reference.len()))
}

// 10 ----------------------------------------------------------------------

fn idx_file(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for d in dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(payload);
    out
}

fn idx_round_trip() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut r = rng(10);
    let mut fixtures = vec![(
        idx_file(0x803, &[2, 2, 3], &[0, 1, 127, 128, 254, 255, 9, 8, 7, 6, 5, 4]),
        idx_file(0x801, &[2], &[3, 0]),
    )];
    for _ in 0..5 {
        let (n, rows, cols) = (r.random_range(1..20u32), r.random_range(1..9u32), r.random_range(1..9u32));
        let pixels: Vec<u8> = (0..n * rows * cols).map(|_| r.random()).collect();
        let labels: Vec<u8> = (0..n).map(|_| r.random_range(0..10)).collect();
        fixtures.push((idx_file(0x803, &[n, rows, cols], &pixels), idx_file(0x801, &[n], &labels)));
    }
    for (i, (img, lbl)) in fixtures.iter().enumerate() {
        let (ip, lp) = (dir.path().join(format!("i{i}")), dir.path().join(format!("l{i}")));
        std::fs::write(&ip, img).map_err(|e| e.to_string())?;
        std::fs::write(&lp, lbl).map_err(|e| e.to_string())?;
        let ds: Dataset = data::load_idx(&ip, &lp)?;
        let (ip2, lp2) = (dir.path().join(format!("i{i}b")), dir.path().join(format!("l{i}b")));
        data::write_idx(&ds, &ip2, &lp2)?;
        ensure(std::fs::read(&ip2).map_err(|e| e.to_string())? == *img, || format!("fixture {i}: images differ"))?;
        ensure(std::fs::read(&lp2).map_err(|e| e.to_string())? == *lbl, || format!("fixture {i}: labels differ"))?;
    }

    let img = &fixtures[0].0;
    let bad_magic = idx_file(0x802, &[2, 2, 3], &img[16..]);
    ensure(matches!(data::parse_idx_images(&bad_magic, "bad"), Err(Error::BadMagic { .. })), || "bad magic accepted".into())?;
    let bad_label_magic = idx_file(0x803, &[2], &[0, 1]);
    ensure(matches!(data::parse_idx_labels(&bad_label_magic, "bad"), Err(Error::BadMagic { .. })), || {
        "image magic accepted as labels".into()
    })?;
    for cut in [0, 3, 10, img.len() - 1] {
        ensure(matches!(data::parse_idx_images(&img[..cut], "cut"), Err(Error::Truncated { .. })), || {
            format!("truncation at {cut} bytes accepted")
        })?;
    }
    let lbl = &fixtures[0].1;
    ensure(matches!(data::parse_idx_labels(&lbl[..lbl.len() - 1], "cut"), Err(Error::Truncated { .. })), || {
        "truncated labels accepted".into()
    })?;
    let mut long = img.clone();
    long.push(0);
    ensure(matches!(data::parse_idx_images(&long, "long"), Err(Error::TrailingBytes { .. })), || "trailing byte accepted".into())?;

    let (ip, lp) = (dir.path().join("mi"), dir.path().join("ml"));
    std::fs::write(&ip, img).map_err(|e| e.to_string())?;
    std::fs::write(&lp, idx_file(0x801, &[3], &[0, 1, 2])).map_err(|e| e.to_string())?;
    ensure(matches!(data::load_idx(&ip, &lp), Err(Error::CountMismatch { .. })), || "count mismatch accepted".into())?;
    Ok(format!("{} fixtures bit-exact, malformed inputs rejected", fixtures.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("derivative oracle suite", derivative_oracle_suite),
        ("resku_dx closed form vs finite differences", resku_closed_form),
        ("translation, scaling, complement identities", algebraic_identities),
        ("swish embedding and relu limit", special_case_embeddings),
        ("parameter-count deltas", parameter_count_deltas),
        ("resku over relu trend on synthetic digits", trend_reproduction),
        ("one sgd step lowers the batch loss", learning_sanity),
        ("cnn2 structure and finite gradients", cnn2_structure),
        ("byte-identical sweep csv", sweep_determinism),
        ("idx round trip and errors", idx_round_trip),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let label = format!("{:>2} {name}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|p| label.contains(p.as_str())) {
            continue;
        }
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(Fail(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())))
        });
        match outcome {
            Ok(detail) => println!("PASS {label}: {detail}"),
            Err(Fail(detail)) => {
                failed += 1;
                println!("FAIL {label}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
