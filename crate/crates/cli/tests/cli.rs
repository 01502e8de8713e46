use std::path::Path;
use std::process::{Command, Output};

fn repsu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_repsu"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

const SMALL_DATA: &[&str] = &[
    "--train-per-class",
    "6",
    "--test-per-class",
    "3",
    "--classes",
    "3",
    "--image-size",
    "12",
];

fn sweep_args<'a>(out: &'a str, jobs: &'a str) -> Vec<&'a str> {
    let mut args = vec![
        "sweep",
        "--activation",
        "relu,resku,pswish",
        "--ncf",
        "2,4",
        "--cfs",
        "3",
        "--epochs",
        "1,2",
        "--trials",
        "2",
        "--seed",
        "5",
        "--batch-size",
        "8",
        "--jobs",
        jobs,
        "--out",
        out,
    ];
    args.extend_from_slice(SMALL_DATA);
    args
}

#[test]
fn sweep_csv_is_identical_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for jobs in ["1", "4", "1"] {
        let path = dir.path().join(format!("sweep{}.csv", outputs.len()));
        let out = repsu(&sweep_args(path.to_str().unwrap(), jobs));
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
    let text = String::from_utf8(outputs[0].clone()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("family,ncf,cfs,epochs,trials,mean_acc,sd_acc"));
    assert_eq!(lines.count(), 3 * 2 * 2);
}

#[test]
fn sweep_json_parses() {
    let mut args = vec!["sweep", "--activation", "resku", "--ncf", "2", "--trials", "2", "--format", "json"];
    args.extend_from_slice(SMALL_DATA);
    let out = repsu(&args);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["trials"].as_array().unwrap().len(), 2);
    assert_eq!(v["cells"][0]["family"], "resku");
}

fn assert_file(dir: &Path, name: &str) {
    assert!(dir.join(name).is_file(), "{name} missing");
}

#[test]
fn train_writes_network_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let mut args = vec!["train", "--activation", "pmish", "--ncf", "3", "--seed", "1", "--out", out_dir.to_str().unwrap()];
    args.extend_from_slice(SMALL_DATA);
    let out = repsu(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["spec.json", "weights.bin", "report.json"] {
        assert_file(&out_dir, f);
    }
    let printed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let saved: serde_json::Value = serde_json::from_slice(&std::fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(printed, saved);
    assert_eq!(saved["activation_family"], "pmish");
    let acc = saved["test_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn config_errors_exit_2() {
    let cases: &[&[&str]] = &[
        &["train", "--epochs", "0"],
        &["train", "--activation", "nope"],
        &["train", "--lr", "-1"],
        &["train", "--train-images", "a"],
        &["train", "--synthetic", "--train-images", "a", "--train-labels", "b", "--test-images", "c", "--test-labels", "d"],
        &["sweep", "--ncf", "0"],
        &["sweep", "--trials", "0"],
        &["bogus"],
    ];
    for args in cases {
        let out = repsu(args);
        assert_eq!(code(&out), 2, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn missing_idx_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    let (a, b, c, d) = (p("a"), p("b"), p("c"), p("d"));
    let out = repsu(&["train", "--train-images", &a, "--train-labels", &b, "--test-images", &c, "--test-labels", &d]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn gradcheck_passes_and_fails_on_tolerance() {
    let out = repsu(&["gradcheck", "--activation", "resku,pswish", "--samples", "5"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().all(|l| l.starts_with("PASS ")));

    // pmish has a nonzero (roundoff-level) error on its grid, so a tolerance
    // below it must fail.
    let out = repsu(&["gradcheck", "--activation", "pmish", "--tol", "1e-14", "--samples", "5"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8(out.stdout).unwrap().contains("FAIL pmish"));
}

#[test]
fn identities_pass() {
    let out = repsu(&["identities", "--cases", "500", "--seed", "4"]);
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().filter(|l| l.starts_with("PASS")).count(), 5);
}
