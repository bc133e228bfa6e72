//! Drives the installed binary end to end: synthetic data generation,
//! training, evaluation, reporting, and the exit-code contract.

use liser::checkpoint::{read_file, save_student};
use liser::data::load_labeled_manifest;
use liser::model::StudentParams;
use std::path::Path;
use std::process::{Command, Output};

fn liser() -> Command {
    Command::new(env!("CARGO_BIN_EXE_liser"))
}

fn run(cmd: &mut Command) -> (i32, String, String) {
    let Output { status, stdout, stderr } = cmd.output().expect("binary spawns");
    (
        status.code().expect("no signal"),
        String::from_utf8(stdout).expect("stdout is utf-8"),
        String::from_utf8(stderr).expect("stderr is utf-8"),
    )
}

/// Generate a small synthetic dataset and return its manifest path.
fn synth(dir: &Path) -> std::path::PathBuf {
    let data_dir = dir.join("data");
    let (code, _, stderr) = run(liser().args([
        "gen-synth",
        "--output-dir",
        data_dir.to_str().unwrap(),
        "--n-labeled",
        "12",
        "--n-unlabeled",
        "6",
        "--k-s",
        "3",
        "--k-v",
        "2",
        "--seed",
        "7",
    ]));
    assert_eq!(code, 0, "gen-synth failed: {stderr}");
    data_dir.join("labeled.csv")
}

fn train_args(manifest: &Path, out: &Path) -> Vec<String> {
    [
        "train",
        "--labeled-manifest",
        manifest.to_str().unwrap(),
        "--output-dir",
        out.to_str().unwrap(),
        "--configuration",
        "no-dstl",
        "--max-epochs",
        "1",
        "--n-folds",
        "3",
        "--batch-size",
        "4",
        "--labeled-per-batch",
        "4",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[test]
fn synthetic_data_trains_evaluates_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path());
    let run_dir = tmp.path().join("run");

    let mut args = train_args(&manifest, &run_dir);
    args.extend(["--seed".to_string(), "7".to_string()]);
    let (code, stdout, stderr) = run(liser().args(&args));
    assert_eq!(code, 0, "train failed: {stderr}");
    assert!(stdout.contains("mean over 3 folds"), "missing summary line: {stdout}");
    for fold in 0..3 {
        assert!(run_dir.join(format!("fold{fold}/best.lisr")).is_file());
        assert!(run_dir.join(format!("fold{fold}/history.jsonl")).is_file());
    }
    let record: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(record["config"]["seed"], 7);
    assert_eq!(record["format_version"], 1);
    let digest = record["config_digest"].as_str().unwrap();
    assert_eq!(digest.len(), 16, "digest should be 16 hex chars: {digest}");
    assert!(digest.chars().all(|c| c.is_ascii_hexdigit()));

    let checkpoint = run_dir.join("fold0/best.lisr");
    let (code, stdout, stderr) = run(liser().args([
        "eval",
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
    ]));
    assert_eq!(code, 0, "eval failed: {stderr}");
    let report: serde_json::Value = serde_json::from_str(&stdout).expect("eval prints JSON");
    let uar = report["uar"].as_f64().unwrap();
    let war = report["war"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&uar) && (0.0..=1.0).contains(&war));
    assert_eq!(report["confusion"].as_array().unwrap().len(), 3);
    assert_eq!(report["n_items"], 12);

    let rep_dir = tmp.path().join("rep");
    let (code, stdout, stderr) = run(liser().args([
        "report",
        run_dir.to_str().unwrap(),
        "--output-dir",
        rep_dir.to_str().unwrap(),
    ]));
    assert_eq!(code, 0, "report failed: {stderr}");
    assert!(stdout.contains("no-dstl") && stdout.contains("UAR"), "table missing: {stdout}");
    assert!(rep_dir.join("table.txt").is_file());
    assert!(rep_dir.join("report.json").is_file());
}

#[test]
fn distillation_without_teacher_inputs_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path());
    let out = tmp.path().join("run");
    let (code, _, stderr) = run(liser().args([
        "train",
        "--labeled-manifest",
        manifest.to_str().unwrap(),
        "--output-dir",
        out.to_str().unwrap(),
        "--configuration",
        "vid-sp-dstl",
        "--lambda-sd",
        "1",
        "--lambda-vd",
        "1",
    ]));
    assert_eq!(code, 2);
    assert!(stderr.contains("unlabeled_manifest"), "should name the missing input: {stderr}");
    assert!(!out.join("run.json").exists(), "invalid runs should not leave a run record");
}

#[test]
fn usage_errors_and_version_use_reserved_codes() {
    let (code, _, stderr) = run(liser().args(["train", "--no-such-flag"]));
    assert_eq!(code, 1);
    assert!(stderr.contains("--no-such-flag"));
    let (code, stdout, _) = run(liser().arg("--version"));
    assert_eq!(code, 0);
    assert!(stdout.contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn nan_checkpoint_aborts_with_the_divergence_code() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path());
    let dataset = load_labeled_manifest(&manifest).unwrap();

    let mut params = StudentParams::init(dataset.k_s(), 2, 11).unwrap();
    let mut refs = params.trainable_mut();
    let sup = refs.iter_mut().find(|r| r.name == "sup.weight").unwrap();
    sup.tensor.data_mut()[0] = f64::NAN;
    drop(refs);
    let poisoned = tmp.path().join("poisoned.lisr");
    save_student(&poisoned, &params, &dataset.class_names, "0000000000000000").unwrap();

    let out = tmp.path().join("run");
    let mut args = train_args(&manifest, &out);
    args.extend(["--checkpoint".to_string(), poisoned.to_str().unwrap().to_string()]);
    let (code, _, stderr) = run(liser().args(&args));
    assert_eq!(code, 3, "expected the divergence code: {stderr}");
    assert!(stderr.contains("diverged"), "should explain the abort: {stderr}");
}

#[test]
fn env_seed_applies_unless_a_flag_overrides_it() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path());

    let out = tmp.path().join("run-env");
    let (code, _, stderr) =
        run(liser().args(train_args(&manifest, &out)).env("LISER_SEED", "4242"));
    assert_eq!(code, 0, "train failed: {stderr}");
    let record: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(record["config"]["seed"], 4242);

    let out = tmp.path().join("run-flag");
    let mut args = train_args(&manifest, &out);
    args.extend(["--seed".to_string(), "9".to_string()]);
    let (code, _, stderr) = run(liser().args(&args).env("LISER_SEED", "4242"));
    assert_eq!(code, 0, "train failed: {stderr}");
    let record: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(record["config"]["seed"], 9);
}

#[test]
fn featurize_writes_a_readable_container() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path());
    let out = tmp.path().join("features.lisr");
    let (code, stdout, stderr) = run(liser().args([
        "featurize",
        "--manifest",
        manifest.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
    ]));
    assert_eq!(code, 0, "featurize failed: {stderr}");
    assert!(stdout.contains("12 utterances"));

    let ck = read_file(&out).unwrap();
    assert_eq!(ck.header.k_s, 3);
    assert_eq!(ck.header.k_v, 0);
    assert_eq!(ck.header.class_names.len(), 3);
    assert_eq!(ck.blocks.len(), 12);
    for block in &ck.blocks {
        assert_eq!(block.shape[1..], [64, 90]);
        assert_eq!(block.data.len(), block.shape.iter().product::<usize>());
        assert!(block.data.iter().all(|v| v.is_finite()));
    }
}
