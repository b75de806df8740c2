use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn eegbench(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eegbench"))
        .args(args)
        .current_dir(cwd)
        .env_remove("EEGBENCH_JOBS_ROOT")
        .output()
        .expect("run eegbench")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn generate_tiny(dir: &Path) -> Output {
    eegbench(
        &[
            "dataset", "generate", "--out", "tiny", "--name", "tiny", "--subjects", "3", "--trials-per-class", "6",
            "--channels", "4", "--timepoints", "64", "--fs", "64", "--classes", "2", "--snr", "4", "--seed", "3",
        ],
        dir,
    )
}

#[test]
fn generate_then_validate() {
    let tmp = TempDir::new().unwrap();
    let out = generate_tiny(tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("3 subjects, 6 sessions, 72 trials"));

    let out = eegbench(&["dataset", "validate", "tiny"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(summary["trials"], 72);
    assert_eq!(summary["channels"], 4);

    // a single epoch directory validates on its own
    let out = eegbench(&["dataset", "validate", "tiny/sub-1/ses-2"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn corrupted_payload_exits_with_validation_code() {
    let tmp = TempDir::new().unwrap();
    generate_tiny(tmp.path());
    let data = tmp.path().join("tiny/sub-2/ses-1/data.bin");
    let bytes = fs::read(&data).unwrap();
    fs::write(&data, &bytes[..bytes.len() - 4]).unwrap();
    let out = eegbench(&["dataset", "validate", "tiny"], tmp.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    fs::remove_file(tmp.path().join("tiny/sub-3/ses-2/labels.bin")).unwrap();
    let out = eegbench(&["dataset", "validate", "tiny/sub-3/ses-2"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(eegbench(&["frobnicate"], tmp.path()).status.code(), Some(1));
    assert_eq!(eegbench(&["train", "--model", "sccnet"], tmp.path()).status.code(), Some(1));
    let out = eegbench(&["train", "--model", "resnet", "--scheme", "si", "--subject", "1"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown model"));
    assert_eq!(eegbench(&["--help"], tmp.path()).status.code(), Some(0));
}

#[test]
fn train_evaluate_interpret_pipeline() {
    let tmp = TempDir::new().unwrap();
    generate_tiny(tmp.path());
    let out = eegbench(
        &[
            "train", "--data", "tiny", "--model", "sccnet", "--scheme", "individual", "--subject", "1", "--epochs", "5",
            "--batch-size", "8", "--lr", "0.01", "--repeats", "2", "--seed", "4", "--out", "runs",
        ],
        tmp.path(),
    );
    let text = stdout(&out);
    assert_eq!(out.status.code(), Some(0), "{text}\n{}", String::from_utf8_lossy(&out.stderr));
    assert!(text.contains("seed 4: accuracy"));
    assert!(text.contains("seed 5: accuracy"));
    let row = text.lines().find(|l| l.starts_with("sccnet") && l.contains("individual")).unwrap();
    assert!(row.contains(" ± "), "{row}");
    let cost = text.lines().rev().find(|l| l.starts_with("sccnet")).unwrap();
    let cols: Vec<&str> = cost.split_whitespace().collect();
    assert_eq!(cols.len(), 4, "{cost}");
    assert!(cols[2].parse::<usize>().unwrap() > 0);

    let run = tmp.path().join("runs/seed-4");
    for file in ["checkpoint/manifest.json", "history.jsonl", "metrics.json", "predictions.csv", "interpret/temporal.png"] {
        assert!(run.join(file).exists(), "{file}");
    }

    let out = eegbench(
        &["evaluate", "--data", "tiny", "--checkpoint", "runs/seed-4/checkpoint", "--subject", "1", "--csv", "eval.csv"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("over 12 trials"));
    assert_eq!(
        fs::read_to_string(tmp.path().join("eval.csv")).unwrap(),
        fs::read_to_string(run.join("predictions.csv")).unwrap()
    );

    fs::remove_dir_all(run.join("interpret")).unwrap();
    let out = eegbench(&["interpret", "--job", "runs/seed-4", "--kernel", "0"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("interpret/spatial_0.png").exists());
    assert!(run.join("interpret/spatial_0.json").exists());
    let out = eegbench(&["interpret", "--job", "seed-4", "--jobs-root", "runs", "--temporal"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(run.join("interpret/temporal.json").exists());
    let out = eegbench(&["interpret", "--job", "runs/seed-4", "--kernel", "9"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let out = eegbench(&["interpret", "--job", "nope", "--kernel", "0"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn models_prints_counts_beside_reference() {
    let tmp = TempDir::new().unwrap();
    let out = eegbench(&["models"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split_whitespace().collect()).collect();
    assert_eq!(
        rows,
        vec![vec!["eegnet", "2548", "2548"], vec!["shallowconvnet", "41284", "47644"], vec!["sccnet", "9254", "9254"]]
    );
}
