use std::path::Path;
use std::process::{Command, Output};

use symstdp::dataio::IdxData;

fn symstdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_symstdp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Tiny Fashion-shaped dataset: one vertical bar per class.
fn write_fixture(dir: &Path, n_train: usize, n_test: usize) {
    let split = |n: usize, prefix: &str| {
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        let pixels = labels
            .iter()
            .flat_map(|&l| (0..784).map(move |p| if (p % 28) / 2 == usize::from(l) + 4 { 220 } else { 0 }))
            .collect();
        let images = IdxData::Images { count: n, rows: 28, cols: 28, pixels };
        std::fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), images.to_bytes()).unwrap();
        std::fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), IdxData::Labels(labels).to_bytes()).unwrap();
    };
    split(n_train, "train");
    split(n_test, "t10k");
}

#[test]
fn presets_are_listed() {
    let o = symstdp(&["presets"]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.lines().any(|l| l == "mnist-n100"));
    assert!(out.lines().any(|l| l == "fashion-n400"));
}

#[test]
fn usage_and_config_errors_exit_1() {
    assert_eq!(code(&symstdp(&["train"])), 1);
    assert_eq!(code(&symstdp(&["frobnicate"])), 1);
    let o = symstdp(&["train", "--preset", "mnist-n7"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("unknown preset"), "{}", stderr(&o));
    assert_eq!(code(&symstdp(&["--help"])), 0);
}

#[test]
fn missing_dataset_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("nothing");
    let o = symstdp(&["train", "--preset", "mnist-n100", "--data-dir", data.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("symstdp fetch"), "{}", stderr(&o));
}

#[test]
fn fetch_train_eval_export_resume() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    std::fs::create_dir(&src).unwrap();
    write_fixture(&src, 30, 10);
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let (data_s, run_s) = (data.to_str().unwrap(), run.to_str().unwrap());

    let o = symstdp(&["fetch", "--dataset", "fashion-mnist", "--data-dir", data_s, "--from-dir", src.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(data.join("fashion-mnist/manifest.json").exists());

    let o = symstdp(&[
        "train", "--preset", "fashion-n400", "--epochs", "1", "--data-dir", data_s, "--output", run_s,
        "--eval-every", "20", "--eval-samples", "5", "--checkpoint-every", "12",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["config.json", "checkpoint.bin", "history.jsonl", "final.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let history = std::fs::read_to_string(run.join("history.jsonl")).unwrap();
    assert!(!history.is_empty());
    let fin: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("final.json")).unwrap()).unwrap();
    let acc = fin["accuracy"].as_f64().expect("final accuracy");
    assert!((0.0..=1.0).contains(&acc));

    let ckpt = run.join("checkpoint.bin");
    let ckpt_s = ckpt.to_str().unwrap();
    let o = symstdp(&["eval", ckpt_s, "--label-stats"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(run.join("eval_test_activities.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 1 + 400 + 10);

    let weights = run.join("w.csv");
    let o = symstdp(&["export", ckpt_s, "--kind", "weights", "--out", weights.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let w = std::fs::read_to_string(&weights).unwrap();
    assert_eq!(w.lines().count(), 1 + 400);
    assert!(w.lines().skip(1).all(|l| l.split(',').count() == 11));

    // A finished run resumes to a no-op and keeps its weights.
    let before = std::fs::read(&ckpt).unwrap();
    let o = symstdp(&["resume", ckpt_s]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let after = std::fs::read(&ckpt).unwrap();
    assert_eq!(before, after);

    // Corrupting the checkpoint is detected.
    let mut bad = before.clone();
    let mid = bad.len() / 2;
    bad[mid] ^= 0x55;
    std::fs::write(&ckpt, &bad).unwrap();
    let o = symstdp(&["eval", ckpt_s]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}
