use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ducknet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ducknet"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn ducknet")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A 10-image 32×32 synthetic dataset with a seed-0 split.
fn fixture() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let out = ducknet(
        dir.path(),
        &["synth", "--out", "ds", "--count", "10", "--size", "32", "--seed", "4"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = ducknet(
        dir.path(),
        &["split", "--data", "ds", "--seed", "0", "--out", "split.txt"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    dir
}

const TINY: [&str; 12] = [
    "--filters",
    "2",
    "--depth",
    "2",
    "--size",
    "32",
    "--epochs",
    "1",
    "--batch-size",
    "4",
    "--seed",
    "1",
];

fn train_tiny(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", "ds", "--split", "split.txt", "--out", out];
    args.extend_from_slice(&TINY);
    args.extend_from_slice(extra);
    ducknet(dir, &args)
}

fn section(manifest: &str, name: &str) -> Vec<String> {
    let mut lines = manifest.lines().skip_while(|l| *l != format!("{name}:")).skip(1);
    let mut ids = Vec::new();
    for l in lines.by_ref() {
        if l.ends_with(':') {
            break;
        }
        ids.push(l.to_string());
    }
    ids
}

#[test]
fn split_is_eight_one_one_and_reproducible() {
    let dir = fixture();
    let first = fs::read_to_string(dir.path().join("split.txt")).unwrap();
    let (train, val, test) = (
        section(&first, "train"),
        section(&first, "val"),
        section(&first, "test"),
    );
    assert_eq!((train.len(), val.len(), test.len()), (8, 1, 1));
    assert!(val.iter().all(|v| !test.contains(v) && !train.contains(v)));
    let out = ducknet(
        dir.path(),
        &["split", "--data", "ds", "--seed", "0", "--out", "again.txt"],
    );
    assert_eq!(code(&out), 0);
    assert_eq!(first, fs::read_to_string(dir.path().join("again.txt")).unwrap());
}

#[test]
fn split_without_masks_is_a_data_error() {
    let dir = fixture();
    fs::remove_dir_all(dir.path().join("ds/masks")).unwrap();
    let out = ducknet(dir.path(), &["split", "--data", "ds", "--out", "s.txt"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("masks"), "{}", stderr(&out));
    assert!(!dir.path().join("s.txt").exists());
}

#[test]
fn split_reports_every_unpaired_file() {
    let dir = fixture();
    let masks = dir.path().join("ds/masks");
    fs::remove_file(masks.join("s0001.pgm")).unwrap();
    fs::remove_file(masks.join("s0007.pgm")).unwrap();
    let out = ducknet(dir.path(), &["split", "--data", "ds", "--out", "s.txt"]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("s0001") && err.contains("s0007"), "{err}");
}

#[test]
fn train_writes_checkpoints_and_a_reproducible_history() {
    let dir = fixture();
    for name in ["a.ckpt", "b.ckpt"] {
        let out = train_tiny(dir.path(), name, &[]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let read = |p: &str| fs::read(dir.path().join(p)).unwrap();
    let history = String::from_utf8(read("a.ckpt.history")).unwrap();
    assert_eq!(history.lines().count(), 1);
    assert!(history.starts_with("1 "));
    assert_eq!(history.as_bytes(), read("b.ckpt.history"));
    assert_eq!(read("a.ckpt"), read("b.ckpt"));
    assert_eq!(read("a.ckpt.last"), read("b.ckpt.last"));
}

#[test]
fn eval_reports_metric_columns_in_order() {
    let dir = fixture();
    assert_eq!(code(&train_tiny(dir.path(), "m.ckpt", &[])), 0);
    let out = ducknet(
        dir.path(),
        &[
            "eval",
            "--ckpt",
            "m.ckpt",
            "--data",
            "ds",
            "--split",
            "split.txt",
            "--section",
            "val",
            "--report",
            "r.txt",
            "--csv",
            "r.csv",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = fs::read_to_string(dir.path().join("r.txt")).unwrap();
    let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(header, ["image", "DSC", "Jaccard", "Precision", "Recall", "Accuracy"]);
    let manifest = fs::read_to_string(dir.path().join("split.txt")).unwrap();
    let val = section(&manifest, "val");
    assert!(table.lines().nth(1).unwrap().starts_with(&val[0]));
    assert!(fs::read_to_string(dir.path().join("r.csv")).unwrap().contains(&val[0]));
}

#[test]
fn eval_rejects_a_corrupt_checkpoint() {
    let dir = fixture();
    fs::write(dir.path().join("bad.ckpt"), b"not a checkpoint").unwrap();
    let out = ducknet(
        dir.path(),
        &[
            "eval",
            "--ckpt",
            "bad.ckpt",
            "--data",
            "ds",
            "--split",
            "split.txt",
            "--report",
            "r.txt",
        ],
    );
    assert_eq!(code(&out), 2);
    assert!(!dir.path().join("r.txt").exists());
}

fn pnm_header(path: &PathBuf) -> (String, usize, usize, Vec<u8>) {
    let bytes = fs::read(path).unwrap();
    let text = String::from_utf8_lossy(&bytes[..20]).into_owned();
    let mut fields = text.split_whitespace();
    let magic = fields.next().unwrap().to_string();
    let w: usize = fields.next().unwrap().parse().unwrap();
    let h: usize = fields.next().unwrap().parse().unwrap();
    let channels = if magic == "P6" { 3 } else { 1 };
    let body = bytes[bytes.len() - w * h * channels..].to_vec();
    (magic, w, h, body)
}

#[test]
fn predict_writes_binary_mask_and_triple_width_panel() {
    let dir = fixture();
    assert_eq!(code(&train_tiny(dir.path(), "m.ckpt", &[])), 0);
    // an input smaller than the network exercises resizing both ways
    let d = dir.path();
    let out = ducknet(
        d,
        &["synth", "--out", "odd", "--count", "1", "--size", "20", "--seed", "9"],
    );
    assert_eq!(code(&out), 0);
    let out = ducknet(
        d,
        &[
            "predict",
            "--ckpt",
            "m.ckpt",
            "--image",
            "odd/images/s0000.ppm",
            "--out",
            "p.pgm",
            "--panel",
            "panel.ppm",
            "--gt",
            "odd/masks/s0000.pgm",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (magic, w, h, body) = pnm_header(&d.join("p.pgm"));
    assert_eq!((magic.as_str(), w, h), ("P5", 20, 20));
    assert!(body.iter().all(|&v| v == 0 || v == 255));
    let (magic, w, h, _) = pnm_header(&d.join("panel.ppm"));
    assert_eq!((magic.as_str(), w, h), ("P6", 60, 20));
}

#[test]
fn predict_on_unreadable_image_is_an_error() {
    let dir = fixture();
    assert_eq!(code(&train_tiny(dir.path(), "m.ckpt", &[])), 0);
    fs::write(dir.path().join("junk.png"), b"garbage").unwrap();
    let out = ducknet(
        dir.path(),
        &["predict", "--ckpt", "m.ckpt", "--image", "junk.png", "--out", "p.pgm"],
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn verify_rf_prints_the_five_claims() {
    let dir = tempfile::tempdir().unwrap();
    let out = ducknet(dir.path(), &["verify", "--suite", "rf"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 5);
    for rf in ["5x5", "9x9", "13x13", "7x7", "15x15"] {
        assert!(text.contains(rf), "{text}");
    }
}

#[test]
fn usage_errors_exit_two() {
    let dir = fixture();
    let d = dir.path();
    assert_eq!(code(&ducknet(d, &["verify", "--suite", "nope"])), 2);
    assert_eq!(code(&ducknet(d, &["frobnicate"])), 2);
    assert_eq!(code(&train_tiny(d, "m.ckpt", &["--block", "widescope"])), 2);
    assert_eq!(code(&train_tiny(d, "m.ckpt", &["--lr", "-1"])), 2);
    assert_eq!(code(&ducknet(d, &["--help"])), 0);
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = fixture();
    let d = dir.path();
    fs::write(
        d.join("run.cfg"),
        "# tiny run\nepochs = 2\nfilters = 2\ndepth=2\nsize = 32\n",
    )
    .unwrap();
    let base = ["--config", "run.cfg", "train", "--data", "ds", "--split", "split.txt"];
    let mut args = base.to_vec();
    args.extend(["--out", "a.ckpt"]);
    assert_eq!(code(&ducknet(d, &args)), 0);
    assert_eq!(fs::read_to_string(d.join("a.ckpt.history")).unwrap().lines().count(), 2);
    let mut args = base.to_vec();
    args.extend(["--out", "b.ckpt", "--epochs", "1"]);
    assert_eq!(code(&ducknet(d, &args)), 0);
    assert_eq!(fs::read_to_string(d.join("b.ckpt.history")).unwrap().lines().count(), 1);

    fs::write(d.join("bad.cfg"), "epochs = 1\nlearning-rate = 0.1\n").unwrap();
    let out = ducknet(
        d,
        &[
            "--config",
            "bad.cfg",
            "train",
            "--data",
            "ds",
            "--split",
            "split.txt",
            "--out",
            "c.ckpt",
        ],
    );
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("learning-rate"));
}

#[test]
fn divergent_training_exits_three() {
    let dir = fixture();
    let out = train_tiny(dir.path(), "m.ckpt", &["--lr", "1e38", "--augment", "false"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(!dir.path().join("m.ckpt").exists());
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ducknet"))
        .current_dir(dir.path())
        .env("DUCKNET_THREADS", "zero")
        .args(["verify", "--suite", "rf"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn ablation_writes_a_two_row_table() {
    let dir = fixture();
    let mut args = vec!["ablation", "--data", "ds", "--split", "split.txt", "--out", "ab.txt"];
    args.extend_from_slice(&TINY);
    let out = ducknet(dir.path(), &args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = fs::read_to_string(dir.path().join("ab.txt")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("duck") && lines[2].starts_with("simple"));
    assert_eq!(lines[1].split_whitespace().count(), 7);
}
