mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nvbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nvbench")).args(args).output().expect("run nvbench")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn prepared_nmnist(root: &Path) -> std::path::PathBuf {
    let raw = root.join("raw");
    let cache = root.join("cache");
    common::write_nmnist_raw(&raw, 3, 2, 5);
    let o = nvbench(&["prepare", "--raw", p(&raw), "--out", p(&cache), "--dt", "3", "--T", "10"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    cache
}

fn write_config(root: &Path, body: &str) -> std::path::PathBuf {
    let path = root.join("run.toml");
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn prepare_prints_split_counts_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cache = prepared_nmnist(dir.path());
    let first = fs::read(cache.join("index.csv")).unwrap();
    let raw = dir.path().join("raw");
    let o = nvbench(&["prepare", "--raw", p(&raw), "--out", p(&cache), "--dt", "3", "--T", "10"]);
    assert!(stdout(&o).contains("train 30"));
    assert!(stdout(&o).contains("test 20"));
    assert_eq!(fs::read(cache.join("index.csv")).unwrap(), first);
}

#[test]
fn data_errors_exit_2_and_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    common::write_nmnist_raw(&raw, 1, 1, 0);
    fs::write(raw.join("Train/3/00000.bin"), [0u8; 7]).unwrap();
    let o = nvbench(&["prepare", "--raw", p(&raw), "--out", p(&dir.path().join("c")), "--dt", "1", "--T", "5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("00000.bin"));
    let o = nvbench(&["eval", "--checkpoint", "/nonexistent.nvck", "--data", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(nvbench(&["analyze", "spectrum"]).status.code(), Some(1));
    assert_eq!(nvbench(&["train"]).status.code(), Some(1));
    assert_eq!(nvbench(&["--help"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[data]\ncache = \"c\"\n[model]\nkind = \"snn\"\nmystery = 1\n");
    let o = nvbench(&["train", p(&cfg), "--out", p(&dir.path().join("run"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn invalid_loss_for_snn_is_rejected_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let cache = prepared_nmnist(dir.path());
    let cfg = write_config(
        dir.path(),
        &format!("[data]\ncache = {:?}\n[model]\nkind = \"snn\"\nloss = \"last_step\"\n", cache.to_str().unwrap()),
    );
    let o = nvbench(&["train", p(&cfg), "--out", p(&dir.path().join("run"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("run/manifest.toml").exists());
}

#[test]
fn eval_reproduces_logged_accuracy_and_flags_window_changes() {
    let dir = tempfile::tempdir().unwrap();
    let cache = prepared_nmnist(dir.path());
    let cfg = write_config(
        dir.path(),
        "[data]\ncache = \"cache\"\ntest_limit = 12\n[model]\nkind = \"rnn\"\nstructure = \"Input-16FC-10\"\n[train]\nmax_epoch = 2\nbatch_size = 8\nseed = 9\nlr = 0.01\n",
    );
    let run = dir.path().join("run");
    let o = nvbench(&["train", p(&cfg), "--out", p(&run)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["manifest.toml", "log.csv", "model.nvck", "summary.toml"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let manifest = fs::read_to_string(run.join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 9") && manifest.contains("dataset_checksum"));
    let log = fs::read_to_string(run.join("log.csv")).unwrap();
    let last_test = log.lines().rfind(|l| l.contains(",test,")).unwrap();
    let logged: f64 = last_test.split(',').nth(3).unwrap().parse().unwrap();

    let ck = run.join("model.nvck");
    let o = nvbench(&["eval", "--checkpoint", p(&ck), "--data", p(&cache), "--limit", "12", "--seed", "9"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let acc: f64 = text.lines().find_map(|l| l.strip_prefix("accuracy ")).unwrap().parse().unwrap();
    assert!((acc - logged).abs() < 1e-4, "{acc} vs {logged}");
    assert!(!text.contains("warning"));

    let o = nvbench(&["eval", "--checkpoint", p(&ck), "--data", p(&cache), "--T", "5"]);
    assert!(stdout(&o).contains("warning: evaluation window"));
    let o = nvbench(&["eval", "--checkpoint", p(&ck), "--data", p(&cache), "--dt", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn analyze_params_ops_hist() {
    let dir = tempfile::tempdir().unwrap();
    let cache = prepared_nmnist(dir.path());
    let cfg = write_config(
        dir.path(),
        "[data]\ncache = \"cache\"\ntrain_limit = 8\ntest_limit = 4\n[model]\nkind = \"snn\"\nstructure = \"Input-12FC-10\"\n[train]\nmax_epoch = 1\nbatch_size = 4\n",
    );
    let run = dir.path().join("run");
    assert!(nvbench(&["train", p(&cfg), "--out", p(&run)]).status.success());
    let ck = run.join("model.nvck");

    let o = nvbench(&["analyze", "params", "--checkpoint", p(&ck)]);
    assert!(stdout(&o).contains(&format!("total {}", 2 * 34 * 34 * 12 + 12 * 10)));
    let o = nvbench(&["analyze", "params", "--config", p(&cfg)]);
    assert!(stdout(&o).contains(&format!("total {}", 2 * 34 * 34 * 12 + 12 * 10)));

    let ops = dir.path().join("ops.csv");
    let o = nvbench(&["analyze", "ops", "--checkpoint", p(&ck), "--data", p(&cache), "--limit", "3", "--out", p(&ops)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&ops).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 3);

    let hist = dir.path().join("hist.csv");
    let o = nvbench(&["analyze", "hist", "--checkpoint", p(&ck), "--bins", "5", "--out", p(&hist)]);
    assert!(stdout(&o).contains("weights 22"));
    assert_eq!(fs::read_to_string(&hist).unwrap().lines().count(), 6);

    let o = nvbench(&["analyze", "featmaps", "--checkpoint", p(&ck), "--data", p(&cache), "--layer", "0", "--out", p(&dir.path().join("fm"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn contrast_emits_square_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let cache = prepared_nmnist(dir.path());
    let out = dir.path().join("contrast.csv");
    let o = nvbench(&["analyze", "contrast", "--data", p(&cache), "--k", "4", "--limit", "5", "--out", p(&out)]);
    assert!(o.status.success());
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.lines().all(|l| l.split(',').count() == 6));
    assert!(stdout(&o).contains("recordings 5"));
}

#[test]
fn gradcheck_exit_status() {
    let o = nvbench(&["gradcheck", "--model", "rnn", "--seeds", "3"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("PASS"));
    let o = nvbench(&["gradcheck", "--seeds", "4"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("detected"));
}
