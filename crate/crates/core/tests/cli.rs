use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
seed = 5
image_size = 32
train_samples = 4
test_samples = 2
epochs = 1
batch_size = 2
denoiser_epochs = 1
widths = 8,16
state_dim = 4
prompt_dim = 8
embed_dim = 8
bench_lengths = 16,64
bench_state_dim = 4
bench_reps = 1
";

fn dgssm(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_dgssm"))
        .current_dir(dir)
        .args(["--config", "run.txt", "--out-dir", "out", "--threads", "1"])
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn generate_train_eval_bench() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("run.txt"), SMALL).unwrap();

    dgssm(dir, &["generate"]);
    let manifest = fs::read_to_string(dir.join("out/train/manifest.txt")).unwrap();
    assert_eq!(manifest.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()).count(), 4);

    let out = dgssm(dir, &["train", "--data", "out/train/manifest.txt"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("model parameters:"));
    for f in ["model.ckpt", "train_log.csv", "denoiser_log.csv", "config.txt"] {
        assert!(dir.join("out").join(f).exists(), "{f}");
    }
    let log = fs::read_to_string(dir.join("out/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);

    dgssm(dir, &["eval", "--data", "out/test/manifest.txt"]);
    let eval = fs::read_to_string(dir.join("out/eval.csv")).unwrap();
    assert!(eval.starts_with("sample_id,s_measure,f_measure_mean,e_measure_mean,mae"));
    assert!(eval.lines().last().unwrap().starts_with("mean,"));

    dgssm(dir, &["bench"]);
    let bench = fs::read_to_string(dir.join("out/bench.csv")).unwrap();
    assert!(bench.lines().count() > 1);
}

#[test]
fn seed_is_required() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dgssm")).current_dir(tmp.path()).arg("bench").output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn bad_config_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("run.txt"), "seed = 1\nwidths = 8,x\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dgssm"))
        .current_dir(tmp.path())
        .args(["--config", "run.txt", "bench"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}
