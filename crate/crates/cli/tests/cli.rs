//! End-to-end tests of the `jit` binary: exit codes, artifact files, and the
//! train → unlearn → eval round trip, all on tiny datasets.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn jit() -> Command {
    Command::new(env!("CARGO_BIN_EXE_jit"))
}

fn run(args: &[&str]) -> Output {
    jit().args(args).output().expect("binary runs")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Extracts the value of a `key=value` line printed by the binary.
fn field(stdout: &str, key: &str) -> f64 {
    let prefix = format!("{key}=");
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(&prefix))
        .unwrap_or_else(|| panic!("missing '{key}' in output:\n{stdout}"))
        .parse()
        .expect("numeric field")
}

fn write_train_job(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("train.toml");
    fs::write(
        &path,
        r#"
seed = 3

[dataset]
kind = "blobs"
n_per_class = 30
means = [[-1.5, 0.0], [1.5, 0.0]]
std = 0.45

[model]
arch = "mlp"
hidden = [8]

[train]
epochs = 40
learning_rate = 0.05
batch_size = 16
"#,
    )
    .unwrap();
    path
}

#[test]
fn help_lists_every_subcommand() {
    let out = run(&["--help"]);
    assert!(out.status.success());
    let text = stdout_of(&out);
    for sub in
        ["train", "unlearn", "eval", "bench", "geometry", "sigmoid", "entropy", "sweep", "gradcheck", "render"]
    {
        assert!(text.contains(sub), "help must mention '{sub}'");
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["--definitely-not-a-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("Usage"), "usage text goes to stderr");
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let out = run(&["train"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn malformed_forget_spec_is_a_usage_error() {
    let out = run(&[
        "unlearn",
        "--model", "m.bin",
        "--forget-data", "f.csv",
        "--out", "o.bin",
        "--forget", "bogus:17",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_model_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "eval",
        "--model", dir.path().join("absent.bin").to_str().unwrap(),
        "--data", dir.path().join("absent.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).starts_with("error:"));
}

#[test]
fn invalid_jit_threads_is_a_runtime_error() {
    let out = jit()
        .env("JIT_THREADS", "0")
        .args(["gradcheck", "--trials", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("JIT_THREADS"));
}

#[test]
fn gradcheck_reports_every_op_and_passes() {
    let out = jit()
        .env("JIT_THREADS", "1")
        .args(["gradcheck", "--trials", "2", "--seed", "5"])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(!text.contains("FAIL"));
    for op in ["matmul", "conv2d", "softmax", "cross_entropy", "l2_norm"] {
        assert!(text.contains(op), "gradcheck must cover '{op}'");
    }
}

#[test]
fn train_unlearn_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let job = write_train_job(dir.path());
    let model = dir.path().join("model.bin");
    let data = dir.path().join("data");

    let out = run(&[
        "train",
        "--config", job.to_str().unwrap(),
        "--out", model.to_str().unwrap(),
        "--dump-data", data.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let train_stdout = stdout_of(&out);
    assert!(field(&train_stdout, "test_accuracy") > 0.9);
    assert!(model.exists());
    assert!(data.join("train.csv").exists());

    let unlearned = dir.path().join("unlearned.bin");
    let out = run(&[
        "unlearn",
        "--model", model.to_str().unwrap(),
        "--forget-data", data.join("train.csv").to_str().unwrap(),
        "--forget", "full_class:0",
        "--out", unlearned.to_str().unwrap(),
        "--eta", "0.05",
        "--sigma", "1.0",
        "--n-perturb", "8",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert_eq!(field(&stdout_of(&out), "forget_count"), 30.0);
    assert_ne!(
        fs::read(&model).unwrap(),
        fs::read(&unlearned).unwrap(),
        "unlearning must change the checkpoint"
    );

    let out = run(&[
        "eval",
        "--model", unlearned.to_str().unwrap(),
        "--data", data.join("test.csv").to_str().unwrap(),
        "--forget", "full_class:0",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let eval_stdout = stdout_of(&out);
    for key in ["accuracy", "retain_accuracy", "forget_accuracy", "forget_entropy_median"] {
        let v = field(&eval_stdout, key);
        assert!((0.0..=2.4).contains(&v), "{key}={v} out of range");
    }
}

#[test]
fn bench_writes_csv_with_fixed_header() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("results");
    let cfg = dir.path().join("bench.toml");
    fs::write(
        &cfg,
        format!(
            r#"
forget = "full_class:0"
repeats = 1
base_seed = 1
output_dir = "{}"

[dataset]
kind = "blobs"
n_per_class = 25
means = [[-1.5, 0.0], [1.5, 0.0]]
std = 0.45

[model]
arch = "mlp"
hidden = [8]

[train]
epochs = 30
learning_rate = 0.05
batch_size = 16

[[methods]]
name = "baseline"

[[methods]]
name = "jit"
eta = 0.05
sigma = 1.0
n_perturb = 8
"#,
            out_dir.display()
        ),
    )
    .unwrap();

    let out = run(&["bench", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let csv = fs::read_to_string(out_dir.join("benchmark.csv")).unwrap();
    assert!(csv.starts_with(
        "method,forget_target,seed_count,dr_acc_mean,dr_acc_std,df_acc_mean,df_acc_std,\
         mia_mean,mia_std,runtime_mean_s,runtime_std_s\n"
    ));
    assert!(csv.lines().any(|l| l.starts_with("baseline,full_class:0,1,")));
    assert!(csv.lines().any(|l| l.starts_with("jit,full_class:0,1,")));
    // The CSV is also echoed to stdout for piping.
    assert!(stdout_of(&out).contains("method,forget_target"));
}

#[test]
fn sigmoid_study_writes_svg_and_reports_pull() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sigmoid.toml");
    fs::write(&cfg, "n_per_class = 40\n\n[train]\nepochs = 60\nlearning_rate = 0.05\nbatch_size = 16\n")
        .unwrap();
    let out = run(&[
        "sigmoid",
        "--config", cfg.to_str().unwrap(),
        "--out", dir.path().join("fig").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let svg = fs::read_to_string(dir.path().join("fig").join("sigmoid.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    let text = stdout_of(&out);
    assert!(text.contains("boundary_probe"));
    assert!(text.contains("saturated_probe"));
}
