use std::path::Path;
use std::process::{Command, Output};

fn prunefuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prunefuse")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, budget: f64) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(
        &path,
        format!(
            r#"
name = "cli"
mode = "prunefuse"
metric = "entropy"
sparsity = 0.5
budget = {budget}
seeds = [0, 1]
output_dir = "{}"

[dataset]
kind = "blobs"
n = 200
n_val = 50
n_test = 100
classes = 3
dim = 16
spread = 1.0
sample_shape = [1, 4, 4]

[network]
arch = "conv"
widths = [4, 4]

[train.selector]
epochs = 2
batch_size = 16
learning_rate = 0.05

[train.fused]
epochs = 2
batch_size = 16
learning_rate = 0.05
"#,
            dir.join("runs").display()
        ),
    )
    .unwrap();
    path.display().to_string()
}

#[test]
fn schedule_prints_cumulative_sizes() {
    let o = prunefuse(&["schedule", "--n", "1000", "--budget", "0.3"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "round,labeled_size,delta\n0,20,20\n1,100,80\n2,200,100\n3,300,100\n");
    assert!(!prunefuse(&["schedule", "--n", "1000", "--budget", "0.01"]).status.success());
}

#[test]
fn run_then_summarize() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 0.3);
    let o = prunefuse(&["run", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let runs = dir.path().join("runs");
    assert!(runs.join("summary.csv").exists());
    assert!(runs.join("cli.prunefuse.p0.5.b0.3.entropy.kd.s1.record.jsonl").exists());

    let other = dir.path().join("other");
    let o = prunefuse(&["run", &cfg, "--seed", "9", "--out", other.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(other.join("cli.prunefuse.p0.5.b0.3.entropy.kd.s9.record.jsonl").exists());
    assert!(!other.join("cli.prunefuse.p0.5.b0.3.entropy.kd.s0.record.jsonl").exists());

    let o = prunefuse(&["summarize", runs.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.lines().nth(1).unwrap().starts_with("prunefuse,0.5,0.3,entropy,true,2,0,"));
}

#[test]
fn flops_reports_both_networks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 0.3);
    let o = prunefuse(&["flops", &cfg]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("dense\n"));
    assert!(text.contains("selector (p = 0.5)"));
    assert!(text.contains("conv 1->4 k3 s1 p1"));
}

#[test]
fn failures_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 0.01);
    let o = prunefuse(&["run", &cfg]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("runs failed"));
    assert!(dir.path().join("runs").join("summary.csv").exists());
    assert!(!prunefuse(&["run", "/nonexistent/config.toml"]).status.success());
    assert!(!prunefuse(&["summarize", "/nonexistent"]).status.success());
}
