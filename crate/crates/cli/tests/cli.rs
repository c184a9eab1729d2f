use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn semcross(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semcross"))
        .args(args)
        .current_dir(dir)
        .env_remove("SEMCROSS_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

const CONFIG: &str = "\
# tiny run
dataset = data
ways = 3
queries = 2
epochs = 2
episodes_per_epoch = 3
val_episodes = 2
eval_episodes = 4
image_size = 16
filters = 4,4
";

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let o = semcross(
        &["gen-synthetic", "--out", "data", "--items", "6", "--image-size", "18", "--word-dim", "8"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    fs::write(dir.path().join("run.cfg"), CONFIG).unwrap();
    dir
}

#[test]
fn train_writes_three_files_and_is_reproducible() {
    let dir = workspace();
    let d = dir.path();
    assert_eq!(code(&semcross(&["train", "--config", "run.cfg", "--out", "a"], d)), 0);
    assert_eq!(code(&semcross(&["train", "--config", "run.cfg", "--out", "b"], d)), 0);
    for f in ["model.sct1", "metrics.csv", "config.txt"] {
        let a = fs::read(d.join("a").join(f)).unwrap();
        let b = fs::read(d.join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between identical runs");
    }
    let metrics = fs::read_to_string(d.join("a/metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,split,mean_acc,ci95,loss_cls,loss_aux,lr\n"));
    assert_eq!(metrics.lines().count(), 1 + 2 * 2);

    let o = semcross(&["eval", "--config", "run.cfg", "--checkpoint", "a/model.sct1", "--out", "e"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("test accuracy"));
    assert!(d.join("e/eval.csv").exists());
}

#[test]
fn seed_comes_from_environment() {
    let dir = workspace();
    let d = dir.path();
    let o = Command::new(env!("CARGO_BIN_EXE_semcross"))
        .args(["train", "--config", "run.cfg", "--out", "s"])
        .current_dir(d)
        .env("SEMCROSS_SEED", "42")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let echo = fs::read_to_string(d.join("s/config.txt")).unwrap();
    assert!(echo.lines().any(|l| l == "seed = 42"), "{echo}");
}

#[test]
fn config_errors_exit_2_without_outputs() {
    let dir = workspace();
    let d = dir.path();
    fs::write(d.join("bad.cfg"), "dataset = missing\n").unwrap();
    assert_eq!(code(&semcross(&["train", "--config", "bad.cfg", "--out", "o"], d)), 2);
    assert!(!d.join("o").exists());
    fs::write(d.join("bad2.cfg"), "dataset = data\nlambda = 2\n").unwrap();
    assert_eq!(code(&semcross(&["train", "--config", "bad2.cfg", "--out", "o"], d)), 2);
    assert_eq!(code(&semcross(&["train", "--config", "run.cfg", "--out", "o", "--bogus"], d)), 2);
}

#[test]
fn data_errors_exit_3() {
    let dir = workspace();
    let d = dir.path();
    fs::write(d.join("data/train/grp0_cls05/0000.ppm"), b"P6\n2 2\n255\n").unwrap();
    let o = semcross(&["train", "--config", "run.cfg", "--out", "o"], d);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("0000.ppm"));
}

#[test]
fn gradcheck_scopes_and_negative_control() {
    let dir = tempfile::tempdir().unwrap();
    let o = semcross(&["gradcheck", "--scope", "ops"], dir.path());
    assert_eq!(code(&o), 0);
    let out = String::from_utf8_lossy(&o.stdout).to_string();
    assert_eq!(out.lines().count(), semcross_ops());
    assert!(out.lines().all(|l| l.ends_with("ok")));

    let o = semcross(&["gradcheck", "--scope", "end2end"], dir.path());
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 1);

    let o = semcross(&["gradcheck", "--scope", "ops", "--inject-fault", "conv2d"], dir.path());
    assert_eq!(code(&o), 5);
    assert!(String::from_utf8_lossy(&o.stderr).contains("conv2d"));
}

fn semcross_ops() -> usize {
    semcross::verify::op_names().len()
}

#[test]
fn plot_errors_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("empty.csv"), "").unwrap();
    assert_eq!(code(&semcross(&["plot", "--csv", "empty.csv", "--kind", "sweep", "--out", "x.svg"], d)), 3);
    fs::write(d.join("bad.csv"), "variant,mean_acc\nbaseline,0.5\n").unwrap();
    let o = semcross(&["plot", "--csv", "bad.csv", "--kind", "ablation", "--out", "x.svg"], d);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("ci95"));
    let mut csv = String::from("param,value,mean_acc,ci95\n");
    for i in 1..=9 {
        csv += &format!("lambda,0.{i},0.{},0.02\n", 50 + i);
    }
    fs::write(d.join("sweep.csv"), csv).unwrap();
    for out in ["a.svg", "b.svg"] {
        assert_eq!(code(&semcross(&["plot", "--csv", "sweep.csv", "--kind", "sweep", "--out", out], d)), 0);
    }
    let a = fs::read(d.join("a.svg")).unwrap();
    assert_eq!(a, fs::read(d.join("b.svg")).unwrap());
    assert_eq!(String::from_utf8_lossy(&a).matches("<circle").count(), 9);
}

#[test]
fn sweep_and_ablate_emit_tables() {
    let dir = workspace();
    let d = dir.path();
    let o = semcross(
        &["sweep", "--config", "run.cfg", "--param", "lambda", "--values", "0.2,0.8", "--out", "sw"],
        d,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(d.join("sw/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(d.join("sw/sweep.svg").exists());

    let o = semcross(&["ablate", "--config", "run.cfg", "--out", "ab", "--threads", "2"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(d.join("ab/ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.split(',').nth(1) == Some("0")));
    assert!(d.join("ab/ablation.svg").exists());
}
