use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fnode(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fnode"))
        .args(args)
        .current_dir(dir)
        .env_remove("FNODE_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = fnode(dir, args);
    assert!(
        out.status.success(),
        "fnode {args:?} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

fn parse_mse_line(stdout: &str) -> [f64; 3] {
    let mut lines = stdout.lines().skip_while(|l| *l != "mse_total,mse_train_window,mse_test_window");
    lines.next().expect("csv header");
    let v: Vec<f64> = lines.next().unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    [v[0], v[1], v[2]]
}

#[test]
fn generate_writes_preset_splits() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "smsd.cfg", "benchmark = smsd\nseed = 0\n");
    ok(d, &["generate", "--config", "smsd.cfg", "--out", "smsd.csv"]);
    assert_eq!(rows(&d.join("smsd.csv")), 1001);
    assert_eq!(rows(&d.join("smsd_train.csv")), 700);
    assert_eq!(rows(&d.join("smsd_test.csv")), 301);
    let header = std::fs::read_to_string(d.join("smsd.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap(), "t,q0,v0,a0");

    write(d, "sc.cfg", "benchmark = slider-crank\nseed = 0\n");
    ok(d, &["generate", "--config", "sc.cfg", "--out", "sc.csv"]);
    assert_eq!(rows(&d.join("sc.csv")), 4501);
    let last = std::fs::read_to_string(d.join("sc.csv")).unwrap();
    let t_end: f64 = last.lines().last().unwrap().split(',').next().unwrap().parse().unwrap();
    assert!((t_end - 45.0).abs() < 1e-9);
}

#[test]
fn invalid_benchmark_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "bad.cfg", "benchmark = rocket\nseed = 0\n");
    let out = fnode(tmp.path(), &["generate", "--config", "bad.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rocket"));

    let out = fnode(tmp.path(), &["generate", "--config", "missing.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.cfg"));
}

#[test]
fn default_outputs_go_to_the_output_directory() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "tmsd.cfg", "benchmark = tmsd\nseed = 0\n");
    let out = Command::new(env!("CARGO_BIN_EXE_fnode"))
        .args(["generate", "--config", "tmsd.cfg"])
        .current_dir(d)
        .env("FNODE_OUT_DIR", d.join("runs"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(rows(&d.join("runs/tmsd_truth.csv")), 401);
}

#[test]
fn eval_of_a_file_against_itself_is_zero() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "smsd.cfg", "benchmark = smsd\nseed = 0\n");
    ok(d, &["generate", "--config", "smsd.cfg", "--out", "t.csv"]);
    let out = ok(d, &["eval", "--pred", "t.csv", "--truth", "t.csv", "--train-steps", "700"]);
    assert_eq!(parse_mse_line(&out), [0.0; 3]);
    assert!(out.contains("total"));

    let out = fnode(d, &["eval", "--pred", "t.csv", "--truth", "t_train.csv", "--train-steps", "10"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("t_train.csv"));
}

#[test]
fn rollout_rejects_a_checkpoint_of_the_wrong_width() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "smsd.cfg", "benchmark = smsd\nseed = 0\nepochs = 2\nwidth = 8\n");
    write(d, "tmsd.cfg", "benchmark = tmsd\nseed = 0\n");
    ok(d, &["generate", "--config", "smsd.cfg", "--out", "s.csv"]);
    ok(d, &["generate", "--config", "tmsd.cfg", "--out", "t.csv"]);
    ok(d, &["train", "--config", "smsd.cfg", "--data", "s.csv", "--out", "m.ckpt", "--quiet"]);
    assert_eq!(rows(&d.join("m_loss.csv")), 2);

    let out = fnode(d, &["rollout", "--checkpoint", "m.ckpt", "--init", "t.csv", "--steps", "5"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("m.ckpt") && err.contains("t.csv"), "{err}");

    ok(d, &["rollout", "--checkpoint", "m.ckpt", "--init", "s.csv", "--steps", "5", "--out", "p.csv"]);
    assert_eq!(rows(&d.join("p.csv")), 6);
}

#[test]
fn targets_cache_trains_like_the_raw_trajectory() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "smsd.cfg", "benchmark = smsd\nseed = 3\nepochs = 3\nwidth = 8\n");
    ok(d, &["generate", "--config", "smsd.cfg", "--out", "s.csv"]);
    ok(d, &["targets", "--config", "smsd.cfg", "--data", "s.csv", "--out", "a.csv"]);
    ok(d, &["train", "--config", "smsd.cfg", "--data", "s.csv", "--out", "raw.ckpt", "--quiet"]);
    ok(d, &["train", "--config", "smsd.cfg", "--targets", "a.csv", "--out", "cached.ckpt", "--quiet"]);
    let raw = std::fs::read(d.join("raw.ckpt")).unwrap();
    let cached = std::fs::read(d.join("cached.ckpt")).unwrap();
    assert_eq!(raw, cached);
}

#[test]
fn commands_are_deterministic_and_seed_overrides_config() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "cp.cfg", "benchmark = cartpole\nseed = 1\ncontrol = mpc-dither\nepochs = 2\nwidth = 8\n");
    ok(d, &["generate", "--config", "cp.cfg", "--out", "a.csv"]);
    ok(d, &["generate", "--config", "cp.cfg", "--out", "b.csv"]);
    ok(d, &["generate", "--config", "cp.cfg", "--seed", "2", "--out", "c.csv"]);
    let read = |n: &str| std::fs::read(d.join(n)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_ne!(read("a.csv"), read("c.csv"));

    ok(d, &["train", "--config", "cp.cfg", "--data", "a.csv", "--out", "m1.ckpt", "--quiet"]);
    ok(d, &["train", "--config", "cp.cfg", "--data", "a.csv", "--out", "m2.ckpt", "--quiet"]);
    ok(d, &["train", "--config", "cp.cfg", "--data", "a.csv", "--out", "m3.ckpt", "--quiet", "--seed", "9"]);
    assert_eq!(read("m1.ckpt"), read("m2.ckpt"));
    assert_ne!(read("m1.ckpt"), read("m3.ckpt"));
}

#[test]
fn analytic_mpc_settles_and_modes_share_a_schema() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "cp.cfg", "benchmark = cartpole\nseed = 0\n");
    ok(d, &["mpc", "--config", "cp.cfg", "--analytic", "--out", "a.csv"]);
    let text = std::fs::read_to_string(d.join("a.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "t,theta,x,omega,v,u");
    let last: Vec<f64> = text.lines().last().unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    assert!(last[1].abs() < 0.01, "final theta {}", last[1]);

    write(d, "zero.cfg", "benchmark = cartpole\nseed = 0\ninitial_q = 0, 0\nmpc_steps = 100\n");
    ok(d, &["mpc", "--config", "zero.cfg", "--analytic", "--out", "z.csv"]);
    let text = std::fs::read_to_string(d.join("z.csv")).unwrap();
    for line in text.lines().skip(1) {
        let u: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(u.abs() < 1e-12);
    }

    write(d, "tiny.cfg", "benchmark = cartpole\nseed = 0\nepochs = 2\nwidth = 8\ninitial_q = 0.01, 0\n");
    ok(d, &["generate", "--config", "tiny.cfg", "--out", "cp.csv"]);
    ok(d, &["train", "--config", "tiny.cfg", "--data", "cp.csv", "--out", "cp.ckpt", "--quiet"]);
    ok(d, &["mpc", "--config", "tiny.cfg", "--checkpoint", "cp.ckpt", "--steps", "3", "--out", "l.csv"]);
    ok(d, &["mpc", "--config", "tiny.cfg", "--analytic", "--steps", "3", "--out", "a3.csv"]);
    let header = |n: &str| std::fs::read_to_string(d.join(n)).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header("l.csv"), header("a3.csv"));
    assert_eq!(rows(&d.join("l.csv")), rows(&d.join("a3.csv")));
}

#[test]
fn unstable_closed_loop_exits_with_three() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "cp.cfg", "benchmark = cartpole\nseed = 0\nmpc_horizon = 50\n");
    let out = fnode(tmp.path(), &["mpc", "--config", "cp.cfg", "--analytic"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("step"));
}

#[test]
fn verify_passes_every_suite() {
    let tmp = TempDir::new().unwrap();
    let out = ok(tmp.path(), &["verify"]);
    for suite in [
        "integrator-order",
        "gradient-check",
        "spectral-accuracy",
        "gibbs-mitigation",
        "constraint-residual",
        "energy-conservation",
    ] {
        assert!(out.contains(&format!("PASS {suite}")), "{out}");
    }
    assert!(!out.contains("FAIL"));
    let slope: f64 = out
        .lines()
        .find(|l| l.trim_start().starts_with("rk4 slope"))
        .and_then(|l| l.split_whitespace().nth(2))
        .unwrap()
        .parse()
        .unwrap();
    assert!((3.8..=4.2).contains(&slope));
}

#[test]
fn smsd_pipeline_end_to_end() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "smsd.cfg", "benchmark = smsd\nseed = 0\n");
    ok(d, &["generate", "--config", "smsd.cfg", "--out", "truth.csv"]);
    ok(d, &["train", "--config", "smsd.cfg", "--data", "truth.csv", "--out", "smsd.ckpt", "--quiet"]);
    ok(d, &["rollout", "--checkpoint", "smsd.ckpt", "--init", "truth.csv", "--config", "smsd.cfg", "--out", "pred.csv"]);
    assert_eq!(rows(&d.join("pred.csv")), 1001);
    let out = ok(d, &["eval", "--pred", "pred.csv", "--truth", "truth.csv", "--config", "smsd.cfg"]);
    let [total, _, _] = parse_mse_line(&out);
    assert!(total <= 1e-1, "mse_total {total}");
}
