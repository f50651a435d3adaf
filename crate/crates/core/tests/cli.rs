//! End-to-end tests of the `specseek` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_specseek"));
    c.env_remove("SPECSEEK_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn help_and_usage_codes() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    for sub in ["train", "eval", "baseline", "trace", "gradcheck"] {
        let o = run(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        assert!(stdout(&o).contains("Usage"));
    }
    assert_eq!(run(&["train", "--out-dir", "/tmp/x"]).status.code(), Some(2));
    assert_eq!(run(&["bogus"]).status.code(), Some(2));
    assert_eq!(run(&["gradcheck", "--frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["baseline", "--policy", "clever", "--config", "x", "--episodes", "3"]).status.code(), Some(2));
}

#[test]
fn episodes_zero_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.cfg", "");
    let o = run(&["baseline", "--policy", "random", "--config", &cfg, "--episodes", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(o.stdout.is_empty());
}

#[test]
fn baseline_prints_five_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.cfg", "scheme = A\n");
    let o = run(&["baseline", "--policy", "random", "--config", &cfg, "--episodes", "1000"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 1);
    let v: Vec<f64> = lines[0].split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(v.len(), 5);
    assert!(v[0].is_finite());
    assert!((0.0..=1.0).contains(&v[3]) && (0.0..=1.0).contains(&v[4]));
}

#[test]
fn seed_flag_env_and_default() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.cfg", "");
    let args = ["baseline", "--policy", "random", "--config", &cfg, "--episodes", "50"];
    let default = stdout(&run(&args));
    let one = stdout(&run(&[&args[..], &["--seed", "1"]].concat()));
    let seven = stdout(&run(&[&args[..], &["--seed", "7"]].concat()));
    let env_seven = stdout(&bin().args(args).env("SPECSEEK_SEED", "7").output().unwrap());
    let flag_wins = stdout(&bin().args(args).args(["--seed", "1"]).env("SPECSEEK_SEED", "7").output().unwrap());
    assert_eq!(default, one);
    assert_eq!(seven, env_seven);
    assert_eq!(flag_wins, one);
    assert_ne!(one, seven);
}

#[test]
fn scripted_trace_of_optimal_episode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.cfg", "bw_min = 5e6\nsnr_db = 200\nsignals = 117e6\n");
    let out = dir.path().join("trace.tsv");
    let o = run(&["trace", "--config", &cfg, "--policy", "scripted", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<Vec<&str>> = text.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(lines.len(), 5);
    assert!(lines.iter().all(|l| l.len() == 7));
    let actions: Vec<&str> = lines.iter().map(|l| l[1]).collect();
    assert_eq!(actions, ["0", "0", "0", "5", "6"]);
    assert_eq!(lines[4][6], "1");
    assert!(lines[..4].iter().all(|l| l[6] == "0"));
    let greedy_missing = run(&["trace", "--config", &cfg, "--policy", "greedy", "--out", out.to_str().unwrap()]);
    assert_eq!(greedy_missing.status.code(), Some(2));
}

#[test]
fn gradcheck_exit_codes() {
    let ok = run(&["gradcheck"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    let report = stdout(&ok);
    assert!(report.lines().count() >= 4 + 5);
    assert!(report.lines().all(|l| l.ends_with(",pass")));
    assert_eq!(run(&["gradcheck", "--tolerance", "0"]).status.code(), Some(1));
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.cfg", "max_steps = 30\n");
    let out_dir = dir.path().join("run");
    let o = run(&["train", "--config", &cfg, "--out-dir", out_dir.to_str().unwrap(), "--steps", "0"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("checkpoint"));
    let csv = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    let ckpt = out_dir.join("checkpoint.ckpt");
    let e = run(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--config", &cfg, "--episodes", "20"]);
    assert_eq!(e.status.code(), Some(0), "{}", String::from_utf8_lossy(&e.stderr));
    let v: Vec<f64> = stdout(&e).trim().split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(v, vec![0.0, 0.0, 30.0, 0.0, 0.0]);

    let other = write_config(dir.path(), "o.cfg", "n_bins = 128\n");
    let bad = run(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--config", &other, "--episodes", "2"]);
    assert_eq!(bad.status.code(), Some(1));
    let err = String::from_utf8_lossy(&bad.stderr);
    assert!(err.contains("n_bins: checkpoint 64 vs config 128"), "{err}");
}

#[test]
fn train_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.cfg", "bw_min = 30e6\n");
    let o = run(&["train", "--config", &bad, "--out-dir", dir.path().join("r").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bw_min (line 1)"));
    let missing = run(&["train", "--config", "/nonexistent/x.cfg", "--out-dir", "/tmp/r"]);
    assert_eq!(missing.status.code(), Some(1));
    let good = write_config(dir.path(), "good.cfg", "");
    let no_out = run(&["train", "--config", &good]);
    assert_eq!(no_out.status.code(), Some(2));
}

#[test]
fn train_summary_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.cfg", "max_steps = 20\nwarmup = 50\nreplay_capacity = 1000\n");
    let go = |name: &str| {
        let d = dir.path().join(name);
        let o = run(&["train", "--config", &cfg, "--out-dir", d.to_str().unwrap(), "--steps", "400", "--seed", "3"]);
        assert_eq!(o.status.code(), Some(0));
        let summary: Vec<String> = stdout(&o)
            .lines()
            .filter(|l| !l.starts_with("checkpoint:") && !l.starts_with("metrics:"))
            .map(String::from)
            .collect();
        (summary, fs::read(d.join("metrics.csv")).unwrap(), fs::read(d.join("checkpoint.ckpt")).unwrap())
    };
    assert_eq!(go("a"), go("b"));
}
