//! End-to-end CLI tests on a miniature configuration: the full stage chain
//! runs in sequence, reruns reproduce artifact digests, and error paths map
//! to the documented exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn reachguard(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reachguard"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

const TINY_CONFIG: &str = r#"
[pipeline]
seed = 7

[camera]
width = 16
height_px = 12

[grid]
px_count = 21
py_count = 7
theta_count = 9
horizon = 6.0

[estimator]
hidden = [24]
epochs = 4
corpus_size = 500

[nrt]
hidden = [24, 24]
iters = 600
batch = 32
pool = 3000

[fd]
hidden = [16]
epochs = 6
pool_size = 700
eval_per_env = 60

[mining]
trace_count = 4
trace_horizon = 6.0

[fallback]
horizon = 3.0
states_px_count = 5
states_theta_count = 3
"#;

fn write_tiny_config(dir: &Path) {
    std::fs::write(dir.join("tiny.toml"), TINY_CONFIG).unwrap();
}

#[test]
fn full_pipeline_chain_and_reproducibility() {
    let tmp = tempfile::tempdir().unwrap();
    write_tiny_config(tmp.path());

    for step in [
        "render",
        "train-vbc",
        "solve-grid",
        "train-nrt",
        "mine",
        "train-fd",
        "calibrate",
        "eval-fd",
        "retrain",
        "report",
    ] {
        let out = reachguard(&[step, "--config", "tiny.toml", "--out", "run"], tmp.path());
        assert!(
            out.status.success(),
            "{step} failed:\nstdout: {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let out = reachguard(
        &["fallback-eval", "--compare", "--config", "tiny.toml", "--out", "run"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let run = tmp.path().join("run");
    for artifact in [
        "corpus.vfmd",
        "estimator.vfmw",
        "brt_r0-morning-clear.vfgv",
        "policy_r0-night-overcast.vfgv",
        "nrt_r0.vfmw",
        "mined_pool.vfmd",
        "fd.vfmw",
        "calibration.txt",
        "fd_metrics.csv",
        "fd_roc.csv",
        "fallback_report.csv",
        "fallback_summary.csv",
        "retrained.vfmw",
        "retrain_metrics.csv",
        "manifest.json",
        "traces/manifest.csv",
        "report/brt_slice_r0-morning-clear.pgm",
        "report/nrt_vs_grid.csv",
    ] {
        assert!(run.join(artifact).exists(), "missing artifact {artifact}");
    }

    let report = std::fs::read_to_string(run.join("fallback_report.csv")).unwrap();
    assert!(report.starts_with("controller,env,unsafe_fraction,n,mean_activations,steps_per_sec"));
    assert!(report.lines().filter(|l| l.starts_with("bare,")).count() == 6);
    assert!(report.lines().filter(|l| l.starts_with("pipeline,")).count() == 6);

    let metrics = std::fs::read_to_string(run.join("fd_metrics.csv")).unwrap();
    assert!(metrics.starts_with("group,recall,accuracy,precision,fpr,n"));
    assert!(metrics.contains("pool-iid"));

    // Stage isolation: delete a downstream artifact and rerun only its
    // stage; the digest comes back identical.
    let brt = run.join("brt_r0-evening-clear.vfgv");
    let before = std::fs::read(&brt).unwrap();
    std::fs::remove_file(&brt).unwrap();
    let out = reachguard(&["solve-grid", "--config", "tiny.toml", "--out", "run"], tmp.path());
    assert!(out.status.success());
    assert_eq!(std::fs::read(&brt).unwrap(), before, "solve-grid rerun changed the artifact");
}

#[test]
fn exit_codes_and_degenerate_calibration() {
    let tmp = tempfile::tempdir().unwrap();
    write_tiny_config(tmp.path());

    // Unknown config key: exit 2.
    let out = reachguard(
        &["render", "--config", "tiny.toml", "--out", "run", "grid.bogus=1"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    // Missing prerequisite names the producing command: exit 3.
    let out = reachguard(&["train-vbc", "--config", "tiny.toml", "--out", "run"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("reachguard render"));

    // Bad alpha is a config error even for calibrate.
    let out = reachguard(
        &["calibrate", "--config", "tiny.toml", "--out", "run", "fd.alpha=2.0"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_flag_changes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    write_tiny_config(tmp.path());
    for (seed, dir) in [("1", "a"), ("2", "b")] {
        let out = reachguard(
            &["render", "--config", "tiny.toml", "--out", dir, "--seed", seed],
            tmp.path(),
        );
        assert!(out.status.success());
    }
    let a = std::fs::read(tmp.path().join("a/corpus.vfmd")).unwrap();
    let b = std::fs::read(tmp.path().join("b/corpus.vfmd")).unwrap();
    assert_ne!(a, b);
}
