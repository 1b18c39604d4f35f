use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn saferl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_saferl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn tmp(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"))
        .join("cli")
        .join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

/// Case-1 config with two short rollouts per step, plus `edits` as
/// `(key line prefix, replacement line)`.
fn small_config(dir: &Path, edits: &[(&str, &str)]) -> PathBuf {
    let out = saferl(&["print-config", "--case", "1"]);
    assert!(out.status.success());
    let mut text = String::from_utf8(out.stdout).unwrap();
    let mut all = vec![
        ("rollouts =", "rollouts = 2"),
        ("rollout_steps =", "rollout_steps = 3"),
    ];
    all.extend_from_slice(edits);
    for (prefix, line) in all {
        text = text
            .lines()
            .map(|l| {
                if l.starts_with(prefix) {
                    line.to_string()
                } else {
                    l.to_string()
                }
            })
            .collect::<Vec<_>>()
            .join("\n");
    }
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn print_config_per_case() {
    let one = String::from_utf8(saferl(&["print-config"]).stdout).unwrap();
    let two = String::from_utf8(saferl(&["print-config", "--case", "2"]).stdout).unwrap();
    assert!(one.contains("kappa = 0.95"), "{one}");
    assert!(two.contains("kappa = 1.05"), "{two}");
    assert!(two.contains("alpha = 0.01"));
    assert_eq!(
        saferl(&["print-config", "--case", "3"]).status.code(),
        Some(1)
    );
}

#[test]
fn empty_config_is_a_configuration_error() {
    let dir = tmp("empty");
    let path = dir.join("empty.toml");
    fs::write(&path, "").unwrap();
    let out = saferl(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("missing keys"), "{err}");
}

#[test]
fn short_run_writes_artifacts() {
    let dir = tmp("run");
    let cfg = small_config(&dir, &[]);
    let out_dir = dir.join("out");
    let out = saferl(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--steps",
        "1",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("J: "));
    let progress = String::from_utf8(out.stderr).unwrap();
    assert!(progress.contains("step    1"), "{progress}");
    for f in [
        "rl_trace.csv",
        "theta_trace.csv",
        "safety_report.csv",
        "j.dat",
        "polytope_last.dat",
    ] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    assert!(!out_dir.join("failure.toml").exists());
}

#[test]
fn safety_abort_exits_with_two() {
    let dir = tmp("abort");
    let cfg = small_config(
        &dir,
        &[
            ("w_half_width =", "w_half_width = 0.001"),
            ("abort_on_outside_data =", "abort_on_outside_data = true"),
        ],
    );
    let out_dir = dir.join("out");
    let out = saferl(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out_dir.join("failure.toml").exists());
}

#[test]
fn solver_failure_exits_with_three() {
    let dir = tmp("infeasible");
    let cfg = small_config(&dir, &[("w_half_width =", "w_half_width = 1.5")]);
    let out_dir = dir.join("out");
    let out = saferl(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out_dir.join("failure.toml").exists());
}

#[test]
fn numerics_validation_passes() {
    let dir = tmp("validate");
    let out = saferl(&[
        "validate",
        "--numerics-only",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(out.status.success(), "{text}");
    assert_eq!(
        text.lines().filter(|l| l.starts_with("PASS")).count(),
        6,
        "{text}"
    );
}
