//! End-to-end tests of the command-line binary: exit codes, output files,
//! determinism, and error wording.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_selfnorm-lab")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("selfnorm-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

const TAIL_CONFIG: &str = r#"{
  "experiment": {
    "model": { "kind": "iid", "law": "rademacher" },
    "statistic": "W",
    "n": 64,
    "replications": 4000,
    "x_grid": [0.0, 0.5, 1.0, 1.5]
  },
  "seed": 11,
  "svg": true
}"#;

#[test]
fn tail_run_succeeds_and_is_reproducible() {
    let dir = scratch("tail");
    let config = write_config(&dir, TAIL_CONFIG);
    let out1 = dir.join("run1");
    let out2 = dir.join("run2");

    let first = run(&[
        "tail",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out1.to_str().unwrap(),
    ]);
    assert!(first.status.success(), "stderr: {}", String::from_utf8_lossy(&first.stderr));
    let stdout = String::from_utf8_lossy(&first.stdout);
    assert!(stdout.contains("wrote tail.csv"), "stdout: {stdout}");
    assert!(out1.join("tail.csv").is_file());
    assert!(out1.join("envelope_fit.csv").is_file());
    assert!(out1.join("run.log").is_file());
    let svg = std::fs::read_to_string(out1.join("tail.svg")).unwrap();
    assert!(svg.starts_with("<svg"), "svg must be a bare <svg> document");

    let second = run(&[
        "tail",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert!(second.status.success());
    for file in ["tail.csv", "envelope_fit.csv", "tail.svg"] {
        let a = std::fs::read(out1.join(file)).unwrap();
        let b = std::fs::read(out2.join(file)).unwrap();
        assert_eq!(a, b, "{file} must be byte-identical across reruns");
    }
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn unknown_config_key_exits_two_and_names_the_key() {
    let dir = scratch("unknown-key");
    let config = write_config(
        &dir,
        r#"{
  "experiment": {
    "model": { "kind": "iid", "law": "rademacher" },
    "n": 16,
    "replications": 100,
    "x_grid": [0.5],
    "repetitions": 5
  },
  "seed": 1
}"#,
    );
    let out = run(&[
        "tail",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("repetitions"), "stderr must name the key: {stderr}");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn missing_seed_for_stochastic_run_exits_two() {
    let dir = scratch("no-seed");
    let config = write_config(
        &dir,
        r#"{
  "experiment": {
    "model": { "kind": "iid", "law": "rademacher" },
    "n": 16,
    "replications": 100,
    "x_grid": [0.5]
  }
}"#,
    );
    let out = run(&[
        "tail",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("seed"), "stderr: {stderr}");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn invalid_grid_exits_two() {
    let dir = scratch("bad-grid");
    let config = write_config(
        &dir,
        r#"{
  "experiment": {
    "model": { "kind": "iid", "law": "rademacher" },
    "n": 16,
    "replications": 100,
    "x_grid": [1.0, 0.5]
  },
  "seed": 3
}"#,
    );
    let out = run(&[
        "tail",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn violated_assertion_exits_four() {
    let dir = scratch("assert");
    let config = write_config(
        &dir,
        r#"{
  "experiment": {
    "model": { "kind": "iid", "law": "rademacher" },
    "n": 101,
    "replications": 2000,
    "x_grid": [0.5]
  },
  "seed": 1,
  "assert": { "ratio_in": [0.99, 1.01] }
}"#,
    );
    let out = run(&[
        "tail",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
        "--assert",
    ]);
    assert_eq!(out.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("ratio"), "stderr: {stderr}");

    // Without --assert the same config must succeed: thresholds are only
    // enforced on request.
    let out2 = run(&[
        "tail",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.join("out2").to_str().unwrap(),
    ]);
    assert!(out2.status.success());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn satisfied_assertion_exits_zero() {
    let dir = scratch("assert-ok");
    let config = write_config(
        &dir,
        r#"{
  "experiment": {
    "model": { "kind": "iid", "law": "rademacher" },
    "n": 400,
    "replications": 20000,
    "x_grid": [0.5, 1.0]
  },
  "seed": 5,
  "assert": { "ratio_in": [0.8, 1.2], "max_abs_log_ratio": 0.25 }
}"#,
    );
    let out = run(&[
        "tail",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
        "--assert",
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let _ = std::fs::remove_dir_all(&dir);
}

const BPRE_CONFIG: &str = r#"{
  "experiment": {
    "model": {
      "kind": "bpre",
      "environments": [
        { "weight": 0.5, "pmf": { "1": 0.5, "2": 0.5 } },
        { "weight": 0.5, "pmf": { "3": 1.0 } }
      ]
    },
    "n": 80,
    "replications": 1000,
    "x_grid": [0.0, 1.0]
  },
  "seed": 23,
  "bpre_ci": { "trajectory": "__TRAJ__", "n0": 10, "n": 60 }
}"#;

#[test]
fn simulated_trajectory_feeds_interval_estimation() {
    let dir = scratch("pipeline");
    let traj_path = dir.join("sim").join("trajectory.csv");
    let config = write_config(
        &dir,
        &BPRE_CONFIG.replace("__TRAJ__", traj_path.to_str().unwrap()),
    );

    let sim = run(&[
        "bpre-sim",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.join("sim").to_str().unwrap(),
    ]);
    assert!(sim.status.success(), "stderr: {}", String::from_utf8_lossy(&sim.stderr));
    assert!(traj_path.is_file());

    let ci = run(&[
        "bpre-ci",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.join("ci").to_str().unwrap(),
    ]);
    assert!(ci.status.success(), "stderr: {}", String::from_utf8_lossy(&ci.stderr));
    let text = std::fs::read_to_string(dir.join("ci").join("ci.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "n0,n,mhat,sigma_hat,level,lower,upper"
    );
    let row: Vec<f64> = lines
        .next()
        .unwrap()
        .split(',')
        .map(|f| f.parse().unwrap())
        .collect();
    let (lower, upper) = (row[5], row[6]);
    assert!(lower.is_finite() && upper.is_finite() && lower < upper);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn flat_trajectory_interval_is_degenerate_exit_three() {
    let dir = scratch("flat");
    // Z doubles every generation, so every offspring ratio equals 2 and the
    // width estimate is undefined.
    std::fs::write(
        dir.join("trajectory.csv"),
        "generation,population\n0,1\n1,2\n2,4\n3,8\n4,16\n",
    )
    .unwrap();
    let config = write_config(
        &dir,
        &format!(
            r#"{{
  "experiment": {{
    "model": {{
      "kind": "bpre",
      "environments": [ {{ "weight": 1.0, "pmf": {{ "2": 1.0 }} }} ]
    }},
    "n": 4,
    "replications": 10,
    "x_grid": [0.5]
  }},
  "bpre_ci": {{ "trajectory": "{}" }}
}}"#,
            dir.join("trajectory.csv").to_str().unwrap()
        ),
    );
    let out = run(&[
        "bpre-ci",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn zero_offspring_state_is_rejected() {
    let dir = scratch("p0");
    let config = write_config(
        &dir,
        r#"{
  "experiment": {
    "model": {
      "kind": "bpre",
      "environments": [ { "weight": 1.0, "pmf": { "0": 0.5, "2": 0.5 } } ]
    },
    "n": 10,
    "replications": 100,
    "x_grid": [0.5]
  },
  "seed": 2
}"#,
    );
    let out = run(&[
        "tail",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("at least one offspring"),
        "stderr: {stderr}"
    );
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn worker_env_var_is_honoured_and_flag_wins() {
    let dir = scratch("workers");
    let config = write_config(&dir, TAIL_CONFIG);
    let out_flag = dir.join("flag");
    let out_env = dir.join("env");

    let with_flag = run(&[
        "tail",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_flag.to_str().unwrap(),
        "--workers",
        "2",
    ]);
    assert!(with_flag.status.success());

    let with_env = Command::new(bin())
        .args([
            "tail",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out_env.to_str().unwrap(),
        ])
        .env("SELFNORM_LAB_WORKERS", "3")
        .output()
        .unwrap();
    assert!(with_env.status.success());

    let a = std::fs::read(out_flag.join("tail.csv")).unwrap();
    let b = std::fs::read(out_env.join("tail.csv")).unwrap();
    assert_eq!(a, b, "worker count must not change results");

    // Run logs record the worker source: 2 from the flag, 3 from the env.
    let log_flag = std::fs::read_to_string(out_flag.join("run.log")).unwrap();
    let log_env = std::fs::read_to_string(out_env.join("run.log")).unwrap();
    assert!(log_flag.contains("\"workers\":2"), "log: {log_flag}");
    assert!(log_env.contains("\"workers\":3"), "log: {log_env}");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn seed_flag_overrides_config_seed() {
    let dir = scratch("seed-override");
    let config = write_config(&dir, TAIL_CONFIG);
    let out_cfg = dir.join("from-config");
    let out_override = dir.join("overridden");
    let out_match = dir.join("matching");

    assert!(run(&[
        "tail",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_cfg.to_str().unwrap(),
    ])
    .status
    .success());
    assert!(run(&[
        "tail",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_override.to_str().unwrap(),
        "--seed",
        "999",
    ])
    .status
    .success());
    assert!(run(&[
        "tail",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_match.to_str().unwrap(),
        "--seed",
        "11",
    ])
    .status
    .success());

    let base = std::fs::read(out_cfg.join("tail.csv")).unwrap();
    let overridden = std::fs::read(out_override.join("tail.csv")).unwrap();
    let matching = std::fs::read(out_match.join("tail.csv")).unwrap();
    assert_ne!(base, overridden, "a different seed must change the counts");
    assert_eq!(base, matching, "--seed equal to the config seed must agree");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn diagnostics_write_expected_headers() {
    let dir = scratch("headers");
    let config = write_config(
        &dir,
        r#"{
  "experiment": {
    "model": { "kind": "iid", "law": "rademacher" },
    "n": 64,
    "replications": 4000,
    "x_grid": [0.0, 0.5, 1.0],
    "min_expected_hits": 10.0
  },
  "seed": 17,
  "mdp": { "a_values": [1.5, 2.0], "b": 0.5 }
}"#,
    );
    let out = dir.join("out");
    for sub in ["logratio", "mdp", "ks", "probe-variance"] {
        let res = run(&[
            sub,
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(
            res.status.success(),
            "{sub} failed: {}",
            String::from_utf8_lossy(&res.stderr)
        );
    }
    let header = |file: &str| {
        std::fs::read_to_string(out.join(file))
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string()
    };
    assert_eq!(header("logratio.csv"), "x,quotient");
    assert_eq!(header("mdp.csv"), "a,threshold,count,phat,rate");
    assert_eq!(header("ks.csv"), "d,at,replications_used,degenerate");
    assert_eq!(header("probe.csv"), "x,count,phat");

    // Four runs appended four lines to the shared run log.
    let log = std::fs::read_to_string(out.join("run.log")).unwrap();
    assert_eq!(log.lines().count(), 4);
    let _ = std::fs::remove_dir_all(&dir);
}
