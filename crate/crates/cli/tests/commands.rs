//! The `hacklab` binary: artifacts, exit codes and output contracts.

use std::path::Path;
use std::process::{Command, Output};

fn hacklab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hacklab"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const MINIMAL: &str = "task = \"two_basin\"\nseed = 3\n";

#[test]
fn train_writes_one_record_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", MINIMAL);
    let out = hacklab(&["train", "--config", &cfg, "--out", "run"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(dir.path().join("run/metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 200);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/summary.json")).unwrap()).unwrap();
    for key in ["final_proxy", "final_gold", "peak_gold", "hacking", "final_basin"] {
        assert!(summary.get(key).is_some(), "{key}");
    }
    assert!(dir.path().join("run/checkpoints/final.json").exists());
}

#[test]
fn checkpoint_cadence_and_probe() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "task = \"sequence_rule\"\nseed = 1\n[trainer]\nsteps = 12\n[run]\ncheckpoint_every = 5\n",
    );
    assert!(hacklab(&["train", "--config", &cfg, "--out", "r"], dir.path()).status.success());
    for step in [0, 5, 10] {
        assert!(dir.path().join(format!("r/checkpoints/step_{step:06}.json")).exists());
    }
    let out = hacklab(&["probe", "--config", &cfg, "--checkpoint", "r/checkpoints/final.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["sharpness"].as_f64().unwrap() >= 0.0);
    assert!(v["bt_loss"].as_f64().unwrap() > 0.0);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "task = \"bandit\"\nseed = 1\n[trainer]\nsteps = 10\n");
    for (name, seed) in [("a", "1"), ("b", "2"), ("c", "1")] {
        assert!(hacklab(&["train", "--config", &cfg, "--seed", seed, "--out", name], dir.path()).status.success());
    }
    let read = |n: &str| std::fs::read(dir.path().join(n).join("metrics.jsonl")).unwrap();
    assert_eq!(read("a"), read("c"));
    assert_ne!(read("a"), read("b"));
}

#[test]
fn config_errors_exit_two_with_key_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "task = \"two_basin\"\nseed = 1\n[trainer.telemetry]\nbt_evry = 3\n");
    let out = hacklab(&["train", "--config", &cfg, "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("trainer.telemetry.bt_evry"));

    let cfg = write(dir.path(), "d.toml", "task = \"chess\"\nseed = 1\n");
    assert_eq!(hacklab(&["train", "--config", &cfg, "--out", "x"], dir.path()).status.code(), Some(2));

    let cfg = write(dir.path(), "e.toml", MINIMAL);
    assert_eq!(hacklab(&["train", "--config", &cfg], dir.path()).status.code(), Some(2));
    assert_eq!(hacklab(&["train", "--config", "missing.toml", "--out", "x"], dir.path()).status.code(), Some(2));
}

#[test]
fn divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "task = \"two_basin\"\nseed = 1\n[trainer]\nlr = 1e300\nsteps = 20\n");
    let out = hacklab(&["train", "--config", &cfg, "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn verify_suites() {
    let dir = tempfile::tempdir().unwrap();
    let out = hacklab(&["verify", "--suite", "resets", "--seed", "1", "--n", "2000", "--out", "v"], dir.path());
    assert!(out.status.success());
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("v/reports.json")).unwrap()).unwrap();
    assert_eq!(v["passed"], true);
    for r in v["reports"].as_array().unwrap() {
        assert!(r["lhs"].as_f64().unwrap() <= 1e-3);
    }
    assert_eq!(hacklab(&["verify", "--suite", "foo", "--seed", "1"], dir.path()).status.code(), Some(2));
    assert!(hacklab(&["verify", "--suite", "fd_estimator", "--seed", "1", "--out", "v"], dir.path()).status.success());
}

#[test]
fn sweep_table_and_frontier() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "task = \"bandit\"\nseed = 2\n[trainer]\nsteps = 30\n[trainer.regularizer]\nkind = \"kl\"\nbeta = 0.1\n",
    );
    let out = hacklab(
        &["sweep", "--config", &cfg, "--param", "trainer.regularizer.beta", "--values", "0.05,0.5,5", "--out", "s"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(dir.path().join("s/sweep.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "value,final_gold,final_proxy,final_kl_to_init,hacking,error");
    assert_eq!(lines.count(), 3);

    let paths: Vec<String> = (0..3).map(|i| format!("s/run_{i}/metrics.jsonl")).collect();
    let mut args = vec!["plot", "--kind", "frontier", "--out", "p"];
    args.extend(paths.iter().map(String::as_str));
    assert!(hacklab(&args, dir.path()).status.success());
    let csv = std::fs::read_to_string(dir.path().join("p/frontier.csv")).unwrap();
    let kls: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(kls.len(), 3);
    assert!(kls.windows(2).all(|w| w[0] <= w[1]));

    let bad = hacklab(&["sweep", "--config", &cfg, "--param", "trainer.lr", "--values", "", "--out", "s2"], dir.path());
    assert_eq!(bad.status.code(), Some(2));
    let bad = hacklab(&["sweep", "--config", &cfg, "--param", "trainer.nope", "--values", "1", "--out", "s3"], dir.path());
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn plots_traces_and_correlation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "task = \"sequence_judge\"\nseed = 0\n[trainer]\nsteps = 60\nlr = 0.1\n[trainer.telemetry]\nbt_every = 2\n",
    );
    assert!(hacklab(&["train", "--config", &cfg, "--out", "r"], dir.path()).status.success());
    assert!(hacklab(&["plot", "--kind", "traces", "--out", "p", "r/metrics.jsonl"], dir.path()).status.success());
    let traces = std::fs::read_to_string(dir.path().join("p/traces.csv")).unwrap();
    assert_eq!(traces.lines().next().unwrap(), "step,proxy,gold,grad_norm");
    assert_eq!(traces.lines().count(), 61);
    assert!(dir.path().join("p/traces.svg").exists());

    let out = hacklab(&["plot", "--kind", "correlation", "--out", "p", "r/metrics.jsonl"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let corr = std::fs::read_to_string(dir.path().join("p/correlation.csv")).unwrap();
    assert!(corr.starts_with("# pearson="));

    // no BT telemetry: the series is missing
    let cfg2 = write(dir.path(), "d.toml", "task = \"bandit\"\nseed = 0\n[trainer]\nsteps = 20\n");
    assert!(hacklab(&["train", "--config", &cfg2, "--out", "b"], dir.path()).status.success());
    let out = hacklab(&["plot", "--kind", "correlation", "--out", "p", "b/metrics.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bt_loss"));
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(root).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            hacklab::config::RunConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e:#}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 7);
}
