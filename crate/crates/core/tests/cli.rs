use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qnet_core::config::RunConfig;
use qnet_core::env::EnvParams;
use qnet_core::marl::{load_policy, TrainConfig};
use qnet_core::metrics::{MetricsTrace, Table};
use qnet_core::network::TopologyConfig;
use qnet_core::quantum::FidelityDistribution;
use qnet_core::task::{QosWeights, TaskConfig};

fn qnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qnet")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, config: &RunConfig) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, toml::to_string(config).unwrap()).unwrap();
    path
}

fn small() -> RunConfig {
    RunConfig {
        topology: TopologyConfig::with_counts(2, 1, 1),
        env: EnvParams { episode_length: 15, ..EnvParams::default() },
        train: TrainConfig { episodes: 3, batch_size: 8, hidden: vec![8], ..TrainConfig::default() },
        ..RunConfig::default()
    }
}

fn fixture() -> RunConfig {
    let mut topology = TopologyConfig::with_counts(1, 1, 1);
    topology.mobile_edge_link.fidelity = FidelityDistribution::fixed(0.9);
    topology.edge_cloud_link.fidelity = FidelityDistribution::fixed(0.9);
    RunConfig {
        topology,
        task: TaskConfig::fixed(8, 4, 200, 1000, 2000.0, 1.0),
        env: EnvParams { episode_length: 10, arrival_prob: 1.0, ..EnvParams::default() },
        qos: QosWeights::new(1.0, 0.0),
        ..RunConfig::default()
    }
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small());
    let mut outputs = Vec::new();
    for run in 0..2 {
        let csv = dir.path().join(format!("m{run}.csv"));
        let ckpt = dir.path().join(format!("p{run}.bin"));
        let out = qnet(&["train", "--config", path_str(&config), "--seed", "42", "--out", path_str(&csv), "--checkpoint", path_str(&ckpt)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push((std::fs::read(&csv).unwrap(), std::fs::read(&ckpt).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);

    let trace = MetricsTrace::parse_csv(std::str::from_utf8(&outputs[0].0).unwrap()).unwrap();
    assert_eq!(trace.rows.len(), 3);
    assert_eq!(trace.metadata.seed, 42);
    let mut seeded = small();
    seeded.seed = 42;
    assert_eq!(trace.metadata.config_hash, seeded.hash());
}

#[test]
fn episodes_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small());
    let out = qnet(&["train", "--config", path_str(&config), "--episodes", "2"]);
    assert!(out.status.success());
    let trace = MetricsTrace::parse_csv(std::str::from_utf8(&out.stdout).unwrap()).unwrap();
    assert_eq!(trace.rows.len(), 2);
}

#[test]
fn different_seeds_differ() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small());
    let a = qnet(&["train", "--config", path_str(&config), "--seed", "1"]);
    let b = qnet(&["train", "--config", path_str(&config), "--seed", "2"]);
    assert_ne!(a.stdout, b.stdout);
}

#[test]
fn checkpoint_evaluates_and_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small());
    let ckpt = dir.path().join("p.bin");
    assert!(qnet(&["train", "--config", path_str(&config), "--checkpoint", path_str(&ckpt), "--out", path_str(&dir.path().join("m.csv"))]).status.success());
    assert_eq!(load_policy(&ckpt).unwrap().networks.len(), 2);

    let runs: Vec<Output> = (0..2).map(|_| qnet(&["eval", "--config", path_str(&config), "--policy", path_str(&ckpt), "--seed", "3"])).collect();
    assert!(runs[0].status.success(), "{}", String::from_utf8_lossy(&runs[0].stderr));
    assert_eq!(runs[0].stdout, runs[1].stdout);
    let table = Table::parse(std::str::from_utf8(&runs[0].stdout).unwrap()).unwrap();
    assert_eq!(table.header, "episode,cost");
    assert_eq!(table.rows.len(), 20);

    let mut cfg = small();
    cfg.seed = 3;
    let expected = qnet_core::marl::evaluate(&cfg.env_config(), &qnet_core::marl::PolicySource::Checkpoint(ckpt), 20, 3).unwrap();
    let mean: f64 = table.get("mean_cost").unwrap().parse().unwrap();
    assert!((mean - expected.mean).abs() <= 1e-8 * expected.mean.abs());
}

#[test]
fn checkpoint_for_another_topology_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small());
    let ckpt = dir.path().join("p.bin");
    assert!(qnet(&["train", "--config", path_str(&config), "--checkpoint", path_str(&ckpt), "--out", path_str(&dir.path().join("m.csv"))]).status.success());
    let other = dir.path().join("other.toml");
    std::fs::write(&other, "[topology]\nmobile = 3\nedge = 1\ncloud = 1\n").unwrap();
    let out = qnet(&["eval", "--config", path_str(&other), "--policy", path_str(&ckpt)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!out.stderr.is_empty());
}

#[test]
fn baselines_run_and_reproduce() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small());
    for name in ["random", "greedy", "all-local", "all-cloud"] {
        let a = qnet(&["baseline", "--config", path_str(&config), "--name", name]);
        let b = qnet(&["eval", "--config", path_str(&config), "--policy", name]);
        assert!(a.status.success(), "{name}");
        let ta = Table::parse(std::str::from_utf8(&a.stdout).unwrap()).unwrap();
        let tb = Table::parse(std::str::from_utf8(&b.stdout).unwrap()).unwrap();
        assert_eq!(ta.rows, tb.rows, "{name}");
        assert_eq!(ta.get("policy"), Some(name));
    }
}

#[test]
fn oracle_reports_action_cost_and_candidates() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &fixture());
    let csv = dir.path().join("oracle.csv");
    let out = qnet(&["oracle", "--config", path_str(&config), "--out", path_str(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = Table::parse(&std::fs::read_to_string(&csv).unwrap()).unwrap();
    assert_eq!(table.header, "agent,target,fraction");
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.get("candidates"), Some("23"));
    assert!(table.get("expected_cost").unwrap().parse::<f64>().unwrap() > 0.0);
    // deterministic fixture: standard error is exactly zero
    assert_eq!(table.get("std_error").unwrap().parse::<f64>().unwrap(), 0.0);
}

#[test]
fn oracle_refuses_large_instances() {
    let out = qnet(&["oracle"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn validate_lists_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.toml");
    std::fs::write(&broken, "[qos]\nd = -1.0\n[train]\ngamma = 1.5\n").unwrap();
    let out = qnet(&["validate", "--config", path_str(&broken)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("qos.d"), "{err}");
    assert!(err.contains("train.gamma"), "{err}");
}

#[test]
fn misspelled_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("typo.toml");
    std::fs::write(&broken, "[train]\nepislon_start = 0.5\n").unwrap();
    let out = qnet(&["validate", "--config", path_str(&broken)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epislon_start"));
}

#[test]
fn usage_errors_exit_one() {
    let out = qnet(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(qnet(&["train", "--seed", "minus-one"]).status.code(), Some(1));
    assert_eq!(qnet(&[]).status.code(), Some(1));
}

#[test]
fn output_goes_only_where_named() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small());
    let csv = dir.path().join("out.csv");
    let out = Command::new(env!("CARGO_BIN_EXE_qnet"))
        .args(["baseline", "--config", path_str(&config), "--name", "random", "--out", path_str(&csv)])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let mut names: Vec<String> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, vec!["out.csv", "run.toml"]);
}
