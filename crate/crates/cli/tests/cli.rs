use std::path::Path;
use std::process::{Command, Output};

fn coopcache(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coopcache"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> serde_json::Value {
    let out = coopcache(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("json report")
}

/// Toy config with short MADDPG training, written to `dir/config.toml`.
fn small_config(dir: &Path, edit: impl FnOnce(&mut toml::Table)) -> String {
    let out = coopcache(&["config", "--toy"]);
    assert!(out.status.success());
    let mut cfg: toml::Table = toml::from_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    cfg["maddpg"]["episodes"] = toml::Value::Integer(3);
    edit(&mut cfg);
    let path = dir.join("config.toml");
    std::fs::write(&path, toml::to_string(&cfg).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn config_round_trips_through_toml() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), |_| {});
    let again = coopcache(&["config", "--config", &cfg]);
    assert!(again.status.success(), "{}", String::from_utf8_lossy(&again.stderr));
    assert!(String::from_utf8(again.stdout).unwrap().contains("episodes = 3"));
}

#[test]
fn ingest_writes_partition() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ingest");
    let report = ok(&["ingest", "--toy", "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(report["ues"].as_u64().unwrap() > 0);
    assert!(out.join("partition.json").exists());
    assert!(out.join("catalog.json").exists());
}

#[test]
fn train_fl_and_predict() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fl");
    let report = ok(&["train-fl", "--toy", "--out", out.to_str().unwrap()]);
    let sbs = report["sbs"].as_array().unwrap();
    assert!(!sbs.is_empty());
    assert!(out.join("models").join("global_sbs0.bin").exists());
    assert!(out.join("fl_sbs0.csv").exists());

    let report = ok(&["predict", "--toy", "--out", out.to_str().unwrap()]);
    let lists = report["popular"].as_array().unwrap();
    assert_eq!(lists.len(), sbs.len());
    assert!(out.join("popular.json").exists());
}

#[test]
fn train_maddpg_then_plot_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), |_| {});
    let out = dir.path().join("run");
    let report = ok(&["train-maddpg", "--config", &cfg, "--seed", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(report["scheme"], "cefmr");
    let log = out.join("seed_1").join("cefmr").join("train_log.csv");
    assert!(log.exists());
    assert!(out.join("seed_1/cefmr/plots/reward_vs_episode.svg").exists());

    let plots = dir.path().join("plots");
    let report = ok(&["plot", "--input", log.to_str().unwrap(), "--out", plots.to_str().unwrap()]);
    assert_eq!(report["written"].as_array().unwrap().len(), 4);
}

#[test]
fn baseline_rejects_learned_scheme() {
    let out = coopcache(&["baseline", "--toy", "--scheme", "cefmr"]);
    assert!(!out.status.success());
    let out = coopcache(&["baseline", "--toy", "--scheme", "nope"]);
    assert!(!out.status.success());
}

#[test]
fn baseline_reports_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b");
    let report = ok(&["baseline", "--toy", "--scheme", "random", "--out", out.to_str().unwrap()]);
    let hit = report["mean_hit_ratio"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&hit));
}

#[test]
fn evaluate_then_rerun_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), |_| {});
    let first = dir.path().join("first");
    let report = ok(&["evaluate", "--config", &cfg, "--seed", "2", "--out", first.to_str().unwrap()]);
    assert_eq!(report["records"].as_u64().unwrap(), 7 * 2);
    let manifest = first.join("manifest.json");
    let second = dir.path().join("second");
    let report = ok(&["evaluate", "--manifest", manifest.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert_eq!(report["identical"], true);
    assert_eq!(
        std::fs::read(first.join("metrics.csv")).unwrap(),
        std::fs::read(second.join("metrics.csv")).unwrap()
    );
}

#[test]
fn missing_config_file_is_an_error() {
    let out = coopcache(&["evaluate", "--config", "/nonexistent/config.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("config.toml"));
}

#[test]
fn sweep_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), |c| {
        c["schemes"] = toml::Value::Array(vec!["random".into(), "efnrl".into()]);
    });
    let out = dir.path().join("sweep");
    let report = ok(&[
        "sweep", "--config", &cfg, "--seed", "0", "--out", out.to_str().unwrap(), "--axis", "cache_capacity", "--values",
        "2,4",
    ]);
    assert_eq!(report["rows"].as_array().unwrap().len(), 4);
    let csv = out.join("sweep_cache_capacity.csv");
    assert!(csv.exists());
    let plots = dir.path().join("plots");
    let report = ok(&["plot", "--input", csv.to_str().unwrap(), "--out", plots.to_str().unwrap()]);
    assert_eq!(report["written"].as_array().unwrap().len(), 6);
}
