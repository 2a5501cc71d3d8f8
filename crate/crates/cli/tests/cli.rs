use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
seed = 2

[dataset]
kind = "two-regime"

[dataset.spec]
clients = 4
nodes = 40
classes = 3
dim = 10
marker_len = 2

[train]
rounds = 3
epochs = 2
order = 2
hidden = 8
latent = 3
"#;

fn fedssa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedssa")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_then_report_and_diagnose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    let o = fedssa(&["run", "--config", &cfg, "--out", out_s, "--dump-distances"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["metrics.csv", "diagnostics.csv", "checkpoint.json", "summary.json", "distances.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["rounds"], 3);

    let o = fedssa(&["report", "--out", out_s]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("final test"));

    let o = fedssa(&["diagnose", "--config", &cfg, "--out", out_s]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("0 violated"));
}

#[test]
fn same_config_and_seed_give_identical_csv_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (d, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        let o = fedssa(&["run", "--config", &cfg, "--seed", seed, "--out", d.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["metrics.csv", "diagnostics.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
    assert_ne!(std::fs::read(a.join("metrics.csv")).unwrap(), std::fs::read(c.join("metrics.csv")).unwrap());
}

#[test]
fn unknown_key_exits_with_code_two_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &CONFIG.replace("rounds = 3", "rounds = 3\nwarmup = 1"));
    let o = fedssa(&["run", "--config", &cfg, "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("warmup"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let o = fedssa(&["run", "--config", "/nonexistent/exp.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ablate_prints_four_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let o = fedssa(&["ablate", "--config", &cfg, "--out", dir.path().join("ab").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    assert_eq!(text.lines().count(), 5, "{text}");
}

#[test]
fn synth_and_partition_write_bundles() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("data");
    let o = fedssa(&["synth", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("dataset.json").is_file());
    let o = fedssa(&["partition", "--config", &cfg, "--out", dir.path().join("p").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("p/dataset.json").is_file());
}
