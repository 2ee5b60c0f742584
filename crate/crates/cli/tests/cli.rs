use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn smoke() -> Value {
    let text = std::fs::read_to_string(repo().join("configs/smoke.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Writes `config` next to copies of the layouts so relative paths resolve.
fn write_config(dir: &Path, config: &Value) -> PathBuf {
    let cfg_dir = dir.join("configs");
    let layouts = dir.join("layouts");
    std::fs::create_dir_all(&cfg_dir).unwrap();
    std::fs::create_dir_all(&layouts).unwrap();
    for name in ["source.txt", "target1.txt", "target2.txt"] {
        std::fs::copy(repo().join("layouts").join(name), layouts.join(name)).unwrap();
    }
    let path = cfg_dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    path
}

fn xferlab(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_xferlab"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("XFERLAB_THREADS", t),
        None => cmd.env_remove("XFERLAB_THREADS"),
    };
    cmd.output().unwrap()
}

fn run_ok(cmd: &str, config: &Path, out: &Path, extra: &[&str], threads: Option<&str>) -> Value {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = xferlab(&args, threads);
    assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn expect_error(cmd: &str, config: &Path, code: &str, exit: i32) {
    let o = xferlab(&[cmd, "--config", config.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(exit), "{}", String::from_utf8_lossy(&o.stderr));
    let stderr = String::from_utf8(o.stderr).unwrap();
    let mut lines = stderr.lines();
    assert_eq!(lines.next(), Some(format!("XFERLAB_ERROR code={code}").as_str()));
    assert!(lines.next().is_some_and(|l| !l.is_empty()), "missing human message");
}

/// CSV files under `dir` keyed by relative path.
fn csvs(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = smoke();
    c["train"]["sac"]["learning_rate"] = 0.1.into();
    expect_error("train", &write_config(dir.path(), &c), "CONFIG_UNKNOWN_KEY", 2);
    let mut c = smoke();
    c["extra_block"] = Value::Null;
    expect_error("bound", &write_config(dir.path(), &c), "CONFIG_UNKNOWN_KEY", 2);
}

#[test]
fn config_errors_have_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = smoke();
    c["schema_version"] = 7.into();
    expect_error("bound", &write_config(dir.path(), &c), "CONFIG_SCHEMA_VERSION", 2);

    let mut c = smoke();
    c.as_object_mut().unwrap().remove("bound");
    expect_error("bound", &write_config(dir.path(), &c), "CONFIG_MISSING_BLOCK", 2);

    let mut c = smoke();
    c["train"]["seeds"] = Value::Array(vec![]);
    expect_error("train", &write_config(dir.path(), &c), "CONFIG_INVALID", 2);

    let mut c = smoke();
    c["toy"]["source_layout"] = "../layouts/absent.txt".into();
    expect_error("toy", &write_config(dir.path(), &c), "CONFIG_MISSING_FILE", 2);

    expect_error("bound", &dir.path().join("nothing.json"), "CONFIG_MISSING_FILE", 2);

    let o = xferlab(&["bound"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("XFERLAB_ERROR code=USAGE\n"));
}

#[test]
fn layout_and_domain_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &smoke());
    let layouts = dir.path().join("layouts");

    std::fs::write(layouts.join("target2.txt"), "#####\n#S?G#\n#####\n").unwrap();
    expect_error("toy", &path, "LAYOUT_INVALID", 2);

    std::fs::write(layouts.join("target2.txt"), "#####\n#S.G#\n#####\n").unwrap();
    expect_error("toy", &path, "DOMAIN_MISMATCH", 5);

    let walled = std::fs::read_to_string(repo().join("layouts/target1.txt"))
        .unwrap()
        .replacen("D", "#", 3);
    std::fs::write(layouts.join("target2.txt"), walled).unwrap();
    expect_error("toy", &path, "UNREACHABLE_GOAL", 5);
}

#[test]
fn bad_thread_cap_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &smoke());
    let o = xferlab(&["bound", "--config", path.to_str().unwrap()], Some("zero"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("XFERLAB_ERROR code=ENV_INVALID"));
}

#[test]
fn bound_reports_pairs_and_violations() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &smoke());
    let v = run_ok("bound", &path, &dir.path().join("out"), &[], None);
    assert_eq!(v["pairs"], 50);
    assert_eq!(v["violations"], 0);
    let run = dir.path().join("out").join(v["run_id"].as_str().unwrap());
    let rows = std::fs::read_to_string(run.join("sweep.csv")).unwrap();
    assert_eq!(rows.lines().count(), 51);
    assert!(run.join("run_meta.json").exists());
}

#[test]
fn toy_writes_figures_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &smoke());
    let v = run_ok("toy", &path, &dir.path().join("out"), &[], None);
    let run = dir.path().join("out").join(v["run_id"].as_str().unwrap());
    let svgs = std::fs::read_dir(&run)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "svg"))
        .count();
    assert_eq!(svgs, 4);
    for f in ["traces.csv", "tau_t1.csv", "tau_t2.csv", "improvement_check.csv", "exp_advantage_t1.csv", "summary.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    assert_eq!(v["summary"]["improvement_counterexamples"], 0);
    assert!(v["first_target_dominates"].is_boolean());
}

#[test]
fn every_subcommand_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &smoke());
    for cmd in ["bound", "toy", "train", "transfer", "similarity"] {
        let a = run_ok(cmd, &path, &dir.path().join("a"), &[], Some("1"));
        let b = run_ok(cmd, &path, &dir.path().join("b"), &[], Some("3"));
        assert_eq!(a, b, "{cmd} result");
        let id = a["run_id"].as_str().unwrap();
        let (ca, cb) = (csvs(&dir.path().join("a").join(id)), csvs(&dir.path().join("b").join(id)));
        assert!(!ca.is_empty(), "{cmd} wrote no csv");
        assert_eq!(ca, cb, "{cmd} csv bytes");
    }
    let mut c = smoke();
    c["report"]["inputs"] = serde_json::json!([dir.path().join("a")]);
    let path = write_config(dir.path(), &c);
    let a = run_ok("report", &path, &dir.path().join("ra"), &[], Some("1"));
    let b = run_ok("report", &path, &dir.path().join("rb"), &[], Some("2"));
    assert_eq!(a, b);
    let id = a["run_id"].as_str().unwrap();
    assert_eq!(csvs(&dir.path().join("ra").join(id)), csvs(&dir.path().join("rb").join(id)));
}

#[test]
fn seed_override_replaces_seed_lists() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &smoke());
    let out = dir.path().join("out");
    let base = run_ok("train", &path, &out, &[], None);
    let one = run_ok("train", &path, &out, &["--seed-override", "7"], None);
    assert_ne!(base["run_id"], one["run_id"]);
    assert_eq!(one["seeds"], serde_json::json!([7]));
    let t = run_ok("transfer", &path, &out, &["--seed-override", "4"], None);
    assert_eq!(t["targets"][0]["seeds"], serde_json::json!([4]));
    assert_eq!(t["ablation"]["seeds"], serde_json::json!([4]));
}

#[test]
fn report_aggregates_earlier_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = smoke();
    c["report"]["inputs"] = serde_json::json!(["../runs"]);
    let path = write_config(dir.path(), &c);
    let runs = dir.path().join("runs");
    let train = run_ok("train", &path, &runs, &[], None);
    let v = run_ok("report", &path, &dir.path().join("report"), &[], None);
    assert_eq!(v["sources"].as_array().unwrap().len(), 1);
    let algo = &v["summary"]["algos"][0];
    assert_eq!(algo["algo_id"], "sac");
    assert_eq!(algo["seeds"], 2);
    let finals: Vec<f64> = serde_json::from_value(train["final_returns"].clone()).unwrap();
    let mean = finals.iter().sum::<f64>() / finals.len() as f64;
    assert!((algo["final_mean"].as_f64().unwrap() - mean).abs() <= 1e-9 * mean.abs());
}
