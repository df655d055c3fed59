use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fairdcov::pipeline::planted_bias;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fairdcov"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const PLANTED: &str = r#"
data = "planted.csv"
out = "run"
seed = 5

[schema]
task = "binary"

[[schema.columns]]
name = "y"
role = "response"

[[schema.columns]]
name = "x1"
role = "feature"
encoding = "min_max"

[[schema.columns]]
name = "x2"
role = "feature"
encoding = "min_max"

[[schema.columns]]
name = "proxy"
role = "feature"
encoding = "min_max"

[[schema.columns]]
name = "a"
role = "feature"
encoding = "binary"
positive = "1"
protected = "binary"

[[schema.columns]]
name = "b"
role = "feature"
encoding = "binary"
positive = "1"
protected = "binary"

[model]
hidden_layers = 1
width = 8

[optimiser]
lr = 0.02
batch_size = 128
max_epochs = 6

[stopping]
patience = 3

[calibration]
regularisers = ["ccdcov"]
seeds = 1

[eval]
permutations = 19

[report]
min_display = 20
"#;

fn planted_dir(n: usize) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("planted.csv"),
        planted_bias(n, 11).to_csv().unwrap(),
    )
    .unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, PLANTED).unwrap();
    (dir, cfg)
}

fn ok(args: &[&str]) {
    let o = run(args);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn full_run_writes_every_artifact_once() {
    let (dir, cfg) = planted_dir(600);
    let cfg = cfg.to_str().unwrap();
    let out = dir.path().join("run");
    ok(&["prep", "--config", cfg]);
    ok(&["calibrate", "--config", cfg, "--grid", "0,1,10"]);
    let csv = read(&out, "calibration_ccdcov.csv");
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "lambda,mean_RPS,mean_JSD,mean_UF,mean_CCdCov,mean_JdCov,n_seeds,n_diverged"
    );
    assert_eq!(lines.count(), 3);
    for f in [
        "jsd_vs_lambda.svg",
        "jsd_vs_lambda.csv",
        "jsd_vs_rps.svg",
        "calibration_runs.csv",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }

    ok(&[
        "train",
        "--config",
        cfg,
        "--regulariser",
        "ccdcov",
        "--lambda",
        "5",
    ]);
    ok(&["evaluate", "--config", cfg]);
    let again = run(&["evaluate", "--config", cfg]);
    assert_eq!(again.status.code(), Some(1));
    assert!(
        stderr(&again).contains("already evaluated"),
        "{}",
        stderr(&again)
    );
    ok(&["report", "--config", cfg]);

    let report: serde_json::Value = serde_json::from_str(&read(&out, "report.json")).unwrap();
    assert!(report["wilcoxon"]["p_value"].as_f64().is_some());
    assert!(read(&out, "ecdf_model.svg").starts_with("<svg"));
    assert!(read(&out, "hist_baseline.svg").starts_with("<svg"));
    assert!(read(&out, "report.md").contains("| RPS |"));

    let manifest: serde_json::Value = serde_json::from_str(&read(&out, "manifest.json")).unwrap();
    assert_eq!(
        manifest["leakage_audit"]["test_readers"],
        serde_json::json!(["evaluate"])
    );
    assert_eq!(manifest["leakage_audit"]["clean"], serde_json::json!(true));
    for rec in manifest["records"].as_array().unwrap() {
        for f in rec["outputs"].as_array().unwrap() {
            let name = f["path"].as_str().unwrap();
            let bytes = std::fs::read(out.join(name)).unwrap();
            use sha2::Digest;
            let expect = hex::encode(sha2::Sha256::digest(&bytes));
            // Later commands may rewrite a file; only the newest record must match.
            let newest = manifest["records"]
                .as_array()
                .unwrap()
                .iter()
                .rev()
                .flat_map(|r| r["outputs"].as_array().unwrap())
                .find(|o| o["path"] == f["path"])
                .unwrap();
            assert_eq!(newest["sha256"].as_str().unwrap(), expect, "{name}");
        }
    }
}

#[test]
fn rerun_reproduces_bytes() {
    let (dir, cfg) = planted_dir(400);
    let cfg = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = out.to_str().unwrap();
        ok(&["prep", "--config", cfg, "--out", o]);
        ok(&["calibrate", "--config", cfg, "--out", o, "--grid", "0,4"]);
    }
    for f in [
        "train.csv",
        "test.csv",
        "transforms.json",
        "calibration_ccdcov.csv",
        "calibration_runs.csv",
    ] {
        assert_eq!(read(&a, f), read(&b, f), "{f}");
    }
}

#[test]
fn single_thread_matches_default_pool() {
    let (dir, cfg) = planted_dir(300);
    let cfg = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["prep", "--config", cfg, "--out", a.to_str().unwrap()]);
    ok(&["prep", "--config", cfg, "--out", b.to_str().unwrap()]);
    ok(&[
        "calibrate",
        "--config",
        cfg,
        "--out",
        a.to_str().unwrap(),
        "--grid",
        "0,4",
        "--deterministic",
    ]);
    let o = bin()
        .args([
            "calibrate",
            "--config",
            cfg,
            "--out",
            b.to_str().unwrap(),
            "--grid",
            "0,4",
        ])
        .env("FAIRDCOV_THREADS", "3")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        read(&a, "calibration_ccdcov.csv"),
        read(&b, "calibration_ccdcov.csv")
    );
}

#[test]
fn missing_response_column_is_schema_error() {
    let (dir, cfg) = planted_dir(50);
    let text = read(dir.path(), "planted.csv").replacen("y,", "label,", 1);
    std::fs::write(dir.path().join("planted.csv"), text).unwrap();
    let o = run(&["prep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("schema error"), "{}", stderr(&o));
}

#[test]
fn config_problems_exit_two() {
    let (dir, cfg) = planted_dir(50);
    let cfg_s = cfg.to_str().unwrap();
    ok(&["prep", "--config", cfg_s]);
    let o = run(&["train", "--config", cfg_s]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("lambda"));

    std::fs::write(&cfg, format!("nonsense = true\n{PLANTED}")).unwrap();
    assert_eq!(run(&["prep", "--config", cfg_s]).status.code(), Some(2));
    assert_eq!(run(&["prep"]).status.code(), Some(2));
    let missing = dir.path().join("nope.toml");
    assert_eq!(
        run(&["prep", "--config", missing.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn runtime_failures_exit_one() {
    let (_dir, cfg) = planted_dir(50);
    let o = run(&["calibrate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("run the earlier commands"));
}

fn compas_config(dir: &Path) -> PathBuf {
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/compas.toml");
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/compas-scores-two-years.csv");
    let text = std::fs::read_to_string(src)
        .unwrap()
        .replace(
            "../data/compas-scores-two-years.csv",
            data.to_str().unwrap(),
        )
        .replace("../runs/compas", "bundle");
    let p = dir.join("compas.toml");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn compas_prep_is_reproducible_with_four_ethnicities() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = compas_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    ok(&["prep", "--config", cfg]);
    let bundle = dir.path().join("bundle");
    let first: serde_json::Value = serde_json::from_str(&read(&bundle, "manifest.json")).unwrap();
    ok(&["prep", "--config", cfg]);
    let second: serde_json::Value = serde_json::from_str(&read(&bundle, "manifest.json")).unwrap();
    assert_eq!(
        first["records"][0]["outputs"],
        second["records"][0]["outputs"]
    );

    let t: serde_json::Value = serde_json::from_str(&read(&bundle, "transforms.json")).unwrap();
    let race = t["features"]
        .as_array()
        .unwrap()
        .iter()
        .find(|f| f[0] == "race")
        .unwrap();
    assert_eq!(
        race[1]["levels"],
        serde_json::json!(["African-American", "Caucasian", "Hispanic", "Other"])
    );
}
