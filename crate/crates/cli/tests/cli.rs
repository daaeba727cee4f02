use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lae-pacbayes"));
    c.env_remove("LAE_PACBAYES_WORKERS");
    c
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn toy_run(out_dir: &Path, workers: Option<&str>) -> (String, String) {
    let mut cmd = bin();
    cmd.args(["run", "--config"]).arg(data("toy.toml")).arg("--output-dir").arg(out_dir);
    if let Some(w) = workers {
        cmd.env("LAE_PACBAYES_WORKERS", w);
    }
    run_ok(&mut cmd);
    (
        std::fs::read_to_string(out_dir.join("report.txt")).unwrap(),
        std::fs::read_to_string(out_dir.join("report.json")).unwrap(),
    )
}

#[test]
fn toy_report_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let (text, _) = toy_run(dir.path(), None);
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/toy_report.txt");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&golden, &text).unwrap();
    }
    assert_eq!(text, std::fs::read_to_string(&golden).unwrap());
}

#[test]
fn toy_report_is_byte_identical_across_runs_and_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let first = toy_run(dir.path(), Some("1"));
    let second = toy_run(dir.path(), Some("3"));
    assert_eq!(first, second);
}

#[test]
fn toy_rows_satisfy_rh_identity() {
    let dir = tempfile::tempdir().unwrap();
    let (_, json) = toy_run(dir.path(), None);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["config"]["population_source"], "whole");
    let rows = v["result"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 7);
    for r in rows {
        let f = |k: &str| r[k].as_f64().unwrap();
        let rh = f("emp_risk_exp") + (f("kl") + f("ln_L_over_delta") + f("log_mgf")) / f("lambda");
        assert!((rh - f("RH")).abs() <= 1e-9 * rh.abs(), "{rh} vs {}", f("RH"));
        assert!(f("LH") <= f("RH"));
    }
}

#[test]
fn subcommands_chain_into_a_bound() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("raw.csv"), "user,item\nu1,a\nu1,b\nu2,a\nu2,c\nu3,b\nu3,c\nu4,a\n").unwrap();
    run_ok(
        bin()
            .args(["ingest", "--skip-header", "--input"])
            .arg(d.join("raw.csv"))
            .arg("--output")
            .arg(d.join("raw.coo")),
    );
    assert_eq!(std::fs::read_to_string(d.join("raw.items.txt")).unwrap(), "a\nb\nc\n");

    run_ok(bin().args(["synth", "--items", "20", "--users", "120", "--seed", "4", "--output"]).arg(d.join("h.coo")));
    run_ok(bin().args(["split", "--seed", "2", "--input"]).arg(d.join("h.coo")).arg("--output-dir").arg(d));
    run_ok(
        bin()
            .args(["train-ease", "--gamma", "20", "--input"])
            .arg(d.join("train.coo"))
            .arg("--output")
            .arg(d.join("w.txt")),
    );
    run_ok(
        bin()
            .args(["bound", "--model"])
            .arg(d.join("w.txt"))
            .arg("--test")
            .arg(d.join("test.coo"))
            .arg("--population-interactions")
            .arg(d.join("h.coo"))
            .arg("--output-dir")
            .arg(d),
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("bound.json")).unwrap()).unwrap();
    assert_eq!(report["grid"].as_array().unwrap().len(), 10);
    assert_eq!(report["L"], 10);
    let out = run_ok(
        bin().args(["metrics", "--ks", "5", "--model"]).arg(d.join("w.txt")).arg("--test").arg(d.join("test.coo")),
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("NDCG@5"));
}

#[test]
fn exit_codes_separate_user_and_numerical_failures() {
    let dir = tempfile::tempdir().unwrap();
    let code = |cmd: &mut Command| cmd.output().unwrap().status.code();

    assert_eq!(code(bin().args(["run", "--dataset"]).arg(dir.path().join("missing.coo"))), Some(1));
    assert_eq!(code(bin().args(["run", "--no-such-flag"])), Some(1));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "gama = [1.0]\n").unwrap();
    assert_eq!(code(bin().args(["run", "--config"]).arg(&bad)), Some(1));

    // every lambda outside the domain
    let rejected = bin()
        .args(["run", "--config"])
        .arg(data("toy.toml"))
        .args(["--sigma", "100", "--lambdas", "1", "--output-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(rejected.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&rejected.stderr).contains("no gamma produced a bound"));

    assert_eq!(code(bin().args(["verify", "--level", "medium"])), Some(1));
    assert_eq!(code(bin().arg("--help")), Some(0));
}

#[test]
fn quick_verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("v.json");
    let out = run_ok(bin().args(["verify", "--level", "quick", "--json"]).arg(&json));
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 failed"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert!(v.as_array().unwrap().iter().all(|c| c["pass"] == true));
}

#[test]
fn mlr_demo_prints_one_row_per_lambda() {
    let out = run_ok(bin().args(["mlr-demo", "--m", "16", "--prior-samples", "200"]));
    let text = String::from_utf8_lossy(&out.stdout);
    // header, column names, lambdas 1..16
    assert_eq!(text.lines().count(), 2 + 5);
}
