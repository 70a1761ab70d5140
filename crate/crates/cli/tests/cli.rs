use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn airls(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_airls"))
        .current_dir(dir)
        .env("AIRLS_THREADS", "1")
        .args(args)
        .output()
        .expect("run airls")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = airls(dir, args);
    assert!(
        out.status.success(),
        "airls {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails_with(dir: &Path, args: &[&str], code: i32, needle: &str) {
    let out = airls(dir, args);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(code), "airls {args:?}: {stderr}");
    assert!(stderr.contains(needle), "missing `{needle}` in: {stderr}");
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn supply_demand(dir: &Path) {
    ok(
        dir,
        &[
            "generate",
            "supply_demand",
            "T=2",
            "n_T=1",
            "--out",
            "sd.json",
        ],
    );
}

#[test]
fn solve_writes_report_and_trace() {
    let d = tempfile::tempdir().unwrap();
    supply_demand(d.path());
    let stdout = ok(d.path(), &["solve", "sd.json", "--out", "run"]);
    assert!(stdout.starts_with("converged"));

    let trace = fs::read_to_string(d.path().join("run/trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(
        lines.next(),
        Some("sweep,L,Ghat,G,max_block_delta,elapsed_s")
    );
    let g_hat: Vec<f64> = lines
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert!(g_hat
        .windows(2)
        .all(|w| w[1] <= w[0] + 1e-9 * (1.0 + w[0].abs())));

    let report = json(d.path().join("run/report.json"));
    assert_eq!(report["status"], "converged");
    assert_eq!(report["result"]["x_hat"].as_array().unwrap().len(), 3);
    assert_eq!(
        report["result"]["sweeps"].as_u64().unwrap() as usize,
        g_hat.len()
    );
    assert_eq!(report["config"]["alpha"], 1e-3);
}

#[test]
fn solve_argument_errors() {
    let d = tempfile::tempdir().unwrap();
    supply_demand(d.path());
    fails_with(
        d.path(),
        &["solve", "sd.json", "--alpha", "0"],
        2,
        "alpha must be > 0",
    );
    fails_with(d.path(), &["solve", "missing.json"], 2, "cannot read");
    fs::write(d.path().join("x0.json"), "[1, 2]").unwrap();
    fails_with(
        d.path(),
        &["solve", "sd.json", "--init-file", "x0.json"],
        2,
        "3 unknowns",
    );
}

#[test]
fn max_sweeps_is_not_an_error() {
    let d = tempfile::tempdir().unwrap();
    supply_demand(d.path());
    ok(
        d.path(),
        &["solve", "sd.json", "--max-sweeps", "1", "--out", "one"],
    );
    let report = json(d.path().join("one/report.json"));
    assert_eq!(report["status"], "max_sweeps");
    let trace = fs::read_to_string(d.path().join("one/trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 2);
}

#[test]
fn validation_error_names_the_factor() {
    let d = tempfile::tempdir().unwrap();
    supply_demand(d.path());
    let mut doc = json(d.path().join("sd.json"));
    let form = serde_json::json!({"block": "tau", "vector": [1.0]});
    doc["factors"][1]["terms"][1]["factors"] = serde_json::json!([form.clone(), form]);
    fs::write(d.path().join("bad.json"), doc.to_string()).unwrap();
    fails_with(d.path(), &["solve", "bad.json"], 2, "factor 1");
}

#[test]
fn variance_methods_and_errors() {
    let d = tempfile::tempdir().unwrap();
    supply_demand(d.path());
    ok(d.path(), &["solve", "sd.json", "--out", "run"]);
    let norm = |dir: &str| {
        json(d.path().join(dir).join("variance.json"))["spectral_norm"]
            .as_f64()
            .unwrap()
    };

    for (method, dir) in [("prop1", "p"), ("fast", "f")] {
        ok(
            d.path(),
            &[
                "variance",
                "sd.json",
                "run/report.json",
                "--block",
                "tau",
                "--method",
                method,
                "--samples",
                "200",
                "--scale",
                "1e-9",
                "--out",
                dir,
            ],
        );
    }
    let (p, f) = (norm("p"), norm("f"));
    assert!(p > 0.0 && ((p - f) / p).abs() < 1e-6, "prop1 {p} fast {f}");
    let sigma = fs::read_to_string(d.path().join("p/sigma.csv")).unwrap();
    assert_eq!(sigma.lines().next(), Some("tau[0]"));

    ok(
        d.path(),
        &[
            "variance",
            "sd.json",
            "run/report.json",
            "--block",
            "2",
            "--method",
            "resampling",
            "--samples",
            "10",
            "--out",
            "r",
        ],
    );
    assert!(norm("r") > 0.0);

    fails_with(
        d.path(),
        &[
            "variance",
            "sd.json",
            "run/report.json",
            "--block",
            "tau",
            "--samples",
            "1",
        ],
        2,
        "N_S ≥ 2 required",
    );
    fails_with(
        d.path(),
        &["variance", "sd.json", "run/report.json", "--block", "nope"],
        2,
        "unknown block",
    );
    let mut doc = json(d.path().join("sd.json"));
    doc.as_object_mut().unwrap().remove("generator");
    fs::write(d.path().join("plain.json"), doc.to_string()).unwrap();
    fails_with(
        d.path(),
        &[
            "variance",
            "plain.json",
            "run/report.json",
            "--block",
            "tau",
            "--method",
            "resampling",
        ],
        2,
        "generator-backed",
    );
}

#[test]
fn outputs_are_deterministic() {
    let d = tempfile::tempdir().unwrap();
    supply_demand(d.path());
    let strip_time = |p: &str| -> Vec<String> {
        fs::read_to_string(d.path().join(p))
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    for dir in ["a", "b"] {
        ok(d.path(), &["solve", "sd.json", "--out", dir]);
        ok(
            d.path(),
            &[
                "variance",
                "sd.json",
                &format!("{dir}/report.json"),
                "--block",
                "tau",
                "--seed",
                "4",
                "--out",
                dir,
            ],
        );
    }
    assert_eq!(strip_time("a/trace.csv"), strip_time("b/trace.csv"));
    assert_eq!(
        fs::read(d.path().join("a/sigma.csv")).unwrap(),
        fs::read(d.path().join("b/sigma.csv")).unwrap()
    );

    ok(
        d.path(),
        &["generate", "water", "--seed", "3", "--out", "w1.json"],
    );
    ok(
        d.path(),
        &["generate", "water", "--seed", "3", "--out", "w2.json"],
    );
    assert_eq!(
        fs::read(d.path().join("w1.json")).unwrap(),
        fs::read(d.path().join("w2.json")).unwrap()
    );
}

#[test]
fn every_generator_round_trips() {
    let d = tempfile::tempdir().unwrap();
    // The default proposal is far wider than the 1e-4 admittance noise.
    let cases: [(&str, &[&str], &str, &[&str]); 6] = [
        ("supply_demand", &["T=2", "n_T=1"], "tau", &[]),
        ("water", &["T=10"], "R", &[]),
        (
            "eiv_sysid",
            &["n_x=2", "n_u=0", "outlier_ratio=0.01", "t=200"],
            "Theta",
            &[],
        ),
        (
            "admittance",
            &["m_nodes=4", "n_samples=40"],
            "Y",
            &["--scale", "1e-7"],
        ),
        ("gpca", &[], "x[0]", &[]),
        ("tensor_regression", &["t=30"], "x1", &[]),
    ];
    for (name, params, block, extra) in cases {
        let file = format!("{name}.json");
        let mut args = vec!["generate", name];
        args.extend_from_slice(params);
        args.extend(["--out", file.as_str()]);
        ok(d.path(), &args);
        let truth = json(d.path().join(format!("{name}.truth.json")));
        let doc = json(d.path().join(&file));
        let dim: u64 = doc["blocks"]
            .as_array()
            .unwrap()
            .iter()
            .map(|b| b["size"].as_u64().unwrap())
            .sum();
        assert_eq!(
            truth["x_true"].as_array().unwrap().len() as u64,
            dim,
            "{name}"
        );

        let run = format!("{name}_run");
        ok(
            d.path(),
            &["solve", &file, "--max-sweeps", "5", "--out", &run],
        );
        let report = format!("{run}/report.json");
        let mut args = vec![
            "variance",
            &file,
            &report,
            "--block",
            block,
            "--samples",
            "20",
            "--out",
            &run,
        ];
        args.extend_from_slice(extra);
        ok(d.path(), &args);
        let v = json(d.path().join(&run).join("variance.json"));
        assert!(v["spectral_norm"].as_f64().unwrap().is_finite(), "{name}");
    }
}

#[test]
fn too_wide_proposal_is_a_numerical_failure() {
    let d = tempfile::tempdir().unwrap();
    ok(
        d.path(),
        &[
            "generate",
            "admittance",
            "m_nodes=4",
            "n_samples=40",
            "--out",
            "a.json",
        ],
    );
    ok(
        d.path(),
        &["solve", "a.json", "--max-sweeps", "5", "--out", "r"],
    );
    fails_with(
        d.path(),
        &["variance", "a.json", "r/report.json", "--block", "Y"],
        3,
        "proposal too wide",
    );
}

#[test]
fn water_has_one_hundred_unknowns() {
    let d = tempfile::tempdir().unwrap();
    let stdout = ok(d.path(), &["generate", "water", "T=50", "--out", "w.json"]);
    assert!(stdout.starts_with("water: 100 unknowns"), "{stdout}");
}

#[test]
fn generate_errors() {
    let d = tempfile::tempdir().unwrap();
    fails_with(d.path(), &["generate", "nope"], 2, "unknown generator");
    fails_with(
        d.path(),
        &["generate", "water", "depth=3"],
        2,
        "unknown parameter",
    );
    fails_with(
        d.path(),
        &["generate", "water", "T=-1"],
        2,
        "invalid parameters",
    );
}

#[test]
fn benchmark_rejects_unknown_suite() {
    let d = tempfile::tempdir().unwrap();
    fails_with(d.path(), &["benchmark", "fig9"], 2, "unknown suite");
}

#[test]
fn benchmark_writes_one_csv_per_curve() {
    let d = tempfile::tempdir().unwrap();
    ok(
        d.path(),
        &["benchmark", "fig4", "--seed", "1", "--out-dir", "b"],
    );
    let meta = json(d.path().join("b/fig4_metadata.json"));
    let curves: Vec<&str> = meta["curves"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_str().unwrap())
        .collect();
    for name in ["airls", "zogd", "grid_search"] {
        assert!(curves.contains(&name), "{curves:?}");
        let csv = fs::read_to_string(d.path().join(format!("b/fig4_{name}.csv"))).unwrap();
        assert_eq!(csv.lines().next(), Some("elapsed_s,rrms_error"));
    }
    assert_eq!(meta["seed"], 1);
    assert!(meta["notes"]
        .as_array()
        .unwrap()
        .iter()
        .any(|n| n.as_str().unwrap().contains("sampling baseline omitted")));
}

#[test]
fn thread_variable_is_validated() {
    let d = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_airls"))
        .current_dir(d.path())
        .env("AIRLS_THREADS", "zero")
        .args(["generate", "water"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
