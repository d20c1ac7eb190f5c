use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regimerl"))
        .args(args)
        .output()
        .expect("spawn regimerl")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "regimerl {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: PathBuf) -> serde_json::Value {
    serde_json::from_slice(&fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))).unwrap()
}

/// Synthetic panel plus a fitted 2-state HMM.
fn detected(dir: &TempDir) -> (PathBuf, PathBuf) {
    let input = dir.path().join("panel.csv");
    let det = dir.path().join("detect");
    ok(&["synth", "--out", s(&input)]);
    ok(&[
        "detect",
        "--input",
        s(&input),
        "--model",
        "hmm",
        "--k",
        "2",
        "--out",
        s(&det),
    ]);
    (input, det.join("regimes.json"))
}

#[test]
fn detect_hmm_writes_row_stochastic_transition() {
    let dir = TempDir::new().unwrap();
    let (_, regimes) = detected(&dir);
    let model = json(regimes.clone());
    let a = model["transition"].as_array().unwrap();
    assert_eq!(a.len(), 2);
    for row in a {
        let sum: f64 = row.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }
    let det = regimes.parent().unwrap();
    for f in [
        "posterior.csv",
        "features.csv",
        "viterbi.csv",
        "alignment.json",
        "manifest.json",
    ] {
        assert!(det.join(f).exists(), "missing {f}");
    }
}

#[test]
fn gmm_on_tiny_panel_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("tiny.csv");
    fs::write(&input, "year,A,B\n2000,0.1,0.02\n2001,-0.05,0.03\n").unwrap();
    let out = run(&[
        "detect",
        "--input",
        s(&input),
        "--model",
        "gmm",
        "--k",
        "3",
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn macro_without_columns_names_them() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("plain.csv");
    let mut text = String::from("year,Alpha,Beta\n");
    for y in 0..40 {
        let a = 0.05 + 0.1 * ((y * 7 % 11) as f64 / 11.0 - 0.5);
        let b = 0.03 + 0.04 * ((y * 5 % 13) as f64 / 13.0 - 0.5);
        text.push_str(&format!("{},{a},{b}\n", 1950 + y));
    }
    fs::write(&input, text).unwrap();
    let det = dir.path().join("det");
    ok(&[
        "detect",
        "--input",
        s(&input),
        "--model",
        "kmeans",
        "--k",
        "2",
        "--out",
        s(&det),
    ]);
    let out = run(&[
        "simulate",
        "--input",
        s(&input),
        "--regimes",
        s(&det.join("regimes.json")),
        "--macro",
        "--paths",
        "10",
        "--out",
        s(&dir.path().join("sim")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("TBill") && err.contains("Baa"), "{err}");
}

#[test]
fn single_path_gives_degenerate_interval() {
    let dir = TempDir::new().unwrap();
    let (input, regimes) = detected(&dir);
    let sim = dir.path().join("sim");
    ok(&[
        "simulate",
        "--input",
        s(&input),
        "--regimes",
        s(&regimes),
        "--paths",
        "1",
        "--horizon",
        "10",
        "--strategy",
        "equal",
        "--out",
        s(&sim),
    ]);
    let doc = json(sim.join("simulate.json"));
    let summary = &doc["results"][0]["summary"];
    let m = summary["mean"].as_f64().unwrap();
    for k in ["median", "ci_low", "ci_high", "var5", "cvar5"] {
        assert_eq!(summary[k].as_f64().unwrap(), m, "{k}");
    }
}

#[test]
fn ablation_rows_per_variant_and_seed() {
    let dir = TempDir::new().unwrap();
    let (input, regimes) = detected(&dir);
    let out = dir.path().join("abl");
    ok(&[
        "ablate",
        "--input",
        s(&input),
        "--regimes",
        s(&regimes),
        "--variants",
        "noclip",
        "--seeds",
        "1,2,3",
        "--total-steps",
        "2000",
        "--out",
        s(&out),
    ]);
    let mut rdr = csv::Reader::from_path(out.join("ablation.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    for variant in ["baseline", "noclip"] {
        let seeds: Vec<&str> = rows
            .iter()
            .filter(|r| &r[0] == variant)
            .map(|r| r.get(1).unwrap())
            .collect();
        assert_eq!(seeds, ["1", "2", "3", "mean"], "{variant}");
    }
    assert_eq!(json(out.join("ablation.json"))["rows"].as_array().unwrap().len(), 6);
}

#[test]
fn stats_json_fields() {
    let dir = TempDir::new().unwrap();
    let (input, regimes) = detected(&dir);
    let out = dir.path().join("stats");
    ok(&[
        "stats",
        "--input",
        s(&input),
        "--regimes",
        s(&regimes),
        "--bins",
        "4",
        "--out",
        s(&out),
    ]);
    let doc = json(out.join("stats.json"));
    assert_eq!(doc["asset"], "SP500");
    assert_eq!(doc["mi_units"], "nats");
    assert_eq!(doc["bins"], 4);
    let p = doc["f_p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
    for k in [
        "f_stat",
        "pairwise_p",
        "mutual_info_nats",
        "crra_mean",
        "cara_mean",
        "group_sizes",
    ] {
        assert!(!doc[k].is_null(), "missing {k}");
    }
}

#[test]
fn equal_weight_backtest_matches_compounding() {
    let dir = TempDir::new().unwrap();
    let (input, regimes) = detected(&dir);
    let out = dir.path().join("bt");
    ok(&[
        "backtest",
        "--input",
        s(&input),
        "--regimes",
        s(&regimes),
        "--policy",
        "equal_weight",
        "--segment",
        "all",
        "--no-shock",
        "--no-reset",
        "--out",
        s(&out),
    ]);
    let report = json(out.join("backtest.json"));
    let wealth: Vec<f64> = report["wealth_curve"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let rets: Vec<f64> = report["per_step_returns"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(wealth.len(), rets.len() + 1);
    let mut w = 1.0;
    for (i, r) in rets.iter().enumerate() {
        w *= 1.0 + r;
        assert!((wealth[i + 1] - w).abs() <= 1e-12 * w);
    }
    for f in ["wealth.csv", "cagr.csv", "trace.csv", "manifest.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
}

#[test]
fn repeat_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let (input, regimes) = detected(&dir);
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        ok(&[
            "train",
            "--input",
            s(&input),
            "--regimes",
            s(&regimes),
            "--total-steps",
            "3000",
            "--seed",
            "5",
            "--out",
            s(&out),
        ]);
        outputs.push((
            fs::read(out.join("policy.json")).unwrap(),
            fs::read(out.join("manifest.json")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn unknown_subcommand_flag_is_rejected() {
    let out = run(&["simulate", "--bogus"]);
    assert!(!out.status.success());
}
