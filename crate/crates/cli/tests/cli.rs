use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn fixture(name: &str) -> String {
    fixtures().join(name).display().to_string()
}

fn evnet(args: &[&str], stdin: Option<&[u8]>) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_evnet"))
        .args(args)
        .env_remove("EVNET_OUT_DIR")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    {
        let mut pipe = child.stdin.take().unwrap();
        if let Some(bytes) = stdin {
            pipe.write_all(bytes).unwrap();
        }
    }
    child.wait_with_output().unwrap()
}

fn ok(args: &[&str], stdin: Option<&[u8]>) -> Vec<u8> {
    let out = evnet(args, stdin);
    assert!(
        out.status.success(),
        "evnet {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("stderr is one JSON object")
}

#[test]
fn synth_is_deterministic_and_seed_sensitive() {
    let a = ok(&["synth", "--seed", "7"], None);
    let b = ok(&["synth", "--seed", "7"], None);
    let c = ok(&["synth", "--seed", "8"], None);
    assert_eq!(a, b);
    assert_ne!(a, c);
    let text = String::from_utf8(a).unwrap();
    // Header plus 50 zips x 6 years.
    assert_eq!(text.lines().count(), 301);
}

#[test]
fn synth_piped_into_estimate() {
    let panel = ok(&["synth", "--seed", "3", "--full-precision"], None);
    let json = ok(&["estimate", "--method", "gmm"], Some(&panel));
    let v: Value = serde_json::from_slice(&json).unwrap();
    assert_eq!(v["method"], "GMM");
    let demand = v["demand"]["coefficients"].as_object().unwrap();
    let supply = v["supply"]["coefficients"].as_object().unwrap();
    // Five named demand slopes and four supply slopes, each plus an intercept.
    assert_eq!(demand.len(), 6);
    assert_eq!(supply.len(), 5);
    assert!(demand.contains_key("ln(Charging station)"));
    assert!(supply.contains_key("ln(EV Stock)"));
    assert!(v["demand_ols"].is_object());
    let b = demand["ln(Charging station)"].as_f64().unwrap();
    assert!((b - 0.36).abs() < 0.15, "station elasticity {b}");
}

#[test]
fn text_format_has_both_tables() {
    let out = ok(&["estimate", "--panel", &fixture("synth_seed7.csv"), "--format", "text"], None);
    let text = String::from_utf8(out).unwrap();
    assert!(text.contains("EV demand"));
    assert!(text.contains("Charging supply"));
    assert!(text.contains("Number of observations"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = evnet(&["estimate", "--no-such-flag"], None);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["code"], "usage");
    assert!(err["message"].as_str().unwrap().contains("--no-such-flag"));
}

#[test]
fn domain_error_exits_one_with_context() {
    let bad = "zip,year,ev_sales,ev_stock,station_stock,avg_ev_price,median_income,white_pop,asian_pop,oil_price,parking_lots,rebate_pct\n\
               1,2020,1,1,1,40000,0,10,10,3,10,0.5\n";
    let out = evnet(&["estimate"], Some(bad.as_bytes()));
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["code"], "panel");
    assert!(err["message"].as_str().unwrap().contains("median_income"));
}

#[test]
fn out_dir_writes_artifacts_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().display().to_string();
    let panel = fixture("synth_seed7.csv");
    let run = || {
        let stdout = ok(&["--out", &out_dir, "estimate", "--panel", &panel], None);
        assert!(stdout.is_empty());
        let m: Value =
            serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
        m
    };
    let first = run();
    let second = run();
    for key in ["command", "tool_version", "config", "input_hashes", "outputs"] {
        assert_eq!(first[key], second[key], "manifest field {key}");
    }
    assert_eq!(first["command"], "estimate");
    assert_eq!(first["input_hashes"].as_object().unwrap().len(), 1);
    let outputs = first["outputs"].as_object().unwrap();
    assert!(outputs.contains_key("estimate.json"));
    let written = std::fs::read(dir.path().join("estimate.json")).unwrap();
    let digest = {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(&written))
    };
    assert_eq!(outputs["estimate.json"], digest);
}

#[test]
fn synth_out_dir_reports_truth() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().display().to_string();
    ok(&["--out", &out_dir, "synth", "--seed", "1", "--n-zips", "20", "--rho", "-0.3"], None);
    let truth: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["demand"]["ln(Charging station)"], 0.36);
    assert_eq!(truth["config"]["n_zips"], 20);
    assert_eq!(truth["config"]["endogeneity_rho"], -0.3);
    let panel = std::fs::read_to_string(dir.path().join("panel.csv")).unwrap();
    assert_eq!(panel.lines().count(), 1 + 20 * 6);
}

#[test]
fn describe_lists_equations() {
    let v: Value = serde_json::from_slice(&ok(&["describe"], None)).unwrap();
    let text = v.to_string();
    assert!(text.contains("ln(Charging station)"));
    assert!(text.contains("Saturation"));
    assert_eq!(v["defaults"]["delta"], 0.95);
}

/// Hand evaluation of one coupled year: both exponentiated linear forms,
/// iterated until the install base stops moving.
fn oracle_step(state: &Value, exog: &Value, d: &Value, s: &Value, delta: f64) -> (f64, f64, f64) {
    let f = |v: &Value, k: &str| v[k].as_f64().unwrap();
    let (q0, e0) = (f(state, "ev_stock"), f(state, "station_stock"));
    let demand_part = f(d, "const")
        + f(d, "ln(oil_price)") * f(exog, "oil_price").ln()
        + f(d, "ln(White Population)") * f(exog, "white_pop").ln_1p()
        + f(d, "ln(Asian Population)") * f(exog, "asian_pop").ln_1p()
        + f(d, "EV_Burden") * f(exog, "avg_ev_price") / f(exog, "median_income");
    let supply_part = f(s, "const")
        + f(s, "ln(parking lot)") * f(exog, "parking_lots").ln_1p()
        + f(s, "Saturation") * exog["saturation"]["value"].as_f64().unwrap()
        + f(s, "Rebate Percentage") * f(exog, "rebate_pct");
    let mut q = q0;
    let (mut sales, mut stations) = (0.0, 0.0);
    for _ in 0..500 {
        stations = (supply_part + f(s, "ln(EV Stock)") * q.ln_1p()).exp().max(e0);
        sales = (demand_part + f(d, "ln(Charging station)") * stations.ln_1p()).exp();
        q = sales + delta * q0;
    }
    (sales, q, stations)
}

#[test]
fn simulate_first_year_matches_hand_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let coeffs: Value =
        serde_json::from_slice(&std::fs::read(fixture("paper_estimates.json")).unwrap()).unwrap();
    let mut d = coeffs["demand"]["coefficients"].clone();
    let mut s = coeffs["supply"]["coefficients"].clone();
    d["const"] = 2.5.into();
    s["const"] = (-1.2).into();
    let mut est = coeffs.clone();
    est["demand"]["coefficients"] = d.clone();
    est["supply"]["coefficients"] = s.clone();
    let est_path = dir.path().join("est.json");
    std::fs::write(&est_path, est.to_string()).unwrap();

    let state_doc = serde_json::json!({
        "state": {"year": 2023, "sales": 110000.0, "ev_stock": 255500.0, "station_stock": 30000.0},
        "exog": {
            "oil_price": 4.5, "white_pop": 2.6e6, "asian_pop": 1.5e6, "avg_ev_price": 50000.0,
            "median_income": 32000.0, "parking_lots": 3000.0, "rebate_pct": 0.48,
            "saturation": {"kind": "fixed", "value": 0.4}
        }
    });
    let state_path = dir.path().join("state.json");
    std::fs::write(&state_path, state_doc.to_string()).unwrap();

    let csv = ok(
        &[
            "--full-precision",
            "simulate",
            "--coefficients",
            est_path.to_str().unwrap(),
            "--state",
            state_path.to_str().unwrap(),
            "--end-year",
            "2025",
            "--delta",
            "0.97",
        ],
        None,
    );
    let text = String::from_utf8(csv).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    let (sales, q, e) = oracle_step(&state_doc["state"], &state_doc["exog"], &d, &s, 0.97);
    let row = &rows[1];
    assert_eq!(row[0], 2024.0);
    for (got, want) in [(row[1], sales), (row[2], q), (row[3], e)] {
        assert!((got - want).abs() <= 1e-9 * want, "{got} vs {want}");
    }
}

#[test]
fn forecast_stdout_has_comparison_and_drops() {
    let out = ok(
        &[
            "forecast",
            "--panel",
            &fixture("la_panel.csv"),
            "--coefficients",
            &fixture("paper_estimates.json"),
            "--scenario",
            &fixture("scenarios/baseline.json"),
            "--scenario",
            &fixture("scenarios/combined.json"),
        ],
        None,
    );
    let text = String::from_utf8(out).unwrap();
    let (wide, drops) = text.split_once("\n\n").unwrap();
    let header = wide.lines().next().unwrap();
    assert!(header.starts_with("year,baseline_sales"));
    assert!(header.contains("combined_ev_share"));
    // Seed year 2023 through 2045.
    assert_eq!(wide.lines().count(), 1 + 23);
    let drop_lines: Vec<&str> = drops.lines().collect();
    assert_eq!(drop_lines[0], "scenario,window_end,drop_metric");
    assert_eq!(drop_lines.len(), 3);
}

#[test]
fn forecast_without_coefficients_estimates_first() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().display().to_string();
    ok(
        &[
            "--out",
            &out_dir,
            "forecast",
            "--panel",
            &fixture("synth_seed7.csv"),
            "--end-year",
            "2030",
        ],
        None,
    );
    for name in ["comparison.csv", "drops.csv", "comparison.json", "manifest.json"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
    let m: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["coefficients"], "estimated (GMM)");
}
