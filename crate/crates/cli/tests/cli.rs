use std::path::Path;
use std::process::Command;

use nopa_core::{GaussianState, ModeLabel};

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn nopa(args: &[&str]) -> Outcome {
    nopa_env(args, None)
}

fn nopa_env(args: &[&str], seed_env: Option<&str>) -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("nopa").chain(args.iter().copied());
    let code = nopa_cli::main_with(argv, seed_env, &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn csv_rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

fn write_vacuum4(dir: &Path) -> String {
    let path = dir.join("vacuum4.json");
    let labels = ["m1", "m2", "m3", "m4"].map(ModeLabel::from).to_vec();
    std::fs::write(&path, GaussianState::vacuum(labels).unwrap().to_json()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_reports_gain_two() {
    let o = nopa(&["run", "--reflectivity", "0.5", "--r1", "1", "--r2", "1"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(o.stdout.contains("gain G = 2.00000e0"), "{}", o.stdout);
}

#[test]
fn run_rejects_unit_reflectivity() {
    let o = nopa(&["run", "--reflectivity", "1.0"]);
    assert_eq!(o.code, 2);
    assert!(o.stderr.contains("reflectivity"), "{}", o.stderr);
}

#[test]
fn run_without_squeezing_reports_seven() {
    let o = nopa(&["run", "-R", "0.5", "--r1", "0", "--r2", "0", "--format", "json"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let doc: serde_json::Value = serde_json::from_str(&o.stdout).unwrap();
    let first = &doc["variances"][0];
    assert_eq!(first["quadrature"], "out_s.X");
    assert!((first["ledger"].as_f64().unwrap() - 7.0).abs() < 1e-12);
    assert!(doc.get("ledger").is_none());
    let text = nopa(&["run", "-R", "0.5", "--r1", "0", "--r2", "0"]).stdout;
    assert!(text.lines().any(|l| l.contains("out_s.X") && l.contains("7.00000e0")));
}

#[test]
fn run_writes_result_and_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("result.json");
    let o = nopa(&[
        "run", "-R", "0.3", "--shots", "5", "--seed", "2", "--emit-ledger", "--format", "json",
        "--output", out.to_str().unwrap(),
    ]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let stdout: serde_json::Value = serde_json::from_str(&o.stdout).unwrap();
    let ledger = serde_json::to_string(&stdout["ledger"]).unwrap();
    nopa_core::HeisenbergLedger::from_json(&ledger).unwrap();
    let file: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(file["shots_total"], 5);
    assert_eq!(file["transcripts"].as_array().unwrap().len(), 5);
}

#[test]
fn sweep_over_reflectivity() {
    let o = nopa(&["sweep", "--grid-R", "0.1:0.9:0.1", "--r1", "0.8", "--r2", "1.3"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(o.stdout.starts_with("R,r1,r2,G,var_Xs,var_Ps,var_Xi,var_Pi,excess_Xs,excess_Xi\n"));
    let rows = csv_rows(&o.stdout);
    assert_eq!(rows.len(), 9);
    for (k, row) in rows.iter().enumerate() {
        let r = 0.1 * (k + 1) as f64;
        assert!((row[0] - r).abs() < 1e-12);
        let want_s = 2.0 / (1.0 - r) * (-2.0 * 0.8f64).exp();
        let want_i = 2.0 * (-2.6f64).exp() + 2.0 * r / (1.0 - r) * (-1.6f64).exp();
        assert!((row[8] - want_s).abs() < 1e-10, "row {k}");
        assert!((row[9] - want_i).abs() < 1e-10, "row {k}");
        assert!((row[3] - 1.0 / (1.0 - r)).abs() < 1e-12);
    }
    // Every number carries 17 significant digits.
    let first_value = o.stdout.lines().nth(1).unwrap().split(',').next().unwrap();
    assert_eq!(first_value, "1.0000000000000001e-1");
}

#[test]
fn sweep_is_deterministic_and_lexicographic() {
    let args = ["sweep", "--grid-R", "0.2:0.4:0.2", "--grid-r", "0:1:0.5"];
    let a = nopa(&args);
    let b = nopa(&args);
    assert_eq!(a.code, 0, "{}", a.stderr);
    assert_eq!(a.stdout, b.stdout);
    let keys: Vec<(f64, f64, f64)> = csv_rows(&a.stdout).iter().map(|r| (r[0], r[1], r[2])).collect();
    assert_eq!(keys.len(), 2 * 3 * 3);
    let mut sorted = keys.clone();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    assert_eq!(keys, sorted);
}

#[test]
fn sweep_to_file_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let o = nopa(&["sweep", "--grid-R", "0:0.5:0.25", "--output", path.to_str().unwrap()]);
    assert_eq!(o.code, 0);
    assert!(o.stdout.is_empty());
    assert_eq!(csv_rows(&std::fs::read_to_string(&path).unwrap()).len(), 3);
    let j = nopa(&["sweep", "--grid-R", "0:0.5:0.25", "--format", "json"]);
    let rows: Vec<serde_json::Value> = serde_json::from_str(&j.stdout).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2]["G"].as_f64(), Some(2.0));
}

#[test]
fn sweep_rejects_bad_grids() {
    assert_eq!(nopa(&["sweep", "--grid-R", "0.5:1.0:0.25"]).code, 2);
    assert_eq!(nopa(&["sweep", "--grid-R", "0.5:0.1:0.1"]).code, 2);
    assert_eq!(nopa(&["sweep", "--grid-r", "0:1:0"]).code, 2);
}

#[test]
fn criteria_on_the_resource() {
    let o = nopa(&["criteria", "--r1", "1", "--r2", "1", "--format", "json"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let doc: serde_json::Value = serde_json::from_str(&o.stdout).unwrap();
    let results = doc["results"].as_array().unwrap();
    assert_eq!(results.len(), 4);
    for r in results {
        assert_eq!(r["pass"], true);
        assert!((r["variance"].as_f64().unwrap() - 2.0 * (-2f64).exp()).abs() < 1e-10);
    }
    let o = nopa(&["criteria", "--r1", "0", "--r2", "0", "--format", "csv"]);
    let lines: Vec<&str> = o.stdout.lines().skip(1).collect();
    assert_eq!(lines.len(), 4);
    assert!(lines.iter().all(|l| l.ends_with(",false")));
}

#[test]
fn ghz_on_vacuum_fails_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let state = write_vacuum4(dir.path());
    let o = nopa(&["criteria", "--combos", "ghz", "--state", &state, "--format", "json"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let doc: serde_json::Value = serde_json::from_str(&o.stdout).unwrap();
    let results = doc["results"].as_array().unwrap();
    assert_eq!(results.len(), 7);
    for r in results {
        assert_eq!(r["pass"], false);
        assert_eq!(r["variance"], r["bound"]);
    }
    let cluster = nopa(&["criteria", "--combos", "cluster", "--state", &state]);
    assert_eq!(cluster.code, 0);
    assert!(cluster.stdout.contains("overall: fail"));
    // NOPA combinations map a foreign state onto the resource by position.
    let nopa_set = nopa(&["criteria", "--state", &state]);
    assert_eq!(nopa_set.code, 0, "{}", nopa_set.stderr);
    assert!(nopa_set.stdout.contains("nopa-x1"));
}

#[test]
fn criteria_rejects_malformed_states() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"modes\":[\"a\"],\"mean\":[0,0]}").unwrap();
    let o = nopa(&["criteria", "--state", bad.to_str().unwrap()]);
    assert_eq!(o.code, 2);
    let two = dir.path().join("two.json");
    let labels = ["a", "b"].map(ModeLabel::from).to_vec();
    std::fs::write(&two, GaussianState::vacuum(labels).unwrap().to_json()).unwrap();
    assert_eq!(nopa(&["criteria", "--state", two.to_str().unwrap()]).code, 2);
    assert_eq!(nopa(&["criteria", "--state", "/nonexistent/state.json"]).code, 2);
}

#[test]
fn montecarlo_needs_enough_shots() {
    let o = nopa(&["montecarlo", "--shots", "10"]);
    assert_eq!(o.code, 2);
    assert!(o.stderr.contains("at least 100"));
}

#[test]
fn montecarlo_is_consistent_and_matches_network() {
    let o = nopa(&["montecarlo", "--shots", "100000", "--seed", "9", "--network", "--format", "json"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let doc: serde_json::Value = serde_json::from_str(&o.stdout).unwrap();
    assert_eq!(doc["pass"], true);
    assert_eq!(doc["network_max_deviation"].as_f64(), Some(0.0));
    for z in doc["zscores"].as_array().unwrap() {
        assert!(z["z"].as_f64().unwrap().abs() < 5.0, "{z}");
    }
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"seed": 5, "shots": 200}"#).unwrap();
    let run = |args: &[&str], env| nopa_env(args, env).stdout;
    let base = ["montecarlo", "--shots", "200", "--format", "csv"];
    let with_seed = |s: &str| {
        let mut v = base.to_vec();
        v.extend(["--seed", s]);
        run(&v, None)
    };
    // Environment is the fallback.
    assert_eq!(run(&base, Some("3")), with_seed("3"));
    assert_ne!(run(&base, Some("3")), with_seed("4"));
    // A flag beats the environment.
    let mut flagged = base.to_vec();
    flagged.extend(["--seed", "4"]);
    assert_eq!(run(&flagged, Some("3")), with_seed("4"));
    // The config file beats the environment.
    let cfg_args = ["montecarlo", "--config", cfg.to_str().unwrap(), "--format", "csv"];
    assert_eq!(run(&cfg_args, Some("3")), with_seed("5"));
    assert_eq!(nopa_env(&base, Some("nope")).code, 2);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"R": 0.8, "r1": 0, "r2": 0, "input_s": {"kind": "coherent", "mean_x": 3, "mean_p": -1}}"#,
    )
    .unwrap();
    let path = cfg.to_str().unwrap();
    let from_file = nopa(&["run", "--config", path, "--format", "json"]);
    assert_eq!(from_file.code, 0, "{}", from_file.stderr);
    let doc: serde_json::Value = serde_json::from_str(&from_file.stdout).unwrap();
    assert_eq!(doc["config"]["reflectivity"].as_f64(), Some(0.8));
    assert_eq!(doc["config"]["input_s"]["kind"], "coherent");
    let overridden = nopa(&["run", "--config", path, "-R", "0.5", "--format", "json"]);
    let doc: serde_json::Value = serde_json::from_str(&overridden.stdout).unwrap();
    assert_eq!(doc["config"]["reflectivity"].as_f64(), Some(0.5));
    assert_eq!(doc["gain"].as_f64(), Some(2.0));

    std::fs::write(&cfg, r#"{"R": 0.5, "bogus": true}"#).unwrap();
    assert_eq!(nopa(&["run", "--config", path]).code, 2);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(nopa(&[]).code, 2);
    assert_eq!(nopa(&["bogus"]).code, 2);
    assert_eq!(nopa(&["run", "--r1", "abc"]).code, 2);
    assert_eq!(nopa(&["run", "--format", "xml"]).code, 2);
    assert_eq!(nopa(&["run", "--r1", "-1"]).code, 2);
    let help = nopa(&["--help"]);
    assert_eq!(help.code, 0);
    assert!(help.stdout.contains("montecarlo"));
}

#[test]
fn error_classes_map_to_exit_codes() {
    use nopa_cli::CliError;
    assert_eq!(CliError::Usage(String::new()).exit_code(), 2);
    assert_eq!(CliError::SelfTest(String::new()).exit_code(), 3);
    assert_eq!(CliError::Io(std::io::Error::other("x")).exit_code(), 1);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_nopa");
    let status = Command::new(bin).args(["run", "--reflectivity", "1.0"]).output().unwrap();
    assert_eq!(status.status.code(), Some(2));
    let ok = Command::new(bin)
        .args(["criteria", "--r1", "1", "--r2", "1"])
        .env_remove("NOPA_SEED")
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("overall: pass"));
    let seeded = |env: &str| {
        Command::new(bin)
            .args(["montecarlo", "--shots", "100", "--format", "csv"])
            .env("NOPA_SEED", env)
            .output()
            .unwrap()
            .stdout
    };
    assert_eq!(seeded("11"), seeded("11"));
    assert_ne!(seeded("11"), seeded("12"));
}
