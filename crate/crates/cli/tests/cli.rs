use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_scalar-lab");

fn lab(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> String {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(i).unwrap().parse().unwrap()).collect()
}

fn run_into(config: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--config", config, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    lab(&args)
}

const LADDER: &str = r#"
experiment = "covariance-ladder"
N = 6
nu_ladder = [0.2, 0.1, 0.05, 0.025, 0.0125]

[flow]
kind = "shear"
records = "0 1 sin 1.0"

[noise]
records = "0 1 cos 1.0"
"#;

#[test]
fn covariance_ladder_keeps_h1_balance() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, "ladder.toml", LADDER);
    let out = dir.path().join("out");
    let status = run_into(&config, &out, &[]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    for i in 0..5 {
        assert!(out.join(format!("covariance_{i}.txt")).exists());
    }
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let traces = column(&summary, "h1_trace");
    assert_eq!(traces.len(), 5);
    for t in traces {
        assert!((t - 0.5).abs() < 1e-9, "{t}");
    }
    assert!(out.join("manifest.toml").exists());
    assert!(out.join("timestamp.txt").exists());
}

#[test]
fn dissipation_probe_stays_below_one() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        &dir,
        "probe.toml",
        r#"
experiment = "dissipation-probe"
N = 6
nu_ladder = [0.2, 0.1, 0.05]
[flow]
kind = "cellular"
[probe]
tau = 1.0
"#,
    );
    let out = dir.path().join("out");
    assert!(run_into(&config, &out, &[]).status.success());
    let norms = column(&fs::read_to_string(out.join("probe.csv")).unwrap(), "semigroup_norm");
    assert_eq!(norms.len(), 3);
    assert!(norms.iter().all(|&v| v < 1.0 && v > 0.0), "{norms:?}");
}

#[test]
fn missing_truncation_is_reported_by_name() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, "bad.toml", &LADDER.replace("N = 6\n", ""));
    let out = dir.path().join("out");
    let result = run_into(&config, &out, &[]);
    assert!(!result.status.success());
    let record: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("error.json")).unwrap()).unwrap();
    assert_eq!(record["kind"], "config");
    let errors = record["errors"].as_array().unwrap();
    assert!(errors.iter().any(|e| e.as_str().unwrap().starts_with("N:")), "{errors:?}");
}

#[test]
fn validation_lists_every_violated_field() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        &dir,
        "bad.toml",
        r#"
experiment = "simulate"
N = 4
nu = -1.0
[flow]
kind = "vortex"
[noise]
isotropic_radius_sq = 0
[simulate]
dt = 0.0
horizon = 10.0
"#,
    );
    let result = lab(&["validate", "--config", &config]);
    assert!(!result.status.success());
    let report: serde_json::Value = serde_json::from_slice(&result.stdout).unwrap();
    let errors: Vec<String> =
        report["errors"].as_array().unwrap().iter().map(|e| e.as_str().unwrap().to_string()).collect();
    for field in ["flow.kind", "nu", "noise.isotropic_radius_sq", "simulate.dt"] {
        assert!(errors.iter().any(|e| e.starts_with(&format!("{field}:"))), "{field} missing from {errors:?}");
    }
}

#[test]
fn validate_reports_dimension() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, "ok.toml", LADDER);
    let result = lab(&["validate", "--config", &config]);
    assert!(result.status.success());
    let report: serde_json::Value = serde_json::from_slice(&result.stdout).unwrap();
    assert_eq!(report["status"], "ok");
    assert_eq!(report["dimension"], 168);
    assert!(report["warnings"].as_array().unwrap().is_empty());
}

#[test]
fn validate_warns_above_dense_cap() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, "big.toml", &LADDER.replace("N = 6", "N = 40"));
    let report: serde_json::Value = serde_json::from_slice(&lab(&["validate", "--config", &config]).stdout).unwrap();
    assert_eq!(report["dimension"], 6560);
    let warnings = report["warnings"].as_array().unwrap();
    assert!(warnings.iter().any(|w| w.as_str().unwrap().contains("6560") && w.as_str().unwrap().contains("4000")));
}

#[test]
fn zero_diffusivity_has_no_stationary_covariance() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, "nu0.toml", &LADDER.replace("[0.2, 0.1, 0.05, 0.025, 0.0125]", "[0.0]"));
    let result = lab(&["validate", "--config", &config]);
    assert!(!result.status.success());
    let report: serde_json::Value = serde_json::from_slice(&result.stdout).unwrap();
    assert!(report["errors"].as_array().unwrap().iter().any(|e| e.as_str().unwrap().starts_with("nu_ladder:")));
}

const SIMULATE: &str = r#"
experiment = "simulate"
N = 3
nu = 0.5
seed = 11
[flow]
kind = "shear"
records = "0 1 sin 1.0"
[noise]
isotropic_radius_sq = 1
[simulate]
scheme = "semi-implicit-em"
dt = 0.05
horizon = 20.0
members = 20
"#;

#[test]
fn simulation_outputs_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, "sim.toml", SIMULATE);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run_into(&config, &a, &["--threads", "1"]).status.success());
    assert!(run_into(&config, &b, &["--threads", "3"]).status.success());
    for name in ["stats.csv", "covariance.txt", "summary.csv", "manifest.toml"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    // the manifest is itself a config reproducing the run
    let c = dir.path().join("c");
    assert!(run_into(a.join("manifest.toml").to_str().unwrap(), &c, &[]).status.success());
    assert_eq!(fs::read(a.join("stats.csv")).unwrap(), fs::read(c.join("stats.csv")).unwrap());
}

#[test]
fn seed_override_changes_the_ensemble() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, "sim.toml", SIMULATE);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run_into(&config, &a, &[]).status.success());
    assert!(run_into(&config, &b, &["--seed", "12"]).status.success());
    assert_ne!(fs::read(a.join("stats.csv")).unwrap(), fs::read(b.join("stats.csv")).unwrap());
    assert!(fs::read_to_string(b.join("manifest.toml")).unwrap().contains("seed = 12"));
}

#[test]
fn shipped_example_configs_validate() {
    let docs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/configs");
    let mut seen = 0;
    for entry in fs::read_dir(docs).unwrap() {
        let path = entry.unwrap().path();
        let result = lab(&["validate", "--config", path.to_str().unwrap()]);
        assert!(result.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&result.stdout));
        seen += 1;
    }
    assert_eq!(seen, 6);
}

#[test]
fn growth_on_shear_matches_closed_form() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        &dir,
        "growth.toml",
        r#"
experiment = "growth"
N = 4
[flow]
kind = "shear"
records = "0 1 sin 1.0"
[growth]
initial = "1 0 cos 1.0"
times = [2.0, 6.0]
"#,
    );
    let out = dir.path().join("out");
    assert!(run_into(&config, &out, &[]).status.success());
    let csv = fs::read_to_string(out.join("growth.csv")).unwrap();
    for (t, g) in column(&csv, "T").into_iter().zip(column(&csv, "G")) {
        let exact = 1.0 + t * t / 6.0;
        assert!((g - exact).abs() / exact < 1e-5, "T={t}: {g} vs {exact}");
    }
}
