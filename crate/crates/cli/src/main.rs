//! `scalar-lab`: runs and validates passive-scalar experiments described by
//! TOML configs.

mod config;
mod experiments;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde_json::json;

use scalar_measures::fourier::dimension;

use config::{memory_estimate, runtime_class, validate, ExperimentSpec, Report};

#[derive(Parser)]
#[command(name = "scalar-lab", version, about = "Invariant measures of forced passive scalars on the torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment and write results plus a manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker thread cap.
        #[arg(long)]
        threads: Option<usize>,
        /// Seed override (TOML integers stop at 2^63 − 1).
        #[arg(long, value_parser = seed_parser())]
        seed: Option<u64>,
    },
    /// Check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = seed_parser())]
        seed: Option<u64>,
    },
}

fn seed_parser() -> clap::builder::RangedU64ValueParser<u64> {
    clap::value_parser!(u64).range(..=i64::MAX as u64)
}

/// Exit code for invalid configs; numerical failures exit with 1.
const CONFIG_ERROR: u8 = 2;

fn load(path: &Path, seed: Option<u64>) -> Result<(toml::Table, Option<ExperimentSpec>, Report), Report> {
    let text = fs::read_to_string(path)
        .map_err(|e| Report { errors: vec![format!("config: {}: {e}", path.display())], warnings: vec![] })?;
    let raw = config::parse(&text)?;
    let mut table: toml::Table = toml::from_str(&text).expect("parsed once already");
    if let Some(seed) = seed {
        table.insert("seed".into(), toml::Value::Integer(seed as i64));
    }
    let raw = match seed {
        Some(_) => config::parse(&toml::to_string(&table).expect("table serializes"))?,
        None => raw,
    };
    let (spec, report) = validate(&raw);
    Ok((table, spec, report))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config, seed } => validate_command(&config, seed),
        Command::Run { config, out, threads, seed } => {
            if let Some(k) = threads {
                if k == 0 {
                    eprintln!("--threads must be at least 1");
                    return ExitCode::from(CONFIG_ERROR);
                }
                rayon::ThreadPoolBuilder::new().num_threads(k).build_global().expect("thread pool is built once");
            }
            run_command(&config, out, seed)
        }
    }
}

fn validate_command(path: &Path, seed: Option<u64>) -> ExitCode {
    let (spec, report) = match load(path, seed) {
        Ok((_, spec, report)) => (spec, report),
        Err(report) => (None, report),
    };
    let ok = spec.is_some() && report.errors.is_empty();
    let mut value = json!({
        "status": if ok { "ok" } else { "invalid" },
        "errors": report.errors,
        "warnings": report.warnings,
    });
    if let Some(spec) = &spec {
        let dim = dimension(spec.n);
        value["experiment"] = json!(spec.experiment.as_str());
        value["N"] = json!(spec.n);
        value["dimension"] = json!(dim);
        value["memory_bytes"] = json!(memory_estimate(dim));
        value["runtime_class"] = json!(runtime_class(dim));
    }
    println!("{}", serde_json::to_string_pretty(&value).expect("json"));
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(CONFIG_ERROR)
    }
}

fn fail(out: Option<&Path>, kind: &str, messages: Vec<String>, code: u8) -> ExitCode {
    let record = json!({ "status": "error", "kind": kind, "errors": messages });
    let text = serde_json::to_string_pretty(&record).expect("json");
    eprintln!("{text}");
    if let Some(dir) = out {
        if fs::create_dir_all(dir).is_ok() {
            let _ = fs::write(dir.join("error.json"), format!("{text}\n"));
        }
    }
    ExitCode::from(code)
}

fn run_command(path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> ExitCode {
    let (table, spec, report) = match load(path, seed) {
        Ok(loaded) => loaded,
        Err(report) => return fail(out.as_deref(), "config", report.errors, CONFIG_ERROR),
    };
    let out = out.or_else(|| spec.as_ref().and_then(|s| s.output.clone()));
    let Some(spec) = spec.filter(|_| report.errors.is_empty()) else {
        return fail(out.as_deref(), "config", report.errors, CONFIG_ERROR);
    };
    let Some(out) = out else {
        return fail(None, "config", vec!["output: missing (set `output` or pass --out)".into()], CONFIG_ERROR);
    };
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let files = match experiments::run(&spec) {
        Ok(files) => files,
        Err(e) => return fail(Some(&out), "numerical", vec![e.to_string()], 1),
    };
    let written = fs::create_dir_all(&out).and_then(|_| {
        let _ = fs::remove_file(out.join("error.json"));
        for (name, contents) in &files {
            fs::write(out.join(name), contents)?;
        }
        fs::write(out.join("manifest.toml"), manifest(&table, &spec, &files))?;
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        fs::write(out.join("timestamp.txt"), format!("unix_seconds = {now}\n"))
    });
    match written {
        Ok(()) => {
            println!("{} wrote {} files to {}", spec.experiment.as_str(), files.len() + 2, out.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(None, "io", vec![format!("output: {}: {e}", out.display())], 1),
    }
}

/// The effective config (with the seed resolved) is itself a valid config, so
/// `run --config manifest.toml` reproduces the results.
fn manifest(table: &toml::Table, spec: &ExperimentSpec, files: &[(String, String)]) -> String {
    let mut table = table.clone();
    table.insert("seed".into(), toml::Value::Integer(spec.seed as i64));
    table.remove("output");
    let mut text = format!("# scalar-lab {}\n", env!("CARGO_PKG_VERSION"));
    for (name, _) in files {
        text.push_str(&format!("# result: {name}\n"));
    }
    text.push_str(&toml::to_string(&table).expect("table serializes"));
    text
}
