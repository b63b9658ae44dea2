mod config;
mod error;
mod output;
mod suites;

use clap::Parser;
use config::{resolve, Cli, RunConfig};
use error::CliError;
use output::{blob_hash, Output, SCHEMA_VERSION};
use serde_json::json;
use snell_mesh::model::{builtin, parse_model_definition};
use snell_mesh::AnyModelF64;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

const SEED_POLICY: &str = "single runs use the master seed; batch run i uses splitmix64(batch seed, i), where the \
batch seed is the master seed (bias, bound) or splitmix64(master seed, j) for the j-th particle count (convergence); \
robustness trial i draws from splitmix64(master seed, i); every run derives one ChaCha8 stream per (step, phase)";

struct LoadedModel {
    model: AnyModelF64,
    source: String,
    bytes: Vec<u8>,
}

fn load_model(cfg: &RunConfig) -> Result<LoadedModel, CliError> {
    let (mut model, source, bytes) = match builtin::<f64>(&cfg.model) {
        Some(m) => (m, format!("builtin:{}", cfg.model), cfg.model.as_bytes().to_vec()),
        None => {
            let bytes = std::fs::read(&cfg.model).map_err(|e| CliError::io(&cfg.model, e))?;
            let text = String::from_utf8(bytes.clone()).map_err(|e| CliError::io(&cfg.model, e))?;
            let m = parse_model_definition::<f64>(&text).map_err(|e| CliError::Model(format!("{}: {e}", cfg.model)))?;
            (m, cfg.model.clone(), bytes)
        }
    };
    if let Some(eps) = cfg.epsilon {
        model.set_epsilon(eps);
    }
    let report = model.validate();
    if !report.is_valid() {
        let listing: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
        let msg = format!("invalid model {}: {}", cfg.model, listing.join("; "));
        return Err(if cfg.epsilon.is_some() && report.only_epsilon() {
            CliError::Usage(msg)
        } else {
            CliError::Model(msg)
        });
    }
    Ok(LoadedModel { model, source, bytes })
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    let start = Instant::now();
    let cfg = resolve(cli)?;
    let loaded = load_model(&cfg)?;
    let mut out = Output::create(&cfg.out)?;
    let mut verdicts = serde_json::Map::new();
    let mut first_failure = None;
    for &suite in &cfg.suites {
        let verdict = suites::run(suite, &cfg, &loaded.model, &mut out)?;
        match verdict.failures.first() {
            None => println!("{}: pass", suite.name()),
            Some(f) => {
                println!("{}: FAIL ({f})", suite.name());
                first_failure.get_or_insert_with(|| format!("{}: {f}", suite.name()));
            }
        }
        verdicts.insert(suite.name().into(), json!({ "pass": verdict.passed(), "failures": verdict.failures }));
    }

    let config_input = match &cfg.config_file {
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| CliError::io(path.display(), e))?;
            json!({ "path": path, "sha256": blob_hash(&bytes) })
        }
        None => serde_json::Value::Null,
    };
    let timestamp_ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0);
    let mut artifacts = out.artifacts().to_vec();
    artifacts.push("manifest.json".into());
    let manifest = json!({
        "schema_version": SCHEMA_VERSION,
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "inputs": {
            "model": { "source": loaded.source, "sha256": blob_hash(&loaded.bytes) },
            "config": config_input,
        },
        "seed_policy": SEED_POLICY,
        "artifacts": artifacts,
        "verdicts": verdicts,
        "wall_time_ms": start.elapsed().as_millis() as u64,
        "timestamp_unix_ms": timestamp_ms,
    });
    out.json("manifest.json", &manifest)?;

    Ok(match first_failure {
        Some(f) => {
            eprintln!("criterion failed: {f}");
            1
        }
        None => 0,
    })
}

fn main() {
    let cli = Cli::parse();
    let code = execute(&cli).unwrap_or_else(|e| {
        eprintln!("{e}");
        e.exit_code()
    });
    std::process::exit(code);
}
