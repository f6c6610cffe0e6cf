//! Scenario runner and policy verifier CLI.
//!
//! Exit codes: 0 success, 1 failed assertions or policy violations, 2
//! usage or input errors.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pcc_sim::fleet::{load_scenario, run, RunReport};
use pcc_sim::policy::{parse_association_config, parse_manifest, CddPartnerConfig};

#[derive(Parser)]
#[command(name = "pcc-sim", version, about = "Private compute sandbox simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and evaluate its assertions.
    Run {
        /// Scenario document path.
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the full run report to this path.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Statically verify a package manifest against the compatibility
    /// predicates; violations print as JSON Lines.
    Verify {
        /// Package manifest document path.
        manifest: PathBuf,
        /// Allow-association config path.
        #[arg(long)]
        assoc: PathBuf,
    },
    /// Filter the audit log of a run report.
    Audit {
        /// Run report path (written by `run --report`).
        report: PathBuf,
        /// Comma-separated key=value filters over audit event fields,
        /// e.g. `decision=Deny,channel=PirQuery`.
        #[arg(long)]
        query: Option<String>,
    },
}

fn read(path: &PathBuf) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn cmd_run(scenario: &PathBuf, seed: Option<u64>, report: Option<&PathBuf>) -> Result<u8, String> {
    let text = read(scenario)?;
    let scenario = load_scenario(&text).map_err(|e| e.to_string())?;
    let result = run(&scenario, seed).map_err(|e| e.to_string())?;
    for a in &result.assertions {
        let status = if a.pass { "PASS" } else { "FAIL" };
        println!(
            "{status} {}: {}",
            serde_json::to_string(&a.assertion).expect("assertion serializes"),
            a.detail
        );
    }
    println!(
        "{}: {}/{} assertions passed, audit digest {}",
        result.scenario,
        result.assertions.iter().filter(|a| a.pass).count(),
        result.assertions.len(),
        result.audit_digest
    );
    if let Some(path) = report {
        std::fs::write(path, result.to_json()).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(u8::from(!result.passed))
}

fn cmd_verify(manifest: &PathBuf, assoc: &PathBuf) -> Result<u8, String> {
    let manifest = parse_manifest(&read(manifest)?).map_err(|e| e.to_string())?;
    let rules = parse_association_config(&read(assoc)?).map_err(|e| e.to_string())?;
    let report = pcc_sim::policy::verify_cdd(&manifest, &rules, &CddPartnerConfig::default());
    print!("{}", report.to_jsonl());
    Ok(u8::from(!report.is_clean()))
}

fn cmd_audit(report: &PathBuf, query: Option<&str>) -> Result<u8, String> {
    let report = RunReport::from_json(&read(report)?).map_err(|e| e.to_string())?;
    let mut filters: BTreeMap<&str, &str> = BTreeMap::new();
    for clause in query.unwrap_or("").split(',').filter(|c| !c.is_empty()) {
        let (key, value) = clause
            .split_once('=')
            .ok_or_else(|| format!("bad filter clause {clause:?}, expected key=value"))?;
        filters.insert(key, value);
    }
    for event in &report.audit_events().map_err(|e| e.to_string())? {
        let fields = serde_json::to_value(event).expect("audit event serializes");
        let matches = filters.iter().all(|(key, want)| match fields.get(key) {
            Some(serde_json::Value::String(s)) => s == want,
            Some(other) => other.to_string() == *want,
            None => false,
        });
        if matches {
            println!("{}", serde_json::to_string(event).expect("audit event serializes"));
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run { scenario, seed, report } => cmd_run(scenario, *seed, report.as_ref()),
        Command::Verify { manifest, assoc } => cmd_verify(manifest, assoc),
        Command::Audit { report, query } => cmd_audit(report, query.as_deref()),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}
