//! Command-line driver for the simulator.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use iorm::scheduler::SchedulerKind;
use iorm::sim::report::{self, METRICS_FILE};
use iorm::sim::{builtin, run_scenario, ConfigError, RunOptions, RunResult, ScenarioConfig, SimError, CATALOG};
use iorm::Objective;

const EXIT_CONFIG: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

#[derive(Parser)]
#[command(name = "iorm", version, about = "Hierarchical I/O resource management simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or built-in scenario and write its reports.
    Run {
        /// TOML scenario file, or a built-in name such as `share-ratios:2`.
        scenario: String,
        /// Root seed; defaults to the scenario's own.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for the report files.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = ["iorm", "bypass"])]
        scheduler: Option<String>,
        #[arg(long, value_parser = ["auto", "low-latency", "high-throughput", "balanced"])]
        objective: Option<String>,
        /// Also write the per-event trace.
        #[arg(long)]
        trace: bool,
    },
    /// List built-in scenarios and their variants.
    ListScenarios,
    /// Compare two run directories (or their metrics files).
    Compare { a: PathBuf, b: PathBuf },
}

fn load_scenario(spec: &str) -> Result<ScenarioConfig, ConfigError> {
    let path = Path::new(spec);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        return ScenarioConfig::from_toml(&text).map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)));
    }
    builtin(spec).ok_or_else(|| ConfigError(format!("{spec}: no such file or built-in scenario (see list-scenarios)")))
}

fn run(
    scenario: &str,
    seed: Option<u64>,
    out: &Path,
    scheduler: Option<&str>,
    objective: Option<&str>,
    trace: bool,
) -> anyhow::Result<()> {
    let mut cfg = load_scenario(scenario)?;
    if let Some(s) = scheduler {
        cfg.scheduler = if s == "bypass" { SchedulerKind::Bypass } else { SchedulerKind::Iorm };
    }
    if let Some(o) = objective {
        cfg.objective = Some(o.parse::<Objective>().map_err(ConfigError)?);
    }
    let seed = seed.unwrap_or(cfg.seed);
    let result = run_scenario(&cfg, seed, RunOptions { trace })?;
    report::write_reports(&result, out).with_context(|| format!("writing reports to {}", out.display()))?;
    print!("{}", report::summary(&result));
    eprintln!("reports written to {}", out.display());
    Ok(())
}

fn list_scenarios() {
    for entry in CATALOG {
        println!("{:<20} {}", entry.name, entry.description);
        for v in entry.variants {
            let marker = if *v == entry.default_variant { " (default)" } else { "" };
            println!("  {}:{v}{marker}", entry.name);
        }
    }
}

fn load_run(path: &Path) -> anyhow::Result<RunResult> {
    let file = if path.is_dir() { path.join(METRICS_FILE) } else { path.to_owned() };
    let text = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", file.display()))
}

fn compare(a: &Path, b: &Path) -> anyhow::Result<()> {
    let (ra, rb) = (load_run(a)?, load_run(b)?);
    println!("# A = {} ({}), B = {} ({})", ra.scenario, a.display(), rb.scenario, b.display());
    print!("{}", report::compare(&ra, &rb));
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        match cause.downcast_ref::<SimError>() {
            Some(SimError::Config(_)) => return EXIT_CONFIG,
            Some(SimError::Invariant(_)) => return EXIT_INVARIANT,
            None => {}
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run { scenario, seed, out, scheduler, objective, trace } => {
            run(scenario, *seed, out, scheduler.as_deref(), objective.as_deref(), *trace)
        }
        Command::ListScenarios => {
            list_scenarios();
            Ok(())
        }
        Command::Compare { a, b } => compare(a, b),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_names_resolve() {
        assert!(load_scenario("share-ratios:2").is_ok());
        assert!(load_scenario("no-such-scenario").is_err());
    }

    #[test]
    fn invariant_errors_map_to_exit_three() {
        let e = anyhow::Error::from(SimError::Invariant("x".into()));
        assert_eq!(exit_code(&e), EXIT_INVARIANT);
        let e = anyhow::Error::from(ConfigError("bad".into()));
        assert_eq!(exit_code(&e), EXIT_CONFIG);
    }
}
