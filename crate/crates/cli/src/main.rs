use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use skewless::clock::ParameterProfile;
use skewless::config::ConfigFile;
use skewless::experiment::{self, Check, ExperimentPreset, PresetOutcome};
use skewless::sim::{self, SimulationConfig, Trace};

/// Environment variable holding the log filter, e.g. `SKEWLESS_LOG=debug`.
const LOG_ENV: &str = "SKEWLESS_LOG";

#[derive(Parser)]
#[command(name = "skewless", version, about = "Skewless clock synchronization: analysis and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stability analysis of a config.
    ///
    /// Exit status: 0 stable, 2 unstable, 3 not covered by the closed-form
    /// conditions, 1 invalid input.
    Analyze {
        config: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run a config and write trace.csv, report.json and config.json.
    ///
    /// Exit status 2 when the run diverges (outputs are still written).
    Simulate {
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run a canned experiment or suite and check it against its expectations.
    ///
    /// Presets: exp1, exp1-star, exp1-loop-unstable, exp1-loop-fixed, exp2,
    /// exp2-wheel-<K> (K = 0..4), naive-instability. Exit status 2 when a
    /// check fails.
    Reproduce {
        preset: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Print a config in canonical form.
    Canonical { config: PathBuf },
    /// List the named parameter profiles.
    Profiles,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Analyze { config, output } => analyze(&config, output.as_deref()),
        Command::Simulate { config, output } => simulate(&config, &output),
        Command::Reproduce { preset, seed, output } => reproduce(&preset, seed, &output),
        Command::Canonical { config } => {
            emit(&load(&config)?.0.canonical_json())?;
            Ok(0)
        }
        Command::Profiles => {
            let rows: Vec<_> = ParameterProfile::ALL.iter().map(|p| (p.name(), p.params())).collect();
            emit(&format!("{}\n", serde_json::to_string_pretty(&rows)?))?;
            Ok(0)
        }
    }
}

fn load(path: &Path) -> Result<(ConfigFile, SimulationConfig)> {
    let file = ConfigFile::load(path).with_context(|| format!("{}", path.display()))?;
    let sim = file.to_simulation().with_context(|| format!("{}", path.display()))?;
    Ok((file, sim))
}

/// Writes to stdout; a closed reader (`| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    match io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_trace(path: &Path, trace: &Trace) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    trace.write_csv(std::io::BufWriter::new(file))?;
    Ok(())
}

fn analyze(path: &Path, output: Option<&Path>) -> Result<u8> {
    let (_, cfg) = load(path)?;
    let report = experiment::analyze(&cfg)?;
    for d in &report.stability.diagnostics {
        warn!("{d}");
    }
    match output {
        Some(out) => write_json(out, &report)?,
        None => emit(&format!("{}\n", serde_json::to_string_pretty(&report)?))?,
    }
    info!("verdict {:?}", report.stability.verdict);
    Ok(experiment::verdict_exit_code(report.stability.verdict) as u8)
}

fn simulate(path: &Path, out: &Path) -> Result<u8> {
    let (file, cfg) = load(path)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let trace = sim::run(&cfg)?;
    let report = experiment::simulation_report(&cfg, &trace)?;
    write_trace(&out.join("trace.csv"), &trace)?;
    write_json(&out.join("report.json"), &report)?;
    fs::write(out.join("config.json"), file.canonical_json())?;
    info!("{:?}, sqrt_S_n = {:.3e} s", trace.status, report.metrics.sqrt_s_n);
    Ok(if trace.diverged() { 2 } else { 0 })
}

#[derive(Serialize)]
struct ReproduceSummary {
    preset: String,
    seed: Option<u64>,
    runs: Vec<RunSummary>,
    suite_checks: Vec<Check>,
    passed: bool,
}

#[derive(Serialize)]
struct RunSummary {
    preset: String,
    status: sim::RunStatus,
    sqrt_s_n: f64,
    checks: Vec<Check>,
}

fn check_line(scope: &str, c: &Check) -> String {
    format!("{} {scope}: {} ({})\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)
}

fn reproduce(name: &str, seed: Option<u64>, out: &Path) -> Result<u8> {
    let Some(presets) = ExperimentPreset::parse(name) else {
        bail!("unknown preset `{name}`");
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut outcomes: Vec<PresetOutcome> = Vec::new();
    for p in presets {
        info!("running {}", p.name());
        let outcome = p.run(seed)?;
        let dir = out.join(p.name());
        fs::create_dir_all(&dir)?;
        write_trace(&dir.join("trace.csv"), &outcome.trace)?;
        write_json(&dir.join("report.json"), &outcome.report)?;
        fs::write(dir.join("config.json"), ConfigFile::from_simulation(&outcome.config).canonical_json())?;
        for c in &outcome.report.checks {
            emit(&check_line(&p.name(), c))?;
        }
        outcomes.push(outcome);
    }
    let mut suite_checks = Vec::new();
    if name == "exp2" {
        let c = experiment::sweep_check(&outcomes)?;
        emit(&check_line(name, &c))?;
        suite_checks.push(c);
    }
    let runs: Vec<RunSummary> = outcomes
        .iter()
        .map(|o| RunSummary {
            preset: o.preset.name(),
            status: o.trace.status,
            sqrt_s_n: o.report.metrics.sqrt_s_n,
            checks: o.report.checks.clone(),
        })
        .collect();
    let passed = runs.iter().flat_map(|r| &r.checks).chain(&suite_checks).all(|c| c.passed);
    write_json(&out.join("summary.json"), &ReproduceSummary { preset: name.into(), seed, runs, suite_checks, passed })?;
    Ok(if passed { 0 } else { 2 })
}
