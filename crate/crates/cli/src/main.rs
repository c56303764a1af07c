use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use target_tracking::config::{
    parse_seed_range, ExperimentConfig, ExperimentFile, PolicyKind, ScenarioConfig,
};
use target_tracking::experiment::{run_experiment, PolicySettings};
use target_tracking::sim::Scenario;
use target_tracking::verify::{run_suite, Mode, Suite};

#[derive(Debug, Parser)]
#[command(
    name = "target-tracking",
    version,
    about = "Target-tracking bandit experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one or more policies over a seed range and write CSV ledgers.
    Run {
        /// Experiment file; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; falls back to `output` in the config, then `results`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Policy name, repeatable; overrides the config.
        #[arg(long = "policy")]
        policies: Vec<PolicyKind>,
        /// Seeds as `a..b`, `a..=b` or a single number; overrides the config.
        #[arg(long)]
        seeds: Option<String>,
        /// Horizon override.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Run an acceptance suite and report measured values.
    Verify {
        #[arg(long, default_value = "all")]
        suite: Suite,
        /// Shrink horizons and seed counts tenfold.
        #[arg(long)]
        quick: bool,
    },
}

fn load(config: Option<&PathBuf>) -> Result<(ExperimentConfig, ScenarioConfig)> {
    match config {
        Some(path) => {
            ExperimentFile::load(path).with_context(|| format!("loading {}", path.display()))
        }
        None => Ok((ExperimentConfig::default(), ScenarioConfig::default())),
    }
}

fn run(
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    policies: Vec<PolicyKind>,
    seeds: Option<String>,
    horizon: Option<usize>,
) -> Result<()> {
    let (mut experiment, mut scenario_config) = load(config.as_ref())?;
    if let Some(s) = seeds {
        experiment.seeds = parse_seed_range(&s)?;
    }
    if let Some(h) = horizon {
        scenario_config.horizon = h;
    }
    experiment.validate(scenario_config.horizon)?;
    let out = out
        .or_else(|| experiment.output.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    let policies = if policies.is_empty() {
        vec![experiment.policy]
    } else {
        policies
    };
    let scenario = Scenario::<f64>::from_config(&scenario_config)?;
    let settings = PolicySettings::from_config(&experiment)?;
    for kind in policies {
        let report = run_experiment(scenario.clone(), kind, &settings, &experiment.seeds)
            .with_context(|| format!("running {kind}"))?;
        report.write(&out)?;
        let band = report.summary.final_band();
        println!(
            "{kind}: T={} seeds={} final regret median {:.4} [q10 {:.4}, q90 {:.4}] -> {}",
            band.t,
            report.seeds.len(),
            band.median,
            band.q10,
            band.q90,
            out.join(kind.name()).display()
        );
    }
    Ok(())
}

fn verify(suite: Suite, quick: bool) -> Result<bool> {
    let mode = if quick { Mode::Quick } else { Mode::Full };
    let results = run_suite(suite, mode)?;
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!(
        "{suite}: {} passed, {failed} failed",
        results.len() - failed
    );
    Ok(failed == 0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            out,
            policies,
            seeds,
            horizon,
        } => run(config, out, policies, seeds, horizon).map(|()| true),
        Command::Verify { suite, quick } => verify(suite, quick),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
