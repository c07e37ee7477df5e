//! `adload`: generate logs, validate propensities, fit reward models, train
//! and evaluate policies, and run the β-sweep Pareto experiment.
//!
//! Exit codes: 0 on success, 2 when a validation check fails (propensity
//! tests, constraint hash mismatch), 1 on any other error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::Serialize;

use adload_core::estimators::EstimatorKind;
use adload_core::harness::{self, HarnessConfig, ParetoOutcome};
use adload_core::policies::{load_policy, save_policy, Policy, PolicyFile, PolicySpec, TrainObjective, UniformPolicy};
use adload_core::simulator::ContextSchema;
use adload_core::Error;

#[derive(Debug, Parser)]
#[command(name = "adload", version, about = "Off-policy ad-load experiments")]
struct Cli {
    /// TOML configuration file; defaults are used for missing sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// SAT weight of the scalarized reward; overrides `rewards.beta`.
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Estimator (DM, IPW, ClippedIPW, SNIPS, DR). Restricts `evaluate` to
    /// one estimator and picks the `train-policy` objective (IPW or DR).
    #[arg(long, global = true)]
    estimator: Option<EstimatorKind>,
    /// Weight cap for ClippedIPW; overrides `estimation.clip`.
    #[arg(long, global = true)]
    clip: Option<f64>,
    /// Retraining rounds for `train-policy`.
    #[arg(long, global = true, default_value_t = 1)]
    rounds: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate sessions and write an adlog-v1 file.
    SimulateLog {
        #[arg(long)]
        users: Option<usize>,
        /// Logging policy file; uniform when omitted.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Output path; defaults to `<out-dir>/log.jsonl`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check logged propensities against the catalog.
    ValidatePropensities {
        #[arg(long)]
        log: PathBuf,
    },
    /// Fit a reward model on the training split of a log.
    FitRewards {
        #[arg(long)]
        log: PathBuf,
    },
    /// Train a softmax policy; simulates uniform traffic when no log is given.
    TrainPolicy {
        #[arg(long)]
        log: Option<PathBuf>,
        /// Save the policy for argmax serving instead of sampling.
        #[arg(long)]
        greedy: bool,
    },
    /// Estimate one policy's value with every estimator.
    Evaluate {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        policy: PathBuf,
    },
    /// β sweep against the baselines, scored by true value and DR estimates.
    Pareto,
    /// Re-emit the CSV report, plot data and SVG from a Pareto result.
    Report {
        /// Defaults to `<out-dir>/pareto.json`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

enum Failure {
    Validation(String),
    Error(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::ConstraintMismatch { .. } => Failure::Validation(e.to_string()),
            other => Failure::Error(other),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Error(e.into())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("validation failed: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn load_config(cli: &Cli) -> CliResult<HarnessConfig> {
    let mut cfg = match &cli.config {
        Some(path) => HarnessConfig::load(path)?,
        None => HarnessConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(beta) = cli.beta {
        cfg.rewards.beta = beta;
    }
    if let Some(clip) = cli.clip {
        cfg.estimation.clip = clip;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    std::fs::write(path, text)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    let cfg = load_config(&cli)?;
    std::fs::create_dir_all(&cli.out_dir)?;
    let out = |name: &str| cli.out_dir.join(name);
    let schema = ContextSchema::simulator();

    match &cli.command {
        Command::SimulateLog { users, policy, output } => {
            let policy: Arc<dyn Policy> = match policy {
                Some(p) => load_policy(p, &cfg.constraints, &schema)?.1,
                None => Arc::new(UniformPolicy),
            };
            let users = users.unwrap_or(cfg.logging.users);
            let records = harness::simulate(&cfg, policy.as_ref(), users, cfg.seed)?;
            let path = output.clone().unwrap_or_else(|| out("log.jsonl"));
            harness::save_records(&path, &cfg, &records)?;
            println!("{} records from {users} users under {} -> {}", records.len(), policy.name(), path.display());
        }
        Command::ValidatePropensities { log } => {
            let records = harness::load_records(log, &cfg)?;
            let report = harness::check_propensities(&cfg, &records)?;
            write_json(&out("propensity_report.json"), &report)?;
            let arithmetic = match report.arithmetic_pass {
                Some(true) => "pass",
                Some(false) => "FAIL",
                None => "skipped",
            };
            println!(
                "records {}  harmonic statistic {:.4} ({})  arithmetic {arithmetic}",
                report.n_records,
                report.harmonic_statistic,
                if report.harmonic_pass { "pass" } else { "FAIL" },
            );
            if !report.passed() {
                return Err(Failure::Validation("propensity checks failed".into()));
            }
        }
        Command::FitRewards { log } => {
            let records = harness::load_records(log, &cfg)?;
            let fit = harness::fit_rewards(&cfg, &records, cfg.rewards.beta)?;
            write_json(&out("reward_model.json"), &fit)?;
            println!(
                "train mse {:.5}  validation mse {}  target variance {:.5}",
                fit.train_mse,
                fit.validation_mse.map_or("n/a".into(), |m| format!("{m:.5}")),
                fit.target_variance
            );
        }
        Command::TrainPolicy { log, greedy } => {
            let objective = match cli.estimator {
                None | Some(EstimatorKind::Dr) => TrainObjective::Dr,
                Some(EstimatorKind::Ipw) => TrainObjective::Ipw,
                Some(other) => return Err(Error::Argument(format!("cannot train with {other}; use IPW or DR")).into()),
            };
            let records = match log {
                Some(p) => harness::load_records(p, &cfg)?,
                None => harness::simulate(&cfg, &UniformPolicy, cfg.logging.users, cfg.seed)?,
            };
            let (learned, rounds) =
                harness::train_with_rounds(&cfg, records, cfg.rewards.beta, objective, cli.rounds)?;
            let policy = learned.report.policy;
            let mut spec = PolicySpec::Softmax {
                name: policy.name(),
                params: policy.params().clone(),
            };
            if *greedy {
                spec = PolicySpec::Greedy { policy: Box::new(spec) };
            }
            save_policy(out("policy.json"), &PolicyFile::new(spec, &cfg.constraints, &schema))?;
            write_json(&out("training.json"), &rounds)?;
            for r in &rounds {
                println!(
                    "round {}  records {}  best epoch {}  validation value {:.5}",
                    r.round, r.n_records, r.best_epoch, r.validation_value
                );
            }
        }
        Command::Evaluate { log, policy } => {
            let records = harness::load_records(log, &cfg)?;
            let (_, policy) = load_policy(policy, &cfg.constraints, &schema)?;
            let kinds = match cli.estimator {
                Some(k) => vec![k],
                None => vec![
                    EstimatorKind::Dm,
                    EstimatorKind::Ipw,
                    EstimatorKind::ClippedIpw,
                    EstimatorKind::Snips,
                    EstimatorKind::Dr,
                ],
            };
            let eval = harness::evaluate(&cfg, &records, policy.as_ref(), &kinds, cli.clip, cfg.rewards.beta)?;
            write_json(&out("evaluation.json"), &eval)?;
            println!("policy {}  beta {}  held-out records {}", eval.policy, eval.beta, eval.n_evaluation);
            for e in &eval.estimates {
                println!("{:<11} {:>10.5} ± {:.5}", e.estimator_kind.as_str(), e.value, e.std_error);
            }
            if let Some(t) = &eval.true_value {
                println!("{:<11} {:>10.5} (sat {:.5}, ads {:.5})", "true", t.v_total, t.v_sat, t.v_ads);
            }
        }
        Command::Pareto => {
            let run = harness::run_pareto(&cfg)?;
            for p in &run.policies {
                let file = PolicyFile::new(
                    PolicySpec::Softmax {
                        name: p.name(),
                        params: p.params().clone(),
                    },
                    &cfg.constraints,
                    &schema,
                );
                save_policy(out(&format!("policy_{}.json", p.name())), &file)?;
            }
            write_json(&out("pareto.json"), &run.outcome)?;
            emit_report(&run.outcome, &cli.out_dir)?;
        }
        Command::Report { input } => {
            let path = input.clone().unwrap_or_else(|| out("pareto.json"));
            let text = std::fs::read_to_string(&path)?;
            let outcome: ParetoOutcome = serde_json::from_str(&text).map_err(Error::from)?;
            emit_report(&outcome, &cli.out_dir)?;
        }
    }
    Ok(())
}

fn emit_report(outcome: &ParetoOutcome, dir: &Path) -> CliResult {
    let table = harness::report_csv(&outcome.rows)?;
    write_text(&dir.join("pareto.csv"), &table)?;
    write_text(&dir.join("pareto_plot.csv"), &harness::plot_data_csv(&outcome.rows)?)?;
    write_text(&dir.join("pareto.svg"), &harness::render_svg(&outcome.rows))?;
    println!(
        "{:<14} {:>5} {:<12} {:>9} {:>9} {:>9} {:>9}",
        "policy", "beta", "source", "v_sat", "v_ads", "sat_loss", "ads_loss"
    );
    for r in &outcome.rows {
        let source = match r.source {
            harness::ValueSource::TrueValue => "true_value",
            harness::ValueSource::DrEstimate => "dr_estimate",
        };
        println!(
            "{:<14} {:>5} {:<12} {:>9.5} {:>9.5} {:>9.2} {:>9.2}",
            r.policy_name,
            r.beta.map_or("-".into(), |b| b.to_string()),
            source,
            r.v_sat,
            r.v_ads,
            r.sat_loss_pct,
            r.ads_loss_pct
        );
    }
    Ok(())
}
