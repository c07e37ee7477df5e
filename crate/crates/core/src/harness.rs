//! Experiment orchestration shared by the command-line tool and the Python
//! bindings: configuration, log generation, training, evaluation and the
//! β-sweep Pareto experiment.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::action_space::{ActionConstraints, CatalogSet};
use crate::dataset::{
    read_log, split_by_user, to_bandit_samples, validate_propensities, write_log, BanditSample, HarmonicConfig,
    LogHeader, LoggedRecord, PropensityReport, ReadMode,
};
use crate::error::{Error, Result};
use crate::estimators::{
    fit_reward_model, EstimatorKind, OffPolicyEvaluator, RewardModel, RewardModelConfig, RewardModelFit,
    StdErrorMethod, ValueEstimate, DEFAULT_CLIP,
};
use crate::policies::{
    train_policy, FatiguePolicy, FatiguePolicyConfig, MaxAdsPolicy, NoAdsPolicy, Policy, SoftmaxPolicy,
    StaticPolicy, StaticPolicyConfig, TrainObjective, TrainReport, TrainingConfig, UniformPolicy,
};
use crate::rewards::{DiscountParams, RewardFunction, RewardMixConfig, RewardWeights};
use crate::simulator::{
    generate_log_with, true_policy_value_with, ContextSchema, EnvironmentConfig, OracleOptions, TruePolicyValue,
};

pub mod pareto;
pub mod report;

pub use pareto::{
    dominates, front_by_losses, front_by_values, non_dominated, pareto_losses, ParetoRow, PolicyPoint, ValueSource,
};
pub use report::{plot_data_csv, render_svg, report_csv};

// ── Configuration ──

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSection {
    pub weights: RewardWeights,
    pub discount: DiscountParams,
    pub beta: f64,
}

impl Default for RewardSection {
    fn default() -> Self {
        Self {
            weights: RewardWeights::default(),
            discount: DiscountParams::default(),
            beta: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoggingSection {
    /// Users simulated by `simulate-log` and the Pareto experiment.
    pub users: usize,
    /// Users in each fresh uniform slice of a retraining round.
    pub refresh_users: usize,
    pub validation_fraction: f64,
}

impl Default for LoggingSection {
    fn default() -> Self {
        Self {
            users: 20_000,
            refresh_users: 4_000,
            validation_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationSection {
    pub significance: f64,
    pub harmonic: HarmonicConfig,
}

impl Default for ValidationSection {
    fn default() -> Self {
        Self {
            significance: 0.05,
            harmonic: HarmonicConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationSection {
    pub clip: f64,
    pub bootstrap_resamples: usize,
    /// Use the analytic standard error instead of the bootstrap.
    pub analytic_std_error: bool,
}

impl Default for EstimationSection {
    fn default() -> Self {
        Self {
            clip: DEFAULT_CLIP,
            bootstrap_resamples: 200,
            analytic_std_error: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParetoSection {
    pub betas: Vec<f64>,
    pub static_offsets: Vec<u32>,
    pub static_post_gap: u32,
    pub fatigue: FatiguePolicyConfig,
}

impl Default for ParetoSection {
    fn default() -> Self {
        Self {
            betas: vec![0.7, 0.8, 0.9],
            static_offsets: vec![2, 3, 4],
            static_post_gap: 5,
            fatigue: FatiguePolicyConfig::default(),
        }
    }
}

/// Everything a run needs. Every section is optional in the TOML file; a
/// missing `[environment]` means "no simulator": `evaluate` then reports
/// estimates only, while simulation commands fall back to the defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub seed: u64,
    pub environment: Option<EnvironmentConfig>,
    pub constraints: ActionConstraints,
    pub rewards: RewardSection,
    pub logging: LoggingSection,
    pub validation: ValidationSection,
    pub reward_model: RewardModelConfig,
    pub training: TrainingConfig,
    pub estimation: EstimationSection,
    pub oracle: OracleOptions,
    pub pareto: ParetoSection,
}

impl HarnessConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.constraints.validate()?;
        self.reward(self.rewards.beta)?;
        if let Some(env) = &self.environment {
            env.validate()?;
        }
        if !(self.logging.validation_fraction > 0.0 && self.logging.validation_fraction < 1.0) {
            return Err(Error::Config("logging.validation_fraction must be in (0, 1)".into()));
        }
        if !(self.validation.significance > 0.0 && self.validation.significance < 1.0) {
            return Err(Error::Config("validation.significance must be in (0, 1)".into()));
        }
        if !(self.estimation.clip > 0.0) {
            return Err(Error::Config("estimation.clip must be positive".into()));
        }
        if self.pareto.betas.is_empty() {
            return Err(Error::Config("pareto.betas is empty".into()));
        }
        for &b in &self.pareto.betas {
            RewardMixConfig::new(b)?;
        }
        for &offset in &self.pareto.static_offsets {
            StaticPolicy::new(StaticPolicyConfig {
                offset,
                post_gap: self.pareto.static_post_gap,
            })?;
        }
        self.pareto.fatigue.validate()
    }

    pub fn environment_or_default(&self) -> EnvironmentConfig {
        self.environment.clone().unwrap_or_default()
    }

    pub fn catalogs(&self) -> Result<CatalogSet> {
        CatalogSet::new(self.constraints)
    }

    pub fn reward(&self, beta: f64) -> Result<RewardFunction> {
        RewardFunction::new(
            self.rewards.weights.clone(),
            self.rewards.discount,
            RewardMixConfig::new(beta)?,
        )
    }

    pub fn evaluator(&self) -> OffPolicyEvaluator {
        OffPolicyEvaluator {
            std_error: if self.estimation.analytic_std_error {
                StdErrorMethod::Analytic
            } else {
                StdErrorMethod::Bootstrap {
                    resamples: self.estimation.bootstrap_resamples,
                    seed: self.seed,
                }
            },
        }
    }

    fn oracle_options(&self) -> OracleOptions {
        OracleOptions {
            seed: self.seed,
            ..self.oracle
        }
    }
}

// ── Logs ──

pub fn log_header(constraints: &ActionConstraints) -> LogHeader {
    let schema = ContextSchema::simulator();
    LogHeader::new(&schema.name, schema.len(), Some(constraints.hash()))
}

/// Simulates `users` sessions under `policy` with the configured
/// environment and reward weights.
pub fn simulate(cfg: &HarnessConfig, policy: &dyn Policy, users: usize, seed: u64) -> Result<Vec<LoggedRecord>> {
    let catalogs = cfg.catalogs()?;
    generate_log_with(
        policy,
        &cfg.environment_or_default(),
        &catalogs,
        users,
        seed,
        &cfg.rewards.weights,
        &cfg.rewards.discount,
    )
}

pub fn save_records(path: impl AsRef<Path>, cfg: &HarnessConfig, records: &[LoggedRecord]) -> Result<()> {
    write_log(path, &log_header(&cfg.constraints), records)
}

/// Reads a log strictly and checks it against the configured constraints
/// and context schema.
pub fn load_records(path: impl AsRef<Path>, cfg: &HarnessConfig) -> Result<Vec<LoggedRecord>> {
    let log = read_log(path, ReadMode::Strict)?;
    let header = log
        .header
        .ok_or_else(|| Error::Data("log file has no header".into()))?;
    let schema = ContextSchema::simulator();
    if header.context_schema != schema.name || header.context_len != schema.len() {
        return Err(Error::Schema {
            found: format!("{}[{}]", header.context_schema, header.context_len),
            expected: format!("{}[{}]", schema.name, schema.len()),
        });
    }
    if let Some(hash) = header.constraints_hash {
        let expected = cfg.constraints.hash();
        if hash != expected {
            return Err(Error::ConstraintMismatch {
                policy: hash,
                catalog: expected,
            });
        }
    }
    let catalogs = cfg.catalogs()?;
    for r in &log.records {
        r.validate(&catalogs)?;
    }
    Ok(log.records)
}

pub fn check_propensities(cfg: &HarnessConfig, records: &[LoggedRecord]) -> Result<PropensityReport> {
    Ok(validate_propensities(
        records,
        &cfg.catalogs()?,
        cfg.validation.significance,
        &cfg.validation.harmonic,
    ))
}

/// Train and validation samples for one β, split by user.
pub fn split_samples(
    cfg: &HarnessConfig,
    records: &[LoggedRecord],
    beta: f64,
) -> Result<(Vec<BanditSample>, Vec<BanditSample>)> {
    let catalogs = cfg.catalogs()?;
    let reward = cfg.reward(beta)?;
    let (train, validation) = split_by_user(records.to_vec(), cfg.logging.validation_fraction, cfg.seed);
    if train.is_empty() || validation.is_empty() {
        return Err(Error::Degenerate(format!(
            "{} records from too few users to split into train and validation",
            records.len()
        )));
    }
    Ok((
        to_bandit_samples(&train, &catalogs, &reward)?,
        to_bandit_samples(&validation, &catalogs, &reward)?,
    ))
}

pub fn fit_rewards(cfg: &HarnessConfig, records: &[LoggedRecord], beta: f64) -> Result<RewardModelFit> {
    let (train, validation) = split_samples(cfg, records, beta)?;
    fit_reward_model(&train, &validation, &cfg.reward_model)
}

// ── Training ──

#[derive(Debug, Clone)]
pub struct LearnedPolicy {
    pub beta: f64,
    pub objective: TrainObjective,
    pub report: TrainReport,
    pub reward_model: Option<RewardModelFit>,
}

pub fn learned_name(objective: TrainObjective, beta: f64) -> String {
    let tag = match objective {
        TrainObjective::Ipw => "ipw",
        TrainObjective::Dr => "dr",
    };
    format!("{tag}_beta_{beta}")
}

/// Fits a reward model when the objective needs one, then trains a softmax
/// policy on the training split.
pub fn train_for_beta(
    cfg: &HarnessConfig,
    records: &[LoggedRecord],
    beta: f64,
    objective: TrainObjective,
) -> Result<LearnedPolicy> {
    let (train, validation) = split_samples(cfg, records, beta)?;
    let reward_model = match objective {
        TrainObjective::Dr => Some(fit_reward_model(&train, &validation, &cfg.reward_model)?),
        TrainObjective::Ipw => None,
    };
    let training = TrainingConfig {
        seed: cfg.training.seed.wrapping_add(cfg.seed),
        ..cfg.training.clone()
    };
    let report = train_policy(
        &learned_name(objective, beta),
        &train,
        &validation,
        objective,
        reward_model.as_ref().map(|f| &f.model as &dyn RewardModel),
        &training,
    )?;
    Ok(LearnedPolicy {
        beta,
        objective,
        report,
        reward_model,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub n_records: usize,
    pub best_epoch: usize,
    pub validation_value: f64,
}

/// Trains on `records`, then `rounds - 1` times appends a fresh uniform
/// slice of `logging.refresh_users` users and retrains.
pub fn train_with_rounds(
    cfg: &HarnessConfig,
    records: Vec<LoggedRecord>,
    beta: f64,
    objective: TrainObjective,
    rounds: usize,
) -> Result<(LearnedPolicy, Vec<RoundSummary>)> {
    if rounds == 0 {
        return Err(Error::Argument("rounds must be at least 1".into()));
    }
    let mut data = records;
    let mut summaries = Vec::with_capacity(rounds);
    let mut last = None;
    for round in 0..rounds {
        if round > 0 {
            let slice_seed = cfg.seed.wrapping_add(round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            data.extend(simulate(cfg, &UniformPolicy, cfg.logging.refresh_users, slice_seed)?);
        }
        let learned = train_for_beta(cfg, &data, beta, objective)?;
        log::info!(
            "round {round}: {} records, validation value {:.5}",
            data.len(),
            learned.report.validation_value
        );
        summaries.push(RoundSummary {
            round,
            n_records: data.len(),
            best_epoch: learned.report.best_epoch,
            validation_value: learned.report.validation_value,
        });
        last = Some(learned);
    }
    Ok((last.expect("at least one round"), summaries))
}

// ── Evaluation ──

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub policy: String,
    pub beta: f64,
    pub n_train: usize,
    pub n_evaluation: usize,
    pub estimates: Vec<ValueEstimate>,
    pub reward_model_validation_mse: Option<f64>,
    /// Present when the configuration describes a simulator.
    pub true_value: Option<TruePolicyValue>,
}

/// Runs the requested estimators on the held-out split. Model-based
/// estimators use a reward model fitted on the training split.
pub fn evaluate(
    cfg: &HarnessConfig,
    records: &[LoggedRecord],
    policy: &dyn Policy,
    kinds: &[EstimatorKind],
    clip: Option<f64>,
    beta: f64,
) -> Result<Evaluation> {
    let (train, held_out) = split_samples(cfg, records, beta)?;
    let fit = if kinds.iter().any(|k| k.needs_reward_model()) {
        Some(fit_reward_model(&train, &held_out, &cfg.reward_model)?)
    } else {
        None
    };
    let evaluator = cfg.evaluator();
    let clip = clip.unwrap_or(cfg.estimation.clip);
    let estimates = kinds
        .iter()
        .map(|&k| {
            let model = fit.as_ref().map(|f| &f.model as &dyn RewardModel);
            let c = (k == EstimatorKind::ClippedIpw).then_some(clip);
            evaluator.estimate(k, policy, model, &held_out, c)
        })
        .collect::<Result<Vec<_>>>()?;
    let true_value = match &cfg.environment {
        Some(env) => Some(
            true_policy_value_with(&[policy], env, &cfg.catalogs()?, &cfg.reward(beta)?, &cfg.oracle_options())?
                .remove(0),
        ),
        None => None,
    };
    Ok(Evaluation {
        policy: policy.name(),
        beta,
        n_train: train.len(),
        n_evaluation: held_out.len(),
        estimates,
        reward_model_validation_mse: fit.and_then(|f| f.validation_mse),
        true_value,
    })
}

// ── Pareto experiment ──

pub fn baseline_policies(cfg: &HarnessConfig) -> Result<Vec<Arc<dyn Policy>>> {
    let schema = ContextSchema::simulator();
    let mut out: Vec<Arc<dyn Policy>> = vec![Arc::new(NoAdsPolicy), Arc::new(MaxAdsPolicy), Arc::new(UniformPolicy)];
    for &offset in &cfg.pareto.static_offsets {
        out.push(Arc::new(StaticPolicy::new(StaticPolicyConfig {
            offset,
            post_gap: cfg.pareto.static_post_gap,
        })?));
    }
    out.push(Arc::new(FatiguePolicy::new(cfg.pareto.fatigue, &schema)?));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedSummary {
    pub name: String,
    pub beta: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub validation_value: f64,
    pub reward_model_validation_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoOutcome {
    pub n_records: usize,
    pub seed: u64,
    /// Calibrated rows from true values, then from DR estimates.
    pub rows: Vec<ParetoRow>,
    /// True values with their Monte Carlo errors, in row order.
    pub true_values: Vec<TruePolicyValue>,
    pub learned: Vec<LearnedSummary>,
}

impl ParetoOutcome {
    pub fn true_rows(&self) -> Vec<&ParetoRow> {
        self.rows.iter().filter(|r| r.source == ValueSource::TrueValue).collect()
    }
}

#[derive(Debug, Clone)]
pub struct ParetoRun {
    pub outcome: ParetoOutcome,
    pub policies: Vec<SoftmaxPolicy>,
}

/// Logs uniform traffic, trains one DR policy per β, and scores learned
/// policies and baselines by true value (oracle) and by DR estimates on the
/// held-out split.
pub fn run_pareto(cfg: &HarnessConfig) -> Result<ParetoRun> {
    cfg.validate()?;
    let env = cfg.environment_or_default();
    let catalogs = cfg.catalogs()?;
    let records = simulate(cfg, &UniformPolicy, cfg.logging.users, cfg.seed)?;
    log::info!("logged {} records from {} users", records.len(), cfg.logging.users);

    let mut learned = Vec::new();
    let mut summaries = Vec::new();
    for &beta in &cfg.pareto.betas {
        let l = train_for_beta(cfg, &records, beta, TrainObjective::Dr)?;
        summaries.push(LearnedSummary {
            name: l.report.policy.name(),
            beta,
            best_epoch: l.report.best_epoch,
            epochs_run: l.report.epochs_run,
            validation_value: l.report.validation_value,
            reward_model_validation_mse: l.reward_model.as_ref().and_then(|f| f.validation_mse),
        });
        learned.push(l);
    }

    let mut policies = baseline_policies(cfg)?;
    let mut betas: Vec<Option<f64>> = vec![None; policies.len()];
    for l in &learned {
        policies.push(Arc::new(l.report.policy.clone()));
        betas.push(Some(l.beta));
    }
    let refs: Vec<&dyn Policy> = policies.iter().map(|p| p.as_ref()).collect();

    let true_values = true_policy_value_with(&refs, &env, &catalogs, &cfg.reward(cfg.rewards.beta)?, &cfg.oracle_options())?;
    let truth: Vec<PolicyPoint> = refs
        .iter()
        .zip(&betas)
        .zip(&true_values)
        .map(|((p, b), v)| PolicyPoint::new(p.name(), *b, v.v_sat, v.v_ads))
        .collect();
    let mut rows = pareto_losses(&truth, ValueSource::TrueValue)?;

    // Per-objective DR estimates: β = 1 isolates SAT, β = 0 isolates ads.
    let evaluator = cfg.evaluator();
    let mut per_objective = Vec::new();
    for beta in [1.0, 0.0] {
        let (train, held_out) = split_samples(cfg, &records, beta)?;
        let fit = fit_reward_model(&train, &held_out, &cfg.reward_model)?;
        let values = refs
            .iter()
            .map(|p| Ok(evaluator.dr(*p, &fit.model, &held_out)?.value))
            .collect::<Result<Vec<f64>>>()?;
        per_objective.push(values);
    }
    let estimated: Vec<PolicyPoint> = refs
        .iter()
        .zip(&betas)
        .enumerate()
        .map(|(i, (p, b))| PolicyPoint::new(p.name(), *b, per_objective[0][i], per_objective[1][i]))
        .collect();
    rows.extend(pareto_losses(&estimated, ValueSource::DrEstimate)?);

    Ok(ParetoRun {
        outcome: ParetoOutcome {
            n_records: records.len(),
            seed: cfg.seed,
            rows,
            true_values,
            learned: summaries,
        },
        policies: learned.into_iter().map(|l| l.report.policy).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let cfg = HarnessConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, HarnessConfig::default());
        assert!(cfg.environment.is_none());
    }

    #[test]
    fn toml_round_trip_with_environment() {
        let cfg = HarnessConfig {
            environment: Some(EnvironmentConfig::default()),
            seed: 9,
            ..HarnessConfig::default()
        };
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(HarnessConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_sections_and_unknown_keys() {
        let cfg = HarnessConfig::from_toml_str(
            "seed = 3\n[rewards]\nbeta = 0.9\n[training]\nepochs = 5\n[pareto]\nbetas = [0.5]\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.rewards.beta, 0.9);
        assert_eq!(cfg.training.epochs, 5);
        assert_eq!(cfg.training.hidden, TrainingConfig::default().hidden);
        assert!(matches!(HarnessConfig::from_toml_str("[rewards]\nbetta = 1\n"), Err(Error::Config(_))));
        assert!(matches!(HarnessConfig::from_toml_str("[rewards]\nbeta = 1.5\n"), Err(Error::Config(_))));
    }

    #[test]
    fn log_round_trip_and_constraint_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let cfg = HarnessConfig::default();
        let records = simulate(&cfg, &UniformPolicy, 50, 1).unwrap();
        save_records(&path, &cfg, &records).unwrap();
        assert_eq!(load_records(&path, &cfg).unwrap(), records);

        let other = HarnessConfig {
            constraints: ActionConstraints {
                min_position_difference: 3,
                ..ActionConstraints::default()
            },
            ..HarnessConfig::default()
        };
        assert!(matches!(load_records(&path, &other), Err(Error::ConstraintMismatch { .. })));
    }

    #[test]
    fn rounds_grow_the_training_set() {
        let cfg = HarnessConfig {
            logging: LoggingSection {
                users: 300,
                refresh_users: 200,
                ..LoggingSection::default()
            },
            training: TrainingConfig {
                epochs: 2,
                ..TrainingConfig::default()
            },
            ..HarnessConfig::default()
        };
        let records = simulate(&cfg, &UniformPolicy, cfg.logging.users, 0).unwrap();
        let (_, rounds) = train_with_rounds(&cfg, records, 0.8, TrainObjective::Ipw, 3).unwrap();
        assert_eq!(rounds.len(), 3);
        assert!(rounds[0].n_records < rounds[1].n_records && rounds[1].n_records < rounds[2].n_records);
    }

    #[test]
    fn evaluate_reports_true_value_only_with_environment() {
        let mut cfg = HarnessConfig {
            estimation: EstimationSection {
                analytic_std_error: true,
                ..EstimationSection::default()
            },
            ..HarnessConfig::default()
        };
        let records = simulate(&cfg, &UniformPolicy, 400, 2).unwrap();
        let kinds = [EstimatorKind::Ipw, EstimatorKind::ClippedIpw, EstimatorKind::Snips];
        let e = evaluate(&cfg, &records, &UniformPolicy, &kinds, Some(5.0), 0.8).unwrap();
        assert_eq!(e.estimates.len(), 3);
        assert_eq!(e.estimates[1].clip_level, Some(5.0));
        assert!(e.true_value.is_none());
        // Uniform against uniform logs: every weight is one.
        assert!((e.estimates[0].value - e.estimates[2].value).abs() < 1e-12);

        cfg.environment = Some(EnvironmentConfig::default());
        let e = evaluate(&cfg, &records, &NoAdsPolicy, &[EstimatorKind::Ipw], None, 0.8).unwrap();
        assert_eq!(e.true_value.unwrap().v_ads, 0.0);
    }
}
