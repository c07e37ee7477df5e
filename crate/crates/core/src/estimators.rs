//! Off-policy value estimators over logged bandit samples.
//!
//! All estimates are per-record means, so values are comparable across
//! dataset sizes. Sums use fixed-order pairwise reduction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action_space::ActionCatalog;
use crate::dataset::BanditSample;
use crate::error::{Error, Result};
use crate::numeric::{mean, pairwise_sum, std_dev};
use crate::policies::Policy;

mod models;

pub use models::{
    fit_reward_model, ConstantRewardModel, FittedRewardModel, MlpRewardConfig, MlpRewardModel,
    RewardModelConfig, RewardModelFit, RidgeConfig, RidgeRewardModel,
};

/// Predicts the expected scalar reward of every catalog action.
pub trait RewardModel: Send + Sync {
    /// One prediction per catalog action, in catalog order.
    fn predict(&self, context: &[f64], catalog: &ActionCatalog) -> Vec<f64>;
}

impl<M: RewardModel + ?Sized> RewardModel for std::sync::Arc<M> {
    fn predict(&self, context: &[f64], catalog: &ActionCatalog) -> Vec<f64> {
        (**self).predict(context, catalog)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "DM")]
    Dm,
    #[serde(rename = "IPW")]
    Ipw,
    #[serde(rename = "ClippedIPW")]
    ClippedIpw,
    #[serde(rename = "SNIPS")]
    Snips,
    #[serde(rename = "DR")]
    Dr,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Dm => "DM",
            EstimatorKind::Ipw => "IPW",
            EstimatorKind::ClippedIpw => "ClippedIPW",
            EstimatorKind::Snips => "SNIPS",
            EstimatorKind::Dr => "DR",
        }
    }

    pub fn needs_reward_model(self) -> bool {
        matches!(self, EstimatorKind::Dm | EstimatorKind::Dr)
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dm" => Ok(EstimatorKind::Dm),
            "ipw" => Ok(EstimatorKind::Ipw),
            "clipped_ipw" | "clippedipw" => Ok(EstimatorKind::ClippedIpw),
            "snips" => Ok(EstimatorKind::Snips),
            "dr" => Ok(EstimatorKind::Dr),
            other => Err(Error::Argument(format!("unknown estimator {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub value: f64,
    pub std_error: f64,
    pub estimator_kind: EstimatorKind,
    pub n_records: usize,
    pub clip_level: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdErrorMethod {
    /// Record-level bootstrap.
    Bootstrap { resamples: usize, seed: u64 },
    /// Sample standard deviation over `sqrt(n)` (delta method for SNIPS).
    Analytic,
}

impl Default for StdErrorMethod {
    fn default() -> Self {
        StdErrorMethod::Bootstrap { resamples: 200, seed: 0 }
    }
}

pub const DEFAULT_CLIP: f64 = 10.0;

// ── Per-record terms ──

struct Terms {
    /// Per-record contributions (numerators for SNIPS).
    values: Vec<f64>,
    /// SNIPS denominators.
    weights: Option<Vec<f64>>,
}

fn check_propensity(s: &BanditSample) -> Result<()> {
    if s.propensity > 0.0 && s.propensity.is_finite() {
        Ok(())
    } else {
        Err(Error::Data(format!("propensity {} must be positive", s.propensity)))
    }
}

fn policy_expectation(probs: &[f64], predictions: &[f64]) -> f64 {
    probs.iter().zip(predictions).map(|(p, r)| p * r).sum()
}

fn importance_weight(policy: &dyn Policy, s: &BanditSample) -> Result<f64> {
    check_propensity(s)?;
    let pi = policy.probabilities(&s.context, &s.catalog)[s.action_index];
    Ok(pi / s.propensity)
}

fn dm_terms(policy: &dyn Policy, model: &dyn RewardModel, samples: &[BanditSample]) -> Vec<f64> {
    samples
        .par_iter()
        .map(|s| {
            let probs = policy.probabilities(&s.context, &s.catalog);
            policy_expectation(&probs, &model.predict(&s.context, &s.catalog))
        })
        .collect()
}

fn ipw_terms(policy: &dyn Policy, samples: &[BanditSample], clip: Option<f64>) -> Result<Vec<f64>> {
    samples
        .par_iter()
        .map(|s| {
            let w = importance_weight(policy, s)?;
            Ok(s.reward * clip.map_or(w, |m| w.min(m)))
        })
        .collect()
}

fn snips_terms(policy: &dyn Policy, samples: &[BanditSample]) -> Result<Terms> {
    let pairs: Vec<(f64, f64)> = samples
        .par_iter()
        .map(|s| importance_weight(policy, s).map(|w| (s.reward * w, w)))
        .collect::<Result<_>>()?;
    let (values, weights) = pairs.into_iter().unzip();
    Ok(Terms {
        values,
        weights: Some(weights),
    })
}

fn dr_terms(policy: &dyn Policy, model: &dyn RewardModel, samples: &[BanditSample]) -> Result<Vec<f64>> {
    samples
        .par_iter()
        .map(|s| {
            check_propensity(s)?;
            let probs = policy.probabilities(&s.context, &s.catalog);
            let pred = model.predict(&s.context, &s.catalog);
            let w = probs[s.action_index] / s.propensity;
            Ok((s.reward - pred[s.action_index]) * w + policy_expectation(&probs, &pred))
        })
        .collect()
}

// ── Reduction and uncertainty ──

fn point(terms: &Terms) -> Result<f64> {
    match &terms.weights {
        None => Ok(mean(&terms.values)),
        Some(w) => {
            let total = pairwise_sum(w);
            if total <= 0.0 {
                return Err(Error::Undefined("importance weights sum to zero".into()));
            }
            Ok(pairwise_sum(&terms.values) / total)
        }
    }
}

fn std_error(terms: &Terms, method: StdErrorMethod) -> f64 {
    let n = terms.values.len();
    if n < 2 {
        return 0.0;
    }
    match method {
        StdErrorMethod::Analytic => match &terms.weights {
            None => std_dev(&terms.values) / (n as f64).sqrt(),
            Some(w) => {
                let wbar = mean(w);
                let v = pairwise_sum(&terms.values) / pairwise_sum(w);
                let resid: Vec<f64> = terms.values.iter().zip(w).map(|(y, w)| y - v * w).collect();
                std_dev(&resid) / (wbar * (n as f64).sqrt())
            }
        },
        StdErrorMethod::Bootstrap { resamples, seed } => {
            let stats: Vec<f64> = (0..resamples as u64)
                .into_par_iter()
                .filter_map(|b| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(b);
                    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                    let resampled = Terms {
                        values: idx.iter().map(|&i| terms.values[i]).collect(),
                        weights: terms.weights.as_ref().map(|w| idx.iter().map(|&i| w[i]).collect()),
                    };
                    point(&resampled).ok()
                })
                .collect();
            if stats.len() < 2 {
                0.0
            } else {
                std_dev(&stats)
            }
        }
    }
}

fn finish(
    terms: Terms,
    kind: EstimatorKind,
    clip_level: Option<f64>,
    method: StdErrorMethod,
) -> Result<ValueEstimate> {
    if terms.values.is_empty() {
        return Err(Error::Undefined("no records".into()));
    }
    Ok(ValueEstimate {
        value: point(&terms)?,
        std_error: std_error(&terms, method),
        estimator_kind: kind,
        n_records: terms.values.len(),
        clip_level,
    })
}

// ── Estimators ──

/// Evaluates target policies on one set of samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OffPolicyEvaluator {
    pub std_error: StdErrorMethod,
}

impl OffPolicyEvaluator {
    pub fn analytic() -> Self {
        Self {
            std_error: StdErrorMethod::Analytic,
        }
    }

    pub fn dm(&self, policy: &dyn Policy, model: &dyn RewardModel, samples: &[BanditSample]) -> Result<ValueEstimate> {
        let terms = Terms {
            values: dm_terms(policy, model, samples),
            weights: None,
        };
        finish(terms, EstimatorKind::Dm, None, self.std_error)
    }

    /// Plain IPW when `clip` is `None`.
    pub fn ipw(&self, policy: &dyn Policy, samples: &[BanditSample], clip: Option<f64>) -> Result<ValueEstimate> {
        if let Some(m) = clip {
            if !(m > 0.0) {
                return Err(Error::Argument(format!("clip level {m} must be positive")));
            }
        }
        let kind = if clip.is_some() {
            EstimatorKind::ClippedIpw
        } else {
            EstimatorKind::Ipw
        };
        let terms = Terms {
            values: ipw_terms(policy, samples, clip)?,
            weights: None,
        };
        finish(terms, kind, clip, self.std_error)
    }

    pub fn snips(&self, policy: &dyn Policy, samples: &[BanditSample]) -> Result<ValueEstimate> {
        finish(snips_terms(policy, samples)?, EstimatorKind::Snips, None, self.std_error)
    }

    pub fn dr(&self, policy: &dyn Policy, model: &dyn RewardModel, samples: &[BanditSample]) -> Result<ValueEstimate> {
        let terms = Terms {
            values: dr_terms(policy, model, samples)?,
            weights: None,
        };
        finish(terms, EstimatorKind::Dr, None, self.std_error)
    }

    /// Dispatches on `kind`; `clip` applies to clipped IPW only.
    pub fn estimate(
        &self,
        kind: EstimatorKind,
        policy: &dyn Policy,
        model: Option<&dyn RewardModel>,
        samples: &[BanditSample],
        clip: Option<f64>,
    ) -> Result<ValueEstimate> {
        let need_model = || model.ok_or_else(|| Error::Argument(format!("{kind} needs a reward model")));
        match kind {
            EstimatorKind::Dm => self.dm(policy, need_model()?, samples),
            EstimatorKind::Ipw => self.ipw(policy, samples, None),
            EstimatorKind::ClippedIpw => self.ipw(policy, samples, Some(clip.unwrap_or(DEFAULT_CLIP))),
            EstimatorKind::Snips => self.snips(policy, samples),
            EstimatorKind::Dr => self.dr(policy, need_model()?, samples),
        }
    }
}

pub fn estimate_dm(policy: &dyn Policy, model: &dyn RewardModel, samples: &[BanditSample]) -> Result<ValueEstimate> {
    OffPolicyEvaluator::default().dm(policy, model, samples)
}

pub fn estimate_ipw(policy: &dyn Policy, samples: &[BanditSample], clip: Option<f64>) -> Result<ValueEstimate> {
    OffPolicyEvaluator::default().ipw(policy, samples, clip)
}

pub fn estimate_snips(policy: &dyn Policy, samples: &[BanditSample]) -> Result<ValueEstimate> {
    OffPolicyEvaluator::default().snips(policy, samples)
}

pub fn estimate_dr(policy: &dyn Policy, model: &dyn RewardModel, samples: &[BanditSample]) -> Result<ValueEstimate> {
    OffPolicyEvaluator::default().dr(policy, model, samples)
}
