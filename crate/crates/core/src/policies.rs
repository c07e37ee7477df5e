//! Policies over the per-context action catalog: baselines, the learned
//! softmax policy, and the reward-model argmax policy.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::action_space::{ActionCatalog, FeedAction, SUBFEED_LEN};
use crate::error::{Error, Result};
use crate::estimators::RewardModel;
use crate::simulator::{ContextSchema, IDX_SUBFEED};

mod file;
mod softmax;

pub use file::{load_policy, save_policy, PolicyFile, PolicySpec, POLICY_FORMAT};
pub use softmax::{train_policy, SoftmaxPolicy, SoftmaxPolicyParams, TrainObjective, TrainReport, TrainingConfig};

/// A conditional distribution over the valid actions of a context.
pub trait Policy: Send + Sync {
    fn name(&self) -> String;

    /// One probability per catalog action, in catalog order, summing to 1.
    fn probabilities(&self, context: &[f64], catalog: &ActionCatalog) -> Vec<f64>;

    /// Zero for actions outside the catalog.
    fn probability(&self, context: &[f64], catalog: &ActionCatalog, action: FeedAction) -> f64 {
        catalog
            .action_id(action)
            .map_or(0.0, |i| self.probabilities(context, catalog)[i])
    }

    fn sample(&self, context: &[f64], catalog: &ActionCatalog, rng: &mut dyn RngCore) -> FeedAction {
        let probs = self.probabilities(context, catalog);
        let mut u: f64 = rng.random();
        for (a, p) in catalog.actions().iter().zip(&probs) {
            if u < *p {
                return *a;
            }
            u -= p;
        }
        // Rounding left a sliver of mass; give it to the last supported action.
        let last = probs.iter().rposition(|p| *p > 0.0).unwrap_or(0);
        catalog.actions()[last]
    }
}

impl<P: Policy + ?Sized> Policy for Arc<P> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn probabilities(&self, context: &[f64], catalog: &ActionCatalog) -> Vec<f64> {
        (**self).probabilities(context, catalog)
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn probabilities(&self, context: &[f64], catalog: &ActionCatalog) -> Vec<f64> {
        (**self).probabilities(context, catalog)
    }
}

fn one_hot(len: usize, index: usize) -> Vec<f64> {
    let mut p = vec![0.0; len];
    p[index] = 1.0;
    p
}

/// Catalog index of the action with `n` ads at the earliest valid slots;
/// falls back to the largest available count below `n`.
fn earliest_with_count(catalog: &ActionCatalog, n: u32) -> usize {
    // Catalogs are ordered by ad count, then lexicographically by slots.
    let best = catalog
        .actions()
        .iter()
        .map(|a| a.num_ads())
        .filter(|&k| k <= n)
        .max()
        .unwrap_or(0);
    catalog
        .actions()
        .iter()
        .position(|a| a.num_ads() == best)
        .unwrap_or(0)
}

// ── Baselines ──

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UniformPolicy;

impl Policy for UniformPolicy {
    fn name(&self) -> String {
        "uniform".into()
    }

    fn probabilities(&self, _: &[f64], catalog: &ActionCatalog) -> Vec<f64> {
        vec![1.0 / catalog.len() as f64; catalog.len()]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NoAdsPolicy;

impl Policy for NoAdsPolicy {
    fn name(&self) -> String {
        "no_ads".into()
    }

    fn probabilities(&self, _: &[f64], catalog: &ActionCatalog) -> Vec<f64> {
        let i = catalog.action_id(FeedAction::EMPTY).unwrap_or(0);
        one_hot(catalog.len(), i)
    }
}

/// Most ads at the earliest valid positions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MaxAdsPolicy;

impl Policy for MaxAdsPolicy {
    fn name(&self) -> String {
        "max_ads".into()
    }

    fn probabilities(&self, _: &[f64], catalog: &ActionCatalog) -> Vec<f64> {
        one_hot(catalog.len(), earliest_with_count(catalog, SUBFEED_LEN))
    }
}

/// Exactly `n` ads (or as many as the catalog allows) at the earliest slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedCountPolicy {
    pub ads: u32,
}

impl FixedCountPolicy {
    pub fn new(ads: u32) -> Self {
        Self { ads }
    }
}

impl Policy for FixedCountPolicy {
    fn name(&self) -> String {
        format!("fixed_{}", self.ads)
    }

    fn probabilities(&self, _: &[f64], catalog: &ActionCatalog) -> Vec<f64> {
        one_hot(catalog.len(), earliest_with_count(catalog, self.ads))
    }
}

/// Always the given action; the empty action when it is not in the catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeterministicPolicy {
    pub action: FeedAction,
}

impl DeterministicPolicy {
    pub fn new(action: FeedAction) -> Self {
        Self { action }
    }
}

impl Policy for DeterministicPolicy {
    fn name(&self) -> String {
        format!("action_{}", self.action)
    }

    fn probabilities(&self, _: &[f64], catalog: &ActionCatalog) -> Vec<f64> {
        let i = catalog
            .action_id(self.action)
            .or_else(|| catalog.action_id(FeedAction::EMPTY))
            .unwrap_or(0);
        one_hot(catalog.len(), i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticPolicyConfig {
    /// 1-based fetch position of the first ad.
    pub offset: u32,
    /// Posts between consecutive ads.
    pub post_gap: u32,
}

/// Ads at fixed fetch positions `offset, offset + post_gap + 1, ...`.
#[derive(Debug)]
pub struct StaticPolicy {
    config: StaticPolicyConfig,
    warned: AtomicBool,
}

impl StaticPolicy {
    pub fn new(config: StaticPolicyConfig) -> Result<Self> {
        if config.offset < 1 || config.post_gap < 1 {
            return Err(Error::Config("static policy offset and post_gap must be >= 1".into()));
        }
        Ok(Self {
            config,
            warned: AtomicBool::new(false),
        })
    }

    pub fn config(&self) -> StaticPolicyConfig {
        self.config
    }

    /// Configured slots for sub-feed `j`, before catalog pruning.
    pub fn slots(&self, subfeed_index: u32) -> Vec<u32> {
        let lo = subfeed_index * SUBFEED_LEN + 1;
        let hi = lo + SUBFEED_LEN - 1;
        (0..)
            .map(|k| self.config.offset + k * (self.config.post_gap + 1))
            .take_while(|&p| p <= 2 * SUBFEED_LEN)
            .filter(|p| (lo..=hi).contains(p))
            .map(|p| p - lo + 1)
            .collect()
    }

    fn action_for(&self, context: &[f64], catalog: &ActionCatalog) -> FeedAction {
        // Cached catalogs carry canonical keys, which may merge sub-feeds.
        let subfeed = context
            .get(IDX_SUBFEED)
            .map_or(catalog.key().subfeed_index, |x| x.round() as u32);
        let wanted = self.slots(subfeed);
        let mut kept: Vec<u32> = Vec::new();
        for s in &wanted {
            let mut trial = kept.clone();
            trial.push(*s);
            if FeedAction::from_slots(&trial).is_ok_and(|a| catalog.contains(a)) {
                kept = trial;
            }
        }
        if kept.len() < wanted.len() && !self.warned.swap(true, Ordering::Relaxed) {
            log::warn!(
                "{}: dropped ads at slots {wanted:?} that violate the catalog {:?}",
                self.name(),
                catalog.key()
            );
        }
        FeedAction::from_slots(&kept).expect("valid slots")
    }
}

impl Policy for StaticPolicy {
    fn name(&self) -> String {
        format!("static_{}_{}", self.config.offset, self.config.post_gap)
    }

    fn probabilities(&self, context: &[f64], catalog: &ActionCatalog) -> Vec<f64> {
        let a = self.action_for(context, catalog);
        one_hot(catalog.len(), catalog.action_id(a).unwrap_or(0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FatiguePolicyConfig {
    pub default_ads: u32,
    pub low_threshold: f64,
    pub high_threshold: f64,
}

impl Default for FatiguePolicyConfig {
    fn default() -> Self {
        Self {
            default_ads: 1,
            low_threshold: 0.3,
            high_threshold: 0.7,
        }
    }
}

impl FatiguePolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.low_threshold && self.low_threshold < self.high_threshold && self.high_threshold < 1.0) {
            return Err(Error::Config(format!(
                "fatigue thresholds must satisfy 0 < {} < {} < 1",
                self.low_threshold, self.high_threshold
            )));
        }
        Ok(())
    }

    /// Ad count for fatigue score `phi`.
    pub fn ad_count(&self, phi: f64) -> u32 {
        if phi < self.low_threshold {
            self.default_ads + 1
        } else if phi > self.high_threshold {
            self.default_ads.saturating_sub(1)
        } else {
            self.default_ads
        }
    }
}

/// More ads for fresh users, fewer for fatigued ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FatiguePolicy {
    config: FatiguePolicyConfig,
    fatigue_index: usize,
}

impl FatiguePolicy {
    pub fn new(config: FatiguePolicyConfig, schema: &ContextSchema) -> Result<Self> {
        config.validate()?;
        let fatigue_index = schema
            .index_of("fatigue_score")
            .ok_or_else(|| Error::Config(format!("context schema {} has no fatigue_score feature", schema.name)))?;
        Ok(Self { config, fatigue_index })
    }

    pub fn config(&self) -> FatiguePolicyConfig {
        self.config
    }

    pub fn fatigue_index(&self) -> usize {
        self.fatigue_index
    }
}

impl Policy for FatiguePolicy {
    fn name(&self) -> String {
        "fatigue".into()
    }

    fn probabilities(&self, context: &[f64], catalog: &ActionCatalog) -> Vec<f64> {
        let n = self.config.ad_count(context[self.fatigue_index]);
        one_hot(catalog.len(), earliest_with_count(catalog, n))
    }
}

/// Weighted mixture of policies.
#[derive(Clone)]
pub struct MixturePolicy {
    name: String,
    components: Vec<(f64, Arc<dyn Policy>)>,
}

impl MixturePolicy {
    pub fn new(name: impl Into<String>, components: Vec<(f64, Arc<dyn Policy>)>) -> Result<Self> {
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        if components.is_empty() || components.iter().any(|(w, _)| !(*w >= 0.0)) || total <= 0.0 {
            return Err(Error::Config("mixture weights must be nonnegative with positive sum".into()));
        }
        Ok(Self {
            name: name.into(),
            components: components.into_iter().map(|(w, p)| (w / total, p)).collect(),
        })
    }
}

impl Policy for MixturePolicy {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn probabilities(&self, context: &[f64], catalog: &ActionCatalog) -> Vec<f64> {
        let mut out = vec![0.0; catalog.len()];
        for (w, p) in &self.components {
            for (o, q) in out.iter_mut().zip(p.probabilities(context, catalog)) {
                *o += w * q;
            }
        }
        out
    }
}

/// Serves the most probable action of another policy; ties go to the
/// lowest catalog index.
#[derive(Clone)]
pub struct GreedyPolicy {
    inner: Arc<dyn Policy>,
}

impl GreedyPolicy {
    pub fn new(inner: Arc<dyn Policy>) -> Self {
        Self { inner }
    }
}

impl Policy for GreedyPolicy {
    fn name(&self) -> String {
        format!("{}_greedy", self.inner.name())
    }

    fn probabilities(&self, context: &[f64], catalog: &ActionCatalog) -> Vec<f64> {
        let p = self.inner.probabilities(context, catalog);
        let best = (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b });
        one_hot(catalog.len(), best)
    }
}

/// Argmax of a reward model; ties go to the lowest catalog index.
#[derive(Clone)]
pub struct DmPolicy {
    model: Arc<dyn RewardModel>,
}

impl DmPolicy {
    pub fn new(model: Arc<dyn RewardModel>) -> Self {
        Self { model }
    }
}

impl Policy for DmPolicy {
    fn name(&self) -> String {
        "dm_argmax".into()
    }

    fn probabilities(&self, context: &[f64], catalog: &ActionCatalog) -> Vec<f64> {
        let pred = self.model.predict(context, catalog);
        let mut best = 0;
        for (i, v) in pred.iter().enumerate() {
            if *v > pred[best] {
                best = i;
            }
        }
        one_hot(catalog.len(), best)
    }
}
