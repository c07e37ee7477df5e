//! Synthetic ground-truth environment.
//!
//! Users are drawn from a finite mixture of cohort profiles. A session is a
//! bounded loop of feed fetches; each fetch is two sub-feeds of five slots and
//! each sub-feed is one logged decision. Within a sub-feed the user walks the
//! slots in order: at every slot there is an abandonment hazard (raised right
//! after an ad), then a view Bernoulli that decays with position. Viewed ads
//! produce impressions, clicks and installs; viewed posts produce engagement,
//! which decays with the number of ads already seen in the session.
//!
//! All magnitudes are configuration defaults chosen to reproduce the
//! qualitative orderings of interest (post-ad abandonment spike, ad-load
//! trade-off, cohort heterogeneity). They are not measurements.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod context;
mod dynamics;
mod logging;
mod oracle;

pub use context::{
    build_context, ContextSchema, SessionState, CONTEXT_LEN, CONTEXT_SCHEMA, IDX_FATIGUE, IDX_SUBFEED,
};
pub use dynamics::{simulate_fetch, subfeed_expectation, FetchOutcome, RunEndKind, SubfeedExpectation};
pub use logging::{generate_log, generate_log_with};
pub use oracle::{
    true_policy_value, true_policy_value_with, OracleMethod, OracleOptions, OracleRewardModel,
    TruePolicyValue,
};

// ── Profiles ──

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Language {
    Hindi,
    Tamil,
    Telugu,
    Kannada,
}

impl Language {
    pub const ALL: [Language; 4] = [Language::Hindi, Language::Tamil, Language::Telugu, Language::Kannada];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|l| *l == self).expect("listed")
    }
}

/// One cohort's behavioural parameters and observable profile counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub language: Language,
    /// Externally supplied fatigue score in [0, 1].
    pub fatigue: f64,
    /// Engagement probability of a viewed post before ad decay.
    pub base_engagement: f64,
    /// Multiplier on the per-ad dissatisfaction effects.
    pub ad_sensitivity: f64,
    /// Per-slot abandonment hazard away from ads.
    pub abandon_hazard: f64,
    /// Share of abandonments that close the app rather than the feed.
    pub session_exit_share: f64,
    /// Click probability per impression.
    pub click_rate: f64,
    /// Install probability per click.
    pub install_rate: f64,
    pub video_play_rate: f64,
    /// Mean watched fraction of a played video.
    pub watch_mean: f64,
    pub hourly_interactions: f64,
    pub daily_interactions: f64,
    pub activity_count: f64,
    pub platform_age_days: f64,
    pub hist_impressions: f64,
    pub hist_clicks: f64,
}

impl UserProfile {
    fn validate(&self) -> Result<()> {
        let probs = [
            ("fatigue", self.fatigue),
            ("base_engagement", self.base_engagement),
            ("abandon_hazard", self.abandon_hazard),
            ("session_exit_share", self.session_exit_share),
            ("click_rate", self.click_rate),
            ("install_rate", self.install_rate),
            ("video_play_rate", self.video_play_rate),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("profile {name} = {p} outside [0, 1]")));
            }
        }
        if !(self.watch_mean > 0.0 && self.watch_mean < 1.0) {
            return Err(Error::Config("watch_mean must be in (0, 1)".into()));
        }
        if !(self.ad_sensitivity > 0.0 && self.ad_sensitivity.is_finite()) {
            return Err(Error::Config("ad_sensitivity must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub name: String,
    pub weight: f64,
    pub profile: UserProfile,
}

/// The content shown in one sub-feed, drawn independently per sub-feed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentVariant {
    pub weight: f64,
    /// Posts per genre among the five slots.
    pub genre_counts: [u32; 3],
    pub post_age_hours: f64,
    pub engagement_multiplier: f64,
}

/// Continue to another fetch with `continue_prob` after each completed fetch,
/// up to `max_fetches`: a truncated geometric law on the session length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionLengthModel {
    pub continue_prob: f64,
    pub max_fetches: u32,
}

impl Default for SessionLengthModel {
    fn default() -> Self {
        Self {
            continue_prob: 0.7,
            max_fetches: 4,
        }
    }
}

/// Delayed labels: next-day retention and revenue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelModel {
    /// Log-odds of retention are `intercept + slope * session satisfaction`.
    pub retention_intercept: f64,
    pub retention_slope: f64,
    pub revenue_per_impression: f64,
    pub revenue_per_click: f64,
    pub revenue_per_install: f64,
    pub revenue_noise_sd: f64,
}

impl Default for LabelModel {
    fn default() -> Self {
        Self {
            retention_intercept: -1.5,
            retention_slope: 0.25,
            revenue_per_impression: 0.002,
            revenue_per_click: 0.05,
            revenue_per_install: 0.8,
            revenue_noise_sd: 0.01,
        }
    }
}

// ── Environment ──

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvironmentConfig {
    pub cohorts: Vec<Cohort>,
    pub content_variants: Vec<ContentVariant>,
    /// Per-slot view probability, strictly decreasing.
    pub position_view_decay: [f64; 5],
    /// Hazard multiplier at the slot right after an ad (scaled by sensitivity).
    pub post_ad_abandon_multiplier: f64,
    /// Engagement is scaled by `exp(-rate * sensitivity * ads_seen)`.
    pub engagement_decay_per_ad: f64,
    /// Ads are noticed with probability `1 - ad_attention_fatigue * fatigue`.
    pub ad_attention_fatigue: f64,
    pub minutes_per_slot: f64,
    pub session_length: SessionLengthModel,
    pub labels: LabelModel,
    pub seed: u64,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        Self {
            cohorts: default_cohorts(),
            content_variants: vec![
                ContentVariant {
                    weight: 0.5,
                    genre_counts: [3, 1, 1],
                    post_age_hours: 6.0,
                    engagement_multiplier: 1.0,
                },
                ContentVariant {
                    weight: 0.5,
                    genre_counts: [1, 2, 2],
                    post_age_hours: 30.0,
                    engagement_multiplier: 0.8,
                },
            ],
            position_view_decay: [0.95, 0.9, 0.85, 0.8, 0.75],
            post_ad_abandon_multiplier: 3.0,
            engagement_decay_per_ad: 0.12,
            ad_attention_fatigue: 0.8,
            minutes_per_slot: 0.25,
            session_length: SessionLengthModel::default(),
            labels: LabelModel::default(),
            seed: 0,
        }
    }
}

fn default_cohorts() -> Vec<Cohort> {
    vec![
        Cohort {
            name: "engaged".into(),
            weight: 0.35,
            profile: UserProfile {
                language: Language::Hindi,
                fatigue: 0.15,
                base_engagement: 0.12,
                ad_sensitivity: 0.4,
                abandon_hazard: 0.015,
                session_exit_share: 0.3,
                click_rate: 0.18,
                install_rate: 0.2,
                video_play_rate: 0.6,
                watch_mean: 0.6,
                hourly_interactions: 12.0,
                daily_interactions: 80.0,
                activity_count: 25.0,
                platform_age_days: 400.0,
                hist_impressions: 300.0,
                hist_clicks: 54.0,
            },
        },
        Cohort {
            name: "casual".into(),
            weight: 0.35,
            profile: UserProfile {
                language: Language::Tamil,
                fatigue: 0.5,
                base_engagement: 0.1,
                ad_sensitivity: 0.6,
                abandon_hazard: 0.03,
                session_exit_share: 0.3,
                click_rate: 0.09,
                install_rate: 0.15,
                video_play_rate: 0.5,
                watch_mean: 0.45,
                hourly_interactions: 6.0,
                daily_interactions: 40.0,
                activity_count: 12.0,
                platform_age_days: 180.0,
                hist_impressions: 150.0,
                hist_clicks: 13.5,
            },
        },
        Cohort {
            name: "fatigued".into(),
            weight: 0.3,
            profile: UserProfile {
                language: Language::Telugu,
                fatigue: 0.85,
                base_engagement: 0.08,
                ad_sensitivity: 3.0,
                abandon_hazard: 0.06,
                session_exit_share: 0.4,
                click_rate: 0.02,
                install_rate: 0.1,
                video_play_rate: 0.4,
                watch_mean: 0.3,
                hourly_interactions: 2.0,
                daily_interactions: 10.0,
                activity_count: 4.0,
                platform_age_days: 60.0,
                hist_impressions: 40.0,
                hist_clicks: 0.8,
            },
        },
    ]
}

impl EnvironmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cohorts.is_empty() {
            return Err(Error::Config("at least one cohort required".into()));
        }
        if self.content_variants.is_empty() {
            return Err(Error::Config("at least one content variant required".into()));
        }
        if self.cohorts.iter().any(|c| !(c.weight > 0.0)) || self.content_variants.iter().any(|c| !(c.weight > 0.0)) {
            return Err(Error::Config("mixture weights must be positive".into()));
        }
        for c in &self.cohorts {
            c.profile.validate()?;
        }
        let d = &self.position_view_decay;
        if d.iter().any(|p| !(0.0..=1.0).contains(p)) || d.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config(
                "position_view_decay must be probabilities, strictly decreasing".into(),
            ));
        }
        if !(self.post_ad_abandon_multiplier >= 1.0) {
            return Err(Error::Config("post_ad_abandon_multiplier must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.ad_attention_fatigue) || !(self.engagement_decay_per_ad >= 0.0) {
            return Err(Error::Config("invalid ad attention or engagement decay".into()));
        }
        if !(self.minutes_per_slot >= 0.0) {
            return Err(Error::Config("minutes_per_slot must be nonnegative".into()));
        }
        let s = &self.session_length;
        if !(0.0..=1.0).contains(&s.continue_prob) || s.max_fetches == 0 {
            return Err(Error::Config("invalid session length model".into()));
        }
        Ok(())
    }

    /// A single-cohort copy of this environment.
    pub fn with_single_cohort(&self, profile: UserProfile) -> Self {
        Self {
            cohorts: vec![Cohort {
                name: "single".into(),
                weight: 1.0,
                profile,
            }],
            ..self.clone()
        }
    }

    pub(crate) fn cohort_weights(&self) -> Vec<f64> {
        let total: f64 = self.cohorts.iter().map(|c| c.weight).sum();
        self.cohorts.iter().map(|c| c.weight / total).collect()
    }

    pub(crate) fn content_weights(&self) -> Vec<f64> {
        let total: f64 = self.content_variants.iter().map(|c| c.weight).sum();
        self.content_variants.iter().map(|c| c.weight / total).collect()
    }
}

pub(crate) fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let mut u: f64 = rng.random();
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Draws a cohort from the mixture; returns its index and profile.
pub fn sample_user<'a, R: Rng + ?Sized>(config: &'a EnvironmentConfig, rng: &mut R) -> (usize, &'a UserProfile) {
    let i = sample_index(&config.cohort_weights(), rng);
    (i, &config.cohorts[i].profile)
}
