//! Reward signals and their scalarization.
//!
//! Satisfaction and advertising outcomes of one sub-feed interaction are
//! collapsed into two scalars with linear weights (defaults are the learned
//! weights shipped with the platform), and then mixed with `beta`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod scalarize;

pub use scalarize::{fit_scalarization, pearson, ScalarizationConfig, ScalarizationFit};

/// Number of satisfaction dimensions fed to the weights.
pub const SAT_DIM: usize = 7;
/// Number of advertising dimensions fed to the weights.
pub const ADS_DIM: usize = 3;

pub const SAT_SIGNAL_NAMES: [&str; SAT_DIM] = [
    "engagements",
    "video_play",
    "pct_video_watch",
    "feed_depth",
    "video_skip",
    "discounted_feed_abandonment",
    "discounted_session_abandonment",
];

pub const ADS_SIGNAL_NAMES: [&str; ADS_DIM] = ["impressions", "clicks", "installs"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SatSignals {
    pub engagements: u32,
    pub video_play: u8,
    pub pct_video_watch: f64,
    pub feed_depth: u32,
    pub video_skip: u8,
    pub feed_abandoned: u8,
    pub session_abandoned: u8,
    /// Fetch index of this interaction within its run of consecutive fetches.
    pub rank_i: u32,
    /// Fetch index at which the run ended.
    pub rank_d: u32,
    pub session_minutes: f64,
}

impl Default for SatSignals {
    fn default() -> Self {
        Self {
            engagements: 0,
            video_play: 0,
            pct_video_watch: 0.0,
            feed_depth: 0,
            video_skip: 0,
            feed_abandoned: 0,
            session_abandoned: 0,
            rank_i: 1,
            rank_d: 1,
            session_minutes: 0.0,
        }
    }
}

impl SatSignals {
    pub fn validate(&self) -> Result<()> {
        if self.rank_i < 1 || self.rank_i > self.rank_d {
            return Err(Error::Data(format!(
                "rank_i {} must satisfy 1 <= rank_i <= rank_d {}",
                self.rank_i, self.rank_d
            )));
        }
        for (name, v) in [
            ("video_play", self.video_play),
            ("video_skip", self.video_skip),
            ("feed_abandoned", self.feed_abandoned),
            ("session_abandoned", self.session_abandoned),
        ] {
            if v > 1 {
                return Err(Error::Data(format!("{name} must be 0 or 1, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.pct_video_watch) {
            return Err(Error::Data(format!(
                "pct_video_watch {} outside [0, 1]",
                self.pct_video_watch
            )));
        }
        if !(self.session_minutes >= 0.0) {
            return Err(Error::Data("session_minutes must be nonnegative".into()));
        }
        Ok(())
    }

    /// The weighted signal vector, in the order of [`SAT_SIGNAL_NAMES`].
    pub fn vector(&self, params: &DiscountParams) -> Result<[f64; SAT_DIM]> {
        let feed = if self.feed_abandoned == 1 {
            discounted_feed_abandonment(self.rank_i, self.rank_d, params)?
        } else {
            0.0
        };
        let session = if self.session_abandoned == 1 {
            discounted_session_abandonment(self.session_minutes, params)?
        } else {
            0.0
        };
        Ok([
            self.engagements as f64,
            self.video_play as f64,
            self.pct_video_watch,
            self.feed_depth as f64,
            self.video_skip as f64,
            feed,
            session,
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AdsSignals {
    pub impressions: u32,
    pub clicks: u32,
    pub installs: u32,
}

impl AdsSignals {
    /// Whether the funnel ordering holds. Ingested data may violate it; the
    /// simulator never does.
    pub fn is_consistent(&self) -> bool {
        self.clicks <= self.impressions && self.installs <= self.clicks
    }

    pub fn vector(&self) -> [f64; ADS_DIM] {
        [
            self.impressions as f64,
            self.clicks as f64,
            self.installs as f64,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscountParams {
    /// Attribution strength in (0, 1].
    pub alpha: f64,
    /// Minutes normalizer for the session-abandonment discount.
    pub session_discount_scale: f64,
}

impl Default for DiscountParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            session_discount_scale: 1.0,
        }
    }
}

impl DiscountParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1]", self.alpha)));
        }
        if !(self.session_discount_scale > 0.0 && self.session_discount_scale.is_finite()) {
            return Err(Error::Config("session_discount_scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub sat_weights: [f64; SAT_DIM],
    pub ads_weights: [f64; ADS_DIM],
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            sat_weights: [0.5995, 0.6235, 0.3464, 0.3213, -0.1432, -0.3742, -1.2345],
            ads_weights: [0.2234, 0.5135, 0.7823],
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        if self
            .sat_weights
            .iter()
            .chain(self.ads_weights.iter())
            .all(|w| w.is_finite())
        {
            Ok(())
        } else {
            Err(Error::Config("reward weights must be finite".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardMixConfig {
    pub beta: f64,
}

impl RewardMixConfig {
    pub fn new(beta: f64) -> Result<Self> {
        let mix = Self { beta };
        mix.validate()?;
        Ok(mix)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta {} outside [0, 1]", self.beta)));
        }
        Ok(())
    }
}

/// `1/ln(1 + rank_d) * alpha^(rank_d - rank_i)`.
pub fn discounted_feed_abandonment(rank_i: u32, rank_d: u32, params: &DiscountParams) -> Result<f64> {
    if rank_i < 1 || rank_i > rank_d {
        return Err(Error::Argument(format!(
            "need 1 <= rank_i <= rank_d, got rank_i={rank_i}, rank_d={rank_d}"
        )));
    }
    let discount = 1.0 / (1.0 + rank_d as f64).ln();
    Ok(discount * params.alpha.powi((rank_d - rank_i) as i32))
}

/// `1/ln(2 + minutes/scale)`; finite at zero minutes and decreasing in the
/// time already spent.
pub fn discounted_session_abandonment(session_minutes: f64, params: &DiscountParams) -> Result<f64> {
    if !(session_minutes >= 0.0) {
        return Err(Error::Argument(format!(
            "session_minutes must be nonnegative, got {session_minutes}"
        )));
    }
    Ok(1.0 / (2.0 + session_minutes / params.session_discount_scale).ln())
}

pub fn dot<const N: usize>(w: &[f64; N], x: &[f64; N]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

pub fn sat_reward(signals: &SatSignals, weights: &RewardWeights, params: &DiscountParams) -> Result<f64> {
    Ok(dot(&weights.sat_weights, &signals.vector(params)?))
}

pub fn ads_reward(signals: &AdsSignals, weights: &RewardWeights) -> f64 {
    dot(&weights.ads_weights, &signals.vector())
}

pub fn final_reward(sat: f64, ads: f64, mix: &RewardMixConfig) -> f64 {
    mix.beta * sat + (1.0 - mix.beta) * ads
}

/// Weights, discounting and mix bundled so records can be scored in one call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardFunction {
    pub weights: RewardWeights,
    pub discount: DiscountParams,
    pub mix: RewardMixConfig,
}

impl RewardFunction {
    pub fn new(weights: RewardWeights, discount: DiscountParams, mix: RewardMixConfig) -> Result<Self> {
        weights.validate()?;
        discount.validate()?;
        mix.validate()?;
        Ok(Self {
            weights,
            discount,
            mix,
        })
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::new(self.weights.clone(), self.discount, RewardMixConfig::new(beta)?)
    }

    pub fn sat(&self, s: &SatSignals) -> Result<f64> {
        sat_reward(s, &self.weights, &self.discount)
    }

    pub fn ads(&self, a: &AdsSignals) -> f64 {
        ads_reward(a, &self.weights)
    }

    pub fn total(&self, s: &SatSignals, a: &AdsSignals) -> Result<f64> {
        Ok(final_reward(self.sat(s)?, self.ads(a), &self.mix))
    }
}
