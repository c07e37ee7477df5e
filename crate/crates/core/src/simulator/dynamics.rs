//! The slot-level behaviour model: one sampler and one exact expectation that
//! follow the same rules.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sample_index, EnvironmentConfig, SessionState, UserProfile};
use crate::action_space::{CatalogSet, FeedAction, SUBFEED_LEN};
use crate::error::{Error, Result};
use crate::rewards::{discounted_session_abandonment, AdsSignals, DiscountParams, SatSignals};

/// Hard cap on the per-slot abandonment probability.
const MAX_HAZARD: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunEndKind {
    FeedAbandon,
    SessionAbandon,
    /// The session reached its length without abandoning.
    Natural,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FetchOutcome {
    /// `rank_d` equals `rank_i` and `feed_abandoned` is 0 until the run is
    /// finalized.
    pub sat: SatSignals,
    pub ads: AdsSignals,
    pub new_impressions: u32,
    pub run_end: Option<RunEndKind>,
    pub next: Option<SessionState>,
}

// ── Shared rules ──

pub(crate) fn hazard(user: &UserProfile, after_ad: bool, config: &EnvironmentConfig) -> f64 {
    let h = if after_ad {
        user.abandon_hazard * config.post_ad_abandon_multiplier * user.ad_sensitivity
    } else {
        user.abandon_hazard
    };
    h.min(MAX_HAZARD)
}

fn ad_attention(user: &UserProfile, config: &EnvironmentConfig) -> f64 {
    1.0 - config.ad_attention_fatigue * user.fatigue
}

fn engagement_prob(user: &UserProfile, multiplier: f64, ads_seen: u32, config: &EnvironmentConfig) -> f64 {
    let decay = (-config.engagement_decay_per_ad * user.ad_sensitivity * ads_seen as f64).exp();
    (user.base_engagement * multiplier * decay).min(1.0)
}

fn after_ad(state: &SessionState, action: FeedAction, slot: u32) -> bool {
    if slot == 1 {
        state.prev_slot_was_ad()
    } else {
        action.has_ad(slot - 1)
    }
}

// ── Sampling ──

/// Plays one sub-feed. Fails if `action` is not in the state's catalog.
pub fn simulate_fetch<R: Rng + ?Sized>(
    config: &EnvironmentConfig,
    user: &UserProfile,
    state: &SessionState,
    action: FeedAction,
    catalogs: &CatalogSet,
    rng: &mut R,
) -> Result<FetchOutcome> {
    if !catalogs.get(state.catalog_key()).contains(action) {
        return Err(Error::Argument(format!(
            "action {action} not valid for {:?}",
            state.catalog_key()
        )));
    }
    let content = &config.content_variants[state.content];
    let minutes_before = state.minutes_before(config.minutes_per_slot);
    let mut sat = SatSignals {
        rank_i: state.fetch_index,
        rank_d: state.fetch_index,
        ..Default::default()
    };
    let mut ads = AdsSignals::default();
    let mut ads_seen = state.session_impressions;
    let mut first_post = true;
    let mut run_end = None;

    for slot in 1..=SUBFEED_LEN {
        if rng.random::<f64>() < hazard(user, after_ad(state, action, slot), config) {
            let kind = if rng.random::<f64>() < user.session_exit_share {
                sat.session_abandoned = 1;
                RunEndKind::SessionAbandon
            } else {
                RunEndKind::FeedAbandon
            };
            run_end = Some(kind);
            break;
        }
        sat.feed_depth += 1;
        let view = config.position_view_decay[(slot - 1) as usize];
        if action.has_ad(slot) {
            if rng.random::<f64>() < view * ad_attention(user, config) {
                ads.impressions += 1;
                ads_seen += 1;
                if rng.random::<f64>() < user.click_rate {
                    ads.clicks += 1;
                    if rng.random::<f64>() < user.install_rate {
                        ads.installs += 1;
                    }
                }
            }
        } else {
            let viewed = rng.random::<f64>() < view;
            if first_post {
                first_post = false;
                if viewed && rng.random::<f64>() < user.video_play_rate {
                    sat.video_play = 1;
                    // U^(1/m - 1) has mean m on [0, 1].
                    let u: f64 = rng.random();
                    sat.pct_video_watch = u.powf(1.0 / user.watch_mean - 1.0);
                } else {
                    sat.video_skip = 1;
                }
            }
            if viewed && rng.random::<f64>() < engagement_prob(user, content.engagement_multiplier, ads_seen, config) {
                sat.engagements += 1;
            }
        }
    }
    sat.session_minutes = minutes_before + sat.feed_depth as f64 * config.minutes_per_slot;
    let new_impressions = ads.impressions;

    let next = if run_end.is_some() {
        None
    } else if state.subfeed_index == 0
        || (state.fetch_index < config.session_length.max_fetches
            && rng.random::<f64>() < config.session_length.continue_prob)
    {
        let c = sample_index(&config.content_weights(), rng);
        Some(state.advance(action, new_impressions, c))
    } else {
        run_end = Some(RunEndKind::Natural);
        None
    };
    Ok(FetchOutcome {
        sat,
        ads,
        new_impressions,
        run_end,
        next,
    })
}

// ── Exact expectation ──

/// Expected signals of one sub-feed and the distribution of how it ends.
#[derive(Debug, Clone, PartialEq)]
pub struct SubfeedExpectation {
    pub engagements: f64,
    pub video_play: f64,
    pub pct_video_watch: f64,
    pub feed_depth: f64,
    pub video_skip: f64,
    pub p_feed_abandon: f64,
    pub p_session_abandon: f64,
    /// `E[session_abandoned * discounted_session_abandonment]`.
    pub session_abandon_discounted: f64,
    pub impressions: f64,
    pub clicks: f64,
    pub installs: f64,
    /// `p_complete[t]`: probability the sub-feed is consumed in full with `t`
    /// new impressions.
    pub p_complete: Vec<f64>,
}

impl SubfeedExpectation {
    pub fn p_complete_total(&self) -> f64 {
        self.p_complete.iter().sum()
    }
}

pub fn subfeed_expectation(
    config: &EnvironmentConfig,
    user: &UserProfile,
    state: &SessionState,
    action: FeedAction,
    discount: &DiscountParams,
) -> SubfeedExpectation {
    let content = &config.content_variants[state.content];
    let minutes_before = state.minutes_before(config.minutes_per_slot);
    let n = action.num_ads() as usize + 1;
    // mass[t]: probability of still being in the sub-feed with t new impressions.
    let mut mass = vec![0.0; n];
    mass[0] = 1.0;
    let mut e = SubfeedExpectation {
        engagements: 0.0,
        video_play: 0.0,
        pct_video_watch: 0.0,
        feed_depth: 0.0,
        video_skip: 0.0,
        p_feed_abandon: 0.0,
        p_session_abandon: 0.0,
        session_abandon_discounted: 0.0,
        impressions: 0.0,
        clicks: 0.0,
        installs: 0.0,
        p_complete: Vec::new(),
    };
    let attention = ad_attention(user, config);
    let mut first_post = true;
    for slot in 1..=SUBFEED_LEN {
        let h = hazard(user, after_ad(state, action, slot), config);
        let alive: f64 = mass.iter().sum();
        let quit = alive * h;
        let minutes = minutes_before + (slot - 1) as f64 * config.minutes_per_slot;
        let session_discount =
            discounted_session_abandonment(minutes, discount).expect("nonnegative minutes");
        e.p_session_abandon += quit * user.session_exit_share;
        e.p_feed_abandon += quit * (1.0 - user.session_exit_share);
        e.session_abandon_discounted += quit * user.session_exit_share * session_discount;
        mass.iter_mut().for_each(|m| *m *= 1.0 - h);
        let alive = alive * (1.0 - h);
        e.feed_depth += alive;

        let view = config.position_view_decay[(slot - 1) as usize];
        if action.has_ad(slot) {
            let p_imp = view * attention;
            e.impressions += alive * p_imp;
            e.clicks += alive * p_imp * user.click_rate;
            e.installs += alive * p_imp * user.click_rate * user.install_rate;
            for t in (0..n - 1).rev() {
                let moved = mass[t] * p_imp;
                mass[t + 1] += moved;
                mass[t] -= moved;
            }
        } else {
            if first_post {
                first_post = false;
                let play = alive * view * user.video_play_rate;
                e.video_play += play;
                e.pct_video_watch += play * user.watch_mean;
                e.video_skip += alive - play;
            }
            for (t, m) in mass.iter().enumerate() {
                let seen = state.session_impressions + t as u32;
                e.engagements += m * view * engagement_prob(user, content.engagement_multiplier, seen, config);
            }
        }
    }
    e.p_complete = mass;
    e
}
