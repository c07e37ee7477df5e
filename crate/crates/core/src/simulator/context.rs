//! Context features and the per-session state they are built from.
//!
//! Schema `adctx-v1` (fixed order):
//!
//! | index | feature |
//! |---|---|
//! | 0 | hourly interactions |
//! | 1 | daily interactions |
//! | 2 | activity count |
//! | 3 | fatigue score |
//! | 4 | platform age (days) |
//! | 5..=8 | language one-hot (Hindi, Tamil, Telugu, Kannada) |
//! | 9..=11 | genre counts in this sub-feed |
//! | 12 | post age (hours) |
//! | 13..=17 | previous sub-feed ad slots 1..5 (binary) |
//! | 18 | ad gap: posts since the last ad, `-1` when absent |
//! | 19 | average ads per fetch over the last 3 completed fetches |
//! | 20 | average ads per fetch over the last 5 completed fetches |
//! | 21 | ad impressions so far in the session |
//! | 22 | historical ad impressions |
//! | 23 | historical ad clicks |
//! | 24 | completed fetches in the session |
//! | 25 | sub-feed index |

use serde::{Deserialize, Serialize};

use super::{ContentVariant, EnvironmentConfig, Language, UserProfile};
use crate::action_space::{CatalogKey, FeedAction, SUBFEED_LEN};

pub const CONTEXT_SCHEMA: &str = "adctx-v1";
pub const CONTEXT_LEN: usize = 26;

const FEATURE_NAMES: [&str; CONTEXT_LEN] = [
    "hourly_interactions",
    "daily_interactions",
    "activity_count",
    "fatigue_score",
    "platform_age_days",
    "lang_hindi",
    "lang_tamil",
    "lang_telugu",
    "lang_kannada",
    "genre_0",
    "genre_1",
    "genre_2",
    "post_age_hours",
    "prev_ad_slot_1",
    "prev_ad_slot_2",
    "prev_ad_slot_3",
    "prev_ad_slot_4",
    "prev_ad_slot_5",
    "ad_gap",
    "avg_ad_load_3",
    "avg_ad_load_5",
    "session_ad_impressions",
    "hist_impressions",
    "hist_clicks",
    "session_fetches",
    "subfeed_index",
];

pub const IDX_FATIGUE: usize = 3;
pub(crate) const IDX_GENRE: usize = 9;
pub(crate) const IDX_POST_AGE: usize = 12;
pub(crate) const IDX_AD_GAP: usize = 18;
pub(crate) const IDX_SESSION_IMPRESSIONS: usize = 21;
pub(crate) const IDX_SESSION_FETCHES: usize = 24;
pub const IDX_SUBFEED: usize = 25;
/// Features that identify the user profile.
pub(crate) const PROFILE_FEATURES: [usize; 11] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 22, 23];

/// Named, ordered feature layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSchema {
    pub name: String,
    pub features: Vec<String>,
}

impl ContextSchema {
    pub fn simulator() -> Self {
        Self {
            name: CONTEXT_SCHEMA.to_string(),
            features: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn index_of(&self, feature: &str) -> Option<usize> {
        self.features.iter().position(|f| f == feature)
    }
}

/// Where a user is within a session, just before a sub-feed decision.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SessionState {
    /// 1-based fetch index in the session (the run rank).
    pub fetch_index: u32,
    pub subfeed_index: u32,
    /// Content variant of the upcoming sub-feed.
    pub content: usize,
    pub prev_action: FeedAction,
    pub prev_last_ad_offset: Option<u32>,
    /// Ads per completed fetch, most recent last, at most five kept.
    pub fetch_ad_history: Vec<u32>,
    pub current_fetch_ads: u32,
    pub session_impressions: u32,
}

impl SessionState {
    pub fn initial(content: usize) -> Self {
        Self {
            fetch_index: 1,
            subfeed_index: 0,
            content,
            prev_action: FeedAction::EMPTY,
            prev_last_ad_offset: None,
            fetch_ad_history: Vec::new(),
            current_fetch_ads: 0,
            session_impressions: 0,
        }
    }

    pub fn catalog_key(&self) -> CatalogKey {
        CatalogKey::new(self.subfeed_index, self.prev_last_ad_offset)
    }

    /// Whether the slot right before slot 1 of this sub-feed held an ad.
    pub fn prev_slot_was_ad(&self) -> bool {
        self.prev_last_ad_offset == Some(0)
    }

    /// Session minutes elapsed before this sub-feed; every earlier sub-feed
    /// was consumed in full or the session would have ended.
    pub fn minutes_before(&self, minutes_per_slot: f64) -> f64 {
        let done = (self.fetch_index - 1) * 2 + self.subfeed_index;
        (done * SUBFEED_LEN) as f64 * minutes_per_slot
    }

    /// State at the next sub-feed after `action` completed with
    /// `new_impressions`. Whether the session goes on past a fetch boundary is
    /// decided by the caller; `content` is the next sub-feed's variant.
    pub fn advance(&self, action: FeedAction, new_impressions: u32, content: usize) -> Self {
        let mut next = self.clone();
        next.content = content;
        next.prev_action = action;
        next.prev_last_ad_offset = action.next_offset(self.prev_last_ad_offset);
        next.session_impressions += new_impressions;
        let fetch_ads = self.current_fetch_ads + action.num_ads();
        if self.subfeed_index == 0 {
            next.subfeed_index = 1;
            next.current_fetch_ads = fetch_ads;
        } else {
            next.subfeed_index = 0;
            next.fetch_index += 1;
            next.current_fetch_ads = 0;
            next.fetch_ad_history.push(fetch_ads);
            if next.fetch_ad_history.len() > 5 {
                next.fetch_ad_history.remove(0);
            }
        }
        next
    }
}

fn average_last(history: &[u32], n: usize) -> f64 {
    let tail = &history[history.len().saturating_sub(n)..];
    if tail.is_empty() {
        0.0
    } else {
        tail.iter().sum::<u32>() as f64 / tail.len() as f64
    }
}

pub(crate) fn context_from_parts(
    user: &UserProfile,
    content: &ContentVariant,
    state: &SessionState,
) -> Vec<f64> {
    let mut x = Vec::with_capacity(CONTEXT_LEN);
    x.extend([
        user.hourly_interactions,
        user.daily_interactions,
        user.activity_count,
        user.fatigue,
        user.platform_age_days,
    ]);
    x.extend(Language::ALL.iter().map(|l| f64::from(u8::from(*l == user.language))));
    x.extend(content.genre_counts.iter().map(|g| *g as f64));
    x.push(content.post_age_hours);
    x.extend((1..=SUBFEED_LEN).map(|s| f64::from(u8::from(state.prev_action.has_ad(s)))));
    x.push(state.prev_last_ad_offset.map_or(-1.0, |o| o as f64));
    x.push(average_last(&state.fetch_ad_history, 3));
    x.push(average_last(&state.fetch_ad_history, 5));
    x.push(state.session_impressions as f64);
    x.push(user.hist_impressions);
    x.push(user.hist_clicks);
    x.push((state.fetch_index - 1) as f64);
    x.push(state.subfeed_index as f64);
    debug_assert_eq!(x.len(), CONTEXT_LEN);
    x
}

/// Feature vector for `user` at `state`, in the `adctx-v1` order.
pub fn build_context(user: &UserProfile, state: &SessionState, config: &EnvironmentConfig) -> Vec<f64> {
    context_from_parts(user, &config.content_variants[state.content], state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fresh_user() -> UserProfile {
        UserProfile {
            hourly_interactions: 0.0,
            daily_interactions: 0.0,
            activity_count: 0.0,
            hist_impressions: 0.0,
            hist_clicks: 0.0,
            ..EnvironmentConfig::default().cohorts[0].profile.clone()
        }
    }

    #[test]
    fn fresh_user_first_fetch() {
        let cfg = EnvironmentConfig::default();
        let x = build_context(&fresh_user(), &SessionState::initial(0), &cfg);
        assert_eq!(x.len(), CONTEXT_LEN);
        assert_eq!(x[IDX_AD_GAP], -1.0);
        for i in [0, 1, 2, 13, 14, 15, 16, 17, 19, 20, 21, 22, 23, 24, 25] {
            assert_eq!(x[i], 0.0, "feature {}", FEATURE_NAMES[i]);
        }
        assert_eq!(ContextSchema::simulator().len(), CONTEXT_LEN);
        assert_eq!(ContextSchema::simulator().index_of("fatigue_score"), Some(IDX_FATIGUE));
    }

    #[test]
    fn average_ad_load_after_two_fetches() {
        let cfg = EnvironmentConfig::default();
        let one = FeedAction::from_slots(&[3]).unwrap();
        let mut s = SessionState::initial(0);
        for _ in 0..2 {
            s = s.advance(one, 1, 0);
            s = s.advance(FeedAction::EMPTY, 0, 0);
        }
        let x = build_context(&fresh_user(), &s, &cfg);
        assert_eq!(x[19], 1.0);
        assert_eq!(x[20], 1.0);
        assert_eq!(x[IDX_SESSION_FETCHES], 2.0);
        assert_eq!(x[IDX_SESSION_IMPRESSIONS], 2.0);
        // Last ad at slot 3 of the first sub-feed, then five plain posts.
        assert_eq!(x[IDX_AD_GAP], 7.0);
    }

    #[test]
    fn advance_tracks_offsets_and_fetches() {
        let s = SessionState::initial(1);
        let a = FeedAction::from_slots(&[5]).unwrap();
        let n = s.advance(a, 0, 0);
        assert_eq!((n.fetch_index, n.subfeed_index), (1, 1));
        assert!(n.prev_slot_was_ad());
        assert_eq!(n.catalog_key(), CatalogKey::new(1, Some(0)));
        let n2 = n.advance(FeedAction::EMPTY, 0, 0);
        assert_eq!((n2.fetch_index, n2.subfeed_index), (2, 0));
        assert_eq!(n2.fetch_ad_history, vec![1]);
        assert_eq!(n2.prev_last_ad_offset, Some(5));
        assert_eq!(n2.minutes_before(0.5), 5.0);
    }
}
