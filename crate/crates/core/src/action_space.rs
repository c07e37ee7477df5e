//! Ad placements within a five-post sub-feed.
//!
//! A feed fetch of ten posts is served as two sub-feeds of five, and each
//! sub-feed is an independent bandit decision. An action is the set of
//! sub-feed slots (1..=5) that carry an ad. The raw space has 2^5 = 32
//! subsets; pruning rules remove placements that were observed to hurt
//! satisfaction:
//!
//! * at most `max_ads` ads per sub-feed,
//! * consecutive ads at least `min_position_difference` positions apart,
//!   measured on the concatenated feed (so positions 2 and 6 are allowed
//!   with the default difference of 4),
//! * no ad in the very first slot of a fetch.
//!
//! The cross-sub-feed gap uses `prev_last_ad_offset`, the number of posts
//! between the most recent earlier ad and slot 1 of the current sub-feed.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Number of posts in a sub-feed.
pub const SUBFEED_LEN: u32 = 5;

/// Number of distinct slot subsets, i.e. the size of the unpruned space.
pub const NUM_MASKS: usize = 1 << SUBFEED_LEN;

/// A set of ad slots inside one sub-feed, stored as a bitmask where bit
/// `k - 1` marks slot `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct FeedAction(u8);

impl FeedAction {
    pub const EMPTY: FeedAction = FeedAction(0);

    pub fn from_mask(mask: u32) -> Result<Self> {
        if mask as usize >= NUM_MASKS {
            return Err(Error::Argument(format!(
                "action mask {mask} outside 0..{NUM_MASKS}"
            )));
        }
        Ok(FeedAction(mask as u8))
    }

    pub fn from_slots(slots: &[u32]) -> Result<Self> {
        let mut mask = 0u8;
        for &s in slots {
            if !(1..=SUBFEED_LEN).contains(&s) {
                return Err(Error::Argument(format!("slot {s} outside 1..={SUBFEED_LEN}")));
            }
            let bit = 1u8 << (s - 1);
            if mask & bit != 0 {
                return Err(Error::Argument(format!("slot {s} listed twice")));
            }
            mask |= bit;
        }
        Ok(FeedAction(mask))
    }

    pub fn mask(self) -> u32 {
        self.0 as u32
    }

    /// Slots carrying an ad, ascending.
    pub fn slots(self) -> impl Iterator<Item = u32> {
        (1..=SUBFEED_LEN).filter(move |s| self.0 & (1 << (s - 1)) != 0)
    }

    pub fn has_ad(self, slot: u32) -> bool {
        (1..=SUBFEED_LEN).contains(&slot) && self.0 & (1 << (slot - 1)) != 0
    }

    pub fn num_ads(self) -> u32 {
        self.0.count_ones()
    }

    pub fn first_slot(self) -> Option<u32> {
        self.slots().next()
    }

    pub fn last_slot(self) -> Option<u32> {
        self.slots().last()
    }

    /// Ad-gap offset seen by the next sub-feed after this one is served,
    /// given the offset this sub-feed started with.
    pub fn next_offset(self, prev_last_ad_offset: Option<u32>) -> Option<u32> {
        match self.last_slot() {
            Some(last) => Some(SUBFEED_LEN - last),
            None => prev_last_ad_offset.map(|o| o + SUBFEED_LEN),
        }
    }

    fn sort_key(self) -> (u32, Vec<u32>) {
        (self.num_ads(), self.slots().collect())
    }
}

impl fmt::Display for FeedAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let slots: Vec<String> = self.slots().map(|s| s.to_string()).collect();
        write!(f, "{{{}}}", slots.join(","))
    }
}

impl Serialize for FeedAction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u32(self.mask())
    }
}

impl<'de> Deserialize<'de> for FeedAction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let mask = u32::deserialize(d)?;
        FeedAction::from_mask(mask).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionConstraints {
    pub max_ads: u32,
    pub min_position_difference: u32,
    pub forbid_slot1_on_first_subfeed: bool,
}

impl Default for ActionConstraints {
    fn default() -> Self {
        Self {
            max_ads: 2,
            min_position_difference: 4,
            forbid_slot1_on_first_subfeed: true,
        }
    }
}

impl ActionConstraints {
    /// No pruning beyond the ad cap.
    pub fn unpruned(max_ads: u32) -> Self {
        Self {
            max_ads,
            min_position_difference: 1,
            forbid_slot1_on_first_subfeed: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_ads > SUBFEED_LEN {
            return Err(Error::Config(format!(
                "max_ads {} exceeds sub-feed length {SUBFEED_LEN}",
                self.max_ads
            )));
        }
        if self.min_position_difference < 1 {
            return Err(Error::Config("min_position_difference must be >= 1".into()));
        }
        Ok(())
    }

    /// Stable short digest of the constraint values. Policy files carry it so
    /// that a policy is never evaluated against a differently pruned space.
    pub fn hash(&self) -> String {
        let canonical = format!(
            "subfeed_len={};max_ads={};min_position_difference={};forbid_slot1_on_first_subfeed={}",
            SUBFEED_LEN, self.max_ads, self.min_position_difference, self.forbid_slot1_on_first_subfeed
        );
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Smallest offset at which the cross-sub-feed rule stops binding.
    fn free_offset(&self) -> u32 {
        self.min_position_difference.saturating_sub(1)
    }
}

/// Context that determines which actions are valid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CatalogKey {
    pub subfeed_index: u32,
    pub prev_last_ad_offset: Option<u32>,
}

impl CatalogKey {
    pub fn new(subfeed_index: u32, prev_last_ad_offset: Option<u32>) -> Self {
        Self {
            subfeed_index,
            prev_last_ad_offset,
        }
    }

    /// Collapses keys that produce identical catalogs.
    pub fn canonical(&self, constraints: &ActionConstraints) -> CatalogKey {
        let first = if self.subfeed_index == 0 && constraints.forbid_slot1_on_first_subfeed {
            0
        } else {
            1
        };
        let offset = self
            .prev_last_ad_offset
            .filter(|&o| o < constraints.free_offset());
        CatalogKey::new(first, offset)
    }
}

/// Returns whether `action` survives pruning in the given context.
pub fn validate_action(
    action: FeedAction,
    constraints: &ActionConstraints,
    subfeed_index: u32,
    prev_last_ad_offset: Option<u32>,
) -> bool {
    if action.num_ads() > constraints.max_ads {
        return false;
    }
    let slots: Vec<u32> = action.slots().collect();
    if slots
        .windows(2)
        .any(|w| w[1] - w[0] < constraints.min_position_difference)
    {
        return false;
    }
    let Some(&first) = slots.first() else {
        return true;
    };
    if subfeed_index == 0 && constraints.forbid_slot1_on_first_subfeed && first == 1 {
        return false;
    }
    match prev_last_ad_offset {
        // Position difference between the earlier ad and slot `first`.
        Some(offset) => offset + first >= constraints.min_position_difference,
        None => true,
    }
}

/// The valid actions for one context, in deterministic order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionCatalog {
    key: CatalogKey,
    actions: Vec<FeedAction>,
    #[serde(skip)]
    index_of_mask: [Option<u8>; NUM_MASKS],
}

impl ActionCatalog {
    fn new(key: CatalogKey, actions: Vec<FeedAction>) -> Self {
        let mut index_of_mask = [None; NUM_MASKS];
        for (i, a) in actions.iter().enumerate() {
            index_of_mask[a.mask() as usize] = Some(i as u8);
        }
        Self {
            key,
            actions,
            index_of_mask,
        }
    }

    pub fn key(&self) -> CatalogKey {
        self.key
    }

    pub fn actions(&self) -> &[FeedAction] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn action_id(&self, action: FeedAction) -> Option<usize> {
        self.index_of_mask[action.mask() as usize].map(usize::from)
    }

    pub fn action(&self, id: usize) -> Option<FeedAction> {
        self.actions.get(id).copied()
    }

    pub fn contains(&self, action: FeedAction) -> bool {
        self.action_id(action).is_some()
    }
}

/// Lists every valid action for a context, ordered by ad count and then
/// lexicographically by slots.
pub fn enumerate_actions(
    constraints: &ActionConstraints,
    subfeed_index: u32,
    prev_last_ad_offset: Option<u32>,
) -> Result<ActionCatalog> {
    constraints.validate()?;
    let mut actions: Vec<FeedAction> = (0..NUM_MASKS as u32)
        .map(|m| FeedAction(m as u8))
        .filter(|&a| validate_action(a, constraints, subfeed_index, prev_last_ad_offset))
        .collect();
    actions.sort_by_key(|a| a.sort_key());
    Ok(ActionCatalog::new(
        CatalogKey::new(subfeed_index, prev_last_ad_offset),
        actions,
    ))
}

/// Propensity of each action under uniform logging over `catalog`.
pub fn uniform_propensity(catalog: &ActionCatalog) -> Result<f64> {
    if catalog.is_empty() {
        return Err(Error::InvalidState("empty action catalog".into()));
    }
    Ok(1.0 / catalog.len() as f64)
}

/// Memoizes catalogs for one set of constraints. Cheap to clone.
#[derive(Debug, Clone)]
pub struct CatalogSet {
    constraints: ActionConstraints,
    cache: Arc<RwLock<HashMap<CatalogKey, Arc<ActionCatalog>>>>,
}

impl CatalogSet {
    pub fn new(constraints: ActionConstraints) -> Result<Self> {
        constraints.validate()?;
        Ok(Self {
            constraints,
            cache: Arc::default(),
        })
    }

    pub fn constraints(&self) -> &ActionConstraints {
        &self.constraints
    }

    pub fn get(&self, key: CatalogKey) -> Arc<ActionCatalog> {
        let canonical = key.canonical(&self.constraints);
        if let Some(c) = self.cache.read().expect("catalog cache poisoned").get(&canonical) {
            return Arc::clone(c);
        }
        // Canonical keys carry subfeed 0 only when slot 1 is forbidden there,
        // so enumerating under the canonical key gives the same action set.
        let built = enumerate_actions(
            &self.constraints,
            canonical.subfeed_index,
            canonical.prev_last_ad_offset,
        )
        .expect("constraints validated at construction");
        let catalog = Arc::new(built);
        self.cache
            .write()
            .expect("catalog cache poisoned")
            .entry(canonical)
            .or_insert(catalog)
            .clone()
    }
}
