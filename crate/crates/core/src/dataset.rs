//! Logged bandit feedback: one record per served sub-feed.

use serde::{Deserialize, Serialize};

use crate::action_space::{ActionCatalog, CatalogKey, CatalogSet, FeedAction};
use crate::error::{Error, Result};
use crate::rewards::{AdsSignals, RewardFunction, SatSignals};

mod finalize;
mod io;
mod propensity;
mod split;

pub use finalize::{finalize_records, RawEvent};
pub use io::{read_log, write_log, LogFile, LogHeader, ReadMode, SCHEMA_VERSION};
pub use propensity::{
    arithmetic_mean_test, harmonic_mean_test, validate_propensities, ActionCheck,
    ArithmeticReport, HarmonicConfig, HarmonicReport, PropensityReport, MIN_EXPECTED_PER_ACTION,
};
pub use split::{split_by_user, stable_unit_hash};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedRecord {
    pub context: Vec<f64>,
    /// Serialized as the slot bitmask.
    pub action: FeedAction,
    pub catalog_key: CatalogKey,
    pub propensity: f64,
    pub sat_signals: SatSignals,
    pub ads_signals: AdsSignals,
    #[serde(default)]
    pub retention_label: Option<u8>,
    #[serde(default)]
    pub revenue_label: Option<f64>,
    pub user_id: String,
    pub session_id: String,
    pub timestamp: i64,
}

impl LoggedRecord {
    /// Index of the logged action in the catalog active at logging time.
    pub fn action_id(&self, catalogs: &CatalogSet) -> Option<usize> {
        catalogs.get(self.catalog_key).action_id(self.action)
    }

    pub fn validate(&self, catalogs: &CatalogSet) -> Result<()> {
        if !(self.propensity > 0.0 && self.propensity <= 1.0) {
            return Err(Error::Data(format!(
                "propensity {} outside (0, 1]",
                self.propensity
            )));
        }
        if self.action_id(catalogs).is_none() {
            return Err(Error::Data(format!(
                "action {} not valid for catalog {:?}",
                self.action, self.catalog_key
            )));
        }
        self.sat_signals.validate()?;
        if !self.ads_signals.is_consistent() {
            log::warn!(
                "record for user {} has inconsistent ad funnel {:?}",
                self.user_id,
                self.ads_signals
            );
        }
        if self.context.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data("non-finite context value".into()));
        }
        Ok(())
    }
}

/// A record reduced to what estimators need: context, catalog, logged
/// action index, propensity and scalar reward.
#[derive(Debug, Clone)]
pub struct BanditSample {
    pub context: Vec<f64>,
    pub catalog: std::sync::Arc<ActionCatalog>,
    pub action_index: usize,
    pub propensity: f64,
    pub reward: f64,
}

impl BanditSample {
    pub fn action(&self) -> FeedAction {
        self.catalog.actions()[self.action_index]
    }
}

/// Scores records under `reward` and attaches their catalogs.
pub fn to_bandit_samples(
    records: &[LoggedRecord],
    catalogs: &CatalogSet,
    reward: &RewardFunction,
) -> Result<Vec<BanditSample>> {
    records
        .iter()
        .map(|r| {
            let catalog = catalogs.get(r.catalog_key);
            let action_index = catalog.action_id(r.action).ok_or_else(|| {
                Error::Data(format!(
                    "action {} not valid for catalog {:?}",
                    r.action, r.catalog_key
                ))
            })?;
            if !(r.propensity > 0.0 && r.propensity <= 1.0) {
                return Err(Error::Data(format!("propensity {} outside (0, 1]", r.propensity)));
            }
            Ok(BanditSample {
                context: r.context.clone(),
                catalog,
                action_index,
                propensity: r.propensity,
                reward: reward.total(&r.sat_signals, &r.ads_signals)?,
            })
        })
        .collect()
}
