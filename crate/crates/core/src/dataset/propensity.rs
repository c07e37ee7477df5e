//! Sanity checks on logged propensities.
//!
//! Both checks assume the logger was uniform within each catalog, so the
//! logged propensity of the chosen action is also the propensity of every
//! other action in that record's catalog.
//!
//! * Arithmetic-mean test: per catalog family and action, the observed
//!   count is compared with the sum of propensities using a normal
//!   approximation to the Poisson-binomial, Bonferroni-corrected across all
//!   tested actions.
//! * Harmonic-mean test: for a fixed reference action `a*`, the variable
//!   `1{a = a*}/p(a*) + 1{a != a*}/(1 - p(a*))` has mean 2 when the logged
//!   propensities describe the sampler. The logged action plays the role of
//!   the draw `a`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::LoggedRecord;
use crate::action_space::{CatalogKey, CatalogSet, FeedAction};

/// Minimum expected count per action for a family to be tested.
pub const MIN_EXPECTED_PER_ACTION: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionCheck {
    pub family: CatalogKey,
    pub action: FeedAction,
    pub observed_count: u64,
    pub expected_count: f64,
    pub z_score: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArithmeticReport {
    pub per_action: Vec<ActionCheck>,
    /// `None` when every family was skipped for lack of data.
    pub pass: Option<bool>,
    pub critical_z: f64,
    pub skipped_families: Vec<CatalogKey>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarmonicConfig {
    pub tolerance: f64,
    pub reference: FeedAction,
}

impl Default for HarmonicConfig {
    fn default() -> Self {
        Self {
            tolerance: 0.05,
            reference: FeedAction::EMPTY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicReport {
    /// Sample mean over logged draws.
    pub statistic: f64,
    /// The same expectation evaluated in closed form under the logged
    /// propensities.
    pub closed_form: f64,
    pub pass: bool,
    pub n_used: usize,
    pub n_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityReport {
    pub per_action: Vec<ActionCheck>,
    pub arithmetic_pass: Option<bool>,
    pub harmonic_statistic: f64,
    pub harmonic_pass: bool,
    pub n_records: usize,
    pub significance: f64,
    pub procedure: String,
}

impl PropensityReport {
    pub fn passed(&self) -> bool {
        self.harmonic_pass && self.arithmetic_pass != Some(false)
    }
}

pub fn arithmetic_mean_test(
    records: &[LoggedRecord],
    catalogs: &CatalogSet,
    significance: f64,
) -> ArithmeticReport {
    struct Family {
        observed: BTreeMap<FeedAction, u64>,
        expected: f64,
        variance: f64,
        actions: Vec<FeedAction>,
    }
    let mut families: BTreeMap<CatalogKey, Family> = BTreeMap::new();
    for r in records {
        let catalog = catalogs.get(r.catalog_key);
        let fam = families.entry(catalog.key()).or_insert_with(|| Family {
            observed: BTreeMap::new(),
            expected: 0.0,
            variance: 0.0,
            actions: catalog.actions().to_vec(),
        });
        *fam.observed.entry(r.action).or_default() += 1;
        fam.expected += r.propensity;
        fam.variance += r.propensity * (1.0 - r.propensity);
    }

    let mut skipped = Vec::new();
    let tested: Vec<(CatalogKey, &Family)> = families
        .iter()
        .filter(|(key, fam)| {
            let ok = fam.expected >= MIN_EXPECTED_PER_ACTION;
            if !ok {
                log::warn!(
                    "arithmetic test: family {key:?} has expected count {:.1} per action, skipped",
                    fam.expected
                );
                skipped.push(**key);
            }
            ok
        })
        .map(|(k, f)| (*k, f))
        .collect();

    let m: usize = tested.iter().map(|(_, f)| f.actions.len()).sum();
    if m == 0 {
        return ArithmeticReport {
            per_action: Vec::new(),
            pass: None,
            critical_z: f64::NAN,
            skipped_families: skipped,
        };
    }
    let critical_z = Normal::standard().inverse_cdf(1.0 - significance / (2.0 * m as f64));
    let mut per_action = Vec::with_capacity(m);
    for (key, fam) in tested {
        for &action in &fam.actions {
            let observed = fam.observed.get(&action).copied().unwrap_or(0);
            let z = if fam.variance > 0.0 {
                (observed as f64 - fam.expected) / fam.variance.sqrt()
            } else if (observed as f64 - fam.expected).abs() < 1e-9 {
                0.0
            } else {
                f64::INFINITY
            };
            per_action.push(ActionCheck {
                family: key,
                action,
                observed_count: observed,
                expected_count: fam.expected,
                z_score: z,
                pass: z.abs() <= critical_z,
            });
        }
    }
    let pass = per_action.iter().all(|c| c.pass);
    ArithmeticReport {
        per_action,
        pass: Some(pass),
        critical_z,
        skipped_families: skipped,
    }
}

pub fn harmonic_mean_test(
    records: &[LoggedRecord],
    catalogs: &CatalogSet,
    config: &HarmonicConfig,
) -> HarmonicReport {
    let mut sum = 0.0;
    let mut closed = 0.0;
    let mut used = 0usize;
    let mut deterministic = 0usize;
    let mut excluded = 0usize;
    for r in records {
        let p = r.propensity;
        if p >= 1.0 {
            deterministic += 1;
            excluded += 1;
            continue;
        }
        if !catalogs.get(r.catalog_key).contains(config.reference) {
            excluded += 1;
            continue;
        }
        sum += if r.action == config.reference {
            1.0 / p
        } else {
            1.0 / (1.0 - p)
        };
        closed += p * (1.0 / p) + (1.0 - p) * (1.0 / (1.0 - p));
        used += 1;
    }
    if deterministic > 0 {
        log::warn!("harmonic test: excluded {deterministic} records with propensity 1");
    }
    let (statistic, closed_form) = if used > 0 {
        (sum / used as f64, closed / used as f64)
    } else {
        (f64::NAN, f64::NAN)
    };
    HarmonicReport {
        statistic,
        closed_form,
        pass: used > 0 && (statistic - 2.0).abs() <= config.tolerance,
        n_used: used,
        n_excluded: excluded,
    }
}

pub fn validate_propensities(
    records: &[LoggedRecord],
    catalogs: &CatalogSet,
    significance: f64,
    harmonic: &HarmonicConfig,
) -> PropensityReport {
    let arith = arithmetic_mean_test(records, catalogs, significance);
    let harm = harmonic_mean_test(records, catalogs, harmonic);
    PropensityReport {
        per_action: arith.per_action,
        arithmetic_pass: arith.pass,
        harmonic_statistic: harm.statistic,
        harmonic_pass: harm.pass,
        n_records: records.len(),
        significance,
        procedure: format!(
            "two-sided z-tests, Bonferroni-corrected (critical |z| = {:.3}); harmonic reference action {} with tolerance {}",
            arith.critical_z, harmonic.reference, harmonic.tolerance
        ),
    }
}
