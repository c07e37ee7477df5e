//! Full-session log generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{sample_index, sample_user, simulate_fetch, EnvironmentConfig, RunEndKind, SessionState};
use crate::action_space::CatalogSet;
use crate::dataset::{finalize_records, LoggedRecord, RawEvent};
use crate::error::Result;
use crate::numeric::sigmoid;
use crate::policies::Policy;
use crate::rewards::{sat_reward, DiscountParams, RewardWeights};

const BASE_TIMESTAMP_MS: i64 = 1_700_000_000_000;

/// Simulates one session per user under `policy` and returns the finalized
/// records, users in order. Each user has its own random stream, so the
/// output does not depend on thread scheduling.
pub fn generate_log(
    policy: &dyn Policy,
    config: &EnvironmentConfig,
    catalogs: &CatalogSet,
    n_users: usize,
    seed: u64,
) -> Result<Vec<LoggedRecord>> {
    generate_log_with(policy, config, catalogs, n_users, seed, &RewardWeights::default(), &DiscountParams::default())
}

/// As [`generate_log`], with explicit weights for the retention label model.
pub fn generate_log_with(
    policy: &dyn Policy,
    config: &EnvironmentConfig,
    catalogs: &CatalogSet,
    n_users: usize,
    seed: u64,
    label_weights: &RewardWeights,
    label_discount: &DiscountParams,
) -> Result<Vec<LoggedRecord>> {
    config.validate()?;
    let per_user: Vec<Vec<LoggedRecord>> = (0..n_users)
        .into_par_iter()
        .map(|u| simulate_user(policy, config, catalogs, seed, u, label_weights, label_discount))
        .collect::<Result<_>>()?;
    Ok(per_user.into_iter().flatten().collect())
}

fn simulate_user(
    policy: &dyn Policy,
    config: &EnvironmentConfig,
    catalogs: &CatalogSet,
    seed: u64,
    user_index: usize,
    label_weights: &RewardWeights,
    label_discount: &DiscountParams,
) -> Result<Vec<LoggedRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(user_index as u64);
    let (_, user) = sample_user(config, &mut rng);
    let user_id = format!("s{seed}-u{user_index}");
    let session_id = format!("{user_id}-0");
    let start = BASE_TIMESTAMP_MS + user_index as i64 * 60_000;

    let mut state = Some(SessionState::initial(sample_index(&config.content_weights(), &mut rng)));
    let mut events = Vec::new();
    let mut served = 0i64;
    while let Some(s) = state {
        let context = super::build_context(user, &s, config);
        let catalog = catalogs.get(s.catalog_key());
        let probs = policy.probabilities(&context, &catalog);
        let idx = sample_index(&probs, &mut rng);
        let action = catalog.actions()[idx];
        let out = simulate_fetch(config, user, &s, action, catalogs, &mut rng)?;
        let revenue = revenue_label(config, &out.ads, &mut rng);
        events.push(RawEvent::Fetch(LoggedRecord {
            context,
            action,
            catalog_key: s.catalog_key(),
            propensity: probs[idx],
            sat_signals: out.sat,
            ads_signals: out.ads,
            retention_label: None,
            revenue_label: Some(revenue),
            user_id: user_id.clone(),
            session_id: session_id.clone(),
            timestamp: start + served * 1_000,
        }));
        served += 1;
        if let Some(kind) = out.run_end {
            events.push(RawEvent::RunEnd {
                session_id: session_id.clone(),
                rank_d: s.fetch_index,
                feed_abandoned: kind == RunEndKind::FeedAbandon,
            });
        }
        state = out.next;
    }
    let mut records = finalize_records(events)?;

    // Next-day retention depends on the whole session's satisfaction.
    let mut session_sat = 0.0;
    for r in &records {
        session_sat += sat_reward(&r.sat_signals, label_weights, label_discount)?;
    }
    let p = sigmoid(config.labels.retention_intercept + config.labels.retention_slope * session_sat);
    let retained = u8::from(rng.random::<f64>() < p);
    records.iter_mut().for_each(|r| r.retention_label = Some(retained));
    Ok(records)
}

fn revenue_label<R: Rng + ?Sized>(config: &EnvironmentConfig, ads: &crate::rewards::AdsSignals, rng: &mut R) -> f64 {
    let l = &config.labels;
    let mean = l.revenue_per_impression * ads.impressions as f64
        + l.revenue_per_click * ads.clicks as f64
        + l.revenue_per_install * ads.installs as f64;
    let noise = if l.revenue_noise_sd > 0.0 {
        Normal::new(0.0, l.revenue_noise_sd).expect("positive sd").sample(rng)
    } else {
        0.0
    };
    (mean + noise).max(0.0)
}
