//! Ground-truth policy values.
//!
//! The value of a target policy is its expected per-record reward on the
//! context distribution produced by uniform logging:
//! `V = E[sum over records of sum_a pi(a|x) Q(s, a)] / E[records per session]`,
//! where `s` is the full simulator state behind context `x`. `Q` is exact:
//! the immediate signals come from [`subfeed_expectation`], and the
//! feed-abandonment signal, which is attributed back to every record of the
//! run, is the expected discount over the remainder of the session played
//! under uniform logging.
//!
//! Small configurations are enumerated state by state. Larger ones are
//! sampled: sessions are drawn under uniform logging and `sum_a pi Q` is
//! evaluated exactly at every visited state, so the only noise is over
//! contexts. A fixed seed gives common random numbers across policies.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::context::{
    context_from_parts, IDX_AD_GAP, IDX_GENRE, IDX_POST_AGE, IDX_SESSION_FETCHES,
    IDX_SESSION_IMPRESSIONS, IDX_SUBFEED, PROFILE_FEATURES,
};
use super::{sample_index, subfeed_expectation, EnvironmentConfig, SessionState};
use crate::action_space::{ActionCatalog, CatalogSet, FeedAction};
use crate::error::{Error, Result};
use crate::estimators::RewardModel;
use crate::policies::Policy;
use crate::rewards::{dot, DiscountParams, RewardFunction, RewardWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    ExactEnumeration,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleOptions {
    /// Target standard error for both objectives in Monte Carlo mode.
    pub precision: f64,
    /// Enumerate exactly while the state count stays at or below this.
    pub max_exact_states: usize,
    pub force_monte_carlo: bool,
    pub batch_sessions: usize,
    pub max_sessions: usize,
    pub seed: u64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            precision: 1e-3,
            max_exact_states: 1_000_000,
            force_monte_carlo: false,
            batch_sessions: 20_000,
            max_sessions: 2_000_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruePolicyValue {
    pub v_sat: f64,
    pub v_ads: f64,
    pub beta: f64,
    pub v_total: f64,
    /// Standard error of `v_total`; zero for exact enumeration.
    pub mc_std_error: f64,
    pub sat_std_error: f64,
    pub ads_std_error: f64,
    pub method: OracleMethod,
    /// Monte Carlo stopped at the session budget before reaching precision.
    pub partial: bool,
    /// Enumerated states or simulated sessions.
    pub work: usize,
}

impl TruePolicyValue {
    pub fn total(&self, beta: f64) -> f64 {
        beta * self.v_sat + (1.0 - beta) * self.v_ads
    }
}

// ── Exact action values ──

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct TailKey {
    cohort: usize,
    fetch: u32,
    subfeed: u32,
    offset: Option<u32>,
    after_ad: bool,
}

/// Exact `Q(s, a)` for satisfaction and ads.
#[derive(Debug)]
pub(crate) struct QModel {
    config: EnvironmentConfig,
    catalogs: CatalogSet,
    weights: RewardWeights,
    discount: DiscountParams,
    tail: RwLock<HashMap<TailKey, f64>>,
}

impl QModel {
    pub(crate) fn new(
        config: &EnvironmentConfig,
        catalogs: &CatalogSet,
        weights: &RewardWeights,
        discount: &DiscountParams,
    ) -> Result<Self> {
        config.validate()?;
        weights.validate()?;
        discount.validate()?;
        Ok(Self {
            config: config.clone(),
            catalogs: catalogs.clone(),
            weights: weights.clone(),
            discount: *discount,
            tail: RwLock::default(),
        })
    }

    /// Expected attributed feed-abandonment discount carried by a record at
    /// this state once `action` completes the sub-feed.
    fn attributed_after(&self, cohort: usize, state: &SessionState, action: FeedAction, p_complete: f64) -> f64 {
        if p_complete == 0.0 {
            return 0.0;
        }
        let next_offset = action.next_offset(state.prev_last_ad_offset);
        let k = state.fetch_index;
        let cont = if state.subfeed_index == 0 {
            self.tail(cohort, k, 1, next_offset)
        } else if k < self.config.session_length.max_fetches {
            self.config.session_length.continue_prob * self.discount.alpha * self.tail(cohort, k + 1, 0, next_offset)
        } else {
            0.0
        };
        p_complete * cont
    }

    /// `E[1{run ends in feed abandonment} * alpha^(rank_d - k) / ln(1 + rank_d)]`
    /// from the start of sub-feed `(k, j)` under uniform logging.
    fn tail(&self, cohort: usize, fetch: u32, subfeed: u32, offset: Option<u32>) -> f64 {
        let constraints = self.catalogs.constraints();
        let canonical = crate::action_space::CatalogKey::new(subfeed, offset).canonical(constraints);
        let key = TailKey {
            cohort,
            fetch,
            subfeed,
            offset: canonical.prev_last_ad_offset,
            after_ad: offset == Some(0),
        };
        if let Some(v) = self.tail.read().expect("tail cache").get(&key) {
            return *v;
        }
        let user = &self.config.cohorts[cohort].profile;
        let state = SessionState {
            fetch_index: fetch,
            subfeed_index: subfeed,
            prev_last_ad_offset: offset,
            ..SessionState::initial(0)
        };
        let catalog = self.catalogs.get(state.catalog_key());
        let ln = (1.0 + fetch as f64).ln();
        let mut total = 0.0;
        for &a in catalog.actions() {
            let e = subfeed_expectation(&self.config, user, &state, a, &self.discount);
            total += e.p_feed_abandon / ln + self.attributed_after(cohort, &state, a, e.p_complete_total());
        }
        let v = total / catalog.len() as f64;
        self.tail.write().expect("tail cache").insert(key, v);
        v
    }

    /// `(Q_sat, Q_ads)` plus the sub-feed outcome distribution.
    pub(crate) fn q(
        &self,
        cohort: usize,
        state: &SessionState,
        action: FeedAction,
    ) -> (f64, f64, super::SubfeedExpectation) {
        let user = &self.config.cohorts[cohort].profile;
        let e = subfeed_expectation(&self.config, user, state, action, &self.discount);
        let ln = (1.0 + state.fetch_index as f64).ln();
        let feed = e.p_feed_abandon / ln + self.attributed_after(cohort, state, action, e.p_complete_total());
        let sat = [
            e.engagements,
            e.video_play,
            e.pct_video_watch,
            e.feed_depth,
            e.video_skip,
            feed,
            e.session_abandon_discounted,
        ];
        let ads = [e.impressions, e.clicks, e.installs];
        (dot(&self.weights.sat_weights, &sat), dot(&self.weights.ads_weights, &ads), e)
    }

    fn context(&self, cohort: usize, state: &SessionState) -> Vec<f64> {
        context_from_parts(
            &self.config.cohorts[cohort].profile,
            &self.config.content_variants[state.content],
            state,
        )
    }
}

// ── Oracle reward model ──

/// The exact expected reward `Q(x, a)` under a fixed mix, recovered by
/// decoding the context back to the simulator state.
#[derive(Debug, Clone)]
pub struct OracleRewardModel {
    q: Arc<QModel>,
    beta: f64,
    profiles: Vec<Vec<f64>>,
    contents: Vec<Vec<f64>>,
}

impl OracleRewardModel {
    pub fn new(config: &EnvironmentConfig, catalogs: &CatalogSet, reward: &RewardFunction) -> Result<Self> {
        let q = Arc::new(QModel::new(config, catalogs, &reward.weights, &reward.discount)?);
        let probe = SessionState::initial(0);
        let profiles: Vec<Vec<f64>> = (0..config.cohorts.len())
            .map(|c| {
                let x = q.context(c, &probe);
                PROFILE_FEATURES.iter().map(|&i| x[i]).collect()
            })
            .collect();
        let contents: Vec<Vec<f64>> = config
            .content_variants
            .iter()
            .map(|v| {
                let mut f: Vec<f64> = v.genre_counts.iter().map(|g| *g as f64).collect();
                f.push(v.post_age_hours);
                f
            })
            .collect();
        for (name, keys) in [("cohort", &profiles), ("content variant", &contents)] {
            for i in 0..keys.len() {
                if keys[..i].contains(&keys[i]) {
                    return Err(Error::Config(format!(
                        "{name} {i} is not identifiable from context features"
                    )));
                }
            }
        }
        Ok(Self {
            q,
            beta: reward.mix.beta,
            profiles,
            contents,
        })
    }

    fn nearest(keys: &[Vec<f64>], probe: &[f64]) -> usize {
        let dist = |k: &Vec<f64>| k.iter().zip(probe).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        (0..keys.len())
            .min_by(|&a, &b| dist(&keys[a]).total_cmp(&dist(&keys[b])))
            .expect("non-empty")
    }

    fn decode(&self, x: &[f64]) -> (usize, SessionState) {
        let profile: Vec<f64> = PROFILE_FEATURES.iter().map(|&i| x[i]).collect();
        let cohort = Self::nearest(&self.profiles, &profile);
        let content = Self::nearest(&self.contents, &x[IDX_GENRE..=IDX_POST_AGE]);
        let mut prev = 0u32;
        for s in 0..5 {
            if x[13 + s] > 0.5 {
                prev |= 1 << s;
            }
        }
        let state = SessionState {
            fetch_index: x[IDX_SESSION_FETCHES].round() as u32 + 1,
            subfeed_index: x[IDX_SUBFEED].round() as u32,
            content,
            prev_action: FeedAction::from_mask(prev).expect("five bits"),
            prev_last_ad_offset: (x[IDX_AD_GAP] >= 0.0).then(|| x[IDX_AD_GAP].round() as u32),
            fetch_ad_history: Vec::new(),
            current_fetch_ads: 0,
            session_impressions: x[IDX_SESSION_IMPRESSIONS].round() as u32,
        };
        (cohort, state)
    }

    /// `(Q_sat, Q_ads)` for every catalog action.
    pub fn components(&self, context: &[f64], catalog: &ActionCatalog) -> Vec<(f64, f64)> {
        let (cohort, state) = self.decode(context);
        catalog
            .actions()
            .iter()
            .map(|&a| {
                let (s, d, _) = self.q.q(cohort, &state, a);
                (s, d)
            })
            .collect()
    }
}

impl RewardModel for OracleRewardModel {
    fn predict(&self, context: &[f64], catalog: &ActionCatalog) -> Vec<f64> {
        self.components(context, catalog)
            .into_iter()
            .map(|(s, a)| self.beta * s + (1.0 - self.beta) * a)
            .collect()
    }
}

// ── Policy values ──

/// True value of one policy; see [`true_policy_value_with`].
pub fn true_policy_value(
    policy: &dyn Policy,
    config: &EnvironmentConfig,
    catalogs: &CatalogSet,
    reward: &RewardFunction,
    precision: f64,
) -> Result<TruePolicyValue> {
    let opts = OracleOptions {
        precision,
        seed: config.seed,
        ..OracleOptions::default()
    };
    Ok(true_policy_value_with(&[policy], config, catalogs, reward, &opts)?.remove(0))
}

/// True values of several policies, sharing one enumeration or one set of
/// simulated sessions.
pub fn true_policy_value_with(
    policies: &[&dyn Policy],
    config: &EnvironmentConfig,
    catalogs: &CatalogSet,
    reward: &RewardFunction,
    options: &OracleOptions,
) -> Result<Vec<TruePolicyValue>> {
    let q = QModel::new(config, catalogs, &reward.weights, &reward.discount)?;
    let beta = reward.mix.beta;
    if !options.force_monte_carlo {
        if let Some((sums, count, states)) = enumerate(&q, policies, options.max_exact_states) {
            return Ok(sums
                .into_iter()
                .map(|(s, a)| {
                    let (v_sat, v_ads) = (s / count, a / count);
                    TruePolicyValue {
                        v_sat,
                        v_ads,
                        beta,
                        v_total: beta * v_sat + (1.0 - beta) * v_ads,
                        mc_std_error: 0.0,
                        sat_std_error: 0.0,
                        ads_std_error: 0.0,
                        method: OracleMethod::ExactEnumeration,
                        partial: false,
                        work: states,
                    }
                })
                .collect());
        }
        log::info!("state space above {} states, using Monte Carlo", options.max_exact_states);
    }
    monte_carlo(&q, policies, beta, options)
}

fn expected_value(q: &QModel, policy: &dyn Policy, cohort: usize, state: &SessionState, catalog: &ActionCatalog, qs: &[(f64, f64)]) -> (f64, f64) {
    let x = q.context(cohort, state);
    let pi = policy.probabilities(&x, catalog);
    pi.iter()
        .zip(qs)
        .fold((0.0, 0.0), |(s, a), (p, (qs, qa))| (s + p * qs, a + p * qa))
}

type Sums = Vec<(f64, f64)>;

fn enumerate(q: &QModel, policies: &[&dyn Policy], max_states: usize) -> Option<(Sums, f64, usize)> {
    let cfg = &q.config;
    let cohort_w = cfg.cohort_weights();
    let content_w = cfg.content_weights();
    let mut level: BTreeMap<(usize, SessionState), f64> = BTreeMap::new();
    for (c, wc) in cohort_w.iter().enumerate() {
        for (v, wv) in content_w.iter().enumerate() {
            *level.entry((c, SessionState::initial(v))).or_default() += wc * wv;
        }
    }
    let mut sums = vec![(0.0, 0.0); policies.len()];
    let mut count = 0.0;
    let mut states = 0usize;
    while !level.is_empty() {
        states += level.len();
        if states > max_states {
            return None;
        }
        let entries: Vec<_> = level.into_iter().collect();
        // Per-state work is independent; combine in key order afterwards.
        let results: Vec<(Vec<(f64, f64)>, Vec<((usize, SessionState), f64)>)> = entries
            .par_iter()
            .map(|((c, s), p)| {
                let catalog = q.catalogs.get(s.catalog_key());
                let mut qs = Vec::with_capacity(catalog.len());
                let mut next = Vec::new();
                let pa = p / catalog.len() as f64;
                for &a in catalog.actions() {
                    let (qsat, qads, e) = q.q(*c, s, a);
                    qs.push((qsat, qads));
                    let cont = if s.subfeed_index == 0 {
                        1.0
                    } else if s.fetch_index < cfg.session_length.max_fetches {
                        cfg.session_length.continue_prob
                    } else {
                        0.0
                    };
                    if cont == 0.0 {
                        continue;
                    }
                    for (t, pc) in e.p_complete.iter().enumerate() {
                        if *pc == 0.0 {
                            continue;
                        }
                        for (v, wv) in content_w.iter().enumerate() {
                            next.push(((*c, s.advance(a, t as u32, v)), pa * pc * cont * wv));
                        }
                    }
                }
                let vals = policies
                    .iter()
                    .map(|pol| {
                        let (vs, va) = expected_value(q, *pol, *c, s, &catalog, &qs);
                        (p * vs, p * va)
                    })
                    .collect();
                (vals, next)
            })
            .collect();
        let mut next_level = BTreeMap::new();
        for (((_, p), (vals, next)), _) in entries.iter().zip(results).zip(0..) {
            count += p;
            for (acc, v) in sums.iter_mut().zip(vals) {
                acc.0 += v.0;
                acc.1 += v.1;
            }
            for (k, w) in next {
                *next_level.entry(k).or_insert(0.0) += w;
            }
        }
        level = next_level;
    }
    Some((sums, count, states))
}

/// Per-session sums for every policy and the session's record count.
fn simulate_session(q: &QModel, policies: &[&dyn Policy], seed: u64, index: u64) -> (Vec<(f64, f64)>, f64) {
    let cfg = &q.config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let content_w = cfg.content_weights();
    let cohort = sample_index(&cfg.cohort_weights(), &mut rng);
    let mut state = Some(SessionState::initial(sample_index(&content_w, &mut rng)));
    let mut sums = vec![(0.0, 0.0); policies.len()];
    let mut n = 0.0;
    while let Some(s) = state {
        n += 1.0;
        let catalog = q.catalogs.get(s.catalog_key());
        let mut qs = Vec::with_capacity(catalog.len());
        let mut outcomes = Vec::with_capacity(catalog.len());
        for &a in catalog.actions() {
            let (qsat, qads, e) = q.q(cohort, &s, a);
            qs.push((qsat, qads));
            outcomes.push(e.p_complete);
        }
        for (acc, pol) in sums.iter_mut().zip(policies) {
            let (vs, va) = expected_value(q, *pol, cohort, &s, &catalog, &qs);
            acc.0 += vs;
            acc.1 += va;
        }
        // Continue under uniform logging.
        let idx = rng.random_range(0..catalog.len());
        let action = catalog.actions()[idx];
        let mut u: f64 = rng.random();
        let mut completed = None;
        for (t, pc) in outcomes[idx].iter().enumerate() {
            if u < *pc {
                completed = Some(t as u32);
                break;
            }
            u -= pc;
        }
        state = completed.and_then(|t| {
            let go_on = s.subfeed_index == 0
                || (s.fetch_index < cfg.session_length.max_fetches
                    && rng.random::<f64>() < cfg.session_length.continue_prob);
            go_on.then(|| s.advance(action, t, sample_index(&content_w, &mut rng)))
        });
    }
    (sums, n)
}

fn monte_carlo(q: &QModel, policies: &[&dyn Policy], beta: f64, options: &OracleOptions) -> Result<Vec<TruePolicyValue>> {
    if options.batch_sessions == 0 {
        return Err(Error::Config("batch_sessions must be positive".into()));
    }
    let mut sessions: Vec<(Vec<(f64, f64)>, f64)> = Vec::new();
    loop {
        let start = sessions.len() as u64;
        let batch: Vec<_> = (start..start + options.batch_sessions as u64)
            .into_par_iter()
            .map(|i| simulate_session(q, policies, options.seed, i))
            .collect();
        sessions.extend(batch);
        let values = summarize(&sessions, policies.len(), beta);
        let worst = values
            .iter()
            .map(|v| v.sat_std_error.max(v.ads_std_error))
            .fold(0.0, f64::max);
        let budget_left = sessions.len() + options.batch_sessions <= options.max_sessions;
        if worst <= options.precision || !budget_left {
            let partial = worst > options.precision;
            if partial {
                log::warn!(
                    "oracle stopped at {} sessions with standard error {worst:.2e} above {:.2e}",
                    sessions.len(),
                    options.precision
                );
            }
            return Ok(values
                .into_iter()
                .map(|mut v| {
                    v.partial = partial;
                    v
                })
                .collect());
        }
    }
}

/// Ratio estimates with delta-method standard errors.
fn summarize(sessions: &[(Vec<(f64, f64)>, f64)], n_policies: usize, beta: f64) -> Vec<TruePolicyValue> {
    let m = sessions.len() as f64;
    let counts: Vec<f64> = sessions.iter().map(|(_, n)| *n).collect();
    let mean_n = crate::numeric::mean(&counts);
    (0..n_policies)
        .map(|p| {
            let ratio = |f: &dyn Fn(&(f64, f64)) -> f64| -> (f64, f64) {
                let ys: Vec<f64> = sessions.iter().map(|(s, _)| f(&s[p])).collect();
                let v = crate::numeric::mean(&ys) / mean_n;
                let resid: Vec<f64> = ys.iter().zip(&counts).map(|(y, n)| y - v * n).collect();
                let se = crate::numeric::std_dev(&resid) / (mean_n * m.sqrt());
                (v, se)
            };
            let (v_sat, se_sat) = ratio(&|x| x.0);
            let (v_ads, se_ads) = ratio(&|x| x.1);
            let (_, se_total) = ratio(&|x| beta * x.0 + (1.0 - beta) * x.1);
            TruePolicyValue {
                v_sat,
                v_ads,
                beta,
                v_total: beta * v_sat + (1.0 - beta) * v_ads,
                mc_std_error: se_total,
                sat_std_error: se_sat,
                ads_std_error: se_ads,
                method: OracleMethod::MonteCarlo,
                partial: false,
                work: sessions.len(),
            }
        })
        .collect()
}
