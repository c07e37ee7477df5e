//! Acceptance suite: one test per criterion, each printing a single
//! PASS/FAIL line to stderr before asserting.

use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use adload_core::action_space::{enumerate_actions, ActionCatalog, ActionConstraints, CatalogSet, FeedAction};
use adload_core::dataset::{
    arithmetic_mean_test, harmonic_mean_test, to_bandit_samples, BanditSample, HarmonicConfig, LoggedRecord,
};
use adload_core::estimators::{
    fit_reward_model, OffPolicyEvaluator, RewardModel, RewardModelConfig, ValueEstimate,
};
use adload_core::harness::{dominates, run_pareto, HarnessConfig};
use adload_core::policies::{
    FatiguePolicy, FatiguePolicyConfig, FixedCountPolicy, MixturePolicy, NoAdsPolicy, Policy, StaticPolicy,
    StaticPolicyConfig, UniformPolicy,
};
use adload_core::rewards::{
    ads_reward, discounted_feed_abandonment, fit_scalarization, pearson, sat_reward, AdsSignals, DiscountParams,
    RewardFunction, RewardMixConfig, RewardWeights, SatSignals, ScalarizationConfig,
};
use adload_core::simulator::{
    generate_log, simulate_fetch, true_policy_value_with, ContextSchema, EnvironmentConfig, OracleOptions,
    OracleRewardModel, RunEndKind, SessionState,
};

fn verdict(id: u32, title: &str, ok: bool, detail: &str) {
    let status = if ok { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "[criterion {id}] {status}: {title} ({detail})");
}

fn setup() -> (EnvironmentConfig, CatalogSet, RewardFunction) {
    let reward = RewardFunction::new(
        RewardWeights::default(),
        DiscountParams::default(),
        RewardMixConfig::new(0.8).unwrap(),
    )
    .unwrap();
    (
        EnvironmentConfig::default(),
        CatalogSet::new(ActionConstraints::default()).unwrap(),
        reward,
    )
}

/// Uniform logs truncated to exactly `n` records.
fn uniform_log(cfg: &EnvironmentConfig, catalogs: &CatalogSet, n: usize, seed: u64) -> Vec<LoggedRecord> {
    // About 3.2 records per user under the default session model.
    let users = n * 2 / 5;
    let mut records = generate_log(&UniformPolicy, cfg, catalogs, users, seed).unwrap();
    assert!(records.len() >= n, "only {} records from {users} users", records.len());
    records.truncate(n);
    records
}

fn mixture(name: &str, parts: Vec<(f64, Arc<dyn Policy>)>) -> Arc<dyn Policy> {
    Arc::new(MixturePolicy::new(name.to_string(), parts).unwrap())
}

fn fatigue() -> Arc<dyn Policy> {
    Arc::new(FatiguePolicy::new(FatiguePolicyConfig::default(), &ContextSchema::simulator()).unwrap())
}

fn exact_values(policies: &[&dyn Policy], cfg: &EnvironmentConfig, catalogs: &CatalogSet, reward: &RewardFunction) -> Vec<f64> {
    true_policy_value_with(policies, cfg, catalogs, reward, &OracleOptions::default())
        .unwrap()
        .into_iter()
        .map(|v| {
            assert_eq!(v.mc_std_error, 0.0, "expected exact enumeration");
            v.v_total
        })
        .collect()
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

// ── 1: unbiasedness ──

#[test]
fn criterion_1_ipw_and_dr_are_unbiased() {
    const REPS: u64 = 200;
    const N: usize = 50_000;
    let start = Instant::now();
    let (cfg, catalogs, reward) = setup();
    let targets: Vec<Arc<dyn Policy>> = vec![
        mixture("uniform_fatigue", vec![(0.5, Arc::new(UniformPolicy)), (0.5, fatigue())]),
        mixture(
            "uniform_static",
            vec![
                (0.5, Arc::new(UniformPolicy)),
                (0.5, Arc::new(StaticPolicy::new(StaticPolicyConfig { offset: 3, post_gap: 5 }).unwrap())),
            ],
        ),
        mixture("uniform_no_ads", vec![(0.6, Arc::new(UniformPolicy)), (0.4, Arc::new(NoAdsPolicy))]),
    ];
    let refs: Vec<&dyn Policy> = targets.iter().map(|p| p.as_ref()).collect();
    let truth = exact_values(&refs, &cfg, &catalogs, &reward);

    // The DR reward model is fitted once on an independent log.
    let fit_records = uniform_log(&cfg, &catalogs, N, 1_000_003);
    let fit_samples = to_bandit_samples(&fit_records, &catalogs, &reward).unwrap();
    let model = fit_reward_model(&fit_samples, &[], &RewardModelConfig::default()).unwrap().model;

    let evaluator = OffPolicyEvaluator::analytic();
    let mut ipw = vec![Vec::new(); targets.len()];
    let mut dr = vec![Vec::new(); targets.len()];
    for rep in 0..REPS {
        let records = uniform_log(&cfg, &catalogs, N, rep);
        let samples = to_bandit_samples(&records, &catalogs, &reward).unwrap();
        for (t, p) in refs.iter().enumerate() {
            ipw[t].push(evaluator.ipw(*p, &samples, None).unwrap().value);
            dr[t].push(evaluator.dr(*p, &model, &samples).unwrap().value);
        }
    }
    let elapsed = start.elapsed();

    let mut ok = elapsed <= Duration::from_secs(120);
    let mut details = Vec::new();
    for (t, p) in refs.iter().enumerate() {
        for (label, xs) in [("IPW", &ipw[t]), ("DR", &dr[t])] {
            let (m, sd) = mean_sd(xs);
            let se = sd / (REPS as f64).sqrt();
            let z = (m - truth[t]) / se;
            let single = (xs[0] - truth[t]).abs() / truth[t].abs();
            ok &= z.abs() <= 3.0 && single <= 0.01;
            details.push(format!("{} {label}: z={z:.2} single-run rel.err={:.3}%", p.name(), 100.0 * single));
        }
    }
    verdict(
        1,
        "IPW/DR means within 3 SE of truth, single-run error <= 1%, runtime <= 2 min",
        ok,
        &format!("{}; {:.1}s", details.join("; "), elapsed.as_secs_f64()),
    );
    assert!(ok);
}

// ── 2: double robustness ──

struct Shifted<M>(M, f64);

impl<M: RewardModel> RewardModel for Shifted<M> {
    fn predict(&self, context: &[f64], catalog: &ActionCatalog) -> Vec<f64> {
        self.0.predict(context, catalog).into_iter().map(|v| v + self.1).collect()
    }
}

/// Rewrites logged propensities as if `action` had half its probability,
/// renormalized over the catalog.
fn distort(samples: &[BanditSample], action: FeedAction) -> Vec<BanditSample> {
    samples
        .iter()
        .map(|s| {
            let n = s.catalog.len() as f64;
            let p = 1.0 / n;
            let z = 1.0 - p / 2.0;
            let taken = s.catalog.action(s.action_index).unwrap();
            let mut out = s.clone();
            out.propensity = if taken == action { p / 2.0 / z } else { p / z };
            out
        })
        .collect()
}

#[test]
fn criterion_2_doubly_robust() {
    const REPS: u64 = 100;
    const N: usize = 50_000;
    let (cfg, catalogs, reward) = setup();
    let exact = OracleRewardModel::new(&cfg, &catalogs, &reward).unwrap();
    let biased = Shifted(exact.clone(), 0.5);
    let target = mixture("uniform_fatigue", vec![(0.5, Arc::new(UniformPolicy)), (0.5, fatigue())]);
    let truth = exact_values(&[target.as_ref()], &cfg, &catalogs, &reward)[0];
    let evaluator = OffPolicyEvaluator::analytic();

    let (mut dr_a, mut dm_a, mut dr_b, mut ipw_b) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for rep in 0..REPS {
        let records = uniform_log(&cfg, &catalogs, N, 50_000 + rep);
        let samples = to_bandit_samples(&records, &catalogs, &reward).unwrap();
        let v = |e: adload_core::Result<ValueEstimate>| e.unwrap().value;
        dr_a.push(v(evaluator.dr(target.as_ref(), &biased, &samples)));
        dm_a.push(v(evaluator.dm(target.as_ref(), &biased, &samples)));
        let distorted = distort(&samples, FeedAction::EMPTY);
        dr_b.push(v(evaluator.dr(target.as_ref(), &exact, &distorted)));
        ipw_b.push(v(evaluator.ipw(target.as_ref(), &distorted, None)));
    }
    let rel = |x: f64| (x - truth).abs() / truth.abs();
    let all_within = |xs: &[f64]| xs.iter().all(|&x| rel(x) <= 0.02);
    let err = |xs: &[f64]| (mean_sd(xs).0 - truth).abs();
    let ratio_a = err(&dm_a) / err(&dr_a);
    let ratio_b = err(&ipw_b) / err(&dr_b);
    let ok = all_within(&dr_a) && all_within(&dr_b) && ratio_a >= 10.0 && ratio_b >= 5.0;
    let max_rel = |xs: &[f64]| xs.iter().map(|&x| rel(x)).fold(0.0, f64::max);
    verdict(
        2,
        "DR within 2% under a biased model or distorted propensities; DM/IPW errors 10x/5x larger",
        ok,
        &format!(
            "(a) max DR rel.err {:.3}%, DM/DR error ratio {ratio_a:.0}; (b) max DR rel.err {:.3}%, IPW/DR error ratio {ratio_b:.0}",
            100.0 * max_rel(&dr_a),
            100.0 * max_rel(&dr_b)
        ),
    );
    assert!(ok);
}

// ── 3: propensity validation ──

/// Logs drawn from `sampler` but recorded with uniform propensities.
fn mislabelled_log(
    sampler: &dyn Policy,
    cfg: &EnvironmentConfig,
    catalogs: &CatalogSet,
    users: usize,
    seed: u64,
) -> Vec<LoggedRecord> {
    let mut records = generate_log(sampler, cfg, catalogs, users, seed).unwrap();
    for r in &mut records {
        r.propensity = 1.0 / catalogs.get(r.catalog_key).len() as f64;
    }
    records
}

#[test]
fn criterion_3_propensity_validation() {
    let (cfg, catalogs, _) = setup();
    let harmonic = HarmonicConfig::default();
    let clean = uniform_log(&cfg, &catalogs, 100_000, 7);
    let clean_stat = harmonic_mean_test(&clean, &catalogs, &harmonic).statistic;

    let corrupt_sampler = mixture("corrupt", vec![(0.5, Arc::new(UniformPolicy)), (0.5, Arc::new(NoAdsPolicy))]);
    let corrupted = mislabelled_log(corrupt_sampler.as_ref(), &cfg, &catalogs, 40_000, 8);
    let corrupt_stat = harmonic_mean_test(&corrupted, &catalogs, &harmonic).statistic;
    let corrupt_arith = arithmetic_mean_test(&corrupted, &catalogs, 0.05).pass;

    let clean_passes = (0..100u64)
        .filter(|&rep| {
            let log = generate_log(&UniformPolicy, &cfg, &catalogs, 10_000, 300 + rep).unwrap();
            arithmetic_mean_test(&log, &catalogs, 0.05).pass == Some(true)
        })
        .count();

    let ok = (clean_stat - 2.0).abs() <= 0.03
        && (corrupt_stat - 2.0).abs() > 0.05
        && clean_passes >= 95
        && corrupt_arith == Some(false);
    verdict(
        3,
        "harmonic statistic near 2 on clean logs and far on corrupted; arithmetic test >= 95/100 clean passes",
        ok,
        &format!(
            "clean {clean_stat:.4}, corrupted {corrupt_stat:.4}, clean arithmetic passes {clean_passes}/100, corrupted arithmetic {corrupt_arith:?}"
        ),
    );
    assert!(ok);
}

// ── 4: action space ──

/// Slot subsets placed on the concatenated feed: the previous sub-feed's
/// last ad sits `offset + 1` positions before slot 1.
fn brute_force(c: &ActionConstraints, subfeed: u32, offset: Option<u32>) -> Vec<Vec<u32>> {
    let mut out: Vec<Vec<u32>> = (0u32..32)
        .map(|m| (1..=5).filter(|s| m & (1 << (s - 1)) != 0).collect::<Vec<u32>>())
        .filter(|slots| {
            if slots.len() as u32 > c.max_ads {
                return false;
            }
            if subfeed == 0 && c.forbid_slot1_on_first_subfeed && slots.contains(&1) {
                return false;
            }
            // Absolute positions, with the earlier ad (if any) first.
            let mut positions: Vec<i64> = offset.map(|o| -(o as i64)).into_iter().collect();
            positions.extend(slots.iter().map(|&s| s as i64));
            positions.windows(2).all(|w| w[1] - w[0] >= c.min_position_difference as i64)
        })
        .collect();
    out.sort_by(|a, b| (a.len(), a).cmp(&(b.len(), b)));
    out
}

#[test]
fn criterion_4_action_space() {
    let mut contexts = 0;
    let mut mismatches = Vec::new();
    for max_ads in 0..=5 {
        for min_position_difference in 1..=6 {
            for forbid in [false, true] {
                let c = ActionConstraints {
                    max_ads,
                    min_position_difference,
                    forbid_slot1_on_first_subfeed: forbid,
                };
                for subfeed in 0..=2 {
                    for offset in std::iter::once(None).chain((0..=10).map(Some)) {
                        contexts += 1;
                        let got: Vec<Vec<u32>> = enumerate_actions(&c, subfeed, offset)
                            .unwrap()
                            .actions()
                            .iter()
                            .map(|a| a.slots().collect())
                            .collect();
                        if got != brute_force(&c, subfeed, offset) {
                            mismatches.push(format!("{c:?} subfeed {subfeed} offset {offset:?}"));
                        }
                    }
                }
            }
        }
    }
    let default_first = enumerate_actions(&ActionConstraints::default(), 0, None).unwrap();
    let oracle_first = brute_force(&ActionConstraints::default(), 0, None);
    let ok = mismatches.is_empty() && default_first.len() == 5 && oracle_first.len() == 5;
    verdict(
        4,
        "enumeration equals brute force over all 32 subsets; default first sub-feed has 5 actions",
        ok,
        &format!(
            "{contexts} contexts, {} mismatches, default first sub-feed {} actions",
            mismatches.len(),
            default_first.len()
        ),
    );
    assert!(ok, "{mismatches:?}");
}

// ── 5: reward formulas ──

#[test]
fn criterion_5_reward_formulas() {
    let alpha_half = DiscountParams::default();
    let alpha_one = DiscountParams {
        alpha: 1.0,
        ..DiscountParams::default()
    };
    let lambda = [
        (discounted_feed_abandonment(1, 1, &alpha_half).unwrap(), 1.0 / 2f64.ln()),
        (discounted_feed_abandonment(1, 3, &alpha_half).unwrap(), 0.25 / 4f64.ln()),
        (discounted_feed_abandonment(2, 5, &alpha_one).unwrap(), 1.0 / 6f64.ln()),
    ];
    let lambda_ok = lambda.iter().all(|(got, want)| (got - want).abs() <= 1e-9);

    let w = RewardWeights::default();
    let d = DiscountParams::default();
    let sat = |s: SatSignals| sat_reward(&s, &w, &d).unwrap();
    let base = SatSignals::default();
    let single = [
        (sat(SatSignals { engagements: 1, ..base }), 0.5995),
        (sat(SatSignals { video_play: 1, ..base }), 0.6235),
        (sat(SatSignals { pct_video_watch: 1.0, ..base }), 0.3464),
        (sat(SatSignals { feed_depth: 1, ..base }), 0.3213),
        (sat(SatSignals { video_skip: 1, ..base }), -0.1432),
        (ads_reward(&AdsSignals { impressions: 1, clicks: 0, installs: 0 }, &w), 0.2234),
        (ads_reward(&AdsSignals { impressions: 0, clicks: 1, installs: 0 }, &w), 0.5135),
        (ads_reward(&AdsSignals { impressions: 0, clicks: 0, installs: 1 }, &w), 0.7823),
    ];
    let single_ok = single.iter().all(|(got, want)| got == want);
    let discounted = [
        (
            sat(SatSignals { feed_abandoned: 1, ..base }),
            -0.3742 / 2f64.ln(),
        ),
        (
            sat(SatSignals { session_abandoned: 1, ..base }),
            -1.2345 / 2f64.ln(),
        ),
        (
            ads_reward(&AdsSignals { impressions: 1, clicks: 1, installs: 1 }, &w),
            0.2234 + 0.5135 + 0.7823,
        ),
        (
            sat(SatSignals { video_play: 1, video_skip: 1, ..base }),
            0.6235 - 0.1432,
        ),
    ];
    let combined_ok = discounted.iter().all(|(got, want)| (got - want).abs() <= 1e-12);
    let ok = lambda_ok && single_ok && combined_ok;
    verdict(
        5,
        "discount spot values to 1e-9 and single-signal rewards equal to the weights",
        ok,
        &format!("lambda {lambda:?}"),
    );
    assert!(ok, "{single:?} {discounted:?}");
}

// ── 6: scalarization ──

fn synthetic(n: usize, w0: &[f64], noise_sd: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::StandardNormal;
    let mut x = Vec::with_capacity(n);
    let mut clean = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..w0.len())
            .map(|j| rng.sample::<f64, _>(normal) * (1.0 + j as f64) + j as f64)
            .collect();
        let s: f64 = row.iter().zip(w0).map(|(a, b)| a * b).sum();
        y.push(s + noise_sd * rng.sample::<f64, _>(normal));
        clean.push(s);
        x.push(row);
    }
    (x, y, clean)
}

#[test]
fn criterion_6_scalarization_fit() {
    let w0 = [0.8, -0.5, 0.3, 0.0, 1.2];
    let config = ScalarizationConfig::default();
    let mut details = Vec::new();
    let mut ok = true;
    for (i, noise) in [0.5, 2.0, 5.0].into_iter().enumerate() {
        let (x, y, clean) = synthetic(10_000, &w0, noise, 11 + i as u64);
        let oracle = pearson(&y, &clean).unwrap();
        let fit = fit_scalarization(&x, &y, &config).unwrap();
        ok &= (fit.achieved_correlation - oracle).abs() <= 0.01;
        details.push(format!("noise {noise}: achieved {:.4} vs oracle {oracle:.4}", fit.achieved_correlation));
    }
    let (x, y, _) = synthetic(10_000, &w0, 0.0, 21);
    let noiseless = fit_scalarization(&x, &y, &config).unwrap().achieved_correlation;
    ok &= noiseless >= 0.999_999;
    details.push(format!("noiseless {noiseless:.8}"));
    verdict(6, "scalarization correlation within 0.01 of oracle; noiseless >= 0.999999", ok, &details.join("; "));
    assert!(ok);
}

// ── 7: Pareto experiment ──

#[test]
fn criterion_7_pareto_experiment() {
    let start = Instant::now();
    let cfg = HarnessConfig::default();
    let run = run_pareto(&cfg).unwrap();
    let elapsed = start.elapsed();
    let rows = run.outcome.true_rows();
    let values = &run.outcome.true_values;
    let point = |i: usize| (rows[i].v_sat, rows[i].v_ads);
    let find = |name: &str| rows.iter().position(|r| r.policy_name == name).unwrap();

    let learned: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].beta.is_some()).collect();
    let statics: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].policy_name.starts_with("static_")).collect();
    let uniform = find("uniform");
    let fatigue = find("fatigue");
    let mut baselines = statics.clone();
    baselines.extend([uniform, fatigue]);

    let learned_ok = learned
        .iter()
        .all(|&l| baselines.iter().all(|&b| !dominates(point(b), point(l))));
    let fatigue_ok = statics
        .iter()
        .chain(std::iter::once(&uniform))
        .all(|&b| dominates(point(fatigue), point(b)));
    // Rows are in β order; higher β trades ads for satisfaction.
    let monotone = learned.windows(2).all(|w| {
        let (a, b) = (&values[w[0]], &values[w[1]]);
        let sat_tol = 2.0 * (a.sat_std_error + b.sat_std_error);
        let ads_tol = 2.0 * (a.ads_std_error + b.ads_std_error);
        rows[w[0]].beta < rows[w[1]].beta && b.v_sat >= a.v_sat - sat_tol && b.v_ads <= a.v_ads + ads_tol
    });
    let ok = learned.len() == 3 && learned_ok && fatigue_ok && monotone && elapsed <= Duration::from_secs(600);
    let summary: Vec<String> = rows
        .iter()
        .map(|r| format!("{} ({:.4}, {:.4})", r.policy_name, r.v_sat, r.v_ads))
        .collect();
    verdict(
        7,
        "DR policies non-dominated by baselines, fatigue dominates static and uniform, beta monotone, <= 10 min",
        ok,
        &format!(
            "non-dominated {learned_ok}, fatigue dominates {fatigue_ok}, monotone {monotone}, {:.1}s; {}",
            elapsed.as_secs_f64(),
            summary.join(", ")
        ),
    );
    assert!(ok);
}

// ── 8: simulator ground truth ──

/// Share of fetches that abandon at slot 4 among those reaching it.
fn abandon_at_slot4(cfg: &EnvironmentConfig, catalogs: &CatalogSet, action: FeedAction, n: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = cfg.cohorts.iter().map(|c| c.weight).collect();
    let total: f64 = weights.iter().sum();
    let state = SessionState::initial(0);
    let (mut reached, mut abandoned) = (0u64, 0u64);
    for _ in 0..n {
        let mut u = rng.random::<f64>() * total;
        let cohort = weights.iter().position(|w| {
            u -= w;
            u < 0.0
        });
        let user = &cfg.cohorts[cohort.unwrap_or(weights.len() - 1)].profile;
        let out = simulate_fetch(cfg, user, &state, action, catalogs, &mut rng).unwrap();
        let quit = matches!(out.run_end, Some(RunEndKind::FeedAbandon | RunEndKind::SessionAbandon));
        if out.sat.feed_depth >= 3 {
            reached += 1;
            if quit && out.sat.feed_depth == 3 {
                abandoned += 1;
            }
        }
    }
    let p = abandoned as f64 / reached as f64;
    (p, (p * (1.0 - p) / reached as f64).sqrt())
}

#[test]
fn criterion_8_simulator_ground_truth() {
    let (cfg, catalogs, reward) = setup();
    let ad3 = FeedAction::from_slots(&[3]).unwrap();
    let (with_ad, se1) = abandon_at_slot4(&cfg, &catalogs, ad3, 100_000, 1);
    let (without, se2) = abandon_at_slot4(&cfg, &catalogs, FeedAction::EMPTY, 100_000, 2);
    let z = (with_ad - without) / (se1 * se1 + se2 * se2).sqrt();
    let spike = z > 3.0;

    let counts: Vec<FixedCountPolicy> = (0..=2).map(FixedCountPolicy::new).collect();
    let refs: Vec<&dyn Policy> = counts.iter().map(|p| p as &dyn Policy).collect();
    let tv = true_policy_value_with(&refs, &cfg, &catalogs, &reward, &OracleOptions::default()).unwrap();
    let trade_off = tv.windows(2).all(|w| w[1].v_ads >= w[0].v_ads && w[1].v_sat <= w[0].v_sat)
        && tv[1].v_ads > tv[0].v_ads
        && tv[1].v_sat < tv[0].v_sat;

    let mut drops = Vec::new();
    for sensitivity in [0.4, 0.8, 1.6, 3.2] {
        let mut profile = cfg.cohorts[1].profile.clone();
        profile.ad_sensitivity = sensitivity;
        let single = cfg.with_single_cohort(profile);
        let v = true_policy_value_with(
            &[&NoAdsPolicy, &FixedCountPolicy::new(1)],
            &single,
            &catalogs,
            &reward,
            &OracleOptions::default(),
        )
        .unwrap();
        drops.push(v[0].v_sat - v[1].v_sat);
    }
    let heterogeneity = drops.windows(2).all(|w| w[1] > w[0]);

    let ok = spike && trade_off && heterogeneity;
    verdict(
        8,
        "post-ad abandonment spike, ad-count trade-off, sensitivity ordering",
        ok,
        &format!(
            "abandon at slot 4: {with_ad:.4} after ad vs {without:.4} (z={z:.1}); v_sat by ad count {:?}; SAT drop by sensitivity {drops:.4?}",
            tv.iter().map(|v| (v.v_sat * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    );
    assert!(ok);
}
