//! Softmax policy over per-action logits and its off-policy training.
//!
//! The network maps the standardized context to one logit per action
//! bitmask; only the logits of catalog actions enter the softmax. Training
//! maximizes an IPW or DR estimate of the policy value by minibatch
//! gradient ascent with an entropy bonus, keeping the parameters with the
//! best validation estimate.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Policy;
use crate::action_space::{ActionCatalog, NUM_MASKS};
use crate::dataset::BanditSample;
use crate::error::{Error, Result};
use crate::estimators::RewardModel;
use crate::nn::{Activation, Adam, Mlp};
use crate::numeric::{column_moments, mean, softmax, standardize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicyParams {
    pub net: Mlp,
    pub feature_mean: Vec<f64>,
    pub feature_sd: Vec<f64>,
    pub temperature: f64,
    /// Probability mass spread uniformly over the catalog.
    pub epsilon: f64,
}

impl SoftmaxPolicyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature {} must be positive", self.temperature)));
        }
        if !(0.0..1.0 / NUM_MASKS as f64).contains(&self.epsilon) {
            return Err(Error::Config(format!(
                "epsilon {} outside [0, 1/{NUM_MASKS})",
                self.epsilon
            )));
        }
        if !self.net.is_finite() {
            return Err(Error::Config("non-finite policy weights".into()));
        }
        if self.net.output_len() != NUM_MASKS
            || self.net.input_len() != self.feature_mean.len()
            || self.feature_mean.len() != self.feature_sd.len()
        {
            return Err(Error::Config("policy parameter shapes do not match".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    name: String,
    params: SoftmaxPolicyParams,
}

impl SoftmaxPolicy {
    pub fn new(name: impl Into<String>, params: SoftmaxPolicyParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            name: name.into(),
            params,
        })
    }

    pub fn params(&self) -> &SoftmaxPolicyParams {
        &self.params
    }

    fn logits(&self, z: &[f64], catalog: &ActionCatalog) -> Vec<f64> {
        let out = self.params.net.forward(z);
        catalog.actions().iter().map(|a| out[a.mask() as usize]).collect()
    }

    fn mix(&self, q: Vec<f64>) -> Vec<f64> {
        let eps = self.params.epsilon;
        let u = eps / q.len() as f64;
        q.into_iter().map(|p| (1.0 - eps) * p + u).collect()
    }
}

impl Policy for SoftmaxPolicy {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn probabilities(&self, context: &[f64], catalog: &ActionCatalog) -> Vec<f64> {
        let z = standardize(context, &self.params.feature_mean, &self.params.feature_sd);
        self.mix(softmax(&self.logits(&z, catalog), self.params.temperature))
    }
}

// ── Training ──

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainObjective {
    Ipw,
    Dr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub epsilon: f64,
    pub entropy: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            hidden: vec![16],
            epochs: 60,
            batch_size: 512,
            learning_rate: 0.01,
            temperature: 1.0,
            epsilon: 0.01,
            entropy: 0.01,
            patience: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub policy: SoftmaxPolicy,
    /// Epoch whose parameters were kept; 0 is the initial policy.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub initial_validation_value: f64,
    pub validation_value: f64,
    /// Validation estimate after each epoch.
    pub history: Vec<f64>,
}

struct Prepared {
    z: Vec<f64>,
    masks: Vec<usize>,
    /// Per-action objective terms (training) or model predictions (validation).
    values: Vec<f64>,
    action_index: usize,
    propensity: f64,
    reward: f64,
}

fn prepare(
    samples: &[BanditSample],
    mean_: &[f64],
    sd: &[f64],
    model: Option<&dyn RewardModel>,
) -> Vec<Prepared> {
    samples
        .iter()
        .map(|s| Prepared {
            z: standardize(&s.context, mean_, sd),
            masks: s.catalog.actions().iter().map(|a| a.mask() as usize).collect(),
            values: model.map_or_else(|| vec![0.0; s.catalog.len()], |m| m.predict(&s.context, &s.catalog)),
            action_index: s.action_index,
            propensity: s.propensity,
            reward: s.reward,
        })
        .collect()
}

/// DR on validation when a model is given, IPW otherwise.
fn validation_value(policy: &SoftmaxPolicy, val: &[Prepared]) -> f64 {
    let terms: Vec<f64> = val
        .iter()
        .map(|v| {
            let out = policy.params.net.forward(&v.z);
            let logits: Vec<f64> = v.masks.iter().map(|&m| out[m]).collect();
            let pi = policy.mix(softmax(&logits, policy.params.temperature));
            let w = pi[v.action_index] / v.propensity;
            let dm: f64 = pi.iter().zip(&v.values).map(|(p, r)| p * r).sum();
            (v.reward - v.values[v.action_index]) * w + dm
        })
        .collect();
    mean(&terms)
}

/// Trains a softmax policy on logged samples. `model` supplies the DR
/// baseline (required for [`TrainObjective::Dr`]) and the validation DR
/// estimate; it must be fit on training data only.
pub fn train_policy(
    name: &str,
    train: &[BanditSample],
    validation: &[BanditSample],
    objective: TrainObjective,
    model: Option<&dyn RewardModel>,
    config: &TrainingConfig,
) -> Result<TrainReport> {
    if train.is_empty() || validation.is_empty() {
        return Err(Error::Degenerate("policy training needs train and validation records".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if objective == TrainObjective::Dr && model.is_none() {
        return Err(Error::Argument("DR objective needs a reward model".into()));
    }
    let rows: Vec<Vec<f64>> = train.iter().map(|s| s.context.clone()).collect();
    let (feature_mean, feature_sd) = column_moments(&rows);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let net = Mlp::new(feature_mean.len(), &config.hidden, NUM_MASKS, Activation::Tanh, &mut rng);
    let mut policy = SoftmaxPolicy::new(
        name,
        SoftmaxPolicyParams {
            net,
            feature_mean,
            feature_sd,
            temperature: config.temperature,
            epsilon: config.epsilon,
        },
    )?;

    let baseline = if objective == TrainObjective::Dr { model } else { None };
    let mut data = prepare(train, &policy.params.feature_mean, &policy.params.feature_sd, baseline);
    // Turn predictions into per-action objective terms c(a).
    for d in &mut data {
        let correction = (d.reward - d.values[d.action_index]) / d.propensity;
        d.values[d.action_index] += correction;
    }
    let val = prepare(validation, &policy.params.feature_mean, &policy.params.feature_sd, model);

    let initial = validation_value(&policy, &val);
    let mut best = (initial, 0usize, policy.params.net.clone());
    let mut history = Vec::with_capacity(config.epochs);
    let n_params = policy.params.net.params().len();
    let mut adam = Adam::new(n_params, config.learning_rate);
    let mut grad = vec![0.0; n_params];
    let mut grad_out = vec![0.0; NUM_MASKS];
    let mut cache = Vec::new();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let (t, eps, eta) = (config.temperature, config.epsilon, config.entropy);
    let mut stale = 0;
    let mut epochs_run = 0;

    for epoch in 1..=config.epochs {
        epochs_run = epoch;
        order.shuffle(&mut rng);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let d = &data[i];
                let out = policy.params.net.forward_cached(&d.z, &mut cache);
                let logits: Vec<f64> = d.masks.iter().map(|&m| out[m]).collect();
                let q = softmax(&logits, t);
                let g: Vec<f64> = d
                    .values
                    .iter()
                    .zip(&q)
                    .map(|(c, qa)| (1.0 - eps) * c - eta * qa.max(1e-300).ln())
                    .collect();
                let avg: f64 = q.iter().zip(&g).map(|(a, b)| a * b).sum();
                grad_out.iter_mut().for_each(|x| *x = 0.0);
                for ((m, qa), ga) in d.masks.iter().zip(&q).zip(&g) {
                    grad_out[*m] = scale * qa * (ga - avg) / t;
                }
                policy.params.net.backward(&cache, &grad_out, &mut grad);
            }
            if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite gradient at epoch {epoch}, batch {b}, parameter {k}"
                )));
            }
            adam.step(policy.params.net.params_mut(), &grad, 1.0);
        }
        let v = validation_value(&policy, &val);
        history.push(v);
        log::debug!("{name} epoch {epoch}: validation value {v:.6}");
        if v > best.0 {
            best = (v, epoch, policy.params.net.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    if best.1 == 0 {
        log::warn!("{name}: validation estimate never improved; returning the initial policy");
    }
    policy.params.net = best.2;
    Ok(TrainReport {
        policy,
        best_epoch: best.1,
        epochs_run,
        initial_validation_value: initial,
        validation_value: best.0,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action_space::{ActionConstraints, CatalogKey, CatalogSet};
    use rand::Rng;
    use std::sync::Arc;

    fn catalog() -> Arc<ActionCatalog> {
        CatalogSet::new(ActionConstraints::default()).unwrap().get(CatalogKey::new(0, None))
    }

    fn params(temperature: f64, epsilon: f64, seed: u64) -> SoftmaxPolicyParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Mlp::new(2, &[], NUM_MASKS, Activation::Tanh, &mut rng);
        for (i, w) in net.params_mut().iter_mut().enumerate() {
            *w = ((i * 37 % 11) as f64 - 5.0) * 0.3;
        }
        SoftmaxPolicyParams {
            net,
            feature_mean: vec![0.0; 2],
            feature_sd: vec![1.0; 2],
            temperature,
            epsilon,
        }
    }

    #[test]
    fn zero_weights_give_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = SoftmaxPolicy::new(
            "zero",
            SoftmaxPolicyParams {
                net: Mlp::new(2, &[4], NUM_MASKS, Activation::Tanh, &mut rng),
                feature_mean: vec![0.0; 2],
                feature_sd: vec![1.0; 2],
                temperature: 1.0,
                epsilon: 0.0,
            },
        )
        .unwrap();
        let probs = p.probabilities(&[0.3, -1.0], &catalog());
        assert!(probs.iter().all(|v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn low_temperature_concentrates_and_floor_holds() {
        let cat = catalog();
        let x = [0.7, -0.2];
        let cold = SoftmaxPolicy::new("cold", params(1e-3, 0.0, 1)).unwrap();
        let pc = cold.probabilities(&x, &cat);
        assert!(pc.iter().cloned().fold(0.0, f64::max) > 0.999);
        let floored = SoftmaxPolicy::new("floor", params(1e-3, 0.03, 1)).unwrap();
        let pf = floored.probabilities(&x, &cat);
        assert!(pf.iter().all(|v| *v >= 0.03 / 5.0 - 1e-15));
        assert!((pf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(SoftmaxPolicy::new("bad", params(1.0, 0.1, 1)).is_err());
        assert!(SoftmaxPolicy::new("bad", params(0.0, 0.0, 1)).is_err());
    }

    /// One context, known rewards: the best action is index 3.
    fn bandit(n: usize, seed: u64) -> Vec<BanditSample> {
        let cat = catalog();
        let means = [0.2, 0.3, 0.1, 0.8, 0.4];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let a = rng.random_range(0..5);
                BanditSample {
                    context: vec![1.0],
                    catalog: Arc::clone(&cat),
                    action_index: a,
                    propensity: 0.2,
                    reward: means[a] + 0.1 * (rng.random::<f64>() - 0.5),
                }
            })
            .collect()
    }

    #[test]
    fn ipw_training_finds_best_action() {
        let cfg = TrainingConfig {
            hidden: vec![],
            epochs: 200,
            batch_size: 256,
            learning_rate: 0.05,
            epsilon: 0.0,
            entropy: 0.0,
            patience: 200,
            ..TrainingConfig::default()
        };
        let rep = train_policy("ipw", &bandit(5_000, 1), &bandit(2_000, 2), TrainObjective::Ipw, None, &cfg).unwrap();
        let p = rep.policy.probabilities(&[1.0], &catalog());
        assert!(p[3] >= 0.9, "{p:?}");
        assert!(rep.validation_value > rep.initial_validation_value);
        let again = train_policy("ipw", &bandit(5_000, 1), &bandit(2_000, 2), TrainObjective::Ipw, None, &cfg).unwrap();
        assert_eq!(rep.policy, again.policy);
    }

    #[test]
    fn dr_needs_model_and_validation() {
        let cfg = TrainingConfig::default();
        assert!(train_policy("x", &bandit(10, 1), &bandit(10, 2), TrainObjective::Dr, None, &cfg).is_err());
        assert!(train_policy("x", &bandit(10, 1), &[], TrainObjective::Ipw, None, &cfg).is_err());
    }

    #[test]
    fn exploding_objective_aborts() {
        let mut d = bandit(100, 3);
        d[0].reward = f64::INFINITY;
        let err = train_policy("x", &d, &bandit(10, 4), TrainObjective::Ipw, None, &TrainingConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Training(_)), "{err}");
    }
}
