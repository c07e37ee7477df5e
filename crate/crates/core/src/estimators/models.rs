//! Reward regressors `r(a|x)`: ridge with one linear head per action and a
//! multi-head feed-forward network. Heads are indexed by the action bitmask,
//! so a model serves every catalog.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RewardModel;
use crate::action_space::{ActionCatalog, NUM_MASKS};
use crate::dataset::BanditSample;
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, Mlp};
use crate::numeric::{column_moments, mean, standardize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RidgeConfig {
    /// Fixed penalty; when absent the best of `lambda_grid` on validation wins.
    pub lambda: Option<f64>,
    pub lambda_grid: Vec<f64>,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            lambda_grid: vec![1e-3, 1e-1, 1.0, 10.0, 100.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpRewardConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for MlpRewardConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            epochs: 60,
            learning_rate: 3e-3,
            batch_size: 256,
            patience: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardModelConfig {
    Ridge(RidgeConfig),
    Mlp(MlpRewardConfig),
}

impl Default for RewardModelConfig {
    fn default() -> Self {
        RewardModelConfig::Ridge(RidgeConfig::default())
    }
}

// ── Models ──

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantRewardModel {
    pub value: f64,
}

impl ConstantRewardModel {
    pub fn new(value: f64) -> Self {
        Self { value }
    }
}

impl RewardModel for ConstantRewardModel {
    fn predict(&self, _: &[f64], catalog: &ActionCatalog) -> Vec<f64> {
        vec![self.value; catalog.len()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeRewardModel {
    mean: Vec<f64>,
    sd: Vec<f64>,
    /// Per action mask: intercept followed by feature coefficients.
    heads: Vec<Option<Vec<f64>>>,
    /// Prediction for actions never seen in training.
    fallback: f64,
    pub lambda: f64,
}

impl RidgeRewardModel {
    fn head_value(&self, head: &[f64], z: &[f64]) -> f64 {
        head[0] + head[1..].iter().zip(z).map(|(w, x)| w * x).sum::<f64>()
    }
}

impl RewardModel for RidgeRewardModel {
    fn predict(&self, context: &[f64], catalog: &ActionCatalog) -> Vec<f64> {
        let z = standardize(context, &self.mean, &self.sd);
        catalog
            .actions()
            .iter()
            .map(|a| match &self.heads[a.mask() as usize] {
                Some(h) => self.head_value(h, &z),
                None => self.fallback,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpRewardModel {
    mean: Vec<f64>,
    sd: Vec<f64>,
    target_mean: f64,
    target_sd: f64,
    net: Mlp,
}

impl RewardModel for MlpRewardModel {
    fn predict(&self, context: &[f64], catalog: &ActionCatalog) -> Vec<f64> {
        let out = self.net.forward(&standardize(context, &self.mean, &self.sd));
        catalog
            .actions()
            .iter()
            .map(|a| self.target_mean + self.target_sd * out[a.mask() as usize])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedRewardModel {
    Constant(ConstantRewardModel),
    Ridge(RidgeRewardModel),
    Mlp(MlpRewardModel),
}

impl RewardModel for FittedRewardModel {
    fn predict(&self, context: &[f64], catalog: &ActionCatalog) -> Vec<f64> {
        match self {
            FittedRewardModel::Constant(m) => m.predict(context, catalog),
            FittedRewardModel::Ridge(m) => m.predict(context, catalog),
            FittedRewardModel::Mlp(m) => m.predict(context, catalog),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModelFit {
    pub model: FittedRewardModel,
    pub train_mse: f64,
    pub validation_mse: Option<f64>,
    /// Variance of validation targets (train when no validation split).
    pub target_variance: f64,
}

fn mse(model: &dyn RewardModel, samples: &[BanditSample]) -> f64 {
    let errs: Vec<f64> = samples
        .iter()
        .map(|s| {
            let p = model.predict(&s.context, &s.catalog)[s.action_index];
            (p - s.reward) * (p - s.reward)
        })
        .collect();
    mean(&errs)
}

fn variance(samples: &[BanditSample]) -> f64 {
    let ys: Vec<f64> = samples.iter().map(|s| s.reward).collect();
    let m = mean(&ys);
    mean(&ys.iter().map(|y| (y - m) * (y - m)).collect::<Vec<_>>())
}

/// Fits on `train`, selecting hyperparameters and reporting error on
/// `validation` when it is non-empty.
pub fn fit_reward_model(
    train: &[BanditSample],
    validation: &[BanditSample],
    config: &RewardModelConfig,
) -> Result<RewardModelFit> {
    if train.is_empty() {
        return Err(Error::Degenerate("no training records for the reward model".into()));
    }
    let model = match config {
        RewardModelConfig::Ridge(c) => FittedRewardModel::Ridge(fit_ridge(train, validation, c)?),
        RewardModelConfig::Mlp(c) => FittedRewardModel::Mlp(fit_mlp(train, validation, c)?),
    };
    let validation_mse = (!validation.is_empty()).then(|| mse(&model, validation));
    let fit = RewardModelFit {
        train_mse: mse(&model, train),
        validation_mse,
        target_variance: variance(if validation.is_empty() { train } else { validation }),
        model,
    };
    log::info!(
        "reward model fit: train mse {:.4e}, validation mse {:?}, target variance {:.4e}",
        fit.train_mse,
        fit.validation_mse,
        fit.target_variance
    );
    Ok(fit)
}

// ── Ridge ──

/// Normal-equation accumulators for one head.
struct Gram {
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    n: usize,
}

fn fit_ridge(train: &[BanditSample], validation: &[BanditSample], config: &RidgeConfig) -> Result<RidgeRewardModel> {
    let rows: Vec<Vec<f64>> = train.iter().map(|s| s.context.clone()).collect();
    let (mu, sd) = column_moments(&rows);
    let d = mu.len() + 1;
    let mut grams: Vec<Option<Gram>> = (0..NUM_MASKS).map(|_| None).collect();
    for s in train {
        let mut z = vec![1.0];
        z.extend(standardize(&s.context, &mu, &sd));
        let x = DVector::from_vec(z);
        let g = grams[s.action().mask() as usize].get_or_insert_with(|| Gram {
            xtx: DMatrix::zeros(d, d),
            xty: DVector::zeros(d),
            n: 0,
        });
        g.xtx += &x * x.transpose();
        g.xty += &x * s.reward;
        g.n += 1;
    }
    let fallback = mean(&train.iter().map(|s| s.reward).collect::<Vec<_>>());

    let solve = |lambda: f64| -> Result<RidgeRewardModel> {
        let heads = grams
            .iter()
            .map(|g| {
                g.as_ref()
                    .map(|g| {
                        let mut a = g.xtx.clone();
                        // The intercept is not penalized.
                        for i in 1..d {
                            a[(i, i)] += lambda;
                        }
                        a.clone()
                            .cholesky()
                            .map(|c| c.solve(&g.xty))
                            .or_else(|| a.lu().solve(&g.xty))
                            .map(|w| w.iter().copied().collect::<Vec<f64>>())
                            .ok_or_else(|| Error::Degenerate("singular ridge system".into()))
                    })
                    .transpose()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RidgeRewardModel {
            mean: mu.clone(),
            sd: sd.clone(),
            heads,
            fallback,
            lambda,
        })
    };

    let candidates: Vec<f64> = match config.lambda {
        Some(l) => vec![l],
        None if validation.is_empty() => vec![1.0],
        None => config.lambda_grid.clone(),
    };
    if candidates.is_empty() || candidates.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(Error::Config("ridge penalties must be positive".into()));
    }
    let mut best: Option<(f64, RidgeRewardModel)> = None;
    for l in candidates {
        let m = solve(l)?;
        let score = if validation.is_empty() { 0.0 } else { mse(&m, validation) };
        log::debug!("ridge lambda {l}: validation mse {score:.4e}");
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, m));
        }
    }
    Ok(best.expect("at least one candidate").1)
}

// ── MLP ──

fn fit_mlp(train: &[BanditSample], validation: &[BanditSample], config: &MlpRewardConfig) -> Result<MlpRewardModel> {
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::Config("batch_size and epochs must be positive".into()));
    }
    let rows: Vec<Vec<f64>> = train.iter().map(|s| s.context.clone()).collect();
    let (mu, sd) = column_moments(&rows);
    let ys: Vec<f64> = train.iter().map(|s| s.reward).collect();
    let target_mean = mean(&ys);
    let target_sd = {
        let v = mean(&ys.iter().map(|y| (y - target_mean).powi(2)).collect::<Vec<_>>()).sqrt();
        if v > 1e-12 {
            v
        } else {
            1.0
        }
    };
    let inputs: Vec<Vec<f64>> = rows.iter().map(|r| standardize(r, &mu, &sd)).collect();
    let targets: Vec<f64> = ys.iter().map(|y| (y - target_mean) / target_sd).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let net = Mlp::new(mu.len(), &config.hidden, NUM_MASKS, Activation::Tanh, &mut rng);
    let mut model = MlpRewardModel {
        mean: mu,
        sd,
        target_mean,
        target_sd,
        net,
    };
    let mut adam = Adam::new(model.net.params().len(), config.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut grad = vec![0.0; model.net.params().len()];
    let mut cache = Vec::new();
    let score = |m: &MlpRewardModel| mse(m, if validation.is_empty() { train } else { validation });
    let mut best = (score(&model), model.clone());
    let mut stale = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut grad_out = vec![0.0; NUM_MASKS];
            for &i in batch {
                let out = model.net.forward_cached(&inputs[i], &mut cache);
                let k = train[i].action().mask() as usize;
                grad_out.iter_mut().for_each(|g| *g = 0.0);
                grad_out[k] = 2.0 * (out[k] - targets[i]) / batch.len() as f64;
                model.net.backward(&cache, &grad_out, &mut grad);
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training(format!("non-finite reward model gradient at epoch {epoch}")));
            }
            adam.step(model.net.params_mut(), &grad, -1.0);
        }
        let s = score(&model);
        if s < best.0 {
            best = (s, model.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(best.1)
}
