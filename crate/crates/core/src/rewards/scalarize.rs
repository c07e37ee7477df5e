//! Linear scalarization fitted by maximizing Pearson correlation with a
//! delayed target (next-day retention for satisfaction, revenue for ads).
//!
//! Columns are standardized first. With `C` the column correlation matrix
//! and `c` the column/target covariances, the objective is
//! `rho(w) = c.w / (sd_y * sqrt(w'Cw))`. It is invariant to positive scaling
//! of `w`, so the ascent runs on the unit sphere: a fixed gradient step,
//! then renormalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalarizationConfig {
    pub learning_rate: f64,
    pub max_iterations: usize,
    /// Convergence threshold on the gradient norm.
    pub tolerance: f64,
    /// Drop constant columns (weight 0) instead of failing.
    pub drop_constant_columns: bool,
}

impl Default for ScalarizationConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            max_iterations: 10_000,
            tolerance: 1e-8,
            drop_constant_columns: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarizationFit {
    /// Unit-norm weights on the standardized columns.
    pub weights: Vec<f64>,
    /// Unit-norm weights to apply to raw (unstandardized) columns.
    pub raw_weights: Vec<f64>,
    pub achieved_correlation: f64,
    pub iterations: usize,
    pub converged: bool,
    pub dropped_columns: Vec<usize>,
}

/// Sample Pearson correlation. Returns `None` when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x[..n].iter().zip(&y[..n]) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

pub fn fit_scalarization(
    signals: &[Vec<f64>],
    target: &[f64],
    config: &ScalarizationConfig,
) -> Result<ScalarizationFit> {
    let n = signals.len();
    if n != target.len() {
        return Err(Error::Argument(format!(
            "{n} signal rows but {} targets",
            target.len()
        )));
    }
    let d = signals.first().map_or(0, Vec::len);
    if d == 0 {
        return Err(Error::Argument("signal matrix has no columns".into()));
    }
    if signals.iter().any(|r| r.len() != d) {
        return Err(Error::Argument("ragged signal matrix".into()));
    }
    if n < d + 1 {
        return Err(Error::Argument(format!("need at least {} rows, got {n}", d + 1)));
    }

    let nf = n as f64;
    let y_mean = target.iter().sum::<f64>() / nf;
    let y_sd = (target.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / nf).sqrt();
    if !(y_sd > 0.0) {
        return Err(Error::Degenerate("target has zero variance".into()));
    }

    let mut means = vec![0.0; d];
    for row in signals {
        for (m, x) in means.iter_mut().zip(row) {
            *m += x;
        }
    }
    means.iter_mut().for_each(|m| *m /= nf);
    let mut sds = vec![0.0; d];
    for row in signals {
        for j in 0..d {
            sds[j] += (row[j] - means[j]).powi(2);
        }
    }
    sds.iter_mut().for_each(|s| *s = (*s / nf).sqrt());

    let scale = 1e-12 * means.iter().map(|m| m.abs()).fold(1.0, f64::max);
    let mut dropped = Vec::new();
    let kept: Vec<usize> = (0..d)
        .filter(|&j| {
            let constant = !(sds[j] > scale);
            if constant {
                dropped.push(j);
            }
            !constant
        })
        .collect();
    if !dropped.is_empty() {
        if !config.drop_constant_columns {
            return Err(Error::Degenerate(format!("constant columns {dropped:?}")));
        }
        log::warn!("dropping constant signal columns {dropped:?}");
    }
    let k = kept.len();
    if k == 0 {
        return Err(Error::Degenerate("every column is constant".into()));
    }

    // Correlation matrix and column/target covariance on standardized columns.
    let mut corr = vec![0.0; k * k];
    let mut cov = vec![0.0; k];
    let mut z = vec![0.0; k];
    for (row, y) in signals.iter().zip(target) {
        for (zi, &j) in z.iter_mut().zip(&kept) {
            *zi = (row[j] - means[j]) / sds[j];
        }
        let dy = y - y_mean;
        for a in 0..k {
            cov[a] += z[a] * dy;
            for b in a..k {
                corr[a * k + b] += z[a] * z[b];
            }
        }
    }
    for a in 0..k {
        cov[a] /= nf;
        for b in a..k {
            corr[a * k + b] /= nf;
            corr[b * k + a] = corr[a * k + b];
        }
    }

    let objective = |w: &[f64], cw: &mut [f64]| -> (f64, f64, f64) {
        for a in 0..k {
            cw[a] = (0..k).map(|b| corr[a * k + b] * w[b]).sum();
        }
        let q: f64 = w.iter().zip(cw.iter()).map(|(a, b)| a * b).sum();
        let num: f64 = cov.iter().zip(w).map(|(a, b)| a * b).sum();
        (num / (y_sd * q.max(f64::MIN_POSITIVE).sqrt()), num, q)
    };

    let mut w = cov.clone();
    if norm(&w) == 0.0 {
        w[0] = 1.0;
    }
    normalize(&mut w);
    let mut cw = vec![0.0; k];
    let mut grad = vec![0.0; k];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iterations {
        let (_, num, q) = objective(&w, &mut cw);
        let sq = q.sqrt();
        for a in 0..k {
            grad[a] = cov[a] / (y_sd * sq) - num * cw[a] / (y_sd * q * sq);
        }
        if !grad.iter().all(|g| g.is_finite()) {
            return Err(Error::Degenerate("non-finite gradient; columns are collinear".into()));
        }
        if norm(&grad) < config.tolerance {
            converged = true;
            break;
        }
        for (wi, g) in w.iter_mut().zip(&grad) {
            *wi += config.learning_rate * g;
        }
        normalize(&mut w);
        iterations += 1;
    }
    let (mut rho, _, _) = objective(&w, &mut cw);
    if rho < 0.0 {
        w.iter_mut().for_each(|x| *x = -*x);
        rho = -rho;
    }

    let mut weights = vec![0.0; d];
    let mut raw_weights = vec![0.0; d];
    for (wi, &j) in w.iter().zip(&kept) {
        weights[j] = *wi;
        raw_weights[j] = wi / sds[j];
    }
    normalize(&mut raw_weights);

    Ok(ScalarizationFit {
        weights,
        raw_weights,
        achieved_correlation: rho.min(1.0),
        iterations,
        converged,
        dropped_columns: dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn design(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                (0..d)
                    .map(|j| (j as f64 + 1.0) * rng.sample::<f64, _>(StandardNormal) + j as f64)
                    .collect()
            })
            .collect()
    }

    fn apply(x: &[Vec<f64>], w: &[f64]) -> Vec<f64> {
        x.iter()
            .map(|r| r.iter().zip(w).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Least-squares direction, the closed-form maximizer of the correlation.
    fn ols_direction(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
        let n = x.len();
        let d = x[0].len();
        let m = DMatrix::from_fn(n, d + 1, |i, j| if j == d { 1.0 } else { x[i][j] });
        let yv = DVector::from_column_slice(y);
        let sol = (m.transpose() * &m).cholesky().unwrap().solve(&(m.transpose() * yv));
        let mut w: Vec<f64> = sol.iter().take(d).copied().collect();
        normalize(&mut w);
        w
    }

    #[test]
    fn noiseless_linear_target() {
        let x = design(500, 4, 1);
        let w0 = [0.5, -1.0, 2.0, 0.25];
        let y = apply(&x, &w0);
        let fit = fit_scalarization(&x, &y, &ScalarizationConfig::default()).unwrap();
        assert!((fit.achieved_correlation - 1.0).abs() < 1e-6, "{fit:?}");
        let mut expected = w0.to_vec();
        normalize(&mut expected);
        for (a, b) in fit.raw_weights.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-4, "{:?} vs {expected:?}", fit.raw_weights);
        }
        let scored = apply(&x, &fit.raw_weights);
        assert!((pearson(&scored, &y).unwrap() - fit.achieved_correlation).abs() < 1e-9);
    }

    #[test]
    fn independent_noise_has_low_correlation() {
        let x = design(10_000, 5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
        let fit = fit_scalarization(&x, &y, &ScalarizationConfig::default()).unwrap();
        assert!(fit.achieved_correlation < 0.05, "{}", fit.achieved_correlation);
    }

    #[test]
    fn noisy_target_matches_generating_weights() {
        let x = design(5_000, 5, 4);
        let w0 = [1.0, 0.3, -0.7, 0.0, 0.2];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let clean = apply(&x, &w0);
        let y: Vec<f64> = clean
            .iter()
            .map(|c| c + 3.0 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let oracle = pearson(&clean, &y).unwrap();
        let fit = fit_scalarization(&x, &y, &ScalarizationConfig::default()).unwrap();
        assert!((fit.achieved_correlation - oracle).abs() < 0.01);
        // Independent route: closed-form least squares direction.
        let ols = ols_direction(&x, &y);
        let ols_rho = pearson(&apply(&x, &ols), &y).unwrap();
        assert!((fit.achieved_correlation - ols_rho).abs() < 1e-6);
    }

    #[test]
    fn degenerate_inputs() {
        let x = design(50, 2, 6);
        assert!(matches!(
            fit_scalarization(&x, &vec![1.0; 50], &ScalarizationConfig::default()),
            Err(Error::Degenerate(_))
        ));
        let mut xc = x.clone();
        xc.iter_mut().for_each(|r| r.push(7.0));
        let y = apply(&x, &[1.0, 1.0]);
        assert!(matches!(
            fit_scalarization(&xc, &y, &ScalarizationConfig::default()),
            Err(Error::Degenerate(_))
        ));
        let cfg = ScalarizationConfig {
            drop_constant_columns: true,
            ..Default::default()
        };
        let fit = fit_scalarization(&xc, &y, &cfg).unwrap();
        assert_eq!(fit.dropped_columns, vec![2]);
        assert_eq!(fit.weights[2], 0.0);
        assert!(fit_scalarization(&x[..2], &y[..2], &cfg).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::{prop_assert, proptest};

        proptest! {
            #[test]
            fn correlation_invariant_to_positive_scaling(c in 0.001..1000.0f64, seed in 0u64..50) {
                let x = design(200, 3, seed);
                let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
                let w: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let y: Vec<f64> = (0..200).map(|_| rng.sample(StandardNormal)).collect();
                let scaled: Vec<f64> = w.iter().map(|v| v * c).collect();
                let a = pearson(&apply(&x, &w), &y).unwrap();
                let b = pearson(&apply(&x, &scaled), &y).unwrap();
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
