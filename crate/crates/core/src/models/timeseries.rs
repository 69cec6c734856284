//! Time series: one sample per step, p(x_t | w_t) ∝ exp(w_tᵀF(x)), with a
//! Brownian-motion smoothness penalty (λ/2)Σ‖w_t − w_{t+1}‖².
//!
//! Feature rows must be in time order: row t is the sample observed at t.

use serde::{Deserialize, Serialize};

use super::descent::{minimize, Constraint, DescentConfig, DescentOutcome, Objective};
use super::features::{dot, FeatureMatrix, Patterns};
use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesWeights {
    /// Row-major T×K.
    pub w: Vec<f64>,
    pub steps: usize,
    pub k: usize,
    pub lambda: f64,
}

impl TimeSeriesWeights {
    pub fn zeros(steps: usize, k: usize, lambda: f64) -> Self {
        TimeSeriesWeights {
            w: vec![0.0; steps * k],
            steps,
            k,
            lambda,
        }
    }

    pub fn at(&self, t: usize) -> &[f64] {
        &self.w[t * self.k..(t + 1) * self.k]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.steps).map(|t| self.w[t * self.k + k]).collect()
    }

    /// Reorders time steps: step `i` of the result is step `order[i]`.
    pub fn permute_steps(&self, order: &[usize]) -> TimeSeriesWeights {
        let mut w = Vec::with_capacity(self.w.len());
        for &t in order {
            w.extend_from_slice(self.at(t));
        }
        TimeSeriesWeights { w, ..self.clone() }
    }
}

fn check(features: &FeatureMatrix, weights: &TimeSeriesWeights) -> Result<()> {
    if weights.steps != features.rows() || weights.k != features.cols() {
        return Err(Error::DimensionMismatch {
            expected: features.rows() * features.cols(),
            found: weights.steps * weights.k,
        });
    }
    if weights.w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("time series weights"));
    }
    Ok(())
}

/// Loss and gradient in w, with the feature patterns precomputed.
struct WeightObjective<'a> {
    features: &'a FeatureMatrix,
    patterns: Patterns,
    lambda: f64,
    scores: Vec<f64>,
}

impl<'a> WeightObjective<'a> {
    fn new(features: &'a FeatureMatrix, lambda: f64) -> Self {
        let patterns = features.patterns();
        let scores = vec![0.0; patterns.len()];
        WeightObjective {
            features,
            patterns,
            lambda,
            scores,
        }
    }

    fn smoothness(&self, w: &[f64]) -> f64 {
        let k = self.features.cols();
        let steps = self.features.rows();
        let mut s = 0.0;
        for t in 0..steps.saturating_sub(1) {
            for j in 0..k {
                let d = w[t * k + j] - w[(t + 1) * k + j];
                s += d * d;
            }
        }
        0.5 * self.lambda * s
    }

    fn eval(&mut self, w: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let k = self.features.cols();
        let steps = self.features.rows();
        let mut loss = 0.0;
        let mut mass = vec![0.0; self.patterns.len()];
        for t in 0..steps {
            let wt = &w[t * k..(t + 1) * k];
            for p in 0..self.patterns.len() {
                self.scores[p] = dot(wt, self.patterns.row(p));
            }
            let m = self.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for ((e, s), c) in mass.iter_mut().zip(&self.scores).zip(&self.patterns.counts) {
                *e = c * (s - m).exp();
                total += *e;
            }
            let z = m + total.ln();
            loss += z - self.scores[self.patterns.index[t]];
            if let Some(g) = grad.as_deref_mut() {
                let gt = &mut g[t * k..(t + 1) * k];
                for (gj, fj) in gt.iter_mut().zip(self.features.row(t)) {
                    *gj = -fj;
                }
                for (p, e) in mass.iter().enumerate() {
                    let prob = e / total;
                    for (gj, fj) in gt.iter_mut().zip(self.patterns.row(p)) {
                        *gj += prob * fj;
                    }
                }
            }
        }
        if let Some(g) = grad {
            for t in 0..steps.saturating_sub(1) {
                for j in 0..k {
                    let d = self.lambda * (w[t * k + j] - w[(t + 1) * k + j]);
                    g[t * k + j] += d;
                    g[(t + 1) * k + j] -= d;
                }
            }
        }
        loss + self.smoothness(w)
    }
}

impl Objective for WeightObjective<'_> {
    fn value(&mut self, x: &[f64]) -> f64 {
        self.eval(x, None)
    }

    fn value_and_gradient(&mut self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; x.len()];
        let l = self.eval(x, Some(&mut g));
        (l, g)
    }
}

/// Σ_t [−w_tᵀF(x_t) + log Σ_x exp(w_tᵀF(x))] + (λ/2)Σ_t ‖w_t − w_{t+1}‖².
pub fn timeseries_loss(features: &FeatureMatrix, weights: &TimeSeriesWeights) -> Result<f64> {
    check(features, weights)?;
    Ok(WeightObjective::new(features, weights.lambda).value(&weights.w))
}

/// Loss and its gradient with respect to every w_t.
pub fn timeseries_loss_grad(features: &FeatureMatrix, weights: &TimeSeriesWeights) -> Result<(f64, Vec<f64>)> {
    check(features, weights)?;
    Ok(WeightObjective::new(features, weights.lambda).value_and_gradient(&weights.w))
}

/// ∂L/∂F(x,k) with the weights held fixed.
pub fn timeseries_feature_grad(features: &FeatureMatrix, weights: &TimeSeriesWeights) -> Result<Vec<f64>> {
    check(features, weights)?;
    let (n, k) = (features.rows(), features.cols());
    let mut grad = vec![0.0; n * k];
    let mut scores = vec![0.0; n];
    for t in 0..n {
        let wt = weights.at(t);
        for (i, s) in scores.iter_mut().enumerate() {
            *s = dot(wt, features.row(i));
        }
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        scores.iter_mut().for_each(|s| *s = (*s - m).exp());
        let total: f64 = scores.iter().sum();
        for i in 0..n {
            let p = scores[i] / total;
            for j in 0..k {
                grad[i * k + j] += p * wt[j];
            }
        }
        for j in 0..k {
            grad[t * k + j] -= wt[j];
        }
    }
    Ok(grad)
}

/// Gradient descent on w from zero.
pub fn opt_w_timeseries(
    features: &FeatureMatrix,
    lambda: f64,
    config: &DescentConfig,
) -> Result<(TimeSeriesWeights, DescentOutcome)> {
    let init = TimeSeriesWeights::zeros(features.rows(), features.cols(), lambda);
    opt_w_timeseries_from(features, init, config)
}

/// Gradient descent on w from a given starting point.
pub fn opt_w_timeseries_from(
    features: &FeatureMatrix,
    init: TimeSeriesWeights,
    config: &DescentConfig,
) -> Result<(TimeSeriesWeights, DescentOutcome)> {
    check(features, &init)?;
    if !(init.lambda.is_finite() && init.lambda > 0.0) {
        return Err(Error::Config(format!("lambda must be positive, got {}", init.lambda)));
    }
    let mut objective = WeightObjective::new(features, init.lambda);
    let outcome = minimize(&mut objective, init.w.clone(), Constraint::Free, config)?;
    let weights = TimeSeriesWeights {
        w: outcome.x.clone(),
        ..init
    };
    Ok((weights, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_cost_t_log_n() {
        let f = FeatureMatrix::from_columns(&[&[1, 0, 1, 0, 0, 1]], 6).unwrap();
        let w = TimeSeriesWeights::zeros(6, 1, 1.0);
        assert!((timeseries_loss(&f, &w).unwrap() - 6.0 * 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn constant_weights_have_no_smoothness_cost() {
        let f = FeatureMatrix::from_columns(&[&[1, 0, 1, 0], &[0, 0, 1, 1]], 4).unwrap();
        let mut w = TimeSeriesWeights::zeros(4, 2, 3.0);
        for t in 0..4 {
            w.w[t * 2] = 0.4;
            w.w[t * 2 + 1] = -1.3;
        }
        let obj = WeightObjective::new(&f, 3.0);
        assert_eq!(obj.smoothness(&w.w), 0.0);
    }

    #[test]
    fn optimum_never_worse_than_zero() {
        let f = FeatureMatrix::from_columns(&[&[1, 1, 1, 0, 0, 0, 1, 0]], 8).unwrap();
        let (w, out) = opt_w_timeseries(&f, 1.0, &DescentConfig::default()).unwrap();
        let zero = timeseries_loss(&f, &TimeSeriesWeights::zeros(8, 1, 1.0)).unwrap();
        assert!(timeseries_loss(&f, &w).unwrap() <= zero);
        assert!(out.trace.windows(2).all(|p| p[1] <= p[0]));
    }

    #[test]
    fn rejects_non_finite_weights() {
        let f = FeatureMatrix::from_columns(&[&[1, 0]], 2).unwrap();
        let mut w = TimeSeriesWeights::zeros(2, 1, 1.0);
        w.w[0] = f64::INFINITY;
        assert!(matches!(timeseries_loss(&f, &w), Err(Error::NonFinite(_))));
    }
}
