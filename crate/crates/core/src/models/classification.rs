//! Multiclass logistic regression on predicate features: logits = W·F(x).

use serde::{Deserialize, Serialize};

use super::descent::{minimize, Constraint, DescentConfig, DescentOutcome, Objective};
use super::features::{dot, FeatureMatrix};
use crate::error::{Error, Result};

pub const DEFAULT_REG: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierWeights {
    /// Row-major C×K.
    pub w: Vec<f64>,
    pub classes: usize,
    pub k: usize,
}

impl ClassifierWeights {
    pub fn zeros(classes: usize, k: usize) -> Self {
        ClassifierWeights {
            w: vec![0.0; classes * k],
            classes,
            k,
        }
    }

    pub fn class_row(&self, c: usize) -> &[f64] {
        &self.w[c * self.k..(c + 1) * self.k]
    }

    pub fn logits(&self, f: &[f64]) -> Vec<f64> {
        (0..self.classes).map(|c| dot(self.class_row(c), f)).collect()
    }

    pub fn predict(&self, f: &[f64]) -> usize {
        let logits = self.logits(f);
        let mut best = 0;
        for (c, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = c;
            }
        }
        best
    }
}

fn check(features: &FeatureMatrix, weights: &ClassifierWeights, labels: &[usize]) -> Result<()> {
    if labels.len() != features.rows() {
        return Err(Error::DimensionMismatch {
            expected: features.rows(),
            found: labels.len(),
        });
    }
    if weights.k != features.cols() || weights.w.len() != weights.classes * weights.k {
        return Err(Error::DimensionMismatch {
            expected: features.cols(),
            found: weights.k,
        });
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &y)| y >= weights.classes) {
        return Err(Error::LabelOutOfRange {
            index,
            label,
            classes: weights.classes,
        });
    }
    if weights.w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("classifier weights"));
    }
    Ok(())
}

/// Softmax probabilities in place; returns log Σ exp(logits).
fn softmax(logits: &mut [f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = logits.iter().map(|v| (v - m).exp()).sum();
    let lse = m + s.ln();
    for v in logits.iter_mut() {
        *v = (*v - lse).exp();
    }
    lse
}

/// Rows grouped by (feature pattern, label).
struct Groups {
    rows: Vec<f64>,
    labels: Vec<usize>,
    counts: Vec<f64>,
    cols: usize,
}

impl Groups {
    fn new(features: &FeatureMatrix, labels: &[usize]) -> Self {
        let patterns = features.patterns();
        let mut lookup = std::collections::HashMap::new();
        let mut g = Groups {
            rows: Vec::new(),
            labels: Vec::new(),
            counts: Vec::new(),
            cols: features.cols(),
        };
        for (i, &y) in labels.iter().enumerate() {
            let key = (patterns.index[i], y);
            let idx = *lookup.entry(key).or_insert_with(|| {
                g.rows.extend_from_slice(features.row(i));
                g.labels.push(y);
                g.counts.push(0.0);
                g.counts.len() - 1
            });
            g.counts[idx] += 1.0;
        }
        g
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.cols..(i + 1) * self.cols]
    }
}

/// Summed cross-entropy and its gradient in W, scaled by `scale`.
fn cross_entropy(groups: &Groups, w: &ClassifierWeights, scale: f64, grad: Option<&mut [f64]>) -> f64 {
    let k = w.k;
    let mut loss = 0.0;
    let mut grad = grad;
    let mut probs = vec![0.0; w.classes];
    for i in 0..groups.counts.len() {
        let f = groups.row(i);
        let y = groups.labels[i];
        let cnt = groups.counts[i];
        for (c, p) in probs.iter_mut().enumerate() {
            *p = dot(w.class_row(c), f);
        }
        let own = probs[y];
        let lse = softmax(&mut probs);
        loss += cnt * (lse - own);
        if let Some(g) = grad.as_deref_mut() {
            for (c, &p) in probs.iter().enumerate() {
                let d = scale * cnt * (p - if c == y { 1.0 } else { 0.0 });
                for (gj, fj) in g[c * k..(c + 1) * k].iter_mut().zip(f) {
                    *gj += d * fj;
                }
            }
        }
    }
    scale * loss
}

/// Σ_i −log softmax(W·F(x_i))[y_i].
pub fn classification_loss(features: &FeatureMatrix, weights: &ClassifierWeights, labels: &[usize]) -> Result<f64> {
    check(features, weights, labels)?;
    Ok(cross_entropy(&Groups::new(features, labels), weights, 1.0, None))
}

/// Loss and its gradient with respect to W.
pub fn classification_loss_grad(
    features: &FeatureMatrix,
    weights: &ClassifierWeights,
    labels: &[usize],
) -> Result<(f64, Vec<f64>)> {
    check(features, weights, labels)?;
    let mut g = vec![0.0; weights.w.len()];
    let l = cross_entropy(&Groups::new(features, labels), weights, 1.0, Some(&mut g));
    Ok((l, g))
}

/// ∂L/∂F(x,k) with W held fixed.
pub fn classification_feature_grad(
    features: &FeatureMatrix,
    weights: &ClassifierWeights,
    labels: &[usize],
) -> Result<Vec<f64>> {
    check(features, weights, labels)?;
    let (n, k) = (features.rows(), features.cols());
    let mut grad = vec![0.0; n * k];
    for (i, &y) in labels.iter().enumerate() {
        let mut probs = weights.logits(features.row(i));
        softmax(&mut probs);
        probs[y] -= 1.0;
        for (c, &p) in probs.iter().enumerate() {
            for (gj, wj) in grad[i * k..(i + 1) * k].iter_mut().zip(weights.class_row(c)) {
                *gj += p * wj;
            }
        }
    }
    Ok(grad)
}

/// Training objective: mean cross-entropy plus (reg/2)‖W‖².
struct Training {
    groups: Groups,
    classes: usize,
    k: usize,
    n: f64,
    reg: f64,
}

impl Training {
    fn eval(&self, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let w = ClassifierWeights {
            w: x.to_vec(),
            classes: self.classes,
            k: self.k,
        };
        let norm: f64 = x.iter().map(|v| v * v).sum();
        match grad {
            Some(g) => {
                let l = cross_entropy(&self.groups, &w, 1.0 / self.n, Some(g));
                for (gi, xi) in g.iter_mut().zip(x) {
                    *gi += self.reg * xi;
                }
                l + 0.5 * self.reg * norm
            }
            None => cross_entropy(&self.groups, &w, 1.0 / self.n, None) + 0.5 * self.reg * norm,
        }
    }
}

impl Objective for Training {
    fn value(&mut self, x: &[f64]) -> f64 {
        self.eval(x, None)
    }

    fn value_and_gradient(&mut self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; x.len()];
        let l = self.eval(x, Some(&mut g));
        (l, g)
    }
}

/// Gradient descent from W = 0 on the regularized mean cross-entropy.
pub fn opt_w_classification(
    features: &FeatureMatrix,
    labels: &[usize],
    classes: usize,
    reg: f64,
    config: &DescentConfig,
) -> Result<(ClassifierWeights, DescentOutcome)> {
    opt_w_classification_from(features, labels, ClassifierWeights::zeros(classes, features.cols()), reg, config)
}

pub fn opt_w_classification_from(
    features: &FeatureMatrix,
    labels: &[usize],
    init: ClassifierWeights,
    reg: f64,
    config: &DescentConfig,
) -> Result<(ClassifierWeights, DescentOutcome)> {
    check(features, &init, labels)?;
    if labels.is_empty() {
        return Err(Error::EmptyInput("labels"));
    }
    let mut objective = Training {
        groups: Groups::new(features, labels),
        classes: init.classes,
        k: init.k,
        n: labels.len() as f64,
        reg,
    };
    let outcome = minimize(&mut objective, init.w.clone(), Constraint::Free, config)?;
    let weights = ClassifierWeights {
        w: outcome.x.clone(),
        ..init
    };
    Ok((weights, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_cost_n_log_c() {
        let f = FeatureMatrix::from_columns(&[&[1, 0, 1, 1], &[0, 1, 1, 0]], 4).unwrap();
        let w = ClassifierWeights::zeros(3, 2);
        let l = classification_loss(&f, &w, &[0, 1, 2, 0]).unwrap();
        assert!((l - 4.0 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_row_contributes_log_c() {
        let f = FeatureMatrix::from_columns(&[&[0]], 1).unwrap();
        let w = ClassifierWeights {
            w: vec![3.0, -2.0, 7.0],
            classes: 3,
            k: 1,
        };
        let l = classification_loss(&f, &w, &[1]).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range() {
        let f = FeatureMatrix::from_columns(&[&[0, 1]], 2).unwrap();
        let w = ClassifierWeights::zeros(2, 1);
        assert!(matches!(
            classification_loss(&f, &w, &[0, 2]),
            Err(Error::LabelOutOfRange { index: 1, label: 2, classes: 2 })
        ));
    }

    #[test]
    fn separable_features_are_learned() {
        let f = FeatureMatrix::from_columns(&[&[1, 0, 1, 0, 1, 0], &[0, 1, 0, 1, 0, 1]], 6).unwrap();
        let labels = [0, 1, 0, 1, 0, 1];
        let (w, _) = opt_w_classification(&f, &labels, 2, DEFAULT_REG, &DescentConfig::default()).unwrap();
        for (i, &y) in labels.iter().enumerate() {
            assert_eq!(w.predict(f.row(i)), y);
        }
    }
}
