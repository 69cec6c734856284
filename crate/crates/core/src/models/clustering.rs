//! Clustering: each sample is explained by one predicate-defined cluster,
//! p(x | k) ∝ exp(τ·⟦φ_k⟧(x)), or by the uniform background cluster.

use serde::{Deserialize, Serialize};

use super::features::{log_sum_exp_weighted, FeatureMatrix, FeatureMode};
use crate::error::{Error, Result};

pub const DEFAULT_TAU: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterWeights {
    /// Cluster index per sample; `clusters` denotes the background cluster.
    pub assignment: Vec<usize>,
    pub clusters: usize,
    pub tau: f64,
}

impl ClusterWeights {
    pub fn background(&self) -> usize {
        self.clusters
    }

    pub fn members(&self, k: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == k)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.clusters + 1];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }
}

/// log Σ_x exp(τ F(x,k)) for every cluster k.
///
/// For 0/1 columns this depends only on the column count, so columns with
/// equal counts get bit-identical normalizers and ties stay exact.
pub fn cluster_log_normalizers(features: &FeatureMatrix, tau: f64) -> Vec<f64> {
    let n = features.rows();
    let ones = vec![1.0; n];
    (0..features.cols())
        .map(|k| {
            if features.mode() == FeatureMode::Discrete {
                let c = (0..n).filter(|&i| features.get(i, k) != 0.0).count() as f64;
                return if c == 0.0 {
                    (n as f64).ln()
                } else {
                    tau + (c + (n as f64 - c) * (-tau).exp()).ln()
                };
            }
            let scores: Vec<f64> = (0..n).map(|i| tau * features.get(i, k)).collect();
            log_sum_exp_weighted(&scores, &ones)
        })
        .collect()
}

fn check(features: &FeatureMatrix, weights: &ClusterWeights) -> Result<()> {
    if weights.assignment.len() != features.rows() {
        return Err(Error::DimensionMismatch {
            expected: features.rows(),
            found: weights.assignment.len(),
        });
    }
    if weights.clusters != features.cols() {
        return Err(Error::DimensionMismatch {
            expected: features.cols(),
            found: weights.clusters,
        });
    }
    if let Some(&bad) = weights.assignment.iter().find(|&&a| a > weights.clusters) {
        return Err(Error::DimensionMismatch {
            expected: weights.clusters,
            found: bad,
        });
    }
    Ok(())
}

/// Per-sample negative log-likelihoods under the given assignment.
pub fn per_sample_loss(features: &FeatureMatrix, weights: &ClusterWeights) -> Result<Vec<f64>> {
    check(features, weights)?;
    let log_n = (features.rows() as f64).ln();
    let z = cluster_log_normalizers(features, weights.tau);
    Ok(weights
        .assignment
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            if k == weights.clusters {
                log_n
            } else {
                z[k] - weights.tau * features.get(i, k)
            }
        })
        .collect())
}

/// Σ_x −log p(x | assigned cluster). Background samples contribute log|X|.
pub fn clustering_loss(features: &FeatureMatrix, weights: &ClusterWeights) -> Result<f64> {
    Ok(per_sample_loss(features, weights)?.iter().sum())
}

/// Assigns each sample to the choice with the highest likelihood. Ties go to
/// the lowest cluster index; the background only wins strictly.
pub fn opt_w_clustering(features: &FeatureMatrix, tau: f64) -> ClusterWeights {
    let k = features.cols();
    let log_n = (features.rows() as f64).ln();
    let z = cluster_log_normalizers(features, tau);
    let assignment = (0..features.rows())
        .map(|i| {
            let mut best = k;
            let mut best_loss = f64::INFINITY;
            for (c, zc) in z.iter().enumerate() {
                let loss = zc - tau * features.get(i, c);
                if loss < best_loss {
                    best = c;
                    best_loss = loss;
                }
            }
            if best_loss <= log_n {
                best
            } else {
                k
            }
        })
        .collect();
    ClusterWeights {
        assignment,
        clusters: k,
        tau,
    }
}

/// ∂L/∂F(x,k) with the assignment held fixed.
pub fn clustering_feature_grad(features: &FeatureMatrix, weights: &ClusterWeights) -> Result<Vec<f64>> {
    check(features, weights)?;
    let (n, k) = (features.rows(), features.cols());
    let tau = weights.tau;
    let z = cluster_log_normalizers(features, tau);
    let sizes = weights.sizes();
    let mut grad = vec![0.0; n * k];
    for i in 0..n {
        for c in 0..k {
            let soft = (tau * features.get(i, c) - z[c]).exp();
            grad[i * k + c] = sizes[c] as f64 * tau * soft;
        }
        let a = weights.assignment[i];
        if a < k {
            grad[i * k + a] -= tau;
        }
    }
    Ok(grad)
}
