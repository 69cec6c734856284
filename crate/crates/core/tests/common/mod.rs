#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use predmodel::benchgen::{gen_classification, gen_clustering, gen_timeseries, BenchmarkInstance, SyntheticWorld, TimeseriesMode};
use predmodel::corpus::EmbeddingMatrix;
use predmodel::evaluation::{evaluate, MockJudge};
use predmodel::grounding::Grounder;
use predmodel::learner::{Backends, FitResult};
use predmodel::models::{FeatureMatrix, FeatureMode};
use predmodel::proposer::{oracle_vocabulary, OracleProposer};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn oracle_backends(inst: &BenchmarkInstance) -> Backends {
    let vocab = oracle_vocabulary(&inst.base, &inst.corpus).unwrap();
    Backends {
        grounder: Grounder::oracle(),
        proposer: Arc::new(OracleProposer::new(vocab).unwrap()),
    }
}

pub fn mean_f1(fit: &FitResult, inst: &BenchmarkInstance) -> f64 {
    evaluate(
        &fit.predicates,
        &inst.references,
        &inst.corpus,
        &Grounder::oracle(),
        &MockJudge,
        Some(fit.provenance.seed),
    )
    .unwrap()
    .mean_f1
}

pub fn clustering_bench(seed: u64) -> BenchmarkInstance {
    gen_clustering(&SyntheticWorld::news(), "topic", 4, 512, 0.1, seed).unwrap()
}

pub fn timeseries_bench(seed: u64) -> BenchmarkInstance {
    gen_timeseries(&SyntheticWorld::news(), 256, TimeseriesMode::All, Some(2), 0.1, seed).unwrap()
}

pub fn classification_bench(seed: u64) -> BenchmarkInstance {
    gen_classification(&SyntheticWorld::news(), 20, 1000, 0.1, seed).unwrap()
}

pub fn random_binary(rng: &mut impl Rng, rows: usize, cols: usize, p: f64) -> FeatureMatrix {
    let data = (0..rows * cols).map(|_| if rng.random_bool(p) { 1.0 } else { 0.0 }).collect();
    FeatureMatrix::new(rows, cols, data, FeatureMode::Discrete).unwrap()
}

pub fn random_unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn random_embeddings(rng: &mut impl Rng, n: usize, d: usize) -> EmbeddingMatrix {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| random_unit(rng, d)).collect();
    let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    EmbeddingMatrix::from_rows(rows, &refs).unwrap()
}

/// Central differences with step h.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// max_i |a_i − n_i| / max(|a_i|, |n_i|, 1e-6); the floor keeps entries
/// that are zero on both sides from dividing by zero.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Per-sample clustering choice by direct enumeration of the K+1 options,
/// with normalizers from closed-form counts: Z_k = c_k e^τ + (n − c_k).
pub fn brute_force_assignment(f: &FeatureMatrix, tau: f64) -> Vec<usize> {
    let (n, k) = (f.rows(), f.cols());
    let log_n = (n as f64).ln();
    let log_z: Vec<f64> = (0..k)
        .map(|c| {
            let ones = (0..n).filter(|&i| f.get(i, c) == 1.0).count() as f64;
            if ones == 0.0 {
                log_n
            } else {
                tau + (ones + (n as f64 - ones) * (-tau).exp()).ln()
            }
        })
        .collect();
    (0..n)
        .map(|i| {
            let mut choice = k;
            let mut best = log_n;
            // Clusters win ties with the background and with later clusters.
            for c in (0..k).rev() {
                let loss = log_z[c] - tau * f.get(i, c);
                if loss <= best {
                    best = loss;
                    choice = c;
                }
            }
            choice
        })
        .collect()
}

/// Maximum of Σ w[i][π(i)] over all injective maps from the smaller side.
pub fn brute_force_matching(w: &[Vec<i64>]) -> i64 {
    let rows = w.len();
    let cols = w.first().map_or(0, Vec::len);
    fn go(w: &[Vec<i64>], i: usize, used: &mut Vec<bool>, transpose: bool) -> i64 {
        let rows = if transpose { w[0].len() } else { w.len() };
        if i == rows {
            return 0;
        }
        let cols = used.len();
        let mut best = i64::MIN;
        for j in 0..cols {
            if !used[j] {
                used[j] = true;
                let v = if transpose { w[j][i] } else { w[i][j] };
                best = best.max(v + go(w, i + 1, used, transpose));
                used[j] = false;
            }
        }
        best
    }
    if rows == 0 || cols == 0 {
        return 0;
    }
    if rows <= cols {
        go(w, 0, &mut vec![false; cols], false)
    } else {
        go(w, 0, &mut vec![false; rows], true)
    }
}
