//! Continuous relaxation of predicates.
//!
//! A relaxed predicate is a unit vector φ̃ in embedding space; its "denotation"
//! on sample x is the dot product φ̃·e_x. Optimizing φ̃ against the model loss
//! with the weights fixed yields directions that the proposer then turns back
//! into text.

use serde::{Deserialize, Serialize};

use crate::corpus::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::models::{minimize, Constraint, DescentConfig, DescentOutcome, FeatureMatrix, FeatureMode, Model, ModelWeights, Objective};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousPredicate {
    vec: Vec<f64>,
}

impl ContinuousPredicate {
    /// Normalizes `vec` to unit length.
    pub fn new(vec: Vec<f64>) -> Result<Self> {
        if vec.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("continuous predicate"));
        }
        let norm = vec.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNorm("continuous predicate".into()));
        }
        Ok(ContinuousPredicate {
            vec: vec.into_iter().map(|v| v / norm).collect(),
        })
    }

    pub fn from_embedding(embeddings: &EmbeddingMatrix, i: usize) -> Self {
        ContinuousPredicate {
            vec: embeddings.row(i).to_vec(),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.vec
    }

    pub fn dim(&self) -> usize {
        self.vec.len()
    }

    /// Clamped φ̃·e_x for every sample.
    pub fn scores(&self, embeddings: &EmbeddingMatrix) -> Vec<f64> {
        embeddings.rows().map(|e| clamped_dot(&self.vec, e)).collect()
    }

    pub fn cosine(&self, other: &[f64]) -> f64 {
        let n = other.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 {
            return 0.0;
        }
        self.vec.iter().zip(other).map(|(a, b)| a * b).sum::<f64>() / n
    }
}

fn clamped_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0)
}

/// One feature column: a fixed 0/1 denotation or a relaxed direction.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureColumn {
    Discrete(Vec<u8>),
    Continuous(ContinuousPredicate),
}

/// Builds the feature matrix from mixed columns. Embedding rows must be
/// aligned with feature rows.
pub fn relaxed_features(columns: &[FeatureColumn], embeddings: &EmbeddingMatrix) -> Result<FeatureMatrix> {
    let n = embeddings.len();
    let k = columns.len();
    let mut data = vec![0.0; n * k];
    let mut any_continuous = false;
    for (j, col) in columns.iter().enumerate() {
        match col {
            FeatureColumn::Discrete(values) => {
                if values.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        found: values.len(),
                    });
                }
                for (i, &v) in values.iter().enumerate() {
                    data[i * k + j] = f64::from(v.min(1));
                }
            }
            FeatureColumn::Continuous(p) => {
                if p.dim() != embeddings.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: embeddings.dim(),
                        found: p.dim(),
                    });
                }
                any_continuous = true;
                for (i, e) in embeddings.rows().enumerate() {
                    data[i * k + j] = clamped_dot(p.as_slice(), e);
                }
            }
        }
    }
    let mode = if any_continuous {
        FeatureMode::Relaxed
    } else {
        FeatureMode::Discrete
    };
    FeatureMatrix::new(n, k, data, mode)
}

/// Relaxed loss as a function of the stacked free directions.
pub struct RelaxedObjective<'a> {
    model: &'a Model,
    weights: &'a ModelWeights,
    embeddings: &'a EmbeddingMatrix,
    columns: Vec<FeatureColumn>,
    free: Vec<usize>,
}

impl<'a> RelaxedObjective<'a> {
    /// `free` lists the column indices whose directions are optimized; each
    /// of them must hold a continuous column.
    pub fn new(
        model: &'a Model,
        weights: &'a ModelWeights,
        embeddings: &'a EmbeddingMatrix,
        columns: Vec<FeatureColumn>,
        free: Vec<usize>,
    ) -> Result<Self> {
        for &k in &free {
            if !matches!(columns.get(k), Some(FeatureColumn::Continuous(_))) {
                return Err(Error::Config(format!("column {k} is not continuous")));
            }
        }
        Ok(RelaxedObjective {
            model,
            weights,
            embeddings,
            columns,
            free,
        })
    }

    pub fn point(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.free.len() * self.embeddings.dim());
        for &k in &self.free {
            if let FeatureColumn::Continuous(p) = &self.columns[k] {
                x.extend_from_slice(p.as_slice());
            }
        }
        x
    }

    fn load(&mut self, x: &[f64]) {
        let d = self.embeddings.dim();
        for (slot, &k) in self.free.iter().enumerate() {
            self.columns[k] = FeatureColumn::Continuous(ContinuousPredicate {
                vec: x[slot * d..(slot + 1) * d].to_vec(),
            });
        }
    }

    fn features(&mut self, x: &[f64]) -> Result<FeatureMatrix> {
        self.load(x);
        relaxed_features(&self.columns, self.embeddings)
    }

    pub fn loss_at(&mut self, x: &[f64]) -> Result<f64> {
        let f = self.features(x)?;
        self.model.loss(&f, self.weights)
    }

    /// Loss and the Euclidean gradient Σ_x ∂L/∂F(x,k)·e_x for every free k.
    pub fn loss_grad_at(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let f = self.features(x)?;
        let loss = self.model.loss(&f, self.weights)?;
        let df = self.model.feature_grad(&f, self.weights)?;
        let d = self.embeddings.dim();
        let k = f.cols();
        let mut grad = vec![0.0; self.free.len() * d];
        for (slot, &col) in self.free.iter().enumerate() {
            let g = &mut grad[slot * d..(slot + 1) * d];
            for (i, e) in self.embeddings.rows().enumerate() {
                let coef = df[i * k + col];
                if coef != 0.0 {
                    for (gj, ej) in g.iter_mut().zip(e) {
                        *gj += coef * ej;
                    }
                }
            }
        }
        Ok((loss, grad))
    }
}

impl Objective for RelaxedObjective<'_> {
    fn value(&mut self, x: &[f64]) -> f64 {
        self.loss_at(x).unwrap_or(f64::NAN)
    }

    fn value_and_gradient(&mut self, x: &[f64]) -> (f64, Vec<f64>) {
        match self.loss_grad_at(x) {
            Ok(v) => v,
            Err(_) => (f64::NAN, vec![f64::NAN; x.len()]),
        }
    }
}

/// Optimizes every relaxed predicate with the weights held fixed.
pub fn opt_relaxed_all(
    model: &Model,
    weights: &ModelWeights,
    embeddings: &EmbeddingMatrix,
    init: &[ContinuousPredicate],
    config: &DescentConfig,
) -> Result<(Vec<ContinuousPredicate>, DescentOutcome)> {
    let columns: Vec<FeatureColumn> = init.iter().cloned().map(FeatureColumn::Continuous).collect();
    let free: Vec<usize> = (0..init.len()).collect();
    let mut objective = RelaxedObjective::new(model, weights, embeddings, columns, free)?;
    let x0 = objective.point();
    let outcome = minimize(&mut objective, x0, Constraint::UnitBlocks(embeddings.dim()), config)?;
    let d = embeddings.dim();
    let out = outcome
        .x
        .chunks_exact(d)
        .map(|c| ContinuousPredicate { vec: c.to_vec() })
        .collect();
    Ok((out, outcome))
}

/// Optimizes relaxed predicate `k` with every other column fixed at its 0/1
/// denotation. `discrete[k]` is ignored.
pub fn opt_relaxed_one(
    model: &Model,
    weights: &ModelWeights,
    embeddings: &EmbeddingMatrix,
    discrete: &[Vec<u8>],
    k: usize,
    init: &ContinuousPredicate,
    config: &DescentConfig,
) -> Result<(ContinuousPredicate, DescentOutcome)> {
    if k >= discrete.len() {
        return Err(Error::DimensionMismatch {
            expected: discrete.len(),
            found: k,
        });
    }
    let columns: Vec<FeatureColumn> = discrete
        .iter()
        .enumerate()
        .map(|(j, col)| {
            if j == k {
                FeatureColumn::Continuous(init.clone())
            } else {
                FeatureColumn::Discrete(col.clone())
            }
        })
        .collect();
    let mut objective = RelaxedObjective::new(model, weights, embeddings, columns, vec![k])?;
    let x0 = objective.point();
    let outcome = minimize(&mut objective, x0, Constraint::UnitBlocks(embeddings.dim()), config)?;
    Ok((ContinuousPredicate { vec: outcome.x.clone() }, outcome))
}
