//! The predicate-conditioned distribution p(x | φ, w) ∝ exp(wᵀ⟦φ⟧(x)) and
//! the three model families built on it.

mod classification;
mod clustering;
mod descent;
mod features;
mod timeseries;

use serde::{Deserialize, Serialize};

pub use classification::{
    classification_feature_grad, classification_loss, classification_loss_grad, opt_w_classification,
    opt_w_classification_from, ClassifierWeights, DEFAULT_REG,
};
pub use clustering::{
    cluster_log_normalizers, clustering_feature_grad, clustering_loss, opt_w_clustering, per_sample_loss,
    ClusterWeights, DEFAULT_TAU,
};
pub use descent::{minimize, Constraint, DescentConfig, DescentOutcome, Objective};
pub use features::{distribution, log_normalizer, FeatureMatrix, FeatureMode, Patterns};
pub use timeseries::{
    opt_w_timeseries, opt_w_timeseries_from, timeseries_feature_grad, timeseries_loss, timeseries_loss_grad,
    TimeSeriesWeights, DEFAULT_LAMBDA,
};

use crate::corpus::{Corpus, CorpusKind};
use crate::error::{Error, Result};
use crate::grounding::{Grounder, Predicate};

/// A model family with its hyper-parameters. Time-series feature rows are
/// expected in time order.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Clustering {
        tau: f64,
    },
    Timeseries {
        lambda: f64,
        descent: DescentConfig,
    },
    Classification {
        labels: Vec<usize>,
        classes: usize,
        reg: f64,
        descent: DescentConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum ModelWeights {
    Clustering(ClusterWeights),
    Timeseries(TimeSeriesWeights),
    Classification(ClassifierWeights),
}

/// Hyper-parameters shared by every model family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    pub tau: f64,
    pub lambda: f64,
    pub reg: f64,
    pub descent: DescentConfig,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            tau: DEFAULT_TAU,
            lambda: DEFAULT_LAMBDA,
            reg: DEFAULT_REG,
            descent: DescentConfig::default(),
        }
    }
}

impl Model {
    /// The model matching the corpus kind. Classification takes its labels
    /// from the corpus, in corpus order.
    pub fn for_corpus(corpus: &Corpus, params: &ModelParams) -> Result<Model> {
        if !(params.tau.is_finite() && params.tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive, got {}", params.tau)));
        }
        if !(params.lambda.is_finite() && params.lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be positive, got {}", params.lambda)));
        }
        Ok(match corpus.kind() {
            CorpusKind::Clustering => Model::Clustering { tau: params.tau },
            CorpusKind::Timeseries => Model::Timeseries {
                lambda: params.lambda,
                descent: params.descent,
            },
            CorpusKind::Classification => Model::Classification {
                labels: corpus.labels().ok_or(Error::EmptyInput("labels"))?,
                classes: corpus.class_count().ok_or(Error::EmptyInput("labels"))?,
                reg: params.reg,
                descent: params.descent,
            },
        })
    }

    pub fn kind(&self) -> CorpusKind {
        match self {
            Model::Clustering { .. } => CorpusKind::Clustering,
            Model::Timeseries { .. } => CorpusKind::Timeseries,
            Model::Classification { .. } => CorpusKind::Classification,
        }
    }

    /// Clustering weights cannot be negative, so only positive correlation
    /// with the relaxed direction is useful there.
    pub fn positive_only(&self) -> bool {
        matches!(self, Model::Clustering { .. })
    }

    /// Restricts a classification model to a subset of samples.
    pub fn select(&self, indices: &[usize]) -> Model {
        match self {
            Model::Classification {
                labels,
                classes,
                reg,
                descent,
            } => Model::Classification {
                labels: indices.iter().map(|&i| labels[i]).collect(),
                classes: *classes,
                reg: *reg,
                descent: *descent,
            },
            other => other.clone(),
        }
    }

    pub fn loss(&self, features: &FeatureMatrix, weights: &ModelWeights) -> Result<f64> {
        match (self, weights) {
            (Model::Clustering { .. }, ModelWeights::Clustering(w)) => clustering_loss(features, w),
            (Model::Timeseries { .. }, ModelWeights::Timeseries(w)) => timeseries_loss(features, w),
            (Model::Classification { labels, .. }, ModelWeights::Classification(w)) => {
                classification_loss(features, w, labels)
            }
            _ => Err(Error::Config("weights do not match the model family".into())),
        }
    }

    /// OptW. Iterative families may start from `warm` when its shape fits.
    pub fn opt_w(&self, features: &FeatureMatrix, warm: Option<&ModelWeights>) -> Result<ModelWeights> {
        match self {
            Model::Clustering { tau } => Ok(ModelWeights::Clustering(opt_w_clustering(features, *tau))),
            Model::Timeseries { lambda, descent } => {
                let init = match warm {
                    Some(ModelWeights::Timeseries(w))
                        if w.steps == features.rows() && w.k == features.cols() && w.lambda == *lambda =>
                    {
                        w.clone()
                    }
                    _ => TimeSeriesWeights::zeros(features.rows(), features.cols(), *lambda),
                };
                let (w, _) = opt_w_timeseries_from(features, init, descent)?;
                Ok(ModelWeights::Timeseries(w))
            }
            Model::Classification {
                labels,
                classes,
                reg,
                descent,
            } => {
                let init = match warm {
                    Some(ModelWeights::Classification(w)) if w.classes == *classes && w.k == features.cols() => {
                        w.clone()
                    }
                    _ => ClassifierWeights::zeros(*classes, features.cols()),
                };
                let (w, _) = opt_w_classification_from(features, labels, init, *reg, descent)?;
                Ok(ModelWeights::Classification(w))
            }
        }
    }

    /// ∂L/∂F(x,k), row-major like the features.
    pub fn feature_grad(&self, features: &FeatureMatrix, weights: &ModelWeights) -> Result<Vec<f64>> {
        match (self, weights) {
            (Model::Clustering { .. }, ModelWeights::Clustering(w)) => clustering_feature_grad(features, w),
            (Model::Timeseries { .. }, ModelWeights::Timeseries(w)) => timeseries_feature_grad(features, w),
            (Model::Classification { labels, .. }, ModelWeights::Classification(w)) => {
                classification_feature_grad(features, w, labels)
            }
            _ => Err(Error::Config("weights do not match the model family".into())),
        }
    }

    /// −Loss(φ, OptW(φ)) together with the optimal weights.
    pub fn fitness_with_weights(&self, features: &FeatureMatrix) -> Result<(f64, ModelWeights)> {
        let w = self.opt_w(features, None)?;
        Ok((-self.loss(features, &w)?, w))
    }

    pub fn fitness(&self, features: &FeatureMatrix) -> Result<f64> {
        Ok(self.fitness_with_weights(features)?.0)
    }
}

/// Denotes every predicate on the corpus and stacks the columns. Rows follow
/// corpus order, except for time series where they follow time order.
pub fn denotation_features(predicates: &[Predicate], corpus: &Corpus, grounder: &Grounder) -> Result<FeatureMatrix> {
    let columns = predicates
        .iter()
        .map(|p| grounder.denote_samples(p, corpus.samples()))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[u8]> = columns.iter().map(|c| c.as_slice()).collect();
    let features = FeatureMatrix::from_columns(&refs, corpus.len())?;
    Ok(match corpus.time_order() {
        Some(order) => features.permute_rows(&order),
        None => features,
    })
}

/// Fitness of a predicate list, optionally with one column zeroed out.
pub fn fitness(
    predicates: &[Predicate],
    model: &Model,
    corpus: &Corpus,
    grounder: &Grounder,
    zero_out: Option<usize>,
) -> Result<f64> {
    let mut features = denotation_features(predicates, corpus, grounder)?;
    if let Some(k) = zero_out {
        if k >= predicates.len() {
            return Err(Error::DimensionMismatch {
                expected: predicates.len(),
                found: k,
            });
        }
        features = features.with_zeroed(k);
    }
    model.fitness(&features)
}
