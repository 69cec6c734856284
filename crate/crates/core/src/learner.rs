//! The fitting loop: relax, discretize, then refine the least useful
//! predicate S times.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusKind, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::grounding::{Grounder, Predicate};
use crate::models::{DescentConfig, FeatureMatrix, Model, ModelParams, ModelWeights};
use crate::proposer::{
    discretize, random_candidates, CandidateBackend, CandidateSet, DiscretizeContext, ProposalRequest, ProposerConfig,
    SignMode,
};
use crate::relaxation::{opt_relaxed_all, opt_relaxed_one, relaxed_features, ContinuousPredicate, FeatureColumn};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    NoRelax,
    NoRefine,
    Prompting,
    Shuffled,
}

impl std::str::FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Ablation::None),
            "no_relax" => Ok(Ablation::NoRelax),
            "no_refine" => Ok(Ablation::NoRefine),
            "prompting" => Ok(Ablation::Prompting),
            "shuffled" => Ok(Ablation::Shuffled),
            other => Err(Error::Config(format!(
                "unknown ablation {other:?}; expected none, no_relax, no_refine, prompting or shuffled"
            ))),
        }
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Ablation::None => "none",
            Ablation::NoRelax => "no_relax",
            Ablation::NoRefine => "no_refine",
            Ablation::Prompting => "prompting",
            Ablation::Shuffled => "shuffled",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "S")]
    pub s: usize,
    pub model: ModelParams,
    /// Descent settings for each half of an OptW / OptRelaxedPhi alternation.
    pub relax_descent: DescentConfig,
    /// OptW / OptRelaxedPhi alternations per relaxation phase.
    pub alternations: usize,
    pub ablation: Ablation,
    pub seed: u64,
    pub proposer: ProposerConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            k: 4,
            s: 10,
            model: ModelParams::default(),
            relax_descent: DescentConfig {
                max_steps: 30,
                ..DescentConfig::default()
            },
            alternations: 10,
            ablation: Ablation::None,
            seed: 0,
            proposer: ProposerConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self, kind: CorpusKind) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if self.proposer.m == 0 {
            return Err(Error::Config("proposer.M must be at least 1".into()));
        }
        if self.ablation == Ablation::Shuffled && kind != CorpusKind::Timeseries {
            return Err(Error::Config("the shuffled ablation only applies to time series".into()));
        }
        Ok(())
    }
}

/// The grounding and proposal backends used by a fit.
#[derive(Clone)]
pub struct Backends {
    pub grounder: Grounder,
    pub proposer: Arc<dyn CandidateBackend>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub grounding_backend: String,
    pub proposer_backend: String,
    pub cache_digest: Option<String>,
    pub config: FitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub predicates: Vec<Predicate>,
    /// Weights in the original corpus order (time order for time series).
    pub weights: ModelWeights,
    /// Fitness after initialization, then after every refinement step.
    pub fitness_trace: Vec<f64>,
    pub provenance: Provenance,
}

impl FitResult {
    pub fn fitness(&self) -> f64 {
        *self.fitness_trace.last().expect("trace starts with the initial fitness")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iteration,fitness\n");
        for (i, f) in self.fitness_trace.iter().enumerate() {
            s.push_str(&format!("{i},{f}\n"));
        }
        s
    }
}

/// Corpus, embeddings and model in the order the model sees them.
struct Workspace {
    corpus: Corpus,
    embeddings: EmbeddingMatrix,
    model: Model,
    /// Original time position of every working row; the identity unless
    /// the rows were shuffled.
    positions: Vec<usize>,
}

impl Workspace {
    fn new(corpus: &Corpus, embeddings: &EmbeddingMatrix, config: &FitConfig) -> Result<Self> {
        if embeddings.len() != corpus.len() {
            return Err(Error::DimensionMismatch {
                expected: corpus.len(),
                found: embeddings.len(),
            });
        }
        let base = corpus.time_order().unwrap_or_else(|| (0..corpus.len()).collect());
        let mut positions: Vec<usize> = (0..base.len()).collect();
        if config.ablation == Ablation::Shuffled {
            positions.shuffle(&mut rng::stream(config.seed, Stream::Shuffle));
        }
        let order: Vec<usize> = positions.iter().map(|&p| base[p]).collect();
        let corpus = corpus.select(&order)?;
        let embeddings = embeddings.select(&order);
        let model = Model::for_corpus(&corpus, &config.model)?;
        Ok(Workspace {
            corpus,
            embeddings,
            model,
            positions,
        })
    }

    fn denote(&self, grounder: &Grounder, p: &Predicate) -> Result<Vec<u8>> {
        grounder.denote_samples(p, self.corpus.samples())
    }

    fn sign_mode(&self) -> SignMode {
        if self.model.positive_only() {
            SignMode::PositiveOnly
        } else {
            SignMode::Absolute
        }
    }

    /// Puts time-series weight rows back in original time order.
    fn restore(&self, weights: ModelWeights) -> ModelWeights {
        match weights {
            ModelWeights::Timeseries(w) => {
                let mut inverse = vec![0; self.positions.len()];
                for (r, &p) in self.positions.iter().enumerate() {
                    inverse[p] = r;
                }
                ModelWeights::Timeseries(w.permute_steps(&inverse))
            }
            other => other,
        }
    }
}

fn stack(columns: &[Vec<u8>], rows: usize) -> Result<FeatureMatrix> {
    let refs: Vec<&[u8]> = columns.iter().map(|c| c.as_slice()).collect();
    FeatureMatrix::from_columns(&refs, rows)
}

/// Index of the predicate whose zeroed column leaves the highest fitness.
/// Ties go to the lowest index.
pub fn select_least_useful(model: &Model, features: &FeatureMatrix) -> Result<usize> {
    let scores = (0..features.cols())
        .into_par_iter()
        .map(|k| model.fitness(&features.with_zeroed(k)))
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = k;
        }
    }
    Ok(best)
}

/// Least-useful selection from predicates, denoting them on the corpus.
pub fn select_least_useful_predicates(
    predicates: &[Predicate],
    model: &Model,
    corpus: &Corpus,
    grounder: &Grounder,
) -> Result<usize> {
    if predicates.is_empty() {
        return Err(Error::EmptyInput("predicates"));
    }
    let features = crate::models::denotation_features(predicates, corpus, grounder)?;
    select_least_useful(model, &features)
}

/// Accumulates K distinct predicates by repeatedly prompting the proposer
/// with uniformly drawn samples and no ranking signal.
pub fn baseline_prompting(
    corpus: &Corpus,
    k: usize,
    proposer: &dyn CandidateBackend,
    config: &ProposerConfig,
    seed: u64,
) -> Result<Vec<Predicate>> {
    const MAX_IDLE_CALLS: usize = 20;
    let mut rng = rng::stream(seed, Stream::Prompting);
    let mut out: Vec<Predicate> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut idle = 0;
    while out.len() < k {
        let picks = rand::seq::index::sample(&mut rng, corpus.len(), config.samples.min(corpus.len()));
        let request = ProposalRequest {
            samples: picks.iter().map(|i| &corpus.samples()[i]).collect(),
            scores: None,
            count: k,
            steering: config.steering.as_deref(),
            seed: rng.random(),
        };
        let before = out.len();
        for p in proposer.propose(&request)? {
            if out.len() == k {
                break;
            }
            if seen.insert(p.text.trim().to_lowercase()) {
                out.push(p);
            }
        }
        if out.len() == before {
            idle += 1;
            if idle == MAX_IDLE_CALLS {
                return Err(Error::NoCandidates);
            }
        } else {
            idle = 0;
        }
    }
    Ok(out)
}

/// Mutable fitting state over the workspace.
struct State {
    predicates: Vec<Predicate>,
    columns: Vec<Vec<u8>>,
    weights: ModelWeights,
    fitness: f64,
}

struct Fitter<'a> {
    ws: Workspace,
    config: &'a FitConfig,
    backends: &'a Backends,
}

impl<'a> Fitter<'a> {
    fn context(&self) -> DiscretizeContext<'_> {
        DiscretizeContext {
            corpus: &self.ws.corpus,
            embeddings: &self.ws.embeddings,
            proposer: self.backends.proposer.as_ref(),
            grounder: &self.backends.grounder,
            config: &self.config.proposer,
            sign_mode: self.ws.sign_mode(),
        }
    }

    fn propose<R: Rng>(&self, phi: &ContinuousPredicate, rng: &mut R) -> Result<CandidateSet> {
        if self.config.ablation == Ablation::NoRelax {
            random_candidates(&self.context(), rng)
        } else {
            discretize(phi, &self.context(), rng)
        }
    }

    fn random_direction<R: Rng>(&self, rng: &mut R) -> ContinuousPredicate {
        ContinuousPredicate::from_embedding(&self.ws.embeddings, rng.random_range(0..self.ws.embeddings.len()))
    }

    fn state_from(&self, predicates: Vec<Predicate>) -> Result<State> {
        let columns = predicates
            .iter()
            .map(|p| self.ws.denote(&self.backends.grounder, p))
            .collect::<Result<Vec<_>>>()?;
        let features = stack(&columns, self.ws.corpus.len())?;
        let (fitness, weights) = self.ws.model.fitness_with_weights(&features)?;
        Ok(State {
            predicates,
            columns,
            weights,
            fitness,
        })
    }

    /// Algorithm lines 3–10: relax all predicates, then take the top
    /// candidate for each.
    fn initialize(&self) -> Result<State> {
        let mut init_rng = rng::stream(self.config.seed, Stream::Init);
        let n = self.ws.embeddings.len();
        let k = self.config.k;
        let rows: Vec<usize> = if n >= k {
            rand::seq::index::sample(&mut init_rng, n, k).into_vec()
        } else {
            (0..k).map(|_| init_rng.random_range(0..n)).collect()
        };
        let mut phis: Vec<ContinuousPredicate> = rows
            .iter()
            .map(|&i| ContinuousPredicate::from_embedding(&self.ws.embeddings, i))
            .collect();
        if self.config.ablation != Ablation::NoRelax {
            let mut weights: Option<ModelWeights> = None;
            for _ in 0..self.config.alternations {
                let columns: Vec<FeatureColumn> = phis.iter().cloned().map(FeatureColumn::Continuous).collect();
                let features = relaxed_features(&columns, &self.ws.embeddings)?;
                let w = self.relaxed_opt_w(&features, weights.as_ref())?;
                phis = opt_relaxed_all(&self.ws.model, &w, &self.ws.embeddings, &phis, &self.config.relax_descent)?.0;
                weights = Some(w);
            }
        }
        let mut proposer_rng = rng::stream(self.config.seed, Stream::Proposer);
        let mut predicates = Vec::with_capacity(k);
        for phi in &phis {
            let set = self.propose(phi, &mut proposer_rng)?;
            predicates.push(set.candidates[0].predicate.clone());
        }
        self.state_from(predicates)
    }

    /// OptW inside relaxation phases: warm-started and step-capped.
    fn relaxed_opt_w(&self, features: &FeatureMatrix, warm: Option<&ModelWeights>) -> Result<ModelWeights> {
        let capped = match &self.ws.model {
            Model::Timeseries { lambda, .. } => Model::Timeseries {
                lambda: *lambda,
                descent: self.config.relax_descent,
            },
            Model::Classification {
                labels, classes, reg, ..
            } => Model::Classification {
                labels: labels.clone(),
                classes: *classes,
                reg: *reg,
                descent: self.config.relax_descent,
            },
            m @ Model::Clustering { .. } => m.clone(),
        };
        capped.opt_w(features, warm)
    }

    /// Algorithm lines 12–20 for one iteration.
    fn refine(&self, state: State, iteration: usize) -> Result<State> {
        let features = stack(&state.columns, self.ws.corpus.len())?;
        let k = select_least_useful(&self.ws.model, &features)?;
        let mut rng = rng::substream(self.config.seed, Stream::Refine, iteration as u64);
        let mut phi = self.random_direction(&mut rng);
        if self.config.ablation != Ablation::NoRelax {
            let mut weights: Option<ModelWeights> = None;
            for _ in 0..self.config.alternations {
                let columns: Vec<FeatureColumn> = state
                    .columns
                    .iter()
                    .enumerate()
                    .map(|(j, c)| {
                        if j == k {
                            FeatureColumn::Continuous(phi.clone())
                        } else {
                            FeatureColumn::Discrete(c.clone())
                        }
                    })
                    .collect();
                let relaxed = relaxed_features(&columns, &self.ws.embeddings)?;
                let w = self.relaxed_opt_w(&relaxed, weights.as_ref())?;
                phi = opt_relaxed_one(
                    &self.ws.model,
                    &w,
                    &self.ws.embeddings,
                    &state.columns,
                    k,
                    &phi,
                    &self.config.relax_descent,
                )?
                .0;
                weights = Some(w);
            }
        }
        let candidates = match self.propose(&phi, &mut rng) {
            Ok(set) => set.predicates(),
            Err(e) => {
                log::warn!("refinement {iteration}: discretize failed ({e}); keeping the incumbent");
                return Ok(state);
            }
        };
        let incumbent_key = state.predicates[k].text.trim().to_lowercase();
        let fresh: Vec<Predicate> = candidates
            .into_iter()
            .filter(|p| p.text.trim().to_lowercase() != incumbent_key)
            .collect();
        let scored = fresh
            .par_iter()
            .map(|p| -> Result<(Vec<u8>, f64, ModelWeights)> {
                let col = self.ws.denote(&self.backends.grounder, p)?;
                let mut columns = state.columns.clone();
                columns[k] = col.clone();
                let (f, w) = self.ws.model.fitness_with_weights(&stack(&columns, self.ws.corpus.len())?)?;
                Ok((col, f, w))
            })
            .collect::<Result<Vec<_>>>()?;
        // The incumbent comes first, so a tie keeps it.
        let mut state = state;
        let mut best: Option<usize> = None;
        let mut best_fitness = state.fitness;
        for (i, (_, f, _)) in scored.iter().enumerate() {
            if *f > best_fitness {
                best = Some(i);
                best_fitness = *f;
            }
        }
        if let Some(i) = best {
            let (col, f, w) = scored.into_iter().nth(i).expect("index in range");
            state.predicates[k] = fresh[i].clone();
            state.columns[k] = col;
            state.fitness = f;
            state.weights = w;
        }
        Ok(state)
    }
}

/// Fits K predicates to the corpus.
pub fn fit(corpus: &Corpus, embeddings: &EmbeddingMatrix, config: &FitConfig, backends: &Backends) -> Result<FitResult> {
    config.validate(corpus.kind())?;
    let ws = Workspace::new(corpus, embeddings, config)?;
    let fitter = Fitter { ws, config, backends };
    let mut trace = Vec::with_capacity(config.s + 1);
    let state = match config.ablation {
        Ablation::Prompting => {
            let predicates =
                baseline_prompting(&fitter.ws.corpus, config.k, backends.proposer.as_ref(), &config.proposer, config.seed)?;
            let state = fitter.state_from(predicates)?;
            trace.push(state.fitness);
            state
        }
        _ => {
            let mut state = fitter.initialize()?;
            trace.push(state.fitness);
            let s = if config.ablation == Ablation::NoRefine { 0 } else { config.s };
            for it in 0..s {
                state = fitter.refine(state, it)?;
                trace.push(state.fitness);
            }
            state
        }
    };
    let weights = fitter.ws.restore(state.weights);
    Ok(FitResult {
        predicates: state.predicates,
        weights,
        fitness_trace: trace,
        provenance: Provenance {
            seed: config.seed,
            grounding_backend: backends.grounder.backend_id(),
            proposer_backend: backends.proposer.id(),
            cache_digest: backends.grounder.cache_digest(),
            config: config.clone(),
        },
    })
}

/// `fit` with the ablation overridden.
pub fn fit_ablation(
    corpus: &Corpus,
    embeddings: &EmbeddingMatrix,
    config: &FitConfig,
    ablation: Ablation,
    backends: &Backends,
) -> Result<FitResult> {
    let config = FitConfig {
        ablation,
        ..config.clone()
    };
    fit(corpus, embeddings, &config, backends)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyNode {
    /// The cluster predicate; `None` at the root.
    pub predicate: Option<Predicate>,
    pub size: usize,
    pub sample_ids: Vec<String>,
    /// The fit that split this node, if it was split.
    pub fit: Option<FitResult>,
    pub children: Vec<TaxonomyNode>,
}

impl TaxonomyNode {
    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(TaxonomyNode::depth).max().unwrap_or(0)
    }

    pub fn leaves(&self) -> Vec<&TaxonomyNode> {
        if self.children.is_empty() {
            vec![self]
        } else {
            self.children.iter().flat_map(|c| c.leaves()).collect()
        }
    }

    /// Nested markdown bullet list.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        self.render(0, &mut out);
        out
    }

    fn render(&self, level: usize, out: &mut String) {
        let label = self.predicate.as_ref().map_or("all samples", |p| p.text.as_str());
        out.push_str(&format!("{}- {} ({})\n", "  ".repeat(level), label, self.size));
        for c in &self.children {
            c.render(level + 1, out);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyConfig {
    /// Clusters larger than this are split further.
    pub min_cluster: usize,
    /// Number of fitting levels; 1 means a single fit.
    pub depth: usize,
    /// Predicates per split below the root.
    pub child_k: usize,
}

/// Fits a clustering at the root and recursively inside large clusters.
/// Samples left in the background cluster are not placed in any child.
pub fn taxonomize(
    corpus: &Corpus,
    embeddings: &EmbeddingMatrix,
    config: &FitConfig,
    taxonomy: &TaxonomyConfig,
    backends: &Backends,
) -> Result<TaxonomyNode> {
    if corpus.kind() != CorpusKind::Clustering {
        return Err(Error::Config("taxonomize needs a clustering corpus".into()));
    }
    if taxonomy.depth == 0 {
        return Err(Error::Config("taxonomy depth must be at least 1".into()));
    }
    split(corpus, embeddings, config, taxonomy, backends, None, taxonomy.depth)
}

fn split(
    corpus: &Corpus,
    embeddings: &EmbeddingMatrix,
    config: &FitConfig,
    taxonomy: &TaxonomyConfig,
    backends: &Backends,
    predicate: Option<Predicate>,
    levels: usize,
) -> Result<TaxonomyNode> {
    let result = fit(corpus, embeddings, config, backends)?;
    let ModelWeights::Clustering(assign) = &result.weights else {
        return Err(Error::Config("taxonomize needs clustering weights".into()));
    };
    let mut children = Vec::with_capacity(result.predicates.len());
    for (k, p) in result.predicates.iter().enumerate() {
        let members = assign.members(k);
        let ids: Vec<String> = members.iter().map(|&i| corpus.samples()[i].id.clone()).collect();
        let child = if levels > 1 && members.len() > taxonomy.min_cluster {
            let sub = corpus.select(&members)?;
            let sub_emb = embeddings.select(&members);
            let child_config = FitConfig {
                k: taxonomy.child_k,
                ..config.clone()
            };
            split(&sub, &sub_emb, &child_config, taxonomy, backends, Some(p.clone()), levels - 1)?
        } else {
            TaxonomyNode {
                predicate: Some(p.clone()),
                size: members.len(),
                sample_ids: ids.clone(),
                fit: None,
                children: Vec::new(),
            }
        };
        children.push(child);
    }
    Ok(TaxonomyNode {
        predicate,
        size: corpus.len(),
        sample_ids: corpus.ids().map(str::to_string).collect(),
        fit: Some(result),
        children,
    })
}
