//! Discretization: from a relaxed direction to ranked text predicates.

use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, EmbeddingMatrix, Sample};
use crate::error::{Error, Result};
use crate::gateway::{parse_candidates, Bindings, Gateway, PromptTemplate, TemplateName};
use crate::grounding::{Grounder, Predicate, Rule};
use crate::relaxation::ContinuousPredicate;

/// Text of the placeholder predicate returned when a clustering proposal
/// yields nothing usable.
pub const DEGENERATE_PREDICATE: &str = "matches the theme of the top-ranked samples";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignMode {
    PositiveOnly,
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposerConfig {
    /// Samples drawn for sorting and reranking.
    pub samples: usize,
    /// Candidates kept after reranking.
    #[serde(rename = "M")]
    pub m: usize,
    /// Samples shown to a language-model proposer.
    pub shown: usize,
    /// Characters kept from each shown sample.
    pub max_chars: usize,
    pub steering: Option<String>,
}

impl Default for ProposerConfig {
    fn default() -> Self {
        ProposerConfig {
            samples: 128,
            m: 5,
            shown: 32,
            max_chars: 256,
            steering: None,
        }
    }
}

/// Pearson correlation. Returns `(r, degenerate)`; a constant input gives
/// `(0.0, true)`.
pub fn pearson_r(a: &[f64], b: &[f64]) -> Result<(f64, bool)> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::EmptyInput("correlation needs at least two points"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok((0.0, true));
    }
    Ok(((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0), false))
}

/// What the proposer is shown.
#[derive(Debug, Clone)]
pub struct ProposalRequest<'a> {
    /// Samples in ascending score order, or in draw order when unscored.
    pub samples: Vec<&'a Sample>,
    /// φ̃·e for each sample; `None` for plain prompting without a signal.
    pub scores: Option<Vec<f64>>,
    pub count: usize,
    pub steering: Option<&'a str>,
    /// Seed for any randomness the backend needs.
    pub seed: u64,
}

/// Produces candidate predicates for a proposal request.
pub trait CandidateBackend: Send + Sync {
    fn id(&self) -> String;
    fn propose(&self, request: &ProposalRequest<'_>) -> Result<Vec<Predicate>>;
    /// Whether `propose` already returns every candidate it could ever
    /// return, independent of the request.
    fn exhaustive(&self) -> bool {
        false
    }
}

/// Enumerates a fixed rule vocabulary.
#[derive(Debug, Clone)]
pub struct OracleProposer {
    vocabulary: Vec<Predicate>,
}

impl OracleProposer {
    pub fn new(vocabulary: Vec<Predicate>) -> Result<Self> {
        if vocabulary.iter().any(|p| p.rule.is_none()) {
            let bad = vocabulary.iter().find(|p| p.rule.is_none()).unwrap();
            return Err(Error::RuleRequired(bad.text.clone()));
        }
        Ok(OracleProposer { vocabulary })
    }

    pub fn vocabulary(&self) -> &[Predicate] {
        &self.vocabulary
    }
}

impl CandidateBackend for OracleProposer {
    fn id(&self) -> String {
        "oracle".to_string()
    }

    /// With scores, the whole vocabulary. Without scores (plain prompting),
    /// a seeded random selection of rules true on at least one shown sample.
    fn propose(&self, request: &ProposalRequest<'_>) -> Result<Vec<Predicate>> {
        if request.scores.is_some() {
            return Ok(self.vocabulary.clone());
        }
        let mut pool: Vec<&Predicate> = self
            .vocabulary
            .iter()
            .filter(|p| {
                let rule = p.rule.as_ref().expect("checked in new");
                request
                    .samples
                    .iter()
                    .any(|s| rule.eval_tags(s.tags.as_deref().unwrap_or(&[])))
            })
            .collect();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(request.seed);
        pool.shuffle(&mut rng);
        Ok(pool.into_iter().take(request.count).cloned().collect())
    }

    fn exhaustive(&self) -> bool {
        true
    }
}

/// Builds the oracle vocabulary from single-tag base predicates: each base
/// predicate, its negation, and the conjunction of every pair of tags that
/// co-occur somewhere in the corpus.
pub fn oracle_vocabulary(base: &[Predicate], corpus: &Corpus) -> Result<Vec<Predicate>> {
    let denote = |p: &Predicate| -> Result<Vec<bool>> {
        let rule = p.rule.as_ref().ok_or_else(|| Error::RuleRequired(p.text.clone()))?;
        Ok(corpus
            .samples()
            .iter()
            .map(|s| rule.eval_tags(s.tags.as_deref().unwrap_or(&[])))
            .collect())
    };
    let columns = base.iter().map(denote).collect::<Result<Vec<_>>>()?;
    let mut vocab: Vec<Predicate> = base.to_vec();
    for p in base {
        let rule = Rule::not(p.rule.clone().expect("denoted above"));
        vocab.push(Predicate::with_rule(format!("NOT ({})", p.text), rule)?);
    }
    for i in 0..base.len() {
        for j in i + 1..base.len() {
            if !columns[i].iter().zip(&columns[j]).any(|(x, y)| *x && *y) {
                continue;
            }
            let (a, b) = (&base[i], &base[j]);
            let rule = Rule::And(vec![a.rule.clone().unwrap(), b.rule.clone().unwrap()]);
            vocab.push(Predicate::with_rule(format!("({}) AND ({})", a.text, b.text), rule)?);
        }
    }
    Ok(vocab)
}

/// Asks a language model through the discretizer template.
pub struct LlmProposer {
    gateway: Arc<Gateway>,
    template: PromptTemplate,
    shown: usize,
    max_chars: usize,
}

impl LlmProposer {
    pub fn new(gateway: Arc<Gateway>, config: &ProposerConfig) -> Self {
        LlmProposer {
            gateway,
            template: PromptTemplate::discretizer(),
            shown: config.shown.max(1),
            max_chars: config.max_chars.max(1),
        }
    }

    /// Renders the prompt for a request. Long lists are thinned evenly so
    /// the whole score range stays visible.
    pub fn prompt(&self, request: &ProposalRequest<'_>) -> Result<String> {
        let n = request.samples.len();
        let picks: Vec<usize> = if n <= self.shown {
            (0..n).collect()
        } else {
            (0..self.shown).map(|i| i * (n - 1) / (self.shown - 1).max(1)).collect()
        };
        let mut lines = Vec::with_capacity(picks.len());
        for (rank, &i) in picks.iter().enumerate() {
            let text: String = request.samples[i].text.chars().take(self.max_chars).collect();
            let text = text.replace('\n', " ");
            match &request.scores {
                Some(s) => lines.push(format!("{}. (score {:.3}) {}", rank + 1, s[i], text)),
                None => lines.push(format!("{}. {}", rank + 1, text)),
            }
        }
        let mut b = Bindings::new();
        let steering = match request.steering {
            Some(s) if !s.trim().is_empty() => format!("Goal: {}\n\n", s.trim()),
            _ => String::new(),
        };
        b.insert("steering".into(), steering);
        b.insert("samples".into(), lines.join("\n"));
        b.insert("count".into(), request.count.to_string());
        self.template.render(&b)
    }
}

impl CandidateBackend for LlmProposer {
    fn id(&self) -> String {
        format!("llm:{}", self.gateway.provider_id())
    }

    fn propose(&self, request: &ProposalRequest<'_>) -> Result<Vec<Predicate>> {
        let prompt = self.prompt(request)?;
        let mut last = Error::NoCandidates;
        for _ in 0..2 {
            let reply = self
                .gateway
                .complete_prompt(TemplateName::Discretizer, &prompt, self.template.temperature)?;
            match parse_candidates(&reply, request.count.max(1)) {
                Ok(texts) => return texts.into_iter().map(Predicate::new).collect(),
                Err(e) => last = e,
            }
        }
        Err(last)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub predicate: Predicate,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
    pub sign_mode: SignMode,
    /// Set when the set holds only the fallback placeholder.
    pub degenerate: bool,
}

impl CandidateSet {
    pub fn predicates(&self) -> Vec<Predicate> {
        self.candidates.iter().map(|c| c.predicate.clone()).collect()
    }
}

/// Draws `count` distinct sample indices uniformly.
fn draw_indices<R: Rng>(n: usize, count: usize, rng: &mut R) -> Vec<usize> {
    rand::seq::index::sample(rng, n, count.min(n)).into_vec()
}

fn dedup_case_insensitive(preds: Vec<Predicate>) -> Vec<Predicate> {
    let mut seen = std::collections::HashSet::new();
    preds
        .into_iter()
        .filter(|p| seen.insert(p.text.trim().to_lowercase()))
        .collect()
}

/// Scores candidates by correlation with `scores` on `samples`, keeping the
/// top `m` in a stable descending order.
pub fn rerank(
    candidates: Vec<Predicate>,
    samples: &[&Sample],
    scores: &[f64],
    grounder: &Grounder,
    m: usize,
    sign_mode: SignMode,
) -> Result<Vec<Candidate>> {
    let mut scored = Vec::with_capacity(candidates.len());
    for p in candidates {
        let values = grounder.denote_samples(&p, samples.iter().copied())?;
        let v: Vec<f64> = values.iter().map(|&x| f64::from(x)).collect();
        let (r, _) = pearson_r(&v, scores)?;
        let score = match sign_mode {
            SignMode::PositiveOnly => r.max(0.0),
            SignMode::Absolute => r.abs(),
        };
        scored.push(Candidate { predicate: p, score });
    }
    scored.sort_by(|a, b| b.score.total_cmp(&a.score));
    scored.truncate(m);
    Ok(scored)
}

/// Everything discretize needs besides the direction itself.
pub struct DiscretizeContext<'a> {
    pub corpus: &'a Corpus,
    pub embeddings: &'a EmbeddingMatrix,
    pub proposer: &'a dyn CandidateBackend,
    pub grounder: &'a Grounder,
    pub config: &'a ProposerConfig,
    pub sign_mode: SignMode,
}

/// Draws samples, sorts them by φ̃·e, asks the backend for candidates and
/// keeps the `M` best by correlation with the direction.
pub fn discretize<R: Rng>(
    phi: &ContinuousPredicate,
    ctx: &DiscretizeContext<'_>,
    rng: &mut R,
) -> Result<CandidateSet> {
    let samples = ctx.corpus.samples();
    let mut picks = draw_indices(samples.len(), ctx.config.samples, rng);
    let all_scores = phi.scores(ctx.embeddings);
    picks.sort_by(|&a, &b| all_scores[a].total_cmp(&all_scores[b]).then(a.cmp(&b)));
    let drawn: Vec<&Sample> = picks.iter().map(|&i| &samples[i]).collect();
    let scores: Vec<f64> = picks.iter().map(|&i| all_scores[i]).collect();
    let request = ProposalRequest {
        samples: drawn.clone(),
        scores: Some(scores.clone()),
        count: ctx.config.m.max(1) * 2,
        steering: ctx.config.steering.as_deref(),
        seed: rng.random(),
    };
    let proposed = match ctx.proposer.propose(&request) {
        Ok(p) => dedup_case_insensitive(p),
        Err(Error::NoCandidates) => Vec::new(),
        Err(e) => return Err(e),
    };
    if proposed.is_empty() {
        return fallback(ctx.sign_mode);
    }
    let candidates = rerank(proposed, &drawn, &scores, ctx.grounder, ctx.config.m, ctx.sign_mode)?;
    Ok(CandidateSet {
        candidates,
        sign_mode: ctx.sign_mode,
        degenerate: false,
    })
}

fn fallback(sign_mode: SignMode) -> Result<CandidateSet> {
    match sign_mode {
        SignMode::PositiveOnly => Ok(CandidateSet {
            candidates: vec![Candidate {
                predicate: Predicate::new(DEGENERATE_PREDICATE)?,
                score: 0.0,
            }],
            sign_mode,
            degenerate: true,
        }),
        SignMode::Absolute => Err(Error::NoCandidates),
    }
}

/// The no-relaxation variant: `M` backend candidates chosen uniformly at
/// random, with no correlation ranking.
pub fn random_candidates<R: Rng>(ctx: &DiscretizeContext<'_>, rng: &mut R) -> Result<CandidateSet> {
    let samples = ctx.corpus.samples();
    let picks = draw_indices(samples.len(), ctx.config.samples, rng);
    let drawn: Vec<&Sample> = picks.iter().map(|&i| &samples[i]).collect();
    let request = ProposalRequest {
        samples: drawn,
        scores: Some(vec![0.0; picks.len()]),
        count: ctx.config.m.max(1) * 2,
        steering: ctx.config.steering.as_deref(),
        seed: rng.random(),
    };
    let proposed = match ctx.proposer.propose(&request) {
        Ok(p) => dedup_case_insensitive(p),
        Err(Error::NoCandidates) => Vec::new(),
        Err(e) => return Err(e),
    };
    if proposed.is_empty() {
        return fallback(ctx.sign_mode);
    }
    let chosen: Vec<Predicate> = proposed
        .choose_multiple(rng, ctx.config.m.max(1))
        .cloned()
        .collect();
    Ok(CandidateSet {
        candidates: chosen
            .into_iter()
            .map(|predicate| Candidate { predicate, score: 0.0 })
            .collect(),
        sign_mode: ctx.sign_mode,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusKind;

    #[test]
    fn pearson_examples() {
        let v = [0.3, 1.2, -0.4, 2.0];
        assert!((pearson_r(&v, &v).unwrap().0 - 1.0).abs() < 1e-12);
        let (r, _) = pearson_r(&[1.0, 0.0, 1.0, 0.0], &[0.0, 1.0, 0.0, 1.0]).unwrap();
        assert!((r + 1.0).abs() < 1e-12);
        assert_eq!(pearson_r(&[1.0, 1.0], &[0.0, 3.0]).unwrap(), (0.0, true));
    }

    #[test]
    fn pearson_hand_value() {
        // Means 0.5 and 0.5; covariance sum 0.7; variances 1.0 and 0.5.
        let (r, _) = pearson_r(&[1.0, 1.0, 0.0, 0.0], &[0.9, 0.8, 0.1, 0.2]).unwrap();
        assert!((r - 0.7 / 0.5f64.sqrt()).abs() < 1e-12);
        assert!((r - 0.9899).abs() < 1e-4);
    }

    fn tagged(tags: &[&[&str]]) -> Corpus {
        let samples = tags
            .iter()
            .enumerate()
            .map(|(i, t)| Sample::new(format!("s{i}"), format!("text {i}")).with_tags(t.iter().copied()))
            .collect();
        Corpus::new(samples, CorpusKind::Clustering).unwrap()
    }

    #[test]
    fn vocabulary_shapes() {
        let c = tagged(&[&["a", "x"], &["b", "x"], &["a", "y"]]);
        let base: Vec<Predicate> = ["a", "b", "x"]
            .iter()
            .map(|t| Predicate::with_rule(format!("is {t}"), Rule::tag(*t)).unwrap())
            .collect();
        let v = oracle_vocabulary(&base, &c).unwrap();
        let texts: Vec<&str> = v.iter().map(|p| p.text.as_str()).collect();
        assert_eq!(
            texts,
            [
                "is a",
                "is b",
                "is x",
                "NOT (is a)",
                "NOT (is b)",
                "NOT (is x)",
                "(is a) AND (is x)",
                "(is b) AND (is x)"
            ]
        );
    }

    #[test]
    fn absolute_mode_prefers_strong_anticorrelation() {
        let c = tagged(&[&["a"], &["a"], &["b"], &["b"], &["a", "b"]]);
        let scores = [0.9, 0.8, 0.1, 0.0, 0.5];
        let drawn: Vec<&Sample> = c.samples().iter().collect();
        let neg = Predicate::with_rule("neg", Rule::not(Rule::tag("a"))).unwrap();
        let weak = Predicate::with_rule("weak", Rule::tag("b")).unwrap();
        let g = Grounder::oracle();
        let out = rerank(vec![weak.clone(), neg.clone()], &drawn, &scores, &g, 5, SignMode::Absolute).unwrap();
        assert_eq!(out[0].predicate, neg);
        let out = rerank(vec![weak, neg], &drawn, &scores, &g, 5, SignMode::PositiveOnly).unwrap();
        assert_eq!(out[1].score, 0.0);
    }

    #[test]
    fn truncates_to_m() {
        let c = tagged(&[&["a"], &["b"], &["c"]]);
        let drawn: Vec<&Sample> = c.samples().iter().collect();
        let preds: Vec<Predicate> = (0..9)
            .map(|i| Predicate::with_rule(format!("p{i}"), Rule::tag(format!("t{i}"))).unwrap())
            .collect();
        let out = rerank(preds, &drawn, &[0.1, 0.2, 0.3], &Grounder::oracle(), 5, SignMode::Absolute).unwrap();
        assert_eq!(out.len(), 5);
    }
}
