//! Scoring learned predicates against references.

use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::gateway::{Bindings, Gateway, PromptTemplate, TemplateName};
use crate::grounding::{Grounder, Predicate};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matching {
    /// (learned index, reference index), sorted by learned index.
    pub pairs: Vec<(usize, usize)>,
    pub total_overlap: i64,
}

/// Maximum-weight assignment on a square matrix, O(n³). Returns the column
/// assigned to each row.
fn hungarian_square(weights: &[Vec<i64>]) -> Vec<usize> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    let max = weights.iter().flatten().copied().max().unwrap_or(0);
    // Minimize cost = max − weight with the potential-based formulation,
    // 1-indexed with a virtual column 0.
    let cost = |i: usize, j: usize| max - weights[i][j];
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Best total weight using only the given rows and columns.
fn best_value(weights: &[Vec<i64>], rows: &[usize], cols: &[usize]) -> i64 {
    let n = rows.len().max(cols.len());
    let square: Vec<Vec<i64>> = (0..n)
        .map(|a| {
            (0..n)
                .map(|b| match (rows.get(a), cols.get(b)) {
                    (Some(&i), Some(&j)) => weights[i][j],
                    _ => 0,
                })
                .collect()
        })
        .collect();
    hungarian_square(&square)
        .iter()
        .enumerate()
        .map(|(a, &b)| square[a][b])
        .sum()
}

/// Maximum-weight one-to-one matching with min(rows, cols) pairs. Among
/// optimal matchings, the lexicographically smallest pair list is returned.
pub fn max_weight_matching(weights: &[Vec<i64>]) -> Result<Matching> {
    let r = weights.len();
    let c = weights.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(Error::EmptyInput("matching"));
    }
    if weights.iter().any(|row| row.len() != c) {
        return Err(Error::DimensionMismatch {
            expected: c,
            found: weights.iter().map(Vec::len).find(|&l| l != c).unwrap_or(0),
        });
    }
    let mut rows: Vec<usize> = (0..r).collect();
    let mut cols: Vec<usize> = (0..c).collect();
    let target = best_value(weights, &rows, &cols);
    let mut remaining = target;
    let mut pairs = Vec::new();
    for i in 0..r {
        rows.retain(|&x| x != i);
        let mut fixed = false;
        for &j in cols.clone().iter() {
            let rest: Vec<usize> = cols.iter().copied().filter(|&x| x != j).collect();
            if weights[i][j] + best_value(weights, &rows, &rest) == remaining {
                pairs.push((i, j));
                remaining -= weights[i][j];
                cols = rest;
                fixed = true;
                break;
            }
        }
        // A row may stay unmatched only when rows outnumber columns.
        debug_assert!(fixed || rows.len() >= cols.len());
        if cols.is_empty() {
            break;
        }
    }
    Ok(Matching {
        pairs,
        total_overlap: target,
    })
}

/// weight(i, j) = number of samples where both learned i and reference j hold.
pub fn overlap_matrix(learned: &[Vec<u8>], reference: &[Vec<u8>]) -> Result<Vec<Vec<i64>>> {
    let n = learned.first().or(reference.first()).map_or(0, Vec::len);
    for v in learned.iter().chain(reference) {
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: v.len(),
            });
        }
    }
    Ok(learned
        .iter()
        .map(|a| {
            reference
                .iter()
                .map(|b| a.iter().zip(b).filter(|(x, y)| **x == 1 && **y == 1).count() as i64)
                .collect()
        })
        .collect())
}

pub fn match_predicates(learned: &[Vec<u8>], reference: &[Vec<u8>]) -> Result<Matching> {
    max_weight_matching(&overlap_matrix(learned, reference)?)
}

/// F1 of `learned` as a predictor of `reference`; 0 when undefined.
pub fn f1_similarity(learned: &[u8], reference: &[u8]) -> f64 {
    let tp = learned.iter().zip(reference).filter(|(a, b)| **a == 1 && **b == 1).count() as f64;
    let predicted = learned.iter().filter(|&&a| a == 1).count() as f64;
    let actual = reference.iter().filter(|&&b| b == 1).count() as f64;
    if tp == 0.0 {
        return 0.0;
    }
    let precision = tp / predicted;
    let recall = tp / actual;
    2.0 * precision * recall / (precision + recall)
}

/// Rates two predicate strings as similar (1), related (0.5) or irrelevant (0).
pub trait SurfaceJudge: Send + Sync {
    fn id(&self) -> String;
    fn judge(&self, learned: &str, reference: &str) -> Result<f64>;
}

/// Network-free judge: equal normalized strings are similar, a shared
/// content word makes them related.
#[derive(Debug, Default, Clone, Copy)]
pub struct MockJudge;

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "of", "in", "on", "is", "are", "has", "have", "to", "and", "or", "not", "about", "with", "for",
    "by", "it", "its", "this", "that", "be", "as", "at", "from", "topic", "written", "set", "discusses", "mentions",
    "sample", "text",
];

fn normalize_words(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| {
            if w.len() > 3 && w.ends_with('s') && !w.ends_with("ss") {
                w[..w.len() - 1].to_string()
            } else {
                w.to_string()
            }
        })
        .collect()
}

impl SurfaceJudge for MockJudge {
    fn id(&self) -> String {
        "mock".to_string()
    }

    fn judge(&self, learned: &str, reference: &str) -> Result<f64> {
        let a = normalize_words(learned);
        let b = normalize_words(reference);
        if a == b {
            return Ok(1.0);
        }
        let shared = a
            .iter()
            .any(|w| !STOPWORDS.contains(&w.as_str()) && b.contains(w));
        Ok(if shared { 0.5 } else { 0.0 })
    }
}

/// Reads similar / related / irrelevant from the first word of a reply.
pub fn parse_verdict(reply: &str) -> Option<f64> {
    let word: String = reply
        .trim()
        .chars()
        .skip_while(|c| !c.is_alphabetic())
        .take_while(|c| c.is_alphabetic())
        .collect::<String>()
        .to_lowercase();
    match word.as_str() {
        "similar" => Some(1.0),
        "related" => Some(0.5),
        "irrelevant" => Some(0.0),
        _ => None,
    }
}

pub struct LlmJudge {
    gateway: Arc<Gateway>,
    template: PromptTemplate,
}

impl LlmJudge {
    pub fn new(gateway: Arc<Gateway>) -> Self {
        LlmJudge {
            gateway,
            template: PromptTemplate::similarity_judge(),
        }
    }
}

impl SurfaceJudge for LlmJudge {
    fn id(&self) -> String {
        format!("llm:{}", self.gateway.provider_id())
    }

    fn judge(&self, learned: &str, reference: &str) -> Result<f64> {
        let mut b = Bindings::new();
        b.insert("learned".into(), learned.to_string());
        b.insert("reference".into(), reference.to_string());
        let prompt = self.template.render(&b)?;
        let t = self.template.temperature;
        let reply = self.gateway.complete_prompt(TemplateName::SimilarityJudge, &prompt, t)?;
        if let Some(v) = parse_verdict(&reply) {
            return Ok(v);
        }
        let retry = format!("{prompt}\n\nReply with exactly one word: similar, related, or irrelevant.");
        let reply = self.gateway.complete_prompt(TemplateName::SimilarityJudge, &retry, t)?;
        Ok(parse_verdict(&reply).unwrap_or_else(|| {
            log::warn!("unparseable similarity verdict {reply:?} for {learned:?} vs {reference:?}; recording 0");
            0.0
        }))
    }
}

pub fn surface_similarity(learned: &Predicate, reference: &Predicate, judge: &dyn SurfaceJudge) -> Result<f64> {
    judge.judge(&learned.text, &reference.text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub learned_index: usize,
    pub reference_index: usize,
    pub learned: String,
    pub reference: String,
    pub overlap: i64,
    pub f1: f64,
    pub surface: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: Option<u64>,
    pub pairs: Vec<PairScore>,
    pub unmatched_learned: Vec<usize>,
    pub unmatched_reference: Vec<usize>,
    pub mean_f1: f64,
    pub mean_surface: f64,
}

/// Matches learned predicates to references and scores every pair.
/// Unmatched predicates on either side count as 0 in the means.
pub fn evaluate(
    learned: &[Predicate],
    references: &[Predicate],
    corpus: &Corpus,
    grounder: &Grounder,
    judge: &dyn SurfaceJudge,
    seed: Option<u64>,
) -> Result<EvalReport> {
    let denote = |p: &Predicate| -> Result<Vec<u8>> {
        if p.rule.is_some() {
            Grounder::oracle().denote_samples(p, corpus.samples())
        } else {
            grounder.denote_samples(p, corpus.samples())
        }
    };
    let lv = learned.iter().map(denote).collect::<Result<Vec<_>>>()?;
    let rv = references.iter().map(denote).collect::<Result<Vec<_>>>()?;
    let overlap = overlap_matrix(&lv, &rv)?;
    let matching = max_weight_matching(&overlap)?;
    let mut pairs = Vec::with_capacity(matching.pairs.len());
    for &(i, j) in &matching.pairs {
        pairs.push(PairScore {
            learned_index: i,
            reference_index: j,
            learned: learned[i].text.clone(),
            reference: references[j].text.clone(),
            overlap: overlap[i][j],
            f1: f1_similarity(&lv[i], &rv[j]),
            surface: surface_similarity(&learned[i], &references[j], judge)?,
        });
    }
    let denom = learned.len().max(references.len()) as f64;
    let unmatched_learned = (0..learned.len())
        .filter(|i| !matching.pairs.iter().any(|p| p.0 == *i))
        .collect();
    let unmatched_reference = (0..references.len())
        .filter(|j| !matching.pairs.iter().any(|p| p.1 == *j))
        .collect();
    Ok(EvalReport {
        seed,
        mean_f1: pairs.iter().map(|p| p.f1).sum::<f64>() / denom,
        mean_surface: pairs.iter().map(|p| p.surface).sum::<f64>() / denom,
        pairs,
        unmatched_learned,
        unmatched_reference,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedScore {
    pub seed: Option<u64>,
    pub mean_f1: f64,
    pub mean_surface: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub mean_f1: f64,
    pub mean_surface: f64,
    pub per_seed: Vec<SeedScore>,
}

pub fn aggregate(reports: &[EvalReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(Error::EmptyInput("reports"));
    }
    let n = reports.len() as f64;
    Ok(AggregateReport {
        mean_f1: reports.iter().map(|r| r.mean_f1).sum::<f64>() / n,
        mean_surface: reports.iter().map(|r| r.mean_surface).sum::<f64>() / n,
        per_seed: reports
            .iter()
            .map(|r| SeedScore {
                seed: r.seed,
                mean_f1: r.mean_f1,
                mean_surface: r.mean_surface,
            })
            .collect(),
    })
}

/// f_t = 0.99·f_{t−1} + 0.01·v_t, starting from the mean of the first 100
/// values (or of all values when there are fewer).
pub fn smoothed_frequency(values: &[u8]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let head = &values[..values.len().min(100)];
    let f0 = head.iter().map(|&v| f64::from(v)).sum::<f64>() / head.len() as f64;
    smoothed_from(f0, values)
}

/// The recurrence from an explicit starting value.
pub fn smoothed_from(f0: f64, values: &[u8]) -> Vec<f64> {
    let mut f = f0;
    values
        .iter()
        .map(|&v| {
            f = 0.99 * f + 0.01 * f64::from(v);
            f
        })
        .collect()
}

/// Pointwise min and max of the smoothed curve over `runs` seeded shuffles.
pub fn shuffle_band(values: &[u8], runs: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut low = vec![f64::INFINITY; values.len()];
    let mut high = vec![f64::NEG_INFINITY; values.len()];
    let mut rng = rng::stream(seed, Stream::Band);
    let mut perm = values.to_vec();
    for _ in 0..runs {
        perm.copy_from_slice(values);
        perm.shuffle(&mut rng);
        for (t, f) in smoothed_frequency(&perm).into_iter().enumerate() {
            low[t] = low[t].min(f);
            high[t] = high[t].max(f);
        }
    }
    if runs == 0 {
        let curve = smoothed_frequency(values);
        return (curve.clone(), curve);
    }
    (low, high)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// P(T ≥ t) under the null of no mean difference.
    pub p: f64,
    pub mean_diff: f64,
}

/// One-sided paired t-test of H1: mean(a − b) > 0.
pub fn paired_ttest_one_sided(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::EmptyInput("paired t-test needs at least two pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let df = n - 1.0;
    if var == 0.0 {
        let (t, p) = if mean > 0.0 {
            (f64::INFINITY, 0.0)
        } else if mean < 0.0 {
            (f64::NEG_INFINITY, 1.0)
        } else {
            (0.0, 0.5)
        };
        return Ok(TTest {
            t,
            df,
            p,
            mean_diff: mean,
        });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Config(e.to_string()))?;
    Ok(TTest {
        t,
        df,
        p: 1.0 - dist.cdf(t),
        mean_diff: mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_example() {
        let m = max_weight_matching(&[vec![5, 1], vec![2, 4]]).unwrap();
        assert_eq!(m.pairs, [(0, 0), (1, 1)]);
        assert_eq!(m.total_overlap, 9);
    }

    #[test]
    fn rectangular_matching() {
        let m = max_weight_matching(&[vec![1, 7, 3]]).unwrap();
        assert_eq!(m.pairs, [(0, 1)]);
        let m = max_weight_matching(&[vec![1], vec![7], vec![3]]).unwrap();
        assert_eq!(m.pairs, [(1, 0)]);
        assert_eq!(m.total_overlap, 7);
    }

    #[test]
    fn ties_break_lexicographically() {
        let m = max_weight_matching(&[vec![1, 1], vec![1, 1]]).unwrap();
        assert_eq!(m.pairs, [(0, 0), (1, 1)]);
        let m = max_weight_matching(&[vec![0, 0], vec![0, 0]]).unwrap();
        assert_eq!(m.pairs, [(0, 0), (1, 1)]);
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_similarity(&[1, 0, 1], &[1, 0, 1]), 1.0);
        assert!((f1_similarity(&[1, 1, 0, 0], &[1, 0, 0, 0]) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(f1_similarity(&[0, 0, 0], &[1, 0, 1]), 0.0);
    }

    #[test]
    fn mock_judge_examples() {
        let j = MockJudge;
        assert_eq!(j.judge("is about cats", "is about cats").unwrap(), 1.0);
        assert_eq!(j.judge("schools", "school").unwrap(), 1.0);
        assert_eq!(j.judge("sports news", "news about athletes").unwrap(), 0.5);
        assert_eq!(j.judge("is set in Japan", "is written in English").unwrap(), 0.0);
    }

    #[test]
    fn llm_judge_reads_related() {
        use crate::gateway::{GatewayConfig, MockProvider};
        let mut b = Bindings::new();
        b.insert("learned".into(), "sports".into());
        b.insert("reference".into(), "athlete".into());
        let prompt = PromptTemplate::similarity_judge().render(&b).unwrap();
        let mock = MockProvider::new().with_reply(&prompt, "related");
        let cfg = GatewayConfig {
            provider: "mock".into(),
            rpm: 0,
            ..GatewayConfig::default()
        };
        let judge = LlmJudge::new(Arc::new(Gateway::new(Arc::new(mock), cfg).unwrap()));
        assert_eq!(judge.judge("sports", "athlete").unwrap(), 0.5);
    }

    #[test]
    fn verdicts() {
        assert_eq!(parse_verdict("Related."), Some(0.5));
        assert_eq!(parse_verdict("  similar"), Some(1.0));
        assert_eq!(parse_verdict("no idea"), None);
    }

    #[test]
    fn smoothing() {
        assert!(smoothed_frequency(&[1; 150]).iter().all(|&f| f == 1.0));
        assert!(smoothed_frequency(&[0; 150]).iter().all(|&f| f == 0.0));
        assert_eq!(smoothed_from(0.0, &[1]), [0.01]);
    }

    #[test]
    fn band_edges() {
        let (lo, hi) = shuffle_band(&[1; 50], 10, 0);
        assert!(lo.iter().chain(&hi).all(|&v| v == 1.0));
        let (lo, hi) = shuffle_band(&[0, 1, 1, 0, 1], 1, 4);
        assert_eq!(lo, hi);
    }

    #[test]
    fn ttest_degenerate() {
        let t = paired_ttest_one_sided(&[1.0, 2.0], &[0.0, 1.0]).unwrap();
        assert_eq!(t.p, 0.0);
    }
}
