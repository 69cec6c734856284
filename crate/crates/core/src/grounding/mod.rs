//! Denotations: the 0/1 value of a predicate on each sample.
//!
//! A [`Grounder`] pairs a backend (LLM-backed or the exact rule oracle) with
//! an optional persistent [`DenotationCache`]. Cache hits never reach the
//! backend.

mod cache;
mod rule;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cache::{predicate_hash, DenotationCache};
pub use rule::Rule;

use crate::corpus::{Corpus, Sample};
use crate::error::{Error, Result};
use crate::gateway::{Bindings, Gateway, PromptTemplate, TemplateName};

/// A natural-language predicate, optionally with an exact structured rule.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Predicate {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<Rule>,
}

impl Predicate {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::EmptyPredicate);
        }
        Ok(Predicate { text, rule: None })
    }

    pub fn with_rule(text: impl Into<String>, rule: Rule) -> Result<Self> {
        let mut p = Predicate::new(text)?;
        p.rule = Some(rule);
        Ok(p)
    }
}

impl std::fmt::Display for Predicate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.text)
    }
}

/// One predicate's values over a corpus, in corpus order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenotationVector {
    pub predicate: Predicate,
    pub values: Vec<u8>,
}

impl DenotationVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }
}

/// Computes ⟦φ⟧(x) for one predicate and one sample.
pub trait GroundingBackend: Send + Sync {
    fn id(&self) -> String;
    fn denote(&self, predicate: &Predicate, sample: &Sample) -> Result<bool>;
}

/// Evaluates a predicate's structured rule against the sample's tags.
#[derive(Debug, Default, Clone, Copy)]
pub struct OracleBackend;

impl GroundingBackend for OracleBackend {
    fn id(&self) -> String {
        "oracle".to_string()
    }

    fn denote(&self, predicate: &Predicate, sample: &Sample) -> Result<bool> {
        let rule = predicate
            .rule
            .as_ref()
            .ok_or_else(|| Error::RuleRequired(predicate.text.clone()))?;
        Ok(rule.eval_tags(sample.tags.as_deref().unwrap_or(&[])))
    }
}

/// Asks a language model whether the predicate holds, one sample per call.
pub struct LlmBackend {
    gateway: Arc<Gateway>,
    template: PromptTemplate,
}

impl LlmBackend {
    pub fn new(gateway: Arc<Gateway>) -> Self {
        LlmBackend {
            gateway,
            template: PromptTemplate::denotation(),
        }
    }
}

const YES_NO_REMINDER: &str = "\n\nYour previous reply could not be read. Reply with exactly one word: yes or no.";

/// Reads a yes/no verdict from the first word of a reply.
pub fn parse_yes_no(reply: &str) -> Option<bool> {
    let word: String = reply
        .trim()
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect::<String>()
        .to_lowercase();
    match word.as_str() {
        "yes" | "true" => Some(true),
        "no" | "false" => Some(false),
        _ => None,
    }
}

impl GroundingBackend for LlmBackend {
    fn id(&self) -> String {
        format!("llm:{}", self.gateway.provider_id())
    }

    fn denote(&self, predicate: &Predicate, sample: &Sample) -> Result<bool> {
        let mut b = Bindings::new();
        b.insert("predicate".into(), predicate.text.clone());
        b.insert("sample".into(), sample.text.clone());
        let prompt = self.template.render(&b)?;
        let reply = self
            .gateway
            .complete_prompt(TemplateName::Denotation, &prompt, self.template.temperature)?;
        if let Some(v) = parse_yes_no(&reply) {
            return Ok(v);
        }
        let retry = format!("{prompt}{YES_NO_REMINDER}");
        let reply2 =
            self.gateway
                .complete_prompt(TemplateName::Denotation, &retry, self.template.temperature)?;
        match parse_yes_no(&reply2) {
            Some(v) => Ok(v),
            None => {
                log::warn!(
                    "unparseable denotation reply for {:?} on sample {:?}: {:?}; recording 0",
                    predicate.text,
                    sample.id,
                    reply2
                );
                Ok(false)
            }
        }
    }
}

/// Wraps a backend and counts calls; handy for verifying cache behaviour.
pub struct CountingBackend<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        CountingBackend {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<B: GroundingBackend> GroundingBackend for CountingBackend<B> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn denote(&self, predicate: &Predicate, sample: &Sample) -> Result<bool> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.denote(predicate, sample)
    }
}

/// A grounding backend plus an optional cache.
#[derive(Clone)]
pub struct Grounder {
    backend: Arc<dyn GroundingBackend>,
    cache: Option<Arc<DenotationCache>>,
}

impl std::fmt::Debug for Grounder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Grounder")
            .field("backend", &self.backend.id())
            .field("cache", &self.cache.as_ref().map(|c| c.len()))
            .finish()
    }
}

impl Grounder {
    pub fn new(backend: Arc<dyn GroundingBackend>, cache: Option<Arc<DenotationCache>>) -> Self {
        Grounder { backend, cache }
    }

    pub fn oracle() -> Self {
        Grounder::new(Arc::new(OracleBackend), None)
    }

    pub fn backend_id(&self) -> String {
        self.backend.id()
    }

    pub fn cache(&self) -> Option<&Arc<DenotationCache>> {
        self.cache.as_ref()
    }

    pub fn cache_digest(&self) -> Option<String> {
        self.cache.as_ref().map(|c| c.digest())
    }

    pub fn denote(&self, predicate: &Predicate, sample: &Sample) -> Result<bool> {
        let Some(cache) = &self.cache else {
            return self.backend.denote(predicate, sample);
        };
        let h = predicate_hash(&predicate.text);
        if let Some(v) = cache.get(&h, &sample.id) {
            return Ok(v);
        }
        let v = self.backend.denote(predicate, sample)?;
        cache.insert(&h, &sample.id, v)?;
        Ok(v)
    }

    /// Denotes a predicate on the given samples. Cache misses are sent to
    /// the backend concurrently; results are recorded in sample order.
    pub fn denote_samples<'a, I>(&self, predicate: &Predicate, samples: I) -> Result<Vec<u8>>
    where
        I: IntoIterator<Item = &'a Sample>,
    {
        let samples: Vec<&Sample> = samples.into_iter().collect();
        let h = predicate_hash(&predicate.text);
        let mut values: Vec<Option<bool>> = match &self.cache {
            Some(cache) => samples.iter().map(|s| cache.get(&h, &s.id)).collect(),
            None => vec![None; samples.len()],
        };
        let misses: Vec<usize> = (0..samples.len()).filter(|&i| values[i].is_none()).collect();
        let computed: Vec<Result<bool>> = misses
            .par_iter()
            .map(|&i| self.backend.denote(predicate, samples[i]))
            .collect();
        for (&i, v) in misses.iter().zip(computed) {
            let v = v?;
            if let Some(cache) = &self.cache {
                cache.insert(&h, &samples[i].id, v)?;
            }
            values[i] = Some(v);
        }
        if let Some(cache) = &self.cache {
            if !misses.is_empty() {
                cache.flush()?;
            }
        }
        Ok(values.into_iter().map(|v| v.unwrap_or(false) as u8).collect())
    }

    pub fn denote_all(&self, predicate: &Predicate, corpus: &Corpus) -> Result<DenotationVector> {
        Ok(DenotationVector {
            predicate: predicate.clone(),
            values: self.denote_samples(predicate, corpus.samples())?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusKind;
    use crate::gateway::{GatewayConfig, MockProvider};

    fn corpus() -> Corpus {
        Corpus::new(
            vec![
                Sample::new("a", "soccer").with_tags(["sports", "english"]),
                Sample::new("b", "vote").with_tags(["politics", "english"]),
                Sample::new("c", "futbol").with_tags(["sports", "spanish"]),
            ],
            CorpusKind::Clustering,
        )
        .unwrap()
    }

    #[test]
    fn oracle_needs_rule() {
        let p = Predicate::new("is sporty").unwrap();
        assert!(matches!(
            OracleBackend.denote(&p, &corpus().samples()[0]),
            Err(Error::RuleRequired(_))
        ));
    }

    #[test]
    fn oracle_evaluates_rules() {
        let s = Sample::new("x", "t").with_tags(["sports", "english"]);
        let p = Predicate::with_rule("sports", Rule::tag("sports")).unwrap();
        assert!(OracleBackend.denote(&p, &s).unwrap());
        let p = Predicate::with_rule(
            "non-english sports",
            Rule::And(vec![Rule::tag("sports"), Rule::not(Rule::tag("english"))]),
        )
        .unwrap();
        assert!(!OracleBackend.denote(&p, &s).unwrap());
    }

    #[test]
    fn denote_all_edge_rules() {
        let g = Grounder::oracle();
        let none = Predicate::with_rule("zebras", Rule::tag("zebra")).unwrap();
        assert_eq!(g.denote_all(&none, &corpus()).unwrap().values, [0, 0, 0]);
        let all = Predicate::with_rule("anything", Rule::always()).unwrap();
        assert_eq!(g.denote_all(&all, &corpus()).unwrap().values, [1, 1, 1]);
    }

    #[test]
    fn warm_cache_skips_backend() {
        let cache = Arc::new(DenotationCache::in_memory());
        let p = Predicate::with_rule("sports", Rule::tag("sports")).unwrap();
        let h = predicate_hash(&p.text);
        for (sid, v) in [("a", true), ("b", false), ("c", true)] {
            cache.insert(&h, sid, v).unwrap();
        }
        let backend = Arc::new(CountingBackend::new(OracleBackend));
        let g = Grounder::new(backend.clone(), Some(cache));
        assert_eq!(g.denote_all(&p, &corpus()).unwrap().values, [1, 0, 1]);
        assert_eq!(backend.calls(), 0);
    }

    #[test]
    fn misses_are_written_to_cache() {
        let cache = Arc::new(DenotationCache::in_memory());
        let backend = Arc::new(CountingBackend::new(OracleBackend));
        let g = Grounder::new(backend.clone(), Some(cache.clone()));
        let p = Predicate::with_rule("english", Rule::tag("english")).unwrap();
        g.denote_all(&p, &corpus()).unwrap();
        g.denote_all(&p, &corpus()).unwrap();
        assert_eq!(backend.calls(), 3);
        assert_eq!(cache.len(), 3);
    }

    fn llm_grounder(mock: MockProvider) -> Grounder {
        let cfg = GatewayConfig {
            provider: "mock".into(),
            rpm: 0,
            backoff_base_ms: 0,
            ..GatewayConfig::default()
        };
        let gw = Arc::new(Gateway::new(Arc::new(mock), cfg).unwrap());
        Grounder::new(Arc::new(LlmBackend::new(gw)), None)
    }

    fn denotation_prompt(pred: &str, sample: &str) -> String {
        let mut b = Bindings::new();
        b.insert("predicate".into(), pred.into());
        b.insert("sample".into(), sample.into());
        PromptTemplate::denotation().render(&b).unwrap()
    }

    #[test]
    fn llm_denotation_reads_verdict() {
        let pred = "discusses the U.S. Election";
        let text = "Is Georgia a swinging state this year?";
        let mock = MockProvider::new().with_reply(&denotation_prompt(pred, text), "Yes.");
        let g = llm_grounder(mock);
        let v = g
            .denote(&Predicate::new(pred).unwrap(), &Sample::new("q", text))
            .unwrap();
        assert!(v);
    }

    #[test]
    fn unparseable_reply_reprompts_then_defaults_to_zero() {
        let mock = Arc::new(MockProvider::new().with_default("maybe?"));
        let cfg = GatewayConfig {
            provider: "mock".into(),
            rpm: 0,
            ..GatewayConfig::default()
        };
        let gw = Arc::new(Gateway::new(mock.clone(), cfg).unwrap());
        let g = Grounder::new(Arc::new(LlmBackend::new(gw)), None);
        let v = g
            .denote(&Predicate::new("x").unwrap(), &Sample::new("s", "t"))
            .unwrap();
        assert!(!v);
        assert_eq!(mock.calls(), 2);
    }

    #[test]
    fn yes_no_parsing() {
        assert_eq!(parse_yes_no(" YES"), Some(true));
        assert_eq!(parse_yes_no("no, because"), Some(false));
        assert_eq!(parse_yes_no("Unclear"), None);
    }
}
