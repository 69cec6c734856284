//! Synthetic benchmarks over a rule-grounded world with planted reference
//! predicates.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{synth_embed, Corpus, CorpusKind, EmbeddingMatrix, Sample};
use crate::error::{Error, Result};
use crate::grounding::{Predicate, Rule};
use crate::rng::{self, Stream};

/// Size of the candidate pool that time-series samples are drawn from.
pub const POOL_SIZE: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct TagSpec {
    pub tag: String,
    /// Reference predicate text, e.g. "has a topic of sports".
    pub phrase: String,
    pub fragments: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeGroup {
    pub name: String,
    /// Sorted alphabetically by tag.
    pub tags: Vec<TagSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub groups: Vec<AttributeGroup>,
}

fn spec(tag: &str, phrase: &str, fragments: &[&str]) -> TagSpec {
    TagSpec {
        tag: tag.to_string(),
        phrase: phrase.to_string(),
        fragments: fragments.iter().map(|s| s.to_string()).collect(),
    }
}

fn group(name: &str, mut tags: Vec<TagSpec>) -> AttributeGroup {
    tags.sort_by(|a, b| a.tag.cmp(&b.tag));
    AttributeGroup {
        name: name.to_string(),
        tags,
    }
}

impl SyntheticWorld {
    /// News articles with topic, location and language attributes, four
    /// tags each.
    pub fn news() -> Self {
        SyntheticWorld {
            groups: vec![
                group(
                    "topic",
                    vec![
                        spec("sports", "has a topic of sports", &["the match went to extra time", "a record crowd watched the final", "the league announced a new season format"]),
                        spec("politics", "has a topic of politics", &["lawmakers debated the new budget", "the minister resigned after the vote", "campaigns entered their final week"]),
                        spec("science", "has a topic of science", &["researchers published a study on cell growth", "a telescope captured a distant galaxy", "the lab reported a new material"]),
                        spec("business", "has a topic of business", &["shares rose after the earnings call", "the startup raised a new funding round", "the merger was approved by regulators"]),
                    ],
                ),
                group(
                    "location",
                    vec![
                        spec("japan", "is set in Japan", &["in Tokyo", "in Osaka", "near Kyoto"]),
                        spec("brazil", "is set in Brazil", &["in Sao Paulo", "in Rio de Janeiro", "near Brasilia"]),
                        spec("france", "is set in France", &["in Paris", "in Lyon", "near Marseille"]),
                        spec("kenya", "is set in Kenya", &["in Nairobi", "in Mombasa", "near Kisumu"]),
                    ],
                ),
                group(
                    "language",
                    vec![
                        spec("english", "is written in English", &["(English edition)", "(reported in English)", "(English text)"]),
                        spec("spanish", "is written in Spanish", &["(edicion en espanol)", "(texto en espanol)", "(nota en espanol)"]),
                        spec("french", "is written in French", &["(edition en francais)", "(texte en francais)", "(article en francais)"]),
                        spec("german", "is written in German", &["(deutsche Ausgabe)", "(Text auf Deutsch)", "(Bericht auf Deutsch)"]),
                    ],
                ),
            ],
        }
    }

    /// Four coarse topics, each split into two fine subtopics.
    pub fn hierarchy() -> Self {
        SyntheticWorld {
            groups: vec![
                group(
                    "topic",
                    vec![
                        spec("sports", "has a topic of sports", &["sports desk"]),
                        spec("politics", "has a topic of politics", &["politics desk"]),
                        spec("science", "has a topic of science", &["science desk"]),
                        spec("business", "has a topic of business", &["business desk"]),
                    ],
                ),
                group(
                    "subtopic",
                    vec![
                        spec("soccer", "is about soccer", &["the striker scored twice", "the keeper saved a penalty"]),
                        spec("tennis", "is about tennis", &["the serve clocked a new record", "the tiebreak lasted twenty points"]),
                        spec("elections", "is about elections", &["turnout rose in the runoff", "ballots were recounted overnight"]),
                        spec("diplomacy", "is about diplomacy", &["envoys met to discuss the treaty", "the embassy issued a statement"]),
                        spec("physics", "is about physics", &["the collider detected a rare decay", "a new laser cooled atoms further"]),
                        spec("biology", "is about biology", &["the gene edit reversed the trait", "a new species of frog was found"]),
                        spec("markets", "is about financial markets", &["bond yields climbed again", "the index closed at a record"]),
                        spec("startups", "is about startups", &["the founders pitched to investors", "the app reached a million users"]),
                    ],
                ),
            ],
        }
    }

    pub fn group(&self, name: &str) -> Result<&AttributeGroup> {
        self.groups
            .iter()
            .find(|g| g.name == name)
            .ok_or_else(|| Error::Config(format!("unknown attribute group {name:?}")))
    }

    /// Every tag in the world, in group order.
    pub fn vocab(&self) -> Vec<String> {
        self.groups
            .iter()
            .flat_map(|g| g.tags.iter().map(|t| t.tag.clone()))
            .collect()
    }

    pub fn tag(&self, tag: &str) -> Option<&TagSpec> {
        self.groups.iter().flat_map(|g| g.tags.iter()).find(|t| t.tag == tag)
    }

    pub fn reference(&self, tag: &str) -> Result<Predicate> {
        let t = self
            .tag(tag)
            .ok_or_else(|| Error::TagOutsideVocab(tag.to_string()))?;
        Predicate::with_rule(t.phrase.clone(), Rule::tag(tag))
    }

    /// One single-tag predicate for every world tag present in the corpus,
    /// in world order. This is the base of the oracle vocabulary.
    pub fn base_predicates(&self, corpus: &Corpus) -> Result<Vec<Predicate>> {
        let present: std::collections::HashSet<&str> = corpus
            .samples()
            .iter()
            .flat_map(|s| s.tags.iter().flatten().map(|t| t.as_str()))
            .collect();
        self.vocab()
            .iter()
            .filter(|t| present.contains(t.as_str()))
            .map(|t| self.reference(t))
            .collect()
    }

    fn text<R: Rng>(&self, tags: &[&TagSpec], serial: usize, rng: &mut R) -> String {
        let parts: Vec<&str> = tags
            .iter()
            .map(|t| t.fragments[rng.random_range(0..t.fragments.len())].as_str())
            .collect();
        let mut s = parts.join(" ");
        if let Some(first) = s.get(0..1) {
            s = first.to_uppercase() + &s[1..];
        }
        format!("{s}. [{serial}]")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeseriesMode {
    Topic,
    Lang,
    Locat,
    All,
}

impl std::str::FromStr for TimeseriesMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "topic" => Ok(TimeseriesMode::Topic),
            "lang" => Ok(TimeseriesMode::Lang),
            "locat" => Ok(TimeseriesMode::Locat),
            "all" => Ok(TimeseriesMode::All),
            other => Err(Error::Config(format!(
                "invalid time-series mode {other:?}; expected topic, lang, locat or all"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkInstance {
    pub kind: CorpusKind,
    pub corpus: Corpus,
    pub embeddings: EmbeddingMatrix,
    pub references: Vec<Predicate>,
    /// Single-tag predicates for every tag in the corpus.
    pub base: Vec<Predicate>,
    /// Generating weights for time series, row-major T×K.
    pub weights: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ReferenceRecord {
    predicate: String,
    rule: Rule,
}

impl BenchmarkInstance {
    /// Writes corpus.jsonl, embeddings.jsonl, references.jsonl and the
    /// single-tag vocabulary.jsonl.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.corpus.write(&dir.join("corpus.jsonl"))?;
        self.embeddings.write(&dir.join("embeddings.jsonl"), &self.corpus)?;
        write_references(&dir.join("references.jsonl"), &self.references)?;
        write_references(&dir.join("vocabulary.jsonl"), &self.base)
    }
}

pub fn write_references(path: &Path, references: &[Predicate]) -> Result<()> {
    let mut out = Vec::new();
    for p in references {
        let rule = p.rule.clone().ok_or_else(|| Error::RuleRequired(p.text.clone()))?;
        serde_json::to_writer(
            &mut out,
            &ReferenceRecord {
                predicate: p.text.clone(),
                rule,
            },
        )?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn load_references(path: &Path) -> Result<Vec<Predicate>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ReferenceRecord = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(Predicate::with_rule(rec.predicate, rec.rule)?);
    }
    Ok(out)
}

fn finish(
    world: &SyntheticWorld,
    kind: CorpusKind,
    samples: Vec<Sample>,
    references: Vec<Predicate>,
    weights: Option<Vec<f64>>,
    noise_scale: f64,
    seed: u64,
) -> Result<BenchmarkInstance> {
    let corpus = Corpus::new(samples, kind)?;
    let embeddings = synth_embed(&corpus, &world.vocab(), noise_scale, seed)?;
    let base = world.base_predicates(&corpus)?;
    Ok(BenchmarkInstance {
        kind,
        corpus,
        embeddings,
        references,
        base,
        weights,
    })
}

/// `n` samples, each holding one of the first `k` tags of `group_name`,
/// drawn uniformly.
pub fn gen_clustering(
    world: &SyntheticWorld,
    group_name: &str,
    k: usize,
    n: usize,
    noise_scale: f64,
    seed: u64,
) -> Result<BenchmarkInstance> {
    let group = world.group(group_name)?;
    if k == 0 || k > group.tags.len() {
        return Err(Error::Config(format!(
            "K = {k} but group {group_name:?} has {} tags",
            group.tags.len()
        )));
    }
    if n == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = rng::stream(seed, Stream::Bench);
    let samples = (0..n)
        .map(|i| {
            let t = &group.tags[rng.random_range(0..k)];
            let text = world.text(&[t], i, &mut rng);
            Sample::new(format!("c-{i}"), text).with_tags([t.tag.as_str()])
        })
        .collect();
    let references = group.tags[..k]
        .iter()
        .map(|t| world.reference(&t.tag))
        .collect::<Result<_>>()?;
    finish(world, CorpusKind::Clustering, samples, references, None, noise_scale, seed)
}

/// A two-level instance: each sample has a coarse topic and one of that
/// topic's two subtopics. References are the subtopics.
pub fn gen_hierarchy(n: usize, noise_scale: f64, seed: u64) -> Result<BenchmarkInstance> {
    let world = SyntheticWorld::hierarchy();
    let coarse = world.group("topic")?;
    let fine = world.group("subtopic")?;
    let children = hierarchy_children();
    let mut rng = rng::stream(seed, Stream::Bench);
    let samples = (0..n)
        .map(|i| {
            let (parent, kids) = &children[rng.random_range(0..children.len())];
            let child = kids[rng.random_range(0..kids.len())];
            let c = coarse.tags.iter().find(|t| t.tag == *parent).expect("known tag");
            let f = fine.tags.iter().find(|t| t.tag == child).expect("known tag");
            let text = world.text(&[c, f], i, &mut rng);
            Sample::new(format!("h-{i}"), text).with_tags([*parent, child])
        })
        .collect();
    let references = children
        .iter()
        .flat_map(|(_, kids)| kids.iter())
        .map(|t| world.reference(t))
        .collect::<Result<_>>()?;
    finish(&world, CorpusKind::Clustering, samples, references, None, noise_scale, seed)
}

/// Coarse topic to subtopics in the hierarchy world.
pub fn hierarchy_children() -> Vec<(&'static str, [&'static str; 2])> {
    vec![
        ("business", ["markets", "startups"]),
        ("politics", ["diplomacy", "elections"]),
        ("science", ["biology", "physics"]),
        ("sports", ["soccer", "tennis"]),
    ]
}

/// Every (topic, location, language) combination in world order.
fn triples(world: &SyntheticWorld) -> Result<Vec<[&TagSpec; 3]>> {
    let (a, b, c) = (world.group("topic")?, world.group("location")?, world.group("language")?);
    let mut out = Vec::new();
    for x in &a.tags {
        for y in &b.tags {
            for z in &c.tags {
                out.push([x, y, z]);
            }
        }
    }
    Ok(out)
}

/// Each class is a distinct (topic, location, language) triple; samples
/// draw a class uniformly. References are the per-tag predicates.
pub fn gen_classification(
    world: &SyntheticWorld,
    classes: usize,
    n: usize,
    noise_scale: f64,
    seed: u64,
) -> Result<BenchmarkInstance> {
    let all = triples(world)?;
    if classes == 0 || classes > all.len() {
        return Err(Error::Config(format!(
            "{classes} classes requested but only {} combinations exist",
            all.len()
        )));
    }
    if n < classes {
        return Err(Error::Config(format!("{n} samples cannot fill {classes} classes")));
    }
    let mut rng = rng::stream(seed, Stream::Bench);
    let chosen: Vec<[&TagSpec; 3]> = rand::seq::index::sample(&mut rng, all.len(), classes)
        .into_iter()
        .map(|i| all[i])
        .collect();
    let labels = loop {
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let mut seen = vec![false; classes];
        labels.iter().for_each(|&l| seen[l] = true);
        if seen.iter().all(|&s| s) {
            break labels;
        }
    };
    let samples = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let tags = chosen[label];
            let text = world.text(&tags, i, &mut rng);
            let mut s = Sample::new(format!("l-{i}"), text).with_tags(tags.iter().map(|t| t.tag.as_str()));
            s.class_label = Some(label);
            s
        })
        .collect();
    let references = timeseries_tags(world, TimeseriesMode::All, None)?
        .iter()
        .map(|t| world.reference(t))
        .collect::<Result<_>>()?;
    finish(world, CorpusKind::Classification, samples, references, None, noise_scale, seed)
}

/// w_{k,t} = sin(2π(t/T + k/K)).
pub fn timeseries_weight(k: usize, t: usize, num_k: usize, steps: usize) -> f64 {
    (2.0 * std::f64::consts::PI * (t as f64 / steps as f64 + k as f64 / num_k as f64)).sin()
}

/// Frequency of reference `k` among the samples of a time-series instance
/// that fall in the quarter-period windows centred on the maximum and on the
/// minimum of w_k. Returns `(at_peak, at_trough)`.
pub fn peak_trough_frequency(instance: &BenchmarkInstance, k: usize) -> Result<(f64, f64)> {
    if instance.kind != CorpusKind::Timeseries {
        return Err(Error::Config("peak/trough check needs a time-series instance".into()));
    }
    let num_k = instance.references.len();
    let reference = instance.references.get(k).ok_or(Error::DimensionMismatch {
        expected: num_k,
        found: k,
    })?;
    let rule = reference.rule.as_ref().ok_or_else(|| Error::RuleRequired(reference.text.clone()))?;
    let steps = instance.corpus.len() as f64;
    // sin peaks where t/T + k/K = 1/4 (mod 1).
    let peak = (0.25 - k as f64 / num_k as f64).rem_euclid(1.0) * steps;
    let trough = (peak + steps / 2.0).rem_euclid(steps);
    let window = |center: f64| {
        let (mut hits, mut total) = (0usize, 0usize);
        for s in instance.corpus.samples() {
            let t = s.time_index.unwrap_or(0) as f64;
            let d = (t - center).rem_euclid(steps);
            if d.min(steps - d) <= steps / 8.0 {
                total += 1;
                hits += usize::from(rule.eval_tags(s.tags.as_deref().unwrap_or(&[])));
            }
        }
        hits as f64 / total.max(1) as f64
    };
    Ok((window(peak), window(trough)))
}

/// The active tags of a time-series mode, sorted by attribute then
/// alphabetically. `per_group` keeps only the first tags of each group.
pub fn timeseries_tags(world: &SyntheticWorld, mode: TimeseriesMode, per_group: Option<usize>) -> Result<Vec<String>> {
    let names: &[&str] = match mode {
        TimeseriesMode::Topic => &["topic"],
        TimeseriesMode::Locat => &["location"],
        TimeseriesMode::Lang => &["language"],
        TimeseriesMode::All => &["topic", "location", "language"],
    };
    let mut tags = Vec::new();
    for name in names {
        let g = world.group(name)?;
        let take = per_group.unwrap_or(g.tags.len()).min(g.tags.len());
        if take == 0 {
            return Err(Error::Config("per_group must be at least 1".into()));
        }
        tags.extend(g.tags[..take].iter().map(|t| t.tag.clone()));
    }
    Ok(tags)
}

/// Samples x_1..x_T from the time-series model with sinusoidal weights over
/// a pool of samples holding one uniformly drawn tag per attribute group.
pub fn gen_timeseries(
    world: &SyntheticWorld,
    steps: usize,
    mode: TimeseriesMode,
    per_group: Option<usize>,
    noise_scale: f64,
    seed: u64,
) -> Result<BenchmarkInstance> {
    if steps == 0 {
        return Err(Error::EmptyCorpus);
    }
    let active = timeseries_tags(world, mode, per_group)?;
    let k = active.len();
    let mut rng = rng::stream(seed, Stream::Bench);
    let pool: Vec<Vec<&TagSpec>> = (0..POOL_SIZE)
        .map(|_| {
            world
                .groups
                .iter()
                .map(|g| &g.tags[rng.random_range(0..g.tags.len())])
                .collect()
        })
        .collect();
    let pool_features: Vec<Vec<f64>> = pool
        .iter()
        .map(|tags| {
            active
                .iter()
                .map(|a| if tags.iter().any(|t| &t.tag == a) { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let mut weights = Vec::with_capacity(steps * k);
    let mut samples = Vec::with_capacity(steps);
    for t in 1..=steps {
        let w: Vec<f64> = (0..k).map(|j| timeseries_weight(j, t, k, steps)).collect();
        let logits: Vec<f64> = pool_features
            .iter()
            .map(|f| f.iter().zip(&w).map(|(a, b)| a * b).sum())
            .collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let probs: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let dist = WeightedIndex::new(&probs).map_err(|e| Error::Config(e.to_string()))?;
        let pick = dist.sample(&mut rng);
        let tags = &pool[pick];
        let text = world.text(tags, t, &mut rng);
        let mut s = Sample::new(format!("ts-{t}"), text).with_tags(tags.iter().map(|x| x.tag.as_str()));
        s.time_index = Some(t);
        samples.push(s);
        weights.extend(w);
    }
    let references = active.iter().map(|t| world.reference(t)).collect::<Result<_>>()?;
    finish(world, CorpusKind::Timeseries, samples, references, Some(weights), noise_scale, seed)
}
