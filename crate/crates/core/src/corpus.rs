//! Text corpora, their embeddings, and the deterministic synthetic embedder.
//!
//! Corpus files are line-delimited JSON, one sample per line:
//! `{"id": str, "text": str, "tags": [str]?, "t": int?, "label": int?}`.
//! Embedding files are line-delimited JSON: `{"id": str, "vec": [float, ...]}`.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusKind {
    Clustering,
    Timeseries,
    Classification,
}

impl std::str::FromStr for CorpusKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clustering" => Ok(CorpusKind::Clustering),
            "timeseries" | "time-series" | "time_series" => Ok(CorpusKind::Timeseries),
            "classification" => Ok(CorpusKind::Classification),
            other => Err(Error::Config(format!("unknown corpus kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for CorpusKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CorpusKind::Clustering => "clustering",
            CorpusKind::Timeseries => "timeseries",
            CorpusKind::Classification => "classification",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<Vec<String>>,
    #[serde(rename = "t", default, skip_serializing_if = "Option::is_none")]
    pub time_index: Option<usize>,
    #[serde(rename = "label", default, skip_serializing_if = "Option::is_none")]
    pub class_label: Option<usize>,
}

impl Sample {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Sample {
            id: id.into(),
            text: text.into(),
            tags: None,
            time_index: None,
            class_label: None,
        }
    }

    pub fn with_tags<I, S>(mut self, tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.tags = Some(tags.into_iter().map(Into::into).collect());
        self
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags
            .as_ref()
            .is_some_and(|tags| tags.iter().any(|t| t == tag))
    }
}

/// An ordered, validated collection of samples. The uniform distribution
/// over `samples` is the base measure every model reweights.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    samples: Vec<Sample>,
    kind: CorpusKind,
}

impl Corpus {
    pub fn new(samples: Vec<Sample>, kind: CorpusKind) -> Result<Self> {
        validate(&samples, kind)?;
        Ok(Corpus { samples, kind })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn kind(&self) -> CorpusKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.samples.iter().map(|s| s.id.as_str())
    }

    /// Labels of a classification corpus, in sample order.
    pub fn labels(&self) -> Option<Vec<usize>> {
        self.samples.iter().map(|s| s.class_label).collect()
    }

    /// Number of classes, taken as one past the largest label.
    pub fn class_count(&self) -> Option<usize> {
        self.samples
            .iter()
            .map(|s| s.class_label)
            .collect::<Option<Vec<_>>>()
            .map(|l| l.into_iter().max().map_or(0, |m| m + 1))
    }

    /// Indices of samples in ascending time order.
    pub fn time_order(&self) -> Option<Vec<usize>> {
        let mut order: Vec<(usize, usize)> = self
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| s.time_index.map(|t| (t, i)))
            .collect::<Option<_>>()?;
        order.sort_unstable();
        Some(order.into_iter().map(|(_, i)| i).collect())
    }

    /// A new corpus holding the given samples (by index) in the given order.
    /// Time indices are rewritten to `1..=len` when the corpus is a time series.
    pub fn select(&self, indices: &[usize]) -> Result<Corpus> {
        let mut samples: Vec<Sample> = indices.iter().map(|&i| self.samples[i].clone()).collect();
        if self.kind == CorpusKind::Timeseries {
            for (t, s) in samples.iter_mut().enumerate() {
                s.time_index = Some(t + 1);
            }
        }
        Corpus::new(samples, self.kind)
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s).expect("sample serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.serialize()).map_err(|e| Error::io(path, e))
    }

    pub fn parse(text: &str, kind: CorpusKind) -> Result<Corpus> {
        let mut samples = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let sample: Sample =
                serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
                    line: lineno + 1,
                    message: e.to_string(),
                })?;
            samples.push(sample);
        }
        Corpus::new(samples, kind)
    }
}

fn validate(samples: &[Sample], kind: CorpusKind) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut seen = HashSet::with_capacity(samples.len());
    for s in samples {
        if !seen.insert(s.id.as_str()) {
            return Err(Error::DuplicateId(s.id.clone()));
        }
    }
    match kind {
        CorpusKind::Clustering => {}
        CorpusKind::Timeseries => {
            let mut present = vec![false; samples.len()];
            for s in samples {
                let t = s.time_index.ok_or_else(|| Error::MissingField {
                    id: s.id.clone(),
                    field: "t",
                })?;
                if t == 0 || t > samples.len() {
                    return Err(Error::NonContiguousTime(format!(
                        "sample {:?} has t={t}, expected 1..={}",
                        s.id,
                        samples.len()
                    )));
                }
                if present[t - 1] {
                    return Err(Error::NonContiguousTime(format!("t={t} appears twice")));
                }
                present[t - 1] = true;
            }
        }
        CorpusKind::Classification => {
            for s in samples {
                if s.class_label.is_none() {
                    return Err(Error::MissingField {
                        id: s.id.clone(),
                        field: "label",
                    });
                }
            }
        }
    }
    Ok(())
}

pub fn load_corpus(path: &Path, kind: CorpusKind) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Corpus::parse(&text, kind)
}

/// Unit-normalized embeddings, one row per corpus sample in corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    /// Builds a matrix from raw rows, renormalizing each to unit length.
    pub fn from_rows(rows: Vec<Vec<f64>>, ids: &[&str]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(Error::EmptyInput("embeddings"))?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (row, id) in rows.into_iter().zip(ids) {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("embedding"));
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::ZeroNorm(id.to_string()));
            }
            data.extend(row.iter().map(|v| v / norm));
        }
        Ok(EmbeddingMatrix { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn select(&self, indices: &[usize]) -> EmbeddingMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        EmbeddingMatrix {
            dim: self.dim,
            data,
        }
    }

    pub fn write(&self, path: &Path, corpus: &Corpus) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (row, id) in self.rows().zip(corpus.ids()) {
            let rec = EmbeddingRecord {
                id: id.to_string(),
                vec: row.to_vec(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Serialize, Deserialize)]
struct EmbeddingRecord {
    id: String,
    vec: Vec<f64>,
}

pub fn load_embeddings(path: &Path, corpus: &Corpus) -> Result<EmbeddingMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut by_id: HashMap<String, Vec<f64>> = HashMap::new();
    let mut dim: Option<usize> = None;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                line: lineno + 1,
                message: e.to_string(),
            })?;
        match dim {
            None => dim = Some(rec.vec.len()),
            Some(d) if d != rec.vec.len() => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: rec.vec.len(),
                })
            }
            _ => {}
        }
        by_id.insert(rec.id, rec.vec);
    }
    let mut rows = Vec::with_capacity(corpus.len());
    for id in corpus.ids() {
        rows.push(
            by_id
                .remove(id)
                .ok_or_else(|| Error::MissingEmbedding(id.to_string()))?,
        );
    }
    let ids: Vec<&str> = corpus.ids().collect();
    EmbeddingMatrix::from_rows(rows, &ids)
}

/// Deterministic embedding oracle: the normalized multi-hot tag vector over
/// `vocab` plus seeded Gaussian noise of scale `noise_scale`.
pub fn synth_embed(
    corpus: &Corpus,
    vocab: &[String],
    noise_scale: f64,
    seed: u64,
) -> Result<EmbeddingMatrix> {
    if vocab.is_empty() {
        return Err(Error::EmptyInput("vocabulary"));
    }
    let index: HashMap<&str, usize> = vocab
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    let mut noise = rng::stream(seed, Stream::Noise);
    let mut rows = Vec::with_capacity(corpus.len());
    for s in corpus.samples() {
        let mut row = vec![0.0; vocab.len()];
        for tag in s.tags.iter().flatten() {
            let j = *index
                .get(tag.as_str())
                .ok_or_else(|| Error::TagOutsideVocab(tag.clone()))?;
            row[j] = 1.0;
        }
        if noise_scale > 0.0 {
            for v in row.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut noise);
                *v += noise_scale * z;
            }
        }
        rows.push(row);
    }
    let ids: Vec<&str> = corpus.ids().collect();
    EmbeddingMatrix::from_rows(rows, &ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_in_order() {
        let f = write_tmp(
            "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"b\",\"text\":\"y\"}\n{\"id\":\"c\",\"text\":\"z\"}\n",
        );
        let c = load_corpus(f.path(), CorpusKind::Clustering).unwrap();
        assert_eq!(c.ids().collect::<Vec<_>>(), ["a", "b", "c"]);
    }

    #[test]
    fn rejects_gap_in_time_index() {
        let f = write_tmp(
            "{\"id\":\"a\",\"text\":\"x\",\"t\":1}\n{\"id\":\"b\",\"text\":\"y\",\"t\":2}\n{\"id\":\"c\",\"text\":\"z\",\"t\":4}\n",
        );
        let err = load_corpus(f.path(), CorpusKind::Timeseries).unwrap_err();
        assert!(err.to_string().contains("non-contiguous time_index"), "{err}");
    }

    #[test]
    fn missing_label_names_the_sample() {
        let f = write_tmp(
            "{\"id\":\"a\",\"text\":\"x\",\"label\":0}\n{\"id\":\"oops\",\"text\":\"y\"}\n",
        );
        let err = load_corpus(f.path(), CorpusKind::Classification).unwrap_err();
        assert!(err.to_string().contains("oops"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_tmp("{\"id\":\"a\",\"text\":\"x\"}\nnot json\n");
        match load_corpus(f.path(), CorpusKind::Clustering).unwrap_err() {
            Error::MalformedRecord { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let f = write_tmp("{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}\n");
        assert!(matches!(
            load_corpus(f.path(), CorpusKind::Clustering),
            Err(Error::DuplicateId(_))
        ));
    }

    fn one_sample() -> Corpus {
        Corpus::new(vec![Sample::new("a", "x")], CorpusKind::Clustering).unwrap()
    }

    #[test]
    fn embeddings_are_renormalized() {
        let f = write_tmp("{\"id\":\"a\",\"vec\":[3,4]}\n");
        let e = load_embeddings(f.path(), &one_sample()).unwrap();
        assert!((e.row(0)[0] - 0.6).abs() < 1e-12);
        assert!((e.row(0)[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn zero_embedding_rejected() {
        let f = write_tmp("{\"id\":\"a\",\"vec\":[0,0]}\n");
        let err = load_embeddings(f.path(), &one_sample()).unwrap_err();
        assert!(err.to_string().contains("zero-norm embedding"), "{err}");
    }

    #[test]
    fn embedding_dimension_mismatch() {
        let corpus = Corpus::new(
            vec![Sample::new("a", "x"), Sample::new("b", "y")],
            CorpusKind::Clustering,
        )
        .unwrap();
        let f = write_tmp("{\"id\":\"a\",\"vec\":[1,0,0,0]}\n{\"id\":\"b\",\"vec\":[1,0,0,0,0]}\n");
        let err = load_embeddings(f.path(), &corpus).unwrap_err();
        assert!(err.to_string().contains("dimension mismatch"), "{err}");
    }

    #[test]
    fn missing_embedding_rejected() {
        let f = write_tmp("{\"id\":\"zzz\",\"vec\":[1,0]}\n");
        assert!(matches!(
            load_embeddings(f.path(), &one_sample()),
            Err(Error::MissingEmbedding(_))
        ));
    }

    fn vocab() -> Vec<String> {
        ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn noiseless_synth_embedding() {
        let corpus = Corpus::new(
            vec![
                Sample::new("s0", "x").with_tags(["a"]),
                Sample::new("s1", "y").with_tags(["a", "c"]),
            ],
            CorpusKind::Clustering,
        )
        .unwrap();
        let e = synth_embed(&corpus, &vocab(), 0.0, 3).unwrap();
        assert_eq!(e.row(0), &[1.0, 0.0, 0.0, 0.0]);
        let h = 1.0 / 2f64.sqrt();
        for (got, want) in e.row(1).iter().zip([h, 0.0, h, 0.0]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn synth_embedding_is_deterministic() {
        let corpus = Corpus::new(
            (0..10)
                .map(|i| Sample::new(format!("s{i}"), "x").with_tags([["a", "b", "c"][i % 3]]))
                .collect(),
            CorpusKind::Clustering,
        )
        .unwrap();
        let a = synth_embed(&corpus, &vocab(), 0.3, 11).unwrap();
        let b = synth_embed(&corpus, &vocab(), 0.3, 11).unwrap();
        assert_eq!(a, b);
        for row in a.rows() {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn synth_embed_rejects_unknown_tag() {
        let corpus = Corpus::new(
            vec![Sample::new("s0", "x").with_tags(["zebra"])],
            CorpusKind::Clustering,
        )
        .unwrap();
        assert!(matches!(
            synth_embed(&corpus, &vocab(), 0.0, 0),
            Err(Error::TagOutsideVocab(_))
        ));
    }
}
