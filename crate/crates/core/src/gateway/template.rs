use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub type Bindings = BTreeMap<String, String>;

/// Which prompt a template renders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateName {
    Denotation,
    Discretizer,
    SimilarityJudge,
}

impl TemplateName {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::Denotation => "denotation",
            TemplateName::Discretizer => "discretizer",
            TemplateName::SimilarityJudge => "similarity_judge",
        }
    }
}

/// A prompt body with `{name}` placeholders; `{{` and `}}` are literal braces.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub name: TemplateName,
    pub body: String,
    /// Placeholder that carries an optional user goal; it may be bound to "".
    pub steering_slot: Option<String>,
    pub temperature: f64,
}

enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

impl PromptTemplate {
    pub fn denotation() -> Self {
        PromptTemplate {
            name: TemplateName::Denotation,
            body: DENOTATION.to_string(),
            steering_slot: None,
            temperature: 0.0,
        }
    }

    pub fn discretizer() -> Self {
        PromptTemplate {
            name: TemplateName::Discretizer,
            body: DISCRETIZER.to_string(),
            steering_slot: Some("steering".to_string()),
            temperature: 1.0,
        }
    }

    pub fn similarity_judge() -> Self {
        PromptTemplate {
            name: TemplateName::SimilarityJudge,
            body: SIMILARITY.to_string(),
            steering_slot: None,
            temperature: 0.0,
        }
    }

    fn pieces(&self) -> Result<Vec<Piece<'_>>> {
        let body = self.body.as_str();
        let bytes = body.as_bytes();
        let mut pieces = Vec::new();
        let mut i = 0;
        let mut start = 0;
        while i < bytes.len() {
            match bytes[i] {
                b'{' if bytes.get(i + 1) == Some(&b'{') => {
                    pieces.push(Piece::Text(&body[start..=i]));
                    i += 2;
                    start = i;
                }
                b'}' if bytes.get(i + 1) == Some(&b'}') => {
                    pieces.push(Piece::Text(&body[start..=i]));
                    i += 2;
                    start = i;
                }
                b'{' => {
                    let end = body[i + 1..].find('}').ok_or_else(|| Error::Template {
                        template: self.name.as_str().to_string(),
                        message: format!("unterminated placeholder at byte {i}"),
                    })?;
                    pieces.push(Piece::Text(&body[start..i]));
                    pieces.push(Piece::Slot(&body[i + 1..i + 1 + end]));
                    i += end + 2;
                    start = i;
                }
                _ => i += 1,
            }
        }
        pieces.push(Piece::Text(&body[start..]));
        Ok(pieces)
    }

    pub fn placeholders(&self) -> Result<Vec<String>> {
        let mut out: Vec<String> = Vec::new();
        for p in self.pieces()? {
            if let Piece::Slot(name) = p {
                if !out.iter().any(|n| n == name) {
                    out.push(name.to_string());
                }
            }
        }
        Ok(out)
    }

    /// Renders the body. Fails if any placeholder lacks a binding.
    pub fn render(&self, bindings: &Bindings) -> Result<String> {
        let mut out = String::with_capacity(self.body.len());
        for p in self.pieces()? {
            match p {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(name) => {
                    let value = bindings.get(name).ok_or_else(|| Error::UnboundPlaceholder {
                        template: self.name.as_str().to_string(),
                        name: name.to_string(),
                    })?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}

const DENOTATION: &str = "Check whether a property holds for a text sample.

Property: {predicate}

Text sample:
{sample}

Does the property hold for the text sample? Reply with a single word: yes or no.
Answer:";

const DISCRETIZER: &str = "{steering}Below are text samples, each shown with a score. They are sorted by score from lowest to highest.

{samples}

We want to understand what distinguishes the samples that appear later in the sorted list. Propose {count} predicates that describe what types of samples are more likely to appear later in the sorted list. Each predicate is a short property of a single sample that is either true or false, for example \"discusses sports\".

Write one predicate per line as a numbered list, with no other text.";

const SIMILARITY: &str = "Two predicates describe properties of text samples.

Predicate A: {learned}
Predicate B: {reference}

Are the two predicates similar in meaning, related, or irrelevant? Reply with exactly one word: similar, related, or irrelevant.
Answer:";

#[cfg(test)]
mod tests {
    use super::*;

    fn bind(pairs: &[(&str, &str)]) -> Bindings {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn renders_all_placeholders() {
        let t = PromptTemplate::denotation();
        let s = t
            .render(&bind(&[("predicate", "is about sports"), ("sample", "I love soccer.")]))
            .unwrap();
        assert!(s.contains("Property: is about sports"));
        assert!(s.contains("I love soccer."));
        assert!(!s.contains('{'));
    }

    #[test]
    fn unbound_placeholder_fails() {
        let t = PromptTemplate::discretizer();
        let err = t
            .render(&bind(&[("steering", ""), ("count", "5")]))
            .unwrap_err();
        assert!(matches!(err, Error::UnboundPlaceholder { ref name, .. } if name == "samples"));
    }

    #[test]
    fn literal_braces() {
        let t = PromptTemplate {
            name: TemplateName::Denotation,
            body: "{{x}} = {x}".to_string(),
            steering_slot: None,
            temperature: 0.0,
        };
        assert_eq!(t.render(&bind(&[("x", "1")])).unwrap(), "{x} = 1");
        assert_eq!(t.placeholders().unwrap(), ["x"]);
    }

    #[test]
    fn template_slots() {
        assert_eq!(
            PromptTemplate::discretizer().placeholders().unwrap(),
            ["steering", "samples", "count"]
        );
        assert_eq!(
            PromptTemplate::similarity_judge().placeholders().unwrap(),
            ["learned", "reference"]
        );
    }
}
