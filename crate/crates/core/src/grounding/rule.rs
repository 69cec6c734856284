use std::fmt;

use serde::{Deserialize, Serialize};

/// A boolean expression over attribute tags.
///
/// Serialized externally tagged: `{"tag":"sports"}`, `{"not":{...}}`,
/// `{"and":[...]}`, `{"or":[...]}`. The empty conjunction is always true.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Tag(String),
    Not(Box<Rule>),
    And(Vec<Rule>),
    Or(Vec<Rule>),
}

impl Rule {
    pub fn tag(name: impl Into<String>) -> Rule {
        Rule::Tag(name.into())
    }

    pub fn always() -> Rule {
        Rule::And(Vec::new())
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(rule: Rule) -> Rule {
        Rule::Not(Box::new(rule))
    }

    pub fn eval<F>(&self, has: &F) -> bool
    where
        F: Fn(&str) -> bool,
    {
        match self {
            Rule::Tag(t) => has(t),
            Rule::Not(r) => !r.eval(has),
            Rule::And(rs) => rs.iter().all(|r| r.eval(has)),
            Rule::Or(rs) => rs.iter().any(|r| r.eval(has)),
        }
    }

    pub fn eval_tags(&self, tags: &[String]) -> bool {
        self.eval(&|t: &str| tags.iter().any(|x| x == t))
    }

    /// Tags mentioned anywhere in the rule, in first-appearance order.
    pub fn tags(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_tags(&mut out);
        out
    }

    fn collect_tags<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Rule::Tag(t) => {
                if !out.contains(&t.as_str()) {
                    out.push(t);
                }
            }
            Rule::Not(r) => r.collect_tags(out),
            Rule::And(rs) | Rule::Or(rs) => rs.iter().for_each(|r| r.collect_tags(out)),
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::Tag(t) => write!(f, "{t}"),
            Rule::Not(r) => write!(f, "NOT {r}"),
            Rule::And(rs) if rs.is_empty() => f.write_str("TRUE"),
            Rule::Or(rs) if rs.is_empty() => f.write_str("FALSE"),
            Rule::And(rs) | Rule::Or(rs) => {
                let op = if matches!(self, Rule::And(_)) { " AND " } else { " OR " };
                f.write_str("(")?;
                for (i, r) in rs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(op)?;
                    }
                    write!(f, "{r}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_tag() {
        assert!(Rule::tag("sports").eval_tags(&tags(&["sports", "english"])));
    }

    #[test]
    fn conjunction_with_negation() {
        let r = Rule::And(vec![Rule::tag("sports"), Rule::not(Rule::tag("english"))]);
        assert!(!r.eval_tags(&tags(&["sports", "english"])));
        assert!(r.eval_tags(&tags(&["sports", "french"])));
    }

    #[test]
    fn empty_conjunction_is_true() {
        assert!(Rule::always().eval_tags(&[]));
        assert!(!Rule::Or(vec![]).eval_tags(&tags(&["a"])));
    }

    #[test]
    fn json_shape() {
        let r = Rule::And(vec![Rule::tag("a"), Rule::not(Rule::tag("b"))]);
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(s, r#"{"and":[{"tag":"a"},{"not":{"tag":"b"}}]}"#);
        assert_eq!(serde_json::from_str::<Rule>(&s).unwrap(), r);
        assert_eq!(r.to_string(), "(a AND NOT b)");
    }
}
