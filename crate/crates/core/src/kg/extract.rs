//! Triple extraction from captions. The default extractor applies a pattern
//! table (shipped as a data file) over normalized caption text; an LLM
//! extractor slot exists behind the same trait for full-scale runs.

use super::{dedup_triples, Triple};
use crate::data::tokenize;
use crate::error::{Error, Result};
use regex::Regex;
use serde::Deserialize;

pub trait TripleExtractor {
    fn extract(&self, captions: &[String]) -> Result<Vec<Triple>>;
}

#[derive(Deserialize)]
struct PatternFile {
    version: u32,
    patterns: Vec<PatternSpec>,
}

#[derive(Deserialize)]
struct PatternSpec {
    relation: String,
    regex: String,
    #[serde(default)]
    implicit_tail: Option<String>,
}

struct CompiledPattern {
    relation: String,
    regex: Regex,
    implicit_tail: Option<String>,
}

/// Ordered pattern list; the first matching pattern wins per clause.
pub struct PatternTable {
    patterns: Vec<CompiledPattern>,
}

const BUILTIN_PATTERNS: &str = include_str!("../../data/patterns.json");

impl PatternTable {
    pub fn builtin() -> PatternTable {
        Self::from_json(BUILTIN_PATTERNS).expect("builtin pattern table parses")
    }

    pub fn from_json(text: &str) -> Result<PatternTable> {
        let file: PatternFile = serde_json::from_str(text)?;
        if file.version != 1 {
            return Err(Error::Input(format!(
                "pattern table version {} unsupported",
                file.version
            )));
        }
        let patterns = file
            .patterns
            .into_iter()
            .map(|p| {
                Ok(CompiledPattern {
                    relation: p.relation,
                    regex: Regex::new(&p.regex)
                        .map_err(|e| Error::Input(format!("bad pattern regex: {e}")))?,
                    implicit_tail: p.implicit_tail,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PatternTable { patterns })
    }

    pub fn from_path(path: &std::path::Path) -> Result<PatternTable> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn match_clause(&self, clause: &str) -> Option<(String, String, String)> {
        for p in &self.patterns {
            if let Some(caps) = p.regex.captures(clause) {
                let head = caps.name("head")?.as_str().to_string();
                let tail = caps
                    .name("tail")
                    .map(|m| m.as_str().to_string())
                    .or_else(|| p.implicit_tail.clone())?;
                return Some((head, p.relation.clone(), tail));
            }
        }
        None
    }
}

const DETERMINERS: &[&str] = &[
    "a", "an", "the", "several", "some", "many", "few", "one", "two", "three", "four", "new",
    "small", "large",
];

/// Strip leading determiners/quantifiers and singularize the final noun.
fn normalize_entity(phrase: &str) -> Option<String> {
    let tokens: Vec<String> = tokenize(phrase)
        .into_iter()
        .filter(|t| !DETERMINERS.contains(&t.as_str()))
        .collect();
    if tokens.is_empty() {
        return None;
    }
    let mut out = tokens.join(" ");
    out = singularize(&out);
    Some(out)
}

/// Drops a plural "s" (domain nouns only; "grass"-style doubles are kept).
pub fn singularize(word: &str) -> String {
    if word.ends_with("ss") || word.len() < 3 {
        word.to_string()
    } else if let Some(stem) = word.strip_suffix("ies") {
        format!("{stem}y")
    } else if let Some(stem) = word.strip_suffix('s') {
        stem.to_string()
    } else {
        word.to_string()
    }
}

/// Conjunction-aware clause splitter: the caption is cut on " and " and
/// the shortest prefix of segments that matches a pattern is consumed as
/// one clause (so conjunctions inside a head phrase survive).
fn clauses_and_triples(table: &PatternTable, caption: &str) -> Vec<Triple> {
    let normalized = tokenize(caption).join(" ");
    let segments: Vec<&str> = normalized.split(" and ").collect();
    let mut triples = Vec::new();
    let mut start = 0;
    while start < segments.len() {
        let mut matched = false;
        for end in start..segments.len() {
            let clause = segments[start..=end].join(" and ");
            if let Some((head, relation, tail)) = table.match_clause(&clause) {
                for head_part in head.split(" and ") {
                    let Some(h) = normalize_entity(head_part) else {
                        continue;
                    };
                    let Some(t) = normalize_entity(&tail) else {
                        continue;
                    };
                    triples.push(Triple::new(h, relation.clone(), t));
                }
                start = end + 1;
                matched = true;
                break;
            }
        }
        if !matched {
            start += 1;
        }
    }
    triples
}

/// Hermetic default extractor.
pub struct RuleBasedExtractor {
    table: PatternTable,
}

impl RuleBasedExtractor {
    pub fn new(table: PatternTable) -> RuleBasedExtractor {
        RuleBasedExtractor { table }
    }
}

impl Default for RuleBasedExtractor {
    fn default() -> Self {
        RuleBasedExtractor::new(PatternTable::builtin())
    }
}

impl TripleExtractor for RuleBasedExtractor {
    fn extract(&self, captions: &[String]) -> Result<Vec<Triple>> {
        if captions.is_empty() {
            return Err(Error::Input("caption list must not be empty".into()));
        }
        let mut triples = Vec::new();
        for caption in captions {
            triples.extend(clauses_and_triples(&self.table, caption));
        }
        Ok(dedup_triples(triples))
    }
}

/// LLM-backed extractor slot: needs an external endpoint, so this build
/// reports it unavailable rather than approximating it.
pub struct LlmExtractor {
    pub endpoint: String,
}

impl TripleExtractor for LlmExtractor {
    fn extract(&self, _captions: &[String]) -> Result<Vec<Triple>> {
        Err(Error::BackendUnavailable(format!(
            "LLM extractor endpoint {} is not reachable from this build; use the rule-based extractor",
            self.endpoint
        )))
    }
}

/// Extract and accumulate triples over a corpus with the given extractor.
pub fn extract_triples(
    captions: &[String],
    extractor: &dyn TripleExtractor,
) -> Result<Vec<Triple>> {
    extractor.extract(captions)
}
