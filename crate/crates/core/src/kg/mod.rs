//! Knowledge graph built from caption corpora: triple extraction, entity
//! merging, frequency filtering and the index-matrix encoding consumed by
//! the graph reasoner.

mod extract;
mod merge;

pub use extract::{extract_triples, LlmExtractor, PatternTable, RuleBasedExtractor, TripleExtractor};
pub use merge::{merge_entities, EmbeddingMerger, EntityMerger, LlmMerger};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const GRAPH_SCHEMA_VERSION: u32 = 1;

/// A directed labeled edge with its corpus occurrence count.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub frequency: u64,
}

impl Triple {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Triple {
        Triple {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
            frequency: 1,
        }
    }

    pub fn key(&self) -> (String, String, String) {
        (self.head.clone(), self.relation.clone(), self.tail.clone())
    }
}

/// Merge duplicate (head, relation, tail) triples, summing frequencies.
pub fn dedup_triples(triples: Vec<Triple>) -> Vec<Triple> {
    let mut map: BTreeMap<(String, String, String), u64> = BTreeMap::new();
    for t in triples {
        *map.entry(t.key()).or_insert(0) += t.frequency;
    }
    map.into_iter()
        .map(|((head, relation, tail), frequency)| Triple {
            head,
            relation,
            tail,
            frequency,
        })
        .collect()
}

/// Drop triples with frequency < k, then drop entities/relations that are no
/// longer referenced (vocabularies are rebuilt from the survivors).
pub fn filter_by_frequency(triples: &[Triple], k: u64) -> Result<Vec<Triple>> {
    let kept: Vec<Triple> = triples.iter().filter(|t| t.frequency >= k).cloned().collect();
    if kept.is_empty() {
        return Err(Error::EmptyGraph);
    }
    Ok(kept)
}

/// Vocabulary entry: a name and its total corpus frequency.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub name: String,
    pub frequency: u64,
}

/// The normalized change graph: ordered entity/relation vocabularies, the
/// deduplicated triples, and the derived connectivity/type index matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeKG {
    pub version: u32,
    pub entities: Vec<VocabEntry>,
    pub relations: Vec<VocabEntry>,
    pub triples: Vec<Triple>,
    /// `a_conn[0][j]` = head index, `a_conn[1][j]` = tail index of edge j.
    #[serde(skip)]
    pub a_conn: [Vec<usize>; 2],
    /// Relation index of edge j.
    #[serde(skip)]
    pub a_type: Vec<usize>,
}

impl ChangeKG {
    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn n_edges(&self) -> usize {
        self.a_type.len()
    }

    pub fn entity_names(&self) -> Vec<String> {
        self.entities.iter().map(|e| e.name.clone()).collect()
    }

    /// Decode the index matrices back into the triple set (frequencies come
    /// from the stored triples, which the matrices are derived from).
    pub fn decode(&self) -> Vec<Triple> {
        (0..self.n_edges())
            .map(|j| {
                let head = self.entities[self.a_conn[0][j]].name.clone();
                let tail = self.entities[self.a_conn[1][j]].name.clone();
                let relation = self.relations[self.a_type[j]].name.clone();
                let frequency = self
                    .triples
                    .iter()
                    .find(|t| t.head == head && t.relation == relation && t.tail == tail)
                    .map(|t| t.frequency)
                    .unwrap_or(1);
                Triple {
                    head,
                    relation,
                    tail,
                    frequency,
                }
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Matrices are recomputed from the triples, not trusted from the file.
    pub fn from_json(s: &str) -> Result<ChangeKG> {
        let parsed: ChangeKG = serde_json::from_str(s)?;
        if parsed.version != GRAPH_SCHEMA_VERSION {
            return Err(Error::Input(format!(
                "graph schema version {} unsupported (expect {GRAPH_SCHEMA_VERSION})",
                parsed.version
            )));
        }
        encode_graph(&parsed.triples)
    }
}

fn vocab_by_frequency<'a>(names: impl Iterator<Item = (&'a str, u64)>) -> Vec<VocabEntry> {
    let mut freq: BTreeMap<&str, u64> = BTreeMap::new();
    for (name, f) in names {
        *freq.entry(name).or_insert(0) += f;
    }
    let mut entries: Vec<VocabEntry> = freq
        .into_iter()
        .map(|(name, frequency)| VocabEntry {
            name: name.to_string(),
            frequency,
        })
        .collect();
    entries.sort_by(|a, b| b.frequency.cmp(&a.frequency).then_with(|| a.name.cmp(&b.name)));
    entries
}

/// Build the ordered vocabularies and index matrices for a deduplicated
/// triple set. Entity/relation order is descending frequency with
/// lexicographic tie-breaks; edges are sorted by (head, relation, tail)
/// index so identical corpora produce identical matrices.
pub fn encode_graph(triples: &[Triple]) -> Result<ChangeKG> {
    if triples.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let triples = dedup_triples(triples.to_vec());
    let entities = vocab_by_frequency(
        triples
            .iter()
            .flat_map(|t| [(t.head.as_str(), t.frequency), (t.tail.as_str(), t.frequency)]),
    );
    let relations = vocab_by_frequency(triples.iter().map(|t| (t.relation.as_str(), t.frequency)));
    let ent_idx: BTreeMap<&str, usize> = entities
        .iter()
        .enumerate()
        .map(|(i, e)| (e.name.as_str(), i))
        .collect();
    let rel_idx: BTreeMap<&str, usize> = relations
        .iter()
        .enumerate()
        .map(|(i, r)| (r.name.as_str(), i))
        .collect();

    let mut edges: Vec<(usize, usize, usize)> = triples
        .iter()
        .map(|t| {
            (
                ent_idx[t.head.as_str()],
                rel_idx[t.relation.as_str()],
                ent_idx[t.tail.as_str()],
            )
        })
        .collect();
    edges.sort_unstable();
    edges.dedup();

    let a_conn = [
        edges.iter().map(|e| e.0).collect(),
        edges.iter().map(|e| e.2).collect(),
    ];
    let a_type = edges.iter().map(|e| e.1).collect();
    Ok(ChangeKG {
        version: GRAPH_SCHEMA_VERSION,
        entities,
        relations,
        triples,
        a_conn,
        a_type,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_graph_encoding() {
        let kg = encode_graph(&[Triple::new("a", "r", "b")]).unwrap();
        assert_eq!(kg.a_conn[0], vec![0]);
        assert_eq!(kg.a_conn[1], vec![1]);
        assert_eq!(kg.a_type, vec![0]);
        assert_eq!(kg.entities[0].name, "a"); // tie broken lexicographically
    }

    #[test]
    fn shared_head_and_round_trip() {
        let triples = vec![
            Triple::new("building", "appear-on", "bareland"),
            Triple::new("building", "built-on", "road"),
        ];
        let kg = encode_graph(&triples).unwrap();
        // "building" appears in 2 triples -> highest frequency -> index 0
        assert_eq!(kg.entities[0].name, "building");
        assert_eq!(kg.a_conn[0], vec![0, 0]);
        let decoded = kg.decode();
        let keys: std::collections::BTreeSet<_> = decoded.iter().map(|t| t.key()).collect();
        let orig: std::collections::BTreeSet<_> = triples.iter().map(|t| t.key()).collect();
        assert_eq!(keys, orig);
    }

    #[test]
    fn frequency_filter_boundary() {
        let mut triples = vec![
            Triple::new("a", "r", "b"),
            Triple::new("c", "r", "d"),
            Triple::new("e", "r", "f"),
        ];
        triples[0].frequency = 49;
        triples[1].frequency = 50;
        triples[2].frequency = 51;
        let kept = filter_by_frequency(&triples, 50).unwrap();
        assert_eq!(kept.len(), 2, "frequency < k is removed, = k survives");
        assert_eq!(filter_by_frequency(&triples, 0).unwrap().len(), 3);
        assert!(matches!(
            filter_by_frequency(&triples, 1000),
            Err(Error::EmptyGraph)
        ));
    }

    #[test]
    fn filtered_entities_absent_from_vocab() {
        let mut triples = vec![
            Triple::new("building", "appear-on", "bareland"),
            Triple::new("lake", "appear-on", "desert"),
        ];
        triples[0].frequency = 10;
        triples[1].frequency = 1;
        let kept = filter_by_frequency(&triples, 5).unwrap();
        let kg = encode_graph(&kept).unwrap();
        let names = kg.entity_names();
        assert!(!names.contains(&"lake".to_string()));
        assert!(!names.contains(&"desert".to_string()));
        // oracle: rebuild vocab from scratch and compare
        let mut expected: Vec<&str> = vec!["bareland", "building"];
        expected.sort_unstable();
        let mut got: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        got.sort_unstable();
        assert_eq!(got, expected);
    }

    #[test]
    fn json_round_trip_recomputes_matrices() {
        let triples = vec![
            Triple::new("building", "appear-on", "bareland"),
            Triple::new("road", "built-along", "river"),
        ];
        let kg = encode_graph(&triples).unwrap();
        let json = kg.to_json().unwrap();
        let back = ChangeKG::from_json(&json).unwrap();
        assert_eq!(kg, back);
    }
}
