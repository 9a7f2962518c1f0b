//! Entity merging: cluster semantically close surface forms and remap
//! triples onto cluster representatives. The default merger embeds names
//! with the text adapter and single-links pairs above a cosine threshold;
//! an LLM-guided merger slot exists behind the same trait.

use super::{dedup_triples, Triple};
use crate::adapters::TextEncoder;
use crate::error::{Error, Result};
use crate::kg::extract::singularize;
use std::collections::BTreeMap;

pub trait EntityMerger {
    /// Returns the total mapping surface form -> representative.
    fn merge(&self, entities: &[String], frequency: &BTreeMap<String, u64>)
        -> Result<BTreeMap<String, String>>;
}

/// Embedding + single-linkage clustering merger (hermetic default).
pub struct EmbeddingMerger<'a> {
    pub text: &'a dyn TextEncoder,
    pub threshold: f64,
}

impl EntityMerger for EmbeddingMerger<'_> {
    fn merge(
        &self,
        entities: &[String],
        frequency: &BTreeMap<String, u64>,
    ) -> Result<BTreeMap<String, String>> {
        if entities.is_empty() {
            return Ok(BTreeMap::new());
        }
        let normalized: Vec<String> = entities
            .iter()
            .map(|e| singularize(&e.to_lowercase()))
            .collect();
        let emb = self.text.embed(&normalized)?;
        let n = entities.len();

        // union-find over pairs with cosine >= threshold (rows are unit norm)
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, i: usize) -> usize {
            if parent[i] != i {
                let root = find(parent, parent[i]);
                parent[i] = root;
            }
            parent[i]
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if normalized[i] == normalized[j] {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    parent[ri.max(rj)] = ri.min(rj);
                    continue;
                }
                let cos: f64 = emb.row(i).dot(&emb.row(j));
                if cos >= self.threshold {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }

        let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            clusters.entry(r).or_default().push(i);
        }

        let mut mapping = BTreeMap::new();
        for members in clusters.values() {
            // representative: highest corpus frequency, ties lexicographic
            let rep = members
                .iter()
                .map(|&i| &entities[i])
                .max_by(|a, b| {
                    let fa = frequency.get(*a).copied().unwrap_or(0);
                    let fb = frequency.get(*b).copied().unwrap_or(0);
                    fa.cmp(&fb).then_with(|| b.cmp(a))
                })
                .expect("cluster non-empty")
                .clone();
            let rep = singularize(&rep.to_lowercase());
            for &i in members {
                mapping.insert(entities[i].clone(), rep.clone());
            }
        }
        Ok(mapping)
    }
}

/// LLM-guided merger slot: takes an instruction file, requires an external
/// assistant, and therefore reports unavailable in this build.
pub struct LlmMerger {
    pub instruction_path: String,
    pub endpoint: String,
}

impl EntityMerger for LlmMerger {
    fn merge(
        &self,
        _entities: &[String],
        _frequency: &BTreeMap<String, u64>,
    ) -> Result<BTreeMap<String, String>> {
        Err(Error::BackendUnavailable(format!(
            "LLM merger (instructions {}) needs endpoint {}; use the embedding merger",
            self.instruction_path, self.endpoint
        )))
    }
}

/// Remap all triples through the merger's entity mapping and deduplicate,
/// summing frequencies. Returns the merged triples and the mapping.
pub fn merge_entities(
    triples: &[Triple],
    merger: &dyn EntityMerger,
) -> Result<(Vec<Triple>, BTreeMap<String, String>)> {
    if triples.is_empty() {
        return Err(Error::Input("cannot merge an empty triple set".into()));
    }
    let mut frequency: BTreeMap<String, u64> = BTreeMap::new();
    for t in triples {
        *frequency.entry(t.head.clone()).or_insert(0) += t.frequency;
        *frequency.entry(t.tail.clone()).or_insert(0) += t.frequency;
    }
    let entities: Vec<String> = frequency.keys().cloned().collect();
    let mapping = merger.merge(&entities, &frequency)?;
    let remap = |name: &str| -> String {
        mapping
            .get(name)
            .cloned()
            .unwrap_or_else(|| name.to_string())
    };
    let remapped: Vec<Triple> = triples
        .iter()
        .map(|t| Triple {
            head: remap(&t.head),
            relation: t.relation.clone(),
            tail: remap(&t.tail),
            frequency: t.frequency,
        })
        .collect();
    Ok((dedup_triples(remapped), mapping))
}
