//! Dataset types, tokenization and vocabulary handling.

mod loader;
pub mod synth;

pub use loader::{load_dataset, Dataset};
pub use synth::{
    generate, write_dataset, CaptionClause, EditScript, SceneEdit, SceneShape, ShapeClass,
    SynthDataset, CLASS_NAMES, NO_CHANGE_CAPTIONS,
};

use crate::error::{Error, Result};
use image::RgbImage;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// An image pair at two acquisition epochs with its reference captions.
#[derive(Debug, Clone)]
pub struct BiTemporalSample {
    pub id: String,
    pub split: Split,
    pub image_a: RgbImage,
    pub image_b: RgbImage,
    pub captions: Vec<String>,
}

impl BiTemporalSample {
    pub fn validate(&self) -> Result<()> {
        if self.image_a.dimensions() != self.image_b.dimensions() {
            return Err(Error::Dataset(format!(
                "sample {}: image shapes differ: {:?} vs {:?}",
                self.id,
                self.image_a.dimensions(),
                self.image_b.dimensions()
            )));
        }
        if self.captions.is_empty() {
            return Err(Error::Dataset(format!("sample {}: no captions", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Dataset(format!("unknown split {other:?}"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Lowercase, split on whitespace and punctuation; keeps alphanumeric runs.
pub fn tokenize(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in s.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

/// Word-level vocabulary with fixed special ids. Non-special ids are
/// assigned by descending corpus frequency, ties broken lexicographically.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
    pub min_freq: u64,
}

impl Vocabulary {
    pub fn build<'a>(captions: impl IntoIterator<Item = &'a str>, min_freq: u64) -> Vocabulary {
        let mut freq: BTreeMap<String, u64> = BTreeMap::new();
        for caption in captions {
            for tok in tokenize(caption) {
                *freq.entry(tok).or_insert(0) += 1;
            }
        }
        let mut entries: Vec<(String, u64)> =
            freq.into_iter().filter(|(_, f)| *f >= min_freq).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens = vec![
            "<pad>".to_string(),
            "<bos>".to_string(),
            "<eos>".to_string(),
            "<unk>".to_string(),
        ];
        tokens.extend(entries.into_iter().map(|(t, _)| t));
        let mut vocab = Vocabulary {
            tokens,
            index: BTreeMap::new(),
            min_freq,
        };
        vocab.rebuild_index();
        vocab
    }

    pub fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Token ids without specials.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Space-joined tokens, specials skipped.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| i > UNK || i == UNK)
            .filter(|&&i| i != PAD && i != BOS && i != EOS)
            .map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_splits_punctuation_and_lowercases() {
        assert_eq!(
            tokenize("A road, and TWO buildings."),
            vec!["a", "road", "and", "two", "buildings"]
        );
    }

    #[test]
    fn vocab_threshold_and_round_trip() {
        let v = Vocabulary::build(["a a b"], 2);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), UNK);
        let v2 = Vocabulary::build(["a road appears", "a road is gone"], 1);
        let ids = v2.encode("a road appears");
        assert_eq!(v2.decode(&ids), "a road appears");
    }

    #[test]
    fn vocab_is_order_invariant() {
        let a = Vocabulary::build(["x y z", "y z", "z"], 1);
        let b = Vocabulary::build(["z", "y z", "x y z"], 1);
        assert_eq!(a.tokens(), b.tokens());
        // freq desc: z(3), y(2), x(1)
        assert_eq!(a.id("z"), 4);
        assert_eq!(a.id("y"), 5);
        assert_eq!(a.id("x"), 6);
    }
}
