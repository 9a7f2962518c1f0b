//! Dataset loading. The on-disk layout mirrors the public LEVIR-CC release:
//! `images/A/`, `images/B/` and a captions JSON whose entries carry a
//! filename, a split and five sentences. Sentences are accepted both as
//! `{"raw": "..."}` objects and as plain strings.

use crate::data::{synth, BiTemporalSample, Split};
use crate::error::{Error, Result};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Deserialize)]
struct RawCaptions {
    images: Vec<RawEntry>,
}

#[derive(Deserialize)]
struct RawEntry {
    filename: String,
    split: String,
    sentences: Vec<RawSentence>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawSentence {
    Tagged { raw: String },
    Plain(String),
}

impl RawSentence {
    fn text(&self) -> &str {
        match self {
            RawSentence::Tagged { raw } => raw,
            RawSentence::Plain(s) => s,
        }
    }
}

/// A loaded dataset: per-split sample lists, in file order.
#[derive(Debug)]
pub struct Dataset {
    pub root: PathBuf,
    samples: BTreeMap<String, Vec<BiTemporalSample>>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[BiTemporalSample] {
        self.samples
            .get(&split.to_string())
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.samples.values().map(|v| v.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Validation split, falling back to train when none exists (small
    /// synthetic corpora).
    pub fn val_or_train(&self) -> &[BiTemporalSample] {
        let val = self.split(Split::Val);
        if val.is_empty() {
            self.split(Split::Train)
        } else {
            val
        }
    }
}

fn captions_path(root: &Path) -> Result<PathBuf> {
    for name in ["captions.json", "LevirCCcaptions.json"] {
        let p = root.join(name);
        if p.exists() {
            return Ok(p);
        }
    }
    Err(Error::Dataset(format!(
        "dataset not found: no captions.json/LevirCCcaptions.json under {}",
        root.display()
    )))
}

/// Load a dataset directory. Split sizes are validated against
/// `manifest.json` when one is present; a missing image is a hard error
/// naming the sample.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    if !root.is_dir() {
        return Err(Error::Dataset(format!(
            "dataset not found: {} is not a directory",
            root.display()
        )));
    }
    let captions_file = captions_path(root)?;
    let text = std::fs::read_to_string(&captions_file)?;
    let raw: RawCaptions = serde_json::from_str(&text)?;

    let mut samples: BTreeMap<String, Vec<BiTemporalSample>> = BTreeMap::new();
    for entry in raw.images {
        let split: Split = entry.split.parse()?;
        let id = entry
            .filename
            .strip_suffix(".png")
            .unwrap_or(&entry.filename)
            .to_string();
        let path_a = root.join("images/A").join(&entry.filename);
        let path_b = root.join("images/B").join(&entry.filename);
        for p in [&path_a, &path_b] {
            if !p.exists() {
                return Err(Error::Dataset(format!(
                    "sample {id}: missing image file {}",
                    p.display()
                )));
            }
        }
        let image_a = image::open(&path_a)?.into_rgb8();
        let image_b = image::open(&path_b)?.into_rgb8();
        let captions: Vec<String> = entry
            .sentences
            .iter()
            .map(|s| s.text().to_string())
            .collect();
        let sample = BiTemporalSample {
            id,
            split,
            image_a,
            image_b,
            captions,
        };
        sample.validate()?;
        samples.entry(split.to_string()).or_default().push(sample);
    }

    if let Some(counts) = synth::read_manifest_counts(root)? {
        for (split, expected) in &counts {
            let got = samples.get(split).map(|v| v.len()).unwrap_or(0);
            if got != *expected {
                return Err(Error::Dataset(format!(
                    "split {split}: manifest declares {expected} samples, loaded {got}"
                )));
            }
        }
    }

    Ok(Dataset {
        root: root.to_path_buf(),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate, write_dataset};

    #[test]
    fn synth_round_trip_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate(42, 6, 32, Split::Train).unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        let train = loaded.split(Split::Train);
        assert_eq!(train.len(), 6);
        for (a, b) in ds.samples.iter().zip(train) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.image_a.as_raw(), b.image_a.as_raw());
            assert_eq!(a.image_b.as_raw(), b.image_b.as_raw());
            assert_eq!(a.captions, b.captions);
        }
    }

    #[test]
    fn missing_root_is_explicit_error() {
        let err = load_dataset(Path::new("/nonexistent/dataset")).unwrap_err();
        assert!(err.to_string().contains("dataset not found"));
    }

    #[test]
    fn missing_image_names_the_sample() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate(1, 2, 32, Split::Train).unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        std::fs::remove_file(dir.path().join("images/B/train_000001.png")).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("train_000001"), "{err}");
    }

    #[test]
    fn manifest_count_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate(1, 3, 32, Split::Train).unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        // drop one entry from captions.json but keep the manifest
        let text = std::fs::read_to_string(dir.path().join("captions.json")).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["images"].as_array_mut().unwrap().pop();
        std::fs::write(
            dir.path().join("captions.json"),
            serde_json::to_string(&v).unwrap(),
        )
        .unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("manifest declares"), "{err}");
    }

    #[test]
    fn corrupted_captions_error_not_yield() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("images/A")).unwrap();
        std::fs::create_dir_all(dir.path().join("images/B")).unwrap();
        std::fs::write(dir.path().join("captions.json"), "{not json").unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }
}
