//! Versioned checkpoint container: full config, vocabulary, optional
//! knowledge graph and every parameter tensor (little-endian f64 bytes,
//! base64). Save/load round-trips are bit-stable.

use crate::config::TrainConfig;
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::kg::ChangeKG;
use crate::tensor::ParamStore;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize, Clone)]
pub struct TensorBlob {
    pub rows: usize,
    pub cols: usize,
    pub data: String,
}

impl TensorBlob {
    pub fn from_array(a: &Array2<f64>) -> TensorBlob {
        let mut bytes = Vec::with_capacity(a.len() * 8);
        for v in a.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        TensorBlob {
            rows: a.nrows(),
            cols: a.ncols(),
            data: B64.encode(bytes),
        }
    }

    pub fn to_array(&self) -> Result<Array2<f64>> {
        let bytes = B64
            .decode(&self.data)
            .map_err(|e| Error::Checkpoint(format!("bad tensor payload: {e}")))?;
        if bytes.len() != self.rows * self.cols * 8 {
            return Err(Error::Checkpoint(format!(
                "tensor payload of {} bytes does not match {}x{}",
                bytes.len(),
                self.rows,
                self.cols
            )));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Array2::from_shape_vec((self.rows, self.cols), values)
            .map_err(|e| Error::Checkpoint(format!("tensor shape: {e}")))
    }
}

#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub kg: Option<ChangeKG>,
    pub params: BTreeMap<String, TensorBlob>,
}

impl Checkpoint {
    pub fn capture(
        config: &TrainConfig,
        vocab: &Vocabulary,
        kg: Option<&ChangeKG>,
        store: &ParamStore,
    ) -> Checkpoint {
        let params = store
            .iter()
            .map(|(name, t)| (name.to_string(), TensorBlob::from_array(&t.data())))
            .collect();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: config.clone(),
            vocab: vocab.clone(),
            kg: kg.cloned(),
            params,
        }
    }

    /// Overwrite a freshly built store's parameters. Both sides must name
    /// exactly the same tensors.
    pub fn restore_into(&self, store: &ParamStore) -> Result<()> {
        let store_names: Vec<&str> = store.iter().map(|(n, _)| n).collect();
        for name in &store_names {
            if !self.params.contains_key(*name) {
                return Err(Error::Checkpoint(format!(
                    "checkpoint is missing parameter {name}"
                )));
            }
        }
        if self.params.len() != store_names.len() {
            let extra: Vec<&String> = self
                .params
                .keys()
                .filter(|k| !store_names.contains(&k.as_str()))
                .collect();
            return Err(Error::Checkpoint(format!(
                "checkpoint has parameters the model does not: {extra:?}"
            )));
        }
        for (name, t) in store.iter() {
            let blob = &self.params[name];
            let a = blob.to_array()?;
            if a.dim() != t.data().dim() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: checkpoint {:?} vs model {:?}",
                    a.dim(),
                    t.data().dim()
                )));
            }
            t.set_data(a);
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        let mut ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {} unsupported (expect {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        ckpt.config.validate()?;
        ckpt.vocab.rebuild_index();
        if let Some(kg) = ckpt.kg.take() {
            // recompute derived matrices rather than trusting the file
            ckpt.kg = Some(crate::kg::encode_graph(&kg.triples)?);
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn blob_round_trip_is_bit_exact() {
        let a = Array2::from_shape_fn((3, 5), |(i, j)| {
            (i as f64 + 1.0).powf(0.5) * (j as f64 - 2.3) / 7.0
        });
        let blob = TensorBlob::from_array(&a);
        let back = blob.to_array().unwrap();
        assert_eq!(a, back);
        for (x, y) in a.iter().zip(back.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn restore_rejects_mismatched_stores() {
        let mut store = ParamStore::new();
        store.register("w", Tensor::param(Array2::zeros((2, 2))));
        let cfg = TrainConfig::desk();
        let vocab = crate::data::Vocabulary::build(["a b"], 1);
        let ckpt = Checkpoint::capture(&cfg, &vocab, None, &store);

        let mut other = ParamStore::new();
        other.register("w2", Tensor::param(Array2::zeros((2, 2))));
        assert!(ckpt.restore_into(&other).is_err());

        let mut wrong_shape = ParamStore::new();
        wrong_shape.register("w", Tensor::param(Array2::zeros((2, 3))));
        assert!(ckpt.restore_into(&wrong_shape).is_err());
    }
}
