//! Bi-temporal remote-sensing change captioning.
//!
//! The pipeline encodes an image pair into a global embedding plus pixel-wise
//! consistency/change priors, mines changed regions with a pluggable
//! segmenter/detector (deterministic mocks by default), reasons over a
//! knowledge graph built from training captions, and decodes a natural
//! language description of the change with a Transformer decoder whose
//! cross-attention is biased towards changed pixels.
//!
//! Everything runs on the CPU in double precision on top of a small
//! reverse-mode autodiff engine ([`tensor`]), so training, evaluation and all
//! numeric checks are deterministic given a seed.

pub mod adapters;
pub mod backbone;
pub mod captioner;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod kg;
pub mod metrics;
pub mod nn;
pub mod reasoner;
pub mod regions;
pub mod tensor;

pub use error::{Error, Result};
