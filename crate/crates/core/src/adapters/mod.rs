//! Uniform interfaces for the frozen external models the pipeline leans on:
//! an instance segmenter, a prompt-conditioned detector, a text encoder and
//! (in the region module) a learned matcher. Deterministic mock
//! implementations make the whole pipeline hermetic; real-backend slots are
//! selected by config and fail loudly when their weights are absent.

mod mask;
mod mock;

pub mod contract;

pub use mask::{connected_components, Mask, PixelBox};
pub use mock::{MockDetector, MockSegmenter, MockTextEncoder};

use crate::config::{AdapterConfig, BackendKind};
use crate::error::{Error, Result};
use image::RgbImage;
use ndarray::Array2;

/// Dense feature grid exposed by the segmenter's frozen encoder, flattened
/// to `(cells_h * cells_w, channels)` rows.
#[derive(Debug, Clone)]
pub struct DenseFeatures {
    pub h: usize,
    pub w: usize,
    pub stride: usize,
    pub data: Array2<f64>,
}

impl DenseFeatures {
    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn at(&self, x: usize, y: usize) -> ndarray::ArrayView1<'_, f64> {
        self.data.row(y * self.w + x)
    }

    /// Bilinear sample at fractional cell coordinates, clamped to the grid.
    pub fn sample(&self, x: f64, y: f64) -> Vec<f64> {
        let xc = x.clamp(0.0, (self.w - 1) as f64);
        let yc = y.clamp(0.0, (self.h - 1) as f64);
        let (x0, y0) = (xc.floor() as usize, yc.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.w - 1), (y0 + 1).min(self.h - 1));
        let (fx, fy) = (xc - x0 as f64, yc - y0 as f64);
        let (r00, r10) = (self.at(x0, y0), self.at(x1, y0));
        let (r01, r11) = (self.at(x0, y1), self.at(x1, y1));
        (0..self.channels())
            .map(|c| {
                let top = r00[c] * (1.0 - fx) + r10[c] * fx;
                let bot = r01[c] * (1.0 - fx) + r11[c] * fx;
                top * (1.0 - fy) + bot * fy
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SegmenterOutput {
    pub masks: Vec<Mask>,
    pub scores: Vec<f64>,
    pub dense: DenseFeatures,
}

impl SegmenterOutput {
    pub fn validate(&self) -> Result<()> {
        if self.masks.len() != self.scores.len() {
            return Err(Error::Input(format!(
                "segmenter output: {} masks vs {} scores",
                self.masks.len(),
                self.scores.len()
            )));
        }
        for (i, m) in self.masks.iter().enumerate() {
            if m.is_empty() {
                return Err(Error::Input(format!("segmenter mask {i} is empty")));
            }
        }
        if self.dense.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("segmenter dense features not finite".into()));
        }
        Ok(())
    }
}

/// Prompt-conditioned detections: parallel boxes / prompt-index labels /
/// confidence scores.
#[derive(Debug, Clone, Default)]
pub struct DetectionSet {
    pub boxes: Vec<PixelBox>,
    pub labels: Vec<usize>,
    pub scores: Vec<f64>,
}

impl DetectionSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn validate(&self, image_w: u32, image_h: u32, n_prompts: usize) -> Result<()> {
        if self.boxes.len() != self.labels.len() || self.boxes.len() != self.scores.len() {
            return Err(Error::Input("detection set: ragged fields".into()));
        }
        for (i, b) in self.boxes.iter().enumerate() {
            if !b.is_valid_in(image_w, image_h) {
                return Err(Error::Input(format!(
                    "detection box {i} invalid or out of bounds: {b:?}"
                )));
            }
        }
        if let Some(bad) = self.labels.iter().find(|&&l| l >= n_prompts) {
            return Err(Error::Input(format!(
                "detection label {bad} outside prompt list of {n_prompts}"
            )));
        }
        Ok(())
    }
}

pub trait Segmenter {
    /// Automatic instance masks over the whole image.
    fn segment_auto(&self, image: &RgbImage) -> Result<SegmenterOutput>;
    /// One mask per input box, each contained in its box, in box order.
    fn segment_boxes(&self, image: &RgbImage, boxes: &DetectionSet) -> Result<SegmenterOutput>;
}

pub trait Detector {
    fn detect(&self, image: &RgbImage, prompts: &[String]) -> Result<DetectionSet>;
}

pub trait TextEncoder {
    /// `(len(strings), d)` matrix of L2-normalized embeddings.
    fn embed(&self, strings: &[String]) -> Result<Array2<f64>>;
    fn dim(&self) -> usize;
}

/// Real-backend slots. Weight files are external; constructing one without
/// them is an explicit error rather than a fallback to the mocks.
#[derive(Debug)]
pub struct RealSegmenter;
pub struct RealDetector;
pub struct RealTextEncoder;

fn unavailable(role: &str, weights: &Option<String>, key: &str) -> Error {
    match weights {
        None => Error::BackendUnavailable(format!(
            "real {role} selected but no checkpoint configured (set adapters.{key})"
        )),
        Some(p) if !std::path::Path::new(p).exists() => Error::BackendUnavailable(format!(
            "real {role} checkpoint not found at {p}"
        )),
        Some(p) => Error::BackendUnavailable(format!(
            "real {role} checkpoint at {p} cannot be loaded by this build; use backend = \"mock\""
        )),
    }
}

impl RealSegmenter {
    pub fn new(cfg: &AdapterConfig) -> Result<Self> {
        Err(unavailable("segmenter", &cfg.segmenter_weights, "segmenter_weights"))
    }
}

impl RealDetector {
    pub fn new(cfg: &AdapterConfig) -> Result<Self> {
        Err(unavailable("detector", &cfg.detector_weights, "detector_weights"))
    }
}

impl RealTextEncoder {
    pub fn new(cfg: &AdapterConfig) -> Result<Self> {
        Err(unavailable(
            "text encoder",
            &cfg.text_encoder_weights,
            "text_encoder_weights",
        ))
    }
}

/// The three adapter handles the pipeline needs, built from config.
pub struct AdapterSet {
    pub segmenter: Box<dyn Segmenter>,
    pub detector: Box<dyn Detector>,
    pub text: Box<dyn TextEncoder>,
}

impl AdapterSet {
    pub fn build(cfg: &AdapterConfig, seed: u64) -> Result<AdapterSet> {
        match cfg.backend {
            BackendKind::Mock => Ok(AdapterSet {
                segmenter: Box::new(MockSegmenter::new(cfg, seed)),
                detector: Box::new(MockDetector::new()),
                text: Box::new(MockTextEncoder::new(cfg.text_dim, seed)),
            }),
            BackendKind::Real => {
                RealSegmenter::new(cfg)?;
                RealDetector::new(cfg)?;
                RealTextEncoder::new(cfg)?;
                unreachable!("real adapters always fail construction in this build")
            }
        }
    }
}
