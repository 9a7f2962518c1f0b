//! Configuration for every stage of the pipeline. The full [`TrainConfig`]
//! is validated at startup and serialized into each checkpoint, so a saved
//! model can always be rebuilt exactly.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    /// Small strided conv stack; runs without pretrained weights.
    Desk,
    /// Pretrained deep backbone slot; requires external weights.
    Resnet101,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    /// Feature channels C of each temporal stream.
    pub channels: usize,
    /// Number of stride-2 conv stages (stride = 2^n_stages).
    pub n_stages: usize,
    /// Consistency refinement blocks N.
    pub n_blocks: usize,
    pub heads: usize,
    /// Output channels C_e of the global embedding.
    pub embed_channels: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            kind: BackboneKind::Desk,
            channels: 64,
            n_stages: 3,
            n_blocks: 2,
            heads: 4,
            embed_channels: 64,
        }
    }
}

impl BackboneConfig {
    pub fn stride(&self) -> usize {
        1 << self.n_stages
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Deterministic seeded mocks; the hermetic default.
    Mock,
    /// External weight-file backends; error out when unavailable.
    Real,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct AdapterConfig {
    pub backend: BackendKind,
    /// Dense feature channels C_s exposed by the segmenter.
    pub dense_channels: usize,
    /// Spatial stride of the segmenter's dense feature grid.
    pub dense_stride: usize,
    /// Text embedding width d_b.
    pub text_dim: usize,
    /// Color quantization step for the mock segmenter.
    pub quant_step: u8,
    /// Which encoder level provides dense features in a real backend.
    pub feature_layer: usize,
    /// Checkpoint paths for real backends (unused by mocks).
    pub segmenter_weights: Option<String>,
    pub detector_weights: Option<String>,
    pub text_encoder_weights: Option<String>,
    pub matcher_weights: Option<String>,
    pub device: String,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig {
            backend: BackendKind::Mock,
            dense_channels: 32,
            dense_stride: 4,
            text_dim: 32,
            quant_step: 32,
            feature_layer: 0,
            segmenter_weights: None,
            detector_weights: None,
            text_encoder_weights: None,
            matcher_weights: None,
            device: "cpu".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatcherKind {
    /// Cosine + positional affinity with Sinkhorn assignment.
    Native,
    /// Pretrained matcher adapter (requires weights).
    Superglue,
    /// Every region unmatched; the matcher-ablation path.
    AllUnmatched,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RegionConfig {
    pub max_masks: usize,
    /// Minimum region area as a fraction of image pixels.
    pub min_area_frac: f64,
    pub min_score: f64,
    pub nms_iou: f64,
    /// Region descriptor width d.
    pub descriptor_dim: usize,
    /// Positional encoding width for centroids.
    pub pos_dim: usize,
    pub matcher: MatcherKind,
    /// Match acceptance threshold tau.
    pub match_threshold: f64,
    pub sinkhorn_iters: usize,
    pub sinkhorn_temp: f64,
    /// Affinity assigned to the dustbin row/column before normalization.
    pub dustbin_score: f64,
    /// Top-q regions kept by the semantic ranking.
    pub top_q: usize,
    pub prompts: Vec<String>,
}

impl Default for RegionConfig {
    fn default() -> Self {
        RegionConfig {
            max_masks: 50,
            min_area_frac: 0.001,
            min_score: 0.5,
            nms_iou: 0.7,
            descriptor_dim: 64,
            pos_dim: 32,
            matcher: MatcherKind::Native,
            match_threshold: 0.2,
            sinkhorn_iters: 20,
            sinkhorn_temp: 0.1,
            dustbin_score: 0.0,
            top_q: 5,
            prompts: vec![
                "building".to_string(),
                "road".to_string(),
                "vegetation".to_string(),
            ],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct KgConfig {
    /// Minimum triple frequency kept when building the graph.
    pub min_frequency: u64,
    /// Cosine threshold for single-linkage entity merging.
    pub merge_threshold: f64,
}

impl Default for KgConfig {
    fn default() -> Self {
        KgConfig {
            min_frequency: 50,
            merge_threshold: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphEncoderKind {
    /// Relation-specific weights per layer.
    Rgcn,
    /// Single weight shared across relations (ablation baseline).
    Gcn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutKind {
    Mean,
    Attention,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ReasonerConfig {
    pub encoder: GraphEncoderKind,
    pub hidden_dim: usize,
    pub layers: usize,
    pub output_dim: usize,
    pub readout: ReadoutKind,
}

impl Default for ReasonerConfig {
    fn default() -> Self {
        ReasonerConfig {
            encoder: GraphEncoderKind::Rgcn,
            hidden_dim: 64,
            layers: 2,
            output_dim: 64,
            readout: ReadoutKind::Mean,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct DecoderConfig {
    /// Per-source projection widths; the fused vector has their sum as width.
    pub motion_proj: usize,
    pub semantic_proj: usize,
    pub graph_proj: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub label_smoothing: f64,
    /// Initial values for the spatial-bias scales.
    pub alpha_init: f64,
    pub beta_init: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            motion_proj: 64,
            semantic_proj: 64,
            graph_proj: 64,
            layers: 2,
            heads: 4,
            ffn_dim: 384,
            max_len: 24,
            label_smoothing: 0.1,
            alpha_init: 1.0,
            beta_init: 0.0,
        }
    }
}

impl DecoderConfig {
    pub fn fused_dim(&self) -> usize {
        self.motion_proj + self.semantic_proj + self.graph_proj
    }
}

/// Which ablation components are active. All on by default; presets mirror
/// the progressive rows of the component study.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(default)]
pub struct AblationConfig {
    /// Motion-level change localization (mask mining + descriptors).
    pub mcl: bool,
    /// Learned matching; off replaces the matcher with all-unmatched.
    pub sg: bool,
    /// Semantic-level change aggregation.
    pub sca: bool,
    /// Caption-graph reasoning prior.
    pub cgr: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            mcl: true,
            sg: true,
            sca: true,
            cgr: true,
        }
    }
}

impl AblationConfig {
    pub fn baseline() -> Self {
        AblationConfig {
            mcl: false,
            sg: false,
            sca: false,
            cgr: false,
        }
    }

    /// Presets (a)-(d): progressively enable mcl, sg, sca, cgr.
    pub fn preset(name: &str) -> Option<Self> {
        let b = Self::baseline();
        match name {
            "baseline" => Some(b),
            "a" => Some(AblationConfig { mcl: true, ..b }),
            "b" => Some(AblationConfig {
                mcl: true,
                sg: true,
                ..b
            }),
            "c" => Some(AblationConfig {
                mcl: true,
                sg: true,
                sca: true,
                ..b
            }),
            "d" => Some(AblationConfig::default()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    pub config_version: u32,
    pub seed: u64,
    pub lr: f64,
    /// Learning-rate multiplier applied once training passes `lr_decay_epoch`.
    pub lr_decay: f64,
    pub lr_decay_epoch: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub grad_clip: f64,
    /// Train on the first reference caption only, or on all of them.
    pub all_captions: bool,
    pub vocab_min_freq: u64,
    pub backbone: BackboneConfig,
    pub adapters: AdapterConfig,
    pub regions: RegionConfig,
    pub kg: KgConfig,
    pub reasoner: ReasonerConfig,
    pub decoder: DecoderConfig,
    pub ablation: AblationConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            config_version: CONFIG_SCHEMA_VERSION,
            seed: 17,
            lr: 1e-4,
            lr_decay: 0.5,
            lr_decay_epoch: 5,
            max_epochs: 50,
            batch_size: 8,
            grad_clip: 5.0,
            all_captions: false,
            vocab_min_freq: 2,
            backbone: BackboneConfig::default(),
            adapters: AdapterConfig::default(),
            regions: RegionConfig::default(),
            kg: KgConfig::default(),
            reasoner: ReasonerConfig::default(),
            decoder: DecoderConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Small-model preset used by the synthetic overfit runs and most tests:
    /// same wiring as the default, tuned to memorize a tiny corpus quickly.
    /// Label smoothing is off so the training cross-entropy can approach
    /// zero, and the knowledge-graph frequency cutoff matches a tiny corpus.
    pub fn desk() -> Self {
        let mut cfg = TrainConfig::default();
        cfg.lr = 1e-3;
        cfg.lr_decay_epoch = 25;
        cfg.max_epochs = 30;
        cfg.batch_size = 4;
        cfg.kg.min_frequency = 2;
        cfg.decoder.label_smoothing = 0.0;
        cfg.vocab_min_freq = 1;
        cfg
    }

    /// Effective learning rate for a 1-based epoch index.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        if epoch > self.lr_decay_epoch {
            self.lr * self.lr_decay
        } else {
            self.lr
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn bail(msg: String) -> Result<()> {
            Err(Error::Config(msg))
        }
        if self.backbone.n_blocks < 1 {
            return bail("backbone.n_blocks must be >= 1".into());
        }
        if self.backbone.channels % 2 != 0 || self.backbone.channels % self.backbone.heads != 0 {
            return bail(format!(
                "backbone.channels {} must be even and divisible by heads {}",
                self.backbone.channels, self.backbone.heads
            ));
        }
        if self.backbone.n_stages == 0 {
            return bail("backbone.n_stages must be >= 1".into());
        }
        if !(self.regions.match_threshold > 0.0 && self.regions.match_threshold < 1.0) {
            return bail(format!(
                "regions.match_threshold {} must lie in (0, 1)",
                self.regions.match_threshold
            ));
        }
        if self.regions.max_masks < 1 {
            return bail("regions.max_masks must be >= 1".into());
        }
        if self.regions.top_q < 1 {
            return bail("regions.top_q must be >= 1".into());
        }
        if self.regions.prompts.is_empty() {
            return bail("regions.prompts must not be empty".into());
        }
        if self.regions.pos_dim % 2 != 0 {
            return bail("regions.pos_dim must be even".into());
        }
        if self.reasoner.layers < 1 {
            return bail("reasoner.layers must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.decoder.label_smoothing) {
            return bail(format!(
                "decoder.label_smoothing {} must lie in [0, 1)",
                self.decoder.label_smoothing
            ));
        }
        let d_f = self.decoder.fused_dim();
        if d_f % self.decoder.heads != 0 {
            return bail(format!(
                "fused dim {d_f} must be divisible by decoder heads {}",
                self.decoder.heads
            ));
        }
        if self.decoder.max_len < 2 {
            return bail("decoder.max_len must be >= 2".into());
        }
        if self.batch_size < 1 {
            return bail("batch_size must be >= 1".into());
        }
        if self.max_epochs < 1 {
            return bail("max_epochs must be >= 1".into());
        }
        if self.lr <= 0.0 {
            return bail("lr must be positive".into());
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(s).map_err(|e| Error::Config(format!("toml parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml(&text),
            _ => Self::from_json(&text),
        }
    }
}
