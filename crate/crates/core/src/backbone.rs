//! Bi-temporal scene encoding: a Siamese spatial backbone with a shared 2-D
//! positional embedding, cross-time consistency refinement blocks, pixel-wise
//! consistency/change priors from cosine similarity, and prior-guided fusion
//! into the global embedding consumed by the decoder.

use crate::config::{BackboneConfig, BackboneKind};
use crate::data::BiTemporalSample;
use crate::error::{Error, Result};
use crate::nn::{posenc_2d, ChannelNorm, Conv3x3, LayerNorm, Linear, MultiHeadAttention};
use crate::tensor::{ParamStore, Tensor};
use image::RgbImage;
use ndarray::Array2;

/// A spatial feature grid flattened to `(h*w, channels)` rows.
#[derive(Clone)]
pub struct FeatureGrid {
    pub tensor: Tensor,
    pub h: usize,
    pub w: usize,
    pub epoch: u8,
    pub positional_added: bool,
}

impl FeatureGrid {
    pub fn channels(&self) -> usize {
        self.tensor.cols()
    }

    pub fn assert_finite(&self) -> Result<()> {
        if self.tensor.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("feature grid contains non-finite values".into()));
        }
        Ok(())
    }
}

/// Per-pixel consistency/change priors as `(h*w, 1)` columns. The change
/// prior is defined as `1 - consistency`, so the two sum to one exactly.
#[derive(Clone)]
pub struct PriorMaps {
    pub consistency: Tensor,
    pub change: Tensor,
    pub h: usize,
    pub w: usize,
}

/// The fused scene embedding `(h*w, embed_channels)`.
#[derive(Clone)]
pub struct GlobalEmbedding {
    pub tensor: Tensor,
    pub h: usize,
    pub w: usize,
}

/// One consistency refinement block: pre-norm residual self-attention per
/// stream, then residual cross-attention against the concatenated
/// bi-temporal context. Weights are shared between the two streams, which
/// keeps the computation symmetric under stream swap.
struct RefineBlock {
    ln_sa: LayerNorm,
    sa: MultiHeadAttention,
    ln_q: LayerNorm,
    ln_kv: LayerNorm,
    ca: MultiHeadAttention,
}

impl RefineBlock {
    fn new(store: &mut ParamStore, name: &str, channels: usize, heads: usize, seed: u64) -> Self {
        RefineBlock {
            ln_sa: LayerNorm::new(store, &format!("{name}.ln_sa"), channels),
            sa: MultiHeadAttention::new(store, &format!("{name}.sa"), channels, channels, heads, seed),
            ln_q: LayerNorm::new(store, &format!("{name}.ln_q"), channels),
            ln_kv: LayerNorm::new(store, &format!("{name}.ln_kv"), channels),
            ca: MultiHeadAttention::new(store, &format!("{name}.ca"), channels, channels, heads, seed),
        }
    }

    fn forward(&self, f1: &Tensor, f2: &Tensor) -> (Tensor, Tensor) {
        let h1 = f1.add(&self.sa.forward(&self.ln_sa.forward(f1), &self.ln_sa.forward(f1), None, false));
        let h2 = f2.add(&self.sa.forward(&self.ln_sa.forward(f2), &self.ln_sa.forward(f2), None, false));
        let kv = Tensor::concat_rows(&[self.ln_kv.forward(&h1), self.ln_kv.forward(&h2)]);
        let o1 = h1.add(&self.ca.forward(&self.ln_q.forward(&h1), &kv, None, false));
        let o2 = h2.add(&self.ca.forward(&self.ln_q.forward(&h2), &kv, None, false));
        (o1, o2)
    }
}

/// Small strided conv stack standing in for a deep pretrained backbone.
/// Spatial stride is `2^n_stages`.
pub struct DeskBackbone {
    stages: Vec<(Conv3x3, ChannelNorm)>,
    channels: usize,
    stride: usize,
}

impl DeskBackbone {
    pub fn new(store: &mut ParamStore, cfg: &BackboneConfig, seed: u64) -> DeskBackbone {
        let mut stages = Vec::with_capacity(cfg.n_stages);
        let mut c_in = 3;
        for k in 0..cfg.n_stages {
            let c_out = if k + 1 == cfg.n_stages {
                cfg.channels
            } else {
                (cfg.channels >> (cfg.n_stages - 1 - k)).max(4)
            };
            let conv = Conv3x3::new(store, &format!("backbone.stage{k}.conv"), c_in, c_out, 2, seed);
            let norm = ChannelNorm::new(store, &format!("backbone.stage{k}.norm"), c_out);
            stages.push((conv, norm));
            c_in = c_out;
        }
        DeskBackbone {
            stages,
            channels: c_in,
            stride: 1 << cfg.n_stages,
        }
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Image -> `(h*w, C)` feature grid with output spatial dims.
    pub fn forward(&self, image: &RgbImage) -> (Tensor, usize, usize) {
        let (w, h) = image.dimensions();
        let mut x = Tensor::constant(image_to_array(image));
        let (mut ch, mut cw) = (h as usize, w as usize);
        for (conv, norm) in &self.stages {
            let (out, oh, ow) = conv.forward(&x, ch, cw);
            x = norm.forward(&out).relu();
            ch = oh;
            cw = ow;
        }
        (x, ch, cw)
    }
}

/// Pretrained deep-backbone slot for full-scale runs; this build has no
/// weights for it.
pub struct ResNetBackbone;

impl ResNetBackbone {
    pub fn new() -> Result<Self> {
        Err(Error::BackendUnavailable(
            "resnet101 backbone requires pretrained weights; use backbone.kind = \"desk\"".into(),
        ))
    }
}

pub fn image_to_array(image: &RgbImage) -> Array2<f64> {
    let (w, h) = image.dimensions();
    let mut out = Array2::zeros(((w * h) as usize, 3));
    for (i, p) in image.pixels().enumerate() {
        for c in 0..3 {
            out[(i, c)] = p[c] as f64 / 255.0;
        }
    }
    out
}

/// The full bi-temporal encoder.
pub struct BiTemporalEncoder {
    pub cfg: BackboneConfig,
    backbone: DeskBackbone,
    blocks: Vec<RefineBlock>,
    head_conv: Conv3x3,
    head_norm: ChannelNorm,
    head_proj: Linear,
}

impl BiTemporalEncoder {
    pub fn new(store: &mut ParamStore, cfg: &BackboneConfig, seed: u64) -> Result<BiTemporalEncoder> {
        if cfg.kind == BackboneKind::Resnet101 {
            ResNetBackbone::new()?;
        }
        if cfg.n_blocks < 1 {
            return Err(Error::Config("encoder needs n_blocks >= 1".into()));
        }
        let backbone = DeskBackbone::new(store, cfg, seed);
        let c = backbone.channels();
        let blocks = (0..cfg.n_blocks)
            .map(|i| RefineBlock::new(store, &format!("encoder.block{i}"), c, cfg.heads, seed))
            .collect();
        let fused_channels = 3 * c + 1;
        let head_conv = Conv3x3::new(store, "encoder.head.conv", fused_channels, c, 1, seed);
        let head_norm = ChannelNorm::new(store, "encoder.head.norm", c);
        let head_proj = Linear::new(store, "encoder.head.proj", c, cfg.embed_channels, seed);
        Ok(BiTemporalEncoder {
            cfg: cfg.clone(),
            backbone,
            blocks,
            head_conv,
            head_norm,
            head_proj,
        })
    }

    /// Siamese feature extraction: the shared backbone runs on both epochs
    /// and the same fixed 2-D sinusoidal positional embedding is added to
    /// each stream.
    pub fn extract_features(&self, pair: &BiTemporalSample) -> Result<(FeatureGrid, FeatureGrid)> {
        if pair.image_a.dimensions() != pair.image_b.dimensions() {
            return Err(Error::Shape(format!(
                "bi-temporal pair {}: {:?} vs {:?}",
                pair.id,
                pair.image_a.dimensions(),
                pair.image_b.dimensions()
            )));
        }
        let (t1, h, w) = self.backbone.forward(&pair.image_a);
        let (t2, _, _) = self.backbone.forward(&pair.image_b);
        let pe = Tensor::constant(posenc_2d(h, w, self.backbone.channels()));
        let g1 = FeatureGrid {
            tensor: t1.add(&pe),
            h,
            w,
            epoch: 1,
            positional_added: true,
        };
        let g2 = FeatureGrid {
            tensor: t2.add(&pe),
            h,
            w,
            epoch: 2,
            positional_added: true,
        };
        g1.assert_finite()?;
        g2.assert_finite()?;
        Ok((g1, g2))
    }

    /// N blocks of intra-stream self-attention and cross-stream attention.
    pub fn consistency_refine(&self, f1: &FeatureGrid, f2: &FeatureGrid) -> (FeatureGrid, FeatureGrid) {
        let mut t1 = f1.tensor.clone();
        let mut t2 = f2.tensor.clone();
        for block in &self.blocks {
            let (n1, n2) = block.forward(&t1, &t2);
            t1 = n1;
            t2 = n2;
        }
        (
            FeatureGrid { tensor: t1, ..f1.clone() },
            FeatureGrid { tensor: t2, ..f2.clone() },
        )
    }

    /// Pixel-wise consistency prior `(cos + 1) / 2` and its complement.
    /// Zero-norm pixel vectors get a neutral cosine of 0 (consistency 0.5).
    pub fn compute_priors(&self, f1: &FeatureGrid, f2: &FeatureGrid) -> Result<PriorMaps> {
        if f1.tensor.shape() != f2.tensor.shape() {
            return Err(Error::Shape(format!(
                "prior inputs differ: {:?} vs {:?}",
                f1.tensor.shape(),
                f2.tensor.shape()
            )));
        }
        let cos = f1.tensor.cosine_rows(&f2.tensor, 1e-8);
        let consistency = cos.add_scalar(1.0).scale(0.5);
        let change = consistency.neg().add_scalar(1.0);
        Ok(PriorMaps {
            consistency,
            change,
            h: f1.h,
            w: f1.w,
        })
    }

    /// Prior-guided fusion: concat `[f1*C, f2*C, |f1-f2|*M, M]` over channels
    /// (width `3C + 1`), then the conv head and a pointwise projection.
    pub fn fuse_global(
        &self,
        f1: &FeatureGrid,
        f2: &FeatureGrid,
        priors: &PriorMaps,
    ) -> GlobalEmbedding {
        let fused = fuse_concat(f1, f2, priors);
        let (conv_out, h, w) = self.head_conv.forward(&fused, f1.h, f1.w);
        let activated = self.head_norm.forward(&conv_out).relu();
        GlobalEmbedding {
            tensor: self.head_proj.forward(&activated),
            h,
            w,
        }
    }

    /// Full encoder pass for one pair.
    pub fn encode(&self, pair: &BiTemporalSample) -> Result<(GlobalEmbedding, PriorMaps)> {
        let (f1, f2) = self.extract_features(pair)?;
        let (r1, r2) = self.consistency_refine(&f1, &f2);
        let priors = self.compute_priors(&r1, &r2)?;
        let embedding = self.fuse_global(&r1, &r2, &priors);
        Ok((embedding, priors))
    }
}

/// The pre-head concatenation of the prior-guided fusion, exposed for tests.
pub fn fuse_concat(f1: &FeatureGrid, f2: &FeatureGrid, priors: &PriorMaps) -> Tensor {
    Tensor::concat_cols(&[
        f1.tensor.mul_col(&priors.consistency),
        f2.tensor.mul_col(&priors.consistency),
        f1.tensor.sub(&f2.tensor).abs().mul_col(&priors.change),
        priors.change.clone(),
    ])
}
