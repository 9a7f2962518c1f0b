//! Region mining: proposal filtering over segmenter masks, RoI descriptors
//! through a shared head, cross-epoch matching, and the fixed-width motion
//! and semantic change vectors consumed by the caption decoder.

mod matching;

pub use matching::{match_regions, native_affinity, sinkhorn_with_dustbin, MatchResult};

use crate::adapters::{AdapterSet, DenseFeatures, Mask, PixelBox, SegmenterOutput};
use crate::config::RegionConfig;
use crate::error::Result;
use crate::nn::{posenc_point, seeded_rng, zeros_param, Conv3x3, Linear};
use crate::tensor::{ParamStore, Tensor};
use image::RgbImage;
use ndarray::Array2;
use rand::Rng;

/// A filtered segmenter mask with its derived geometry.
#[derive(Debug, Clone)]
pub struct RegionProposal {
    pub mask: Mask,
    pub bbox: PixelBox,
    pub score: f64,
    pub area: u64,
    pub centroid: (f64, f64),
}

impl RegionProposal {
    pub fn from_mask(mask: Mask, score: f64) -> Option<RegionProposal> {
        let bbox = mask.bbox()?;
        let area = mask.area();
        let centroid = mask.centroid();
        Some(RegionProposal {
            mask,
            bbox,
            score,
            area,
            centroid,
        })
    }
}

/// Drop masks below the score/area floors, apply greedy mask-IoU NMS
/// (highest score survives its overlap group), keep the top `max_masks` by
/// score. Output is sorted by descending score.
pub fn filter_proposals(
    raw: &SegmenterOutput,
    max_masks: usize,
    min_area: u64,
    nms_iou: f64,
    min_score: f64,
) -> Vec<RegionProposal> {
    let mut candidates: Vec<RegionProposal> = raw
        .masks
        .iter()
        .zip(&raw.scores)
        .filter(|(m, s)| **s >= min_score && m.area() >= min_area)
        .filter_map(|(m, s)| RegionProposal::from_mask(m.clone(), *s))
        .collect();
    candidates.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then_with(|| a.bbox.y0.cmp(&b.bbox.y0))
            .then_with(|| a.bbox.x0.cmp(&b.bbox.x0))
    });
    let mut kept: Vec<RegionProposal> = Vec::new();
    for cand in candidates {
        if kept.len() >= max_masks {
            break;
        }
        if kept.iter().all(|k| k.mask.iou(&cand.mask) <= nms_iou) {
            kept.push(cand);
        }
    }
    kept
}

/// A region's compact feature vector `(1, d)` plus its image-space centroid.
#[derive(Debug, Clone)]
pub struct RegionDescriptor {
    pub vector: Tensor,
    pub centroid: (f64, f64),
    pub source_epoch: u8,
}

/// Shared descriptor head: RoI features are bilinearly sampled onto a fixed
/// grid, average-pooled to 7x7, passed through a small conv head and
/// projected to the descriptor width.
pub struct DescriptorHead {
    conv: Conv3x3,
    out: Linear,
    descriptor_dim: usize,
}

const ROI_SAMPLE: usize = 14; // sampled grid, pooled 2x2 down to 7x7
const ROI_POOLED: usize = 7;

impl DescriptorHead {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dense_channels: usize,
        descriptor_dim: usize,
        seed: u64,
    ) -> DescriptorHead {
        DescriptorHead {
            conv: Conv3x3::new(store, &format!("{name}.conv"), dense_channels, dense_channels, 1, seed),
            out: Linear::new(store, &format!("{name}.out"), dense_channels, descriptor_dim, seed),
            descriptor_dim,
        }
    }

    pub fn descriptor_dim(&self) -> usize {
        self.descriptor_dim
    }

    /// Constant 7x7 RoI patch `(49, C)` for a pixel-space box. Boxes smaller
    /// than one feature cell degenerate to repeated center samples.
    pub fn roi_patch(&self, dense: &DenseFeatures, bbox: &PixelBox) -> Array2<f64> {
        let s = dense.stride as f64;
        let (x0, y0) = (bbox.x0 as f64 / s - 0.5, bbox.y0 as f64 / s - 0.5);
        let (x1, y1) = (bbox.x1 as f64 / s - 0.5, bbox.y1 as f64 / s - 0.5);
        let c = dense.channels();
        let mut sampled = Array2::zeros((ROI_SAMPLE * ROI_SAMPLE, c));
        for gy in 0..ROI_SAMPLE {
            for gx in 0..ROI_SAMPLE {
                let fx = x0 + (gx as f64 + 0.5) / ROI_SAMPLE as f64 * (x1 - x0);
                let fy = y0 + (gy as f64 + 0.5) / ROI_SAMPLE as f64 * (y1 - y0);
                let v = dense.sample(fx, fy);
                for ch in 0..c {
                    sampled[(gy * ROI_SAMPLE + gx, ch)] = v[ch];
                }
            }
        }
        // adaptive average pool 14x14 -> 7x7
        let mut pooled = Array2::zeros((ROI_POOLED * ROI_POOLED, c));
        for py in 0..ROI_POOLED {
            for px in 0..ROI_POOLED {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            acc += sampled[((py * 2 + dy) * ROI_SAMPLE + px * 2 + dx, ch)];
                        }
                    }
                    pooled[(py * ROI_POOLED + px, ch)] = acc / 4.0;
                }
            }
        }
        pooled
    }

    /// `g(pooled patch)`: conv over the 7x7 grid, ReLU, global average pool,
    /// linear projection to the descriptor width.
    pub fn forward_patch(&self, patch: Array2<f64>) -> Tensor {
        let x = Tensor::constant(patch);
        let (c, _, _) = self.conv.forward(&x, ROI_POOLED, ROI_POOLED);
        let pooled = c.relu().mean_rows();
        self.out.forward(&pooled)
    }
}

/// Descriptors for each proposal against a dense feature grid.
pub fn describe_regions(
    head: &DescriptorHead,
    dense: &DenseFeatures,
    proposals: &[RegionProposal],
    epoch: u8,
) -> Vec<RegionDescriptor> {
    proposals
        .iter()
        .map(|p| RegionDescriptor {
            vector: head.forward_patch(head.roi_patch(dense, &p.bbox)),
            centroid: p.centroid,
            source_epoch: epoch,
        })
        .collect()
}

/// The region mining module: owns the descriptor head, the learned fallback
/// embeddings and the fixed text projection used by semantic ranking.
pub struct RegionMiner {
    pub cfg: RegionConfig,
    head: DescriptorHead,
    /// Substituted for an epoch's pooled motion features when it has no
    /// unmatched regions.
    no_change_emb: Tensor,
    /// Substituted for an image's pooled semantic features when it has no
    /// detections.
    null_sem_emb: Tensor,
    /// Fixed seeded projection of text embeddings to the descriptor width.
    text_proj: Array2<f64>,
}

impl RegionMiner {
    pub fn new(
        store: &mut ParamStore,
        cfg: &RegionConfig,
        dense_channels: usize,
        text_dim: usize,
        seed: u64,
    ) -> RegionMiner {
        let head = DescriptorHead::new(store, "regions.head", dense_channels, cfg.descriptor_dim, seed);
        let motion_width = cfg.descriptor_dim + cfg.pos_dim;
        let no_change_emb = zeros_param(store, "regions.no_change", 1, motion_width);
        let null_sem_emb = zeros_param(store, "regions.null_sem", 1, cfg.descriptor_dim);
        let mut rng = seeded_rng(seed, "regions.text_proj");
        let scale = 1.0 / (text_dim as f64).sqrt();
        let text_proj = Array2::from_shape_fn((text_dim, cfg.descriptor_dim), |_| {
            rng.gen_range(-1.0..1.0) * scale
        });
        RegionMiner {
            cfg: cfg.clone(),
            head,
            no_change_emb,
            null_sem_emb,
            text_proj,
        }
    }

    pub fn head(&self) -> &DescriptorHead {
        &self.head
    }

    pub fn min_area_for(&self, image: &RgbImage) -> u64 {
        let pixels = (image.width() * image.height()) as f64;
        (pixels * self.cfg.min_area_frac).ceil() as u64
    }

    pub fn proposals(&self, raw: &SegmenterOutput, image: &RgbImage) -> Vec<RegionProposal> {
        filter_proposals(
            raw,
            self.cfg.max_masks,
            self.min_area_for(image),
            self.cfg.nms_iou,
            self.cfg.min_score,
        )
    }

    /// Positional enrichment: `[descriptor ; posenc(centroid)]`.
    fn enrich(&self, d: &RegionDescriptor) -> Tensor {
        let pe = posenc_point(d.centroid.0, d.centroid.1, self.cfg.pos_dim);
        let pe = Tensor::constant(Array2::from_shape_vec((1, self.cfg.pos_dim), pe).unwrap());
        Tensor::concat_cols(&[d.vector.clone(), pe])
    }

    /// Pool the enriched descriptors of one epoch's unmatched regions;
    /// an empty set contributes the learned no-change embedding.
    fn pool_unmatched(&self, unmatched: &[usize], descs: &[RegionDescriptor]) -> Tensor {
        if unmatched.is_empty() {
            return self.no_change_emb.clone();
        }
        let rows: Vec<Tensor> = unmatched.iter().map(|&i| self.enrich(&descs[i])).collect();
        Tensor::concat_rows(&rows).mean_rows()
    }

    /// Motion change vector `(1, 2 * (d + pos_dim))` from a match result.
    pub fn motion_change_repr(
        &self,
        m: &MatchResult,
        desc1: &[RegionDescriptor],
        desc2: &[RegionDescriptor],
    ) -> Tensor {
        let p1 = self.pool_unmatched(&m.unmatched_1, desc1);
        let p2 = self.pool_unmatched(&m.unmatched_2, desc2);
        Tensor::concat_cols(&[p1, p2])
    }

    /// Full motion pipeline for one pair. Also returns the intermediate
    /// proposals and matching for inspection dumps.
    pub fn motion_from_pair(
        &self,
        image_a: &RgbImage,
        image_b: &RgbImage,
        adapters: &AdapterSet,
    ) -> Result<(Tensor, MotionTrace)> {
        let raw1 = adapters.segmenter.segment_auto(image_a)?;
        let raw2 = adapters.segmenter.segment_auto(image_b)?;
        let props1 = self.proposals(&raw1, image_a);
        let props2 = self.proposals(&raw2, image_b);
        let desc1 = describe_regions(&self.head, &raw1.dense, &props1, 1);
        let desc2 = describe_regions(&self.head, &raw2.dense, &props2, 2);
        let matched = match_regions(&desc1, &desc2, &self.cfg)?;
        let vec = self.motion_change_repr(&matched, &desc1, &desc2);
        Ok((
            vec,
            MotionTrace {
                proposals_a: props1,
                proposals_b: props2,
                matching: matched,
            },
        ))
    }

    /// Semantic ranking: normalized descriptor/text similarities, top-q
    /// selection by the best prompt score, mean pool of selected regions.
    fn semantic_pool(&self, image: &RgbImage, adapters: &AdapterSet) -> Result<Tensor> {
        Ok(self.semantic_pool_traced(image, adapters)?.0)
    }

    /// Like [`Self::semantic_pool`] but also returns the candidate regions
    /// and the selection, for inspection dumps. The trace is `None` when the
    /// image had no detections.
    pub fn semantic_pool_traced(
        &self,
        image: &RgbImage,
        adapters: &AdapterSet,
    ) -> Result<(Tensor, Option<SemanticTrace>)> {
        let detections = adapters.detector.detect(image, &self.cfg.prompts)?;
        if detections.is_empty() {
            return Ok((self.null_sem_emb.clone(), None));
        }
        let refined = adapters.segmenter.segment_boxes(image, &detections)?;
        let proposals: Vec<RegionProposal> = refined
            .masks
            .iter()
            .zip(&refined.scores)
            .filter_map(|(m, s)| RegionProposal::from_mask(m.clone(), *s))
            .collect();
        if proposals.is_empty() {
            return Ok((self.null_sem_emb.clone(), None));
        }
        let descs = describe_regions(&self.head, &refined.dense, &proposals, 0);

        let text_emb = adapters.text.embed(&self.cfg.prompts)?; // (K, d_b), unit rows
        let text_proj = text_emb.dot(&self.text_proj); // (K, d)
        let ranking = semantic_ranking(&descs, &text_proj);
        let q = self.cfg.top_q.min(descs.len());
        let selected: Vec<usize> = ranking[..q].to_vec();
        let rows: Vec<Tensor> = selected.iter().map(|&i| descs[i].vector.clone()).collect();
        let pooled = Tensor::concat_rows(&rows).mean_rows();
        Ok((
            pooled,
            Some(SemanticTrace {
                proposals,
                ranking,
                selected,
            }),
        ))
    }

    /// Semantic change vector `(1, 2 * d)` for a pair.
    pub fn semantic_change_repr(
        &self,
        image_a: &RgbImage,
        image_b: &RgbImage,
        adapters: &AdapterSet,
    ) -> Result<Tensor> {
        let p1 = self.semantic_pool(image_a, adapters)?;
        let p2 = self.semantic_pool(image_b, adapters)?;
        Ok(Tensor::concat_cols(&[p1, p2]))
    }

    pub fn motion_dim(&self) -> usize {
        2 * (self.cfg.descriptor_dim + self.cfg.pos_dim)
    }

    pub fn semantic_dim(&self) -> usize {
        2 * self.cfg.descriptor_dim
    }
}

/// Region indices sorted by descending best-prompt similarity (stable order
/// for ties: lower index first).
pub fn semantic_ranking(descs: &[RegionDescriptor], text_proj: &Array2<f64>) -> Vec<usize> {
    let row_max: Vec<f64> = descs
        .iter()
        .map(|d| {
            let v = d.vector.data().row(0).to_vec();
            let nv: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            (0..text_proj.nrows())
                .map(|k| {
                    let t = text_proj.row(k);
                    let nt: f64 = t.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if nv < 1e-8 || nt < 1e-8 {
                        0.0
                    } else {
                        v.iter().zip(t.iter()).map(|(a, b)| a * b).sum::<f64>() / (nv * nt)
                    }
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let mut order: Vec<usize> = (0..descs.len()).collect();
    order.sort_by(|&a, &b| row_max[b].partial_cmp(&row_max[a]).unwrap().then(a.cmp(&b)));
    order
}

/// Intermediate artifacts of the motion pipeline, for debug dumps.
pub struct MotionTrace {
    pub proposals_a: Vec<RegionProposal>,
    pub proposals_b: Vec<RegionProposal>,
    pub matching: MatchResult,
}

/// Intermediate artifacts of the semantic pipeline per image.
pub struct SemanticTrace {
    pub proposals: Vec<RegionProposal>,
    /// All candidate indices, best-first.
    pub ranking: Vec<usize>,
    /// The top-q indices that were pooled.
    pub selected: Vec<usize>,
}
