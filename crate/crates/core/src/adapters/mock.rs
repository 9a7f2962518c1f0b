//! Deterministic mock backends. Every output is a pure function of the
//! input and the global seed, so repeated calls are bit-identical.

use super::{connected_components, DenseFeatures, DetectionSet, Mask};
use super::{Detector, PixelBox, Segmenter, SegmenterOutput, TextEncoder};
use crate::config::AdapterConfig;
use crate::data::CLASS_NAMES;
use crate::error::{Error, Result};
use crate::nn::fnv1a;
use image::RgbImage;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha12Rng};

/// Segmenter mock: connected components of the color-quantized image,
/// scored by component solidity. Dense features are a fixed seeded random
/// projection of per-cell color histograms.
pub struct MockSegmenter {
    quant_step: u8,
    dense_channels: usize,
    dense_stride: usize,
    projection: Array2<f64>,
}

const HIST_BINS: usize = 64; // 4x4x4 RGB

impl MockSegmenter {
    pub fn new(cfg: &AdapterConfig, seed: u64) -> MockSegmenter {
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ fnv1a("mock.segmenter.projection"));
        let scale = 1.0 / (HIST_BINS as f64).sqrt();
        let projection = Array2::from_shape_fn((HIST_BINS, cfg.dense_channels), |_| {
            rng.gen_range(-1.0..1.0) * scale
        });
        MockSegmenter {
            quant_step: cfg.quant_step.max(1),
            dense_channels: cfg.dense_channels,
            dense_stride: cfg.dense_stride.max(1),
            projection,
        }
    }

    fn quantize(&self, image: &RgbImage) -> Vec<(u8, u8, u8)> {
        let q = self.quant_step;
        image
            .pixels()
            .map(|p| (p[0] / q, p[1] / q, p[2] / q))
            .collect()
    }

    fn dense_features(&self, image: &RgbImage) -> DenseFeatures {
        let (w, h) = image.dimensions();
        let s = self.dense_stride as u32;
        let (cw, ch) = (((w + s - 1) / s) as usize, ((h + s - 1) / s) as usize);
        let mut data = Array2::zeros((cw * ch, self.dense_channels));
        for cy in 0..ch {
            for cx in 0..cw {
                let mut hist = [0.0f64; HIST_BINS];
                let mut count = 0.0f64;
                for py in (cy as u32 * s)..((cy as u32 + 1) * s).min(h) {
                    for px in (cx as u32 * s)..((cx as u32 + 1) * s).min(w) {
                        let p = image.get_pixel(px, py);
                        let bin =
                            (p[0] as usize / 64) * 16 + (p[1] as usize / 64) * 4 + p[2] as usize / 64;
                        hist[bin] += 1.0;
                        count += 1.0;
                    }
                }
                for (b, v) in hist.iter_mut().enumerate() {
                    *v /= count.max(1.0);
                    let _ = b;
                }
                let row = cy * cw + cx;
                for c in 0..self.dense_channels {
                    let mut acc = 0.0;
                    for (b, &hv) in hist.iter().enumerate() {
                        acc += hv * self.projection[(b, c)];
                    }
                    data[(row, c)] = acc;
                }
            }
        }
        DenseFeatures {
            h: ch,
            w: cw,
            stride: self.dense_stride,
            data,
        }
    }
}

fn check_image(image: &RgbImage) -> Result<()> {
    if image.width() == 0 || image.height() == 0 {
        return Err(Error::Input("empty image".into()));
    }
    Ok(())
}

impl Segmenter for MockSegmenter {
    fn segment_auto(&self, image: &RgbImage) -> Result<SegmenterOutput> {
        check_image(image)?;
        let (w, h) = image.dimensions();
        let keys = self.quantize(image);
        let comps = connected_components(w, h, &keys);
        let masks: Vec<Mask> = comps
            .iter()
            .map(|c| Mask::from_indices(w, h, c))
            .collect();
        let scores: Vec<f64> = masks.iter().map(|m| m.solidity()).collect();
        let out = SegmenterOutput {
            masks,
            scores,
            dense: self.dense_features(image),
        };
        out.validate()?;
        Ok(out)
    }

    fn segment_boxes(&self, image: &RgbImage, boxes: &DetectionSet) -> Result<SegmenterOutput> {
        check_image(image)?;
        let (w, h) = image.dimensions();
        for (i, b) in boxes.boxes.iter().enumerate() {
            if !b.is_valid_in(w, h) {
                return Err(Error::Input(format!("box {i} outside image: {b:?}")));
            }
        }
        let keys = self.quantize(image);
        let mut masks = Vec::with_capacity(boxes.len());
        let mut scores = Vec::with_capacity(boxes.len());
        for b in &boxes.boxes {
            // components restricted to the box; keep the largest
            let bw = b.width();
            let bh = b.height();
            let sub: Vec<(u8, u8, u8)> = (0..bw * bh)
                .map(|i| {
                    let (x, y) = (b.x0 + i % bw, b.y0 + i / bw);
                    keys[(y * w + x) as usize]
                })
                .collect();
            let comps = connected_components(bw, bh, &sub);
            let best = comps
                .iter()
                .max_by_key(|c| c.len())
                .expect("non-empty box has at least one component");
            let full: Vec<usize> = best
                .iter()
                .map(|&i| {
                    let (x, y) = (b.x0 + i as u32 % bw, b.y0 + i as u32 / bw);
                    (y * w + x) as usize
                })
                .collect();
            let mask = Mask::from_indices(w, h, &full);
            scores.push(mask.solidity());
            masks.push(mask);
        }
        let out = SegmenterOutput {
            masks,
            scores,
            dense: self.dense_features(image),
        };
        out.validate()?;
        Ok(out)
    }
}

/// Detector mock: each prompt that names a generator class is matched by
/// color; every connected component of that class becomes one box with
/// score 1.0. Unknown prompts yield nothing.
#[derive(Default)]
pub struct MockDetector;

const COLOR_TOL: i16 = 20;

impl MockDetector {
    pub fn new() -> MockDetector {
        MockDetector
    }
}

fn close(a: u8, b: u8) -> bool {
    (a as i16 - b as i16).abs() <= COLOR_TOL
}

impl Detector for MockDetector {
    fn detect(&self, image: &RgbImage, prompts: &[String]) -> Result<DetectionSet> {
        if prompts.is_empty() {
            return Err(Error::Input("prompt list must not be empty".into()));
        }
        check_image(image)?;
        let (w, h) = image.dimensions();
        let mut out = DetectionSet::default();
        for (label, prompt) in prompts.iter().enumerate() {
            let Some(class_idx) = CLASS_NAMES.iter().position(|n| n == prompt) else {
                continue;
            };
            let color = crate::data::synth::CLASS_COLORS[class_idx];
            let keys: Vec<bool> = image
                .pixels()
                .map(|p| close(p[0], color[0]) && close(p[1], color[1]) && close(p[2], color[2]))
                .collect();
            for comp in connected_components(w, h, &keys) {
                if !keys[comp[0]] {
                    continue; // background component of the predicate grid
                }
                let mask = Mask::from_indices(w, h, &comp);
                let bbox = mask.bbox().expect("component is non-empty");
                out.boxes.push(bbox);
                out.labels.push(label);
                out.scores.push(1.0);
            }
        }
        out.validate(w, h, prompts.len())?;
        Ok(out)
    }
}

/// Text encoder mock: seeded hash of character trigrams into a fixed-width
/// signed bag, L2-normalized.
pub struct MockTextEncoder {
    dim: usize,
    seed: u64,
}

impl MockTextEncoder {
    pub fn new(dim: usize, seed: u64) -> MockTextEncoder {
        MockTextEncoder { dim, seed }
    }

    fn embed_one(&self, s: &str) -> Result<Vec<f64>> {
        if s.is_empty() {
            return Err(Error::Input("cannot embed an empty string".into()));
        }
        let padded = format!("^{}$", s.to_lowercase());
        let bytes = padded.as_bytes();
        let mut v = vec![0.0f64; self.dim];
        for win in bytes.windows(3) {
            let tri = std::str::from_utf8(win).unwrap_or("###");
            let h = fnv1a(tri) ^ self.seed.rotate_left(17);
            let idx = (h % self.dim as u64) as usize;
            let sign = if (h >> 32) & 1 == 0 { 1.0 } else { -1.0 };
            v[idx] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        } else {
            // all trigram contributions cancelled; fall back to a unit axis
            v[(fnv1a(&padded) % self.dim as u64) as usize] = 1.0;
        }
        Ok(v)
    }
}

impl TextEncoder for MockTextEncoder {
    fn embed(&self, strings: &[String]) -> Result<Array2<f64>> {
        if strings.is_empty() {
            return Err(Error::Input("cannot embed an empty string list".into()));
        }
        let mut out = Array2::zeros((strings.len(), self.dim));
        for (i, s) in strings.iter().enumerate() {
            let v = self.embed_one(s)?;
            for (j, x) in v.into_iter().enumerate() {
                out[(i, j)] = x;
            }
        }
        Ok(out)
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AdapterConfig;
    use crate::data::synth::{render_scene, Geometry, SceneShape, ShapeClass};
    use image::Rgb;

    fn three_rect_scene() -> RgbImage {
        let shapes = vec![
            SceneShape {
                class: ShapeClass::Building,
                geometry: Geometry::Rect { x: 4, y: 4, w: 10, h: 8 },
            },
            SceneShape {
                class: ShapeClass::Building,
                geometry: Geometry::Rect { x: 30, y: 10, w: 12, h: 12 },
            },
            SceneShape {
                class: ShapeClass::Vegetation,
                geometry: Geometry::Rect { x: 10, y: 40, w: 14, h: 10 },
            },
        ];
        render_scene(&shapes, 64)
    }

    #[test]
    fn three_disjoint_rectangles_give_four_masks() {
        let seg = MockSegmenter::new(&AdapterConfig::default(), 9);
        let out = seg.segment_auto(&three_rect_scene()).unwrap();
        assert_eq!(out.masks.len(), 4, "3 shapes + background");
        let total: u64 = out.masks.iter().map(|m| m.area()).sum();
        assert_eq!(total, 64 * 64, "masks partition the image");
    }

    #[test]
    fn uniform_image_is_one_mask() {
        let seg = MockSegmenter::new(&AdapterConfig::default(), 9);
        let img = RgbImage::from_pixel(32, 32, Rgb([100, 100, 100]));
        let out = seg.segment_auto(&img).unwrap();
        assert_eq!(out.masks.len(), 1);
        assert_eq!(out.masks[0].area(), 32 * 32);
    }

    #[test]
    fn segmenter_is_bit_reproducible() {
        let cfg = AdapterConfig::default();
        let img = three_rect_scene();
        let a = MockSegmenter::new(&cfg, 5).segment_auto(&img).unwrap();
        let b = MockSegmenter::new(&cfg, 5).segment_auto(&img).unwrap();
        assert_eq!(a.masks, b.masks);
        assert_eq!(a.scores, b.scores);
        assert_eq!(a.dense.data, b.dense.data);
    }

    #[test]
    fn box_segmentation_recovers_rectangle() {
        let seg = MockSegmenter::new(&AdapterConfig::default(), 9);
        let img = three_rect_scene();
        let boxes = DetectionSet {
            boxes: vec![PixelBox { x0: 4, y0: 4, x1: 14, y1: 12 }],
            labels: vec![0],
            scores: vec![1.0],
        };
        let out = seg.segment_boxes(&img, &boxes).unwrap();
        assert_eq!(out.masks.len(), 1);
        assert_eq!(out.masks[0].area(), 10 * 8);
        assert_eq!(out.masks[0].bbox().unwrap(), boxes.boxes[0]);
    }

    #[test]
    fn degenerate_box_yields_minimal_mask() {
        let seg = MockSegmenter::new(&AdapterConfig::default(), 9);
        let img = RgbImage::from_pixel(16, 16, Rgb([100, 100, 100]));
        let boxes = DetectionSet {
            boxes: vec![PixelBox { x0: 5, y0: 5, x1: 6, y1: 6 }],
            labels: vec![0],
            scores: vec![1.0],
        };
        let out = seg.segment_boxes(&img, &boxes).unwrap();
        assert_eq!(out.masks[0].area(), 1);
    }

    #[test]
    fn box_outside_image_is_input_error() {
        let seg = MockSegmenter::new(&AdapterConfig::default(), 9);
        let img = RgbImage::from_pixel(16, 16, Rgb([100, 100, 100]));
        let boxes = DetectionSet {
            boxes: vec![PixelBox { x0: 10, y0: 10, x1: 20, y1: 20 }],
            labels: vec![0],
            scores: vec![1.0],
        };
        assert!(matches!(
            seg.segment_boxes(&img, &boxes),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn detector_finds_buildings_by_prompt() {
        let det = MockDetector::new();
        let img = three_rect_scene();
        let prompts = vec!["building".to_string(), "road".to_string()];
        let out = det.detect(&img, &prompts).unwrap();
        assert_eq!(out.len(), 2, "two buildings, no roads");
        assert!(out.labels.iter().all(|&l| l == 0));
        assert!(out.scores.iter().all(|&s| s == 1.0));
    }

    #[test]
    fn unknown_prompt_gives_empty_set() {
        let det = MockDetector::new();
        let img = three_rect_scene();
        let out = det
            .detect(&img, &["spaceship".to_string()])
            .unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn empty_scene_gives_empty_set() {
        let det = MockDetector::new();
        let img = render_scene(&[], 32);
        let out = det
            .detect(&img, &["building".to_string()])
            .unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn text_encoder_contracts() {
        let enc = MockTextEncoder::new(32, 3);
        let m = enc
            .embed(&["building".into(), "building".into(), "road".into()])
            .unwrap();
        assert_eq!(m.dim(), (3, 32));
        for i in 0..32 {
            assert_eq!(m[(0, i)], m[(1, i)], "identical strings, identical rows");
        }
        for row in m.rows() {
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
        assert!(enc.embed(&["".into()]).is_err());
    }
}
