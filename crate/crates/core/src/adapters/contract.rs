//! Type-contract checks shared by every adapter implementation. The mocks
//! must pass these; a real backend wired in later is held to the same
//! contract by calling the same functions.

use super::{DetectionSet, Detector, PixelBox, Segmenter, TextEncoder};
use crate::error::Result;
use image::RgbImage;

pub fn check_segmenter(seg: &dyn Segmenter, image: &RgbImage) -> Result<()> {
    let out = seg.segment_auto(image)?;
    out.validate()?;
    let again = seg.segment_auto(image)?;
    assert_eq!(out.masks, again.masks, "segment_auto must be deterministic");
    assert_eq!(out.scores, again.scores);
    assert_eq!(out.dense.data, again.dense.data);
    for s in &out.scores {
        assert!((0.0..=1.0).contains(s), "score {s} outside [0,1]");
    }

    // box-conditioned masks stay inside their boxes
    let (w, h) = image.dimensions();
    let boxes = DetectionSet {
        boxes: vec![PixelBox {
            x0: 0,
            y0: 0,
            x1: (w / 2).max(1),
            y1: (h / 2).max(1),
        }],
        labels: vec![0],
        scores: vec![1.0],
    };
    let refined = seg.segment_boxes(image, &boxes)?;
    assert_eq!(refined.masks.len(), boxes.len(), "one mask per box");
    for (m, b) in refined.masks.iter().zip(&boxes.boxes) {
        for i in m.indices() {
            let (x, y) = (i as u32 % m.w, i as u32 / m.w);
            assert!(b.contains(x, y), "mask pixel ({x},{y}) escapes box {b:?}");
        }
    }
    Ok(())
}

pub fn check_detector(det: &dyn Detector, image: &RgbImage, prompts: &[String]) -> Result<()> {
    let out = det.detect(image, prompts)?;
    let (w, h) = image.dimensions();
    out.validate(w, h, prompts.len())?;
    let again = det.detect(image, prompts)?;
    assert_eq!(out.boxes, again.boxes, "detect must be deterministic");
    Ok(())
}

pub fn check_text_encoder(enc: &dyn TextEncoder) -> Result<()> {
    let strings = vec![
        "building".to_string(),
        "road".to_string(),
        "building".to_string(),
    ];
    let m = enc.embed(&strings)?;
    assert_eq!(m.nrows(), strings.len());
    assert_eq!(m.ncols(), enc.dim());
    for row in m.rows() {
        let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6, "rows must be L2-normalized");
    }
    for j in 0..m.ncols() {
        assert_eq!(m[(0, j)], m[(2, j)], "equal strings map to equal rows");
    }
    Ok(())
}
