//! Inspection dumps for a captioned pair: prior maps and region masks as
//! PNGs, matches and semantic selections as JSON.

use super::{Model, SampleForward};
use crate::data::BiTemporalSample;
use crate::error::Result;
use crate::regions::RegionProposal;
use image::{GrayImage, Luma};
use serde::Serialize;
use std::path::Path;

#[derive(Debug, Clone, Serialize)]
pub struct DebugSummary {
    pub mask_count_a: usize,
    pub mask_count_b: usize,
    pub match_count: usize,
    pub unmatched_a: usize,
    pub unmatched_b: usize,
    pub files: Vec<String>,
}

#[derive(Serialize)]
struct MatchLine {
    a_index: usize,
    b_index: usize,
    score: f64,
    a_centroid: (f64, f64),
    b_centroid: (f64, f64),
}

#[derive(Serialize)]
struct MatchFile {
    matches: Vec<MatchLine>,
    unmatched_a: Vec<usize>,
    unmatched_b: Vec<usize>,
}

#[derive(Serialize)]
struct SemanticFile {
    ranking: Vec<usize>,
    selected: Vec<usize>,
    centroids: Vec<(f64, f64)>,
}

fn prior_to_png(values: &ndarray::Array2<f64>, h: usize, w: usize) -> GrayImage {
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        let v = values[(y as usize * w + x as usize, 0)].clamp(0.0, 1.0);
        Luma([(v * 255.0).round() as u8])
    })
}

fn mask_to_png(p: &RegionProposal) -> GrayImage {
    GrayImage::from_fn(p.mask.w, p.mask.h, |x, y| {
        Luma([if p.mask.get(x, y) { 255 } else { 0 }])
    })
}

/// Write the full bundle into `dir` and return a summary of what exists.
pub fn write_debug_bundle(
    dir: &Path,
    model: &Model,
    sample: &BiTemporalSample,
    forward: &SampleForward,
) -> Result<DebugSummary> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();

    let change = prior_to_png(&forward.priors.change.data(), forward.priors.h, forward.priors.w);
    change.save(dir.join("change_prior.png"))?;
    files.push("change_prior.png".to_string());
    let consistency = prior_to_png(
        &forward.priors.consistency.data(),
        forward.priors.h,
        forward.priors.w,
    );
    consistency.save(dir.join("consistency_prior.png"))?;
    files.push("consistency_prior.png".to_string());

    let mut summary = DebugSummary {
        mask_count_a: 0,
        mask_count_b: 0,
        match_count: 0,
        unmatched_a: 0,
        unmatched_b: 0,
        files: Vec::new(),
    };

    if let Some(trace) = &forward.motion_trace {
        for (epoch, proposals) in [("a", &trace.proposals_a), ("b", &trace.proposals_b)] {
            for (k, p) in proposals.iter().enumerate() {
                let name = format!("mask_{epoch}_{k:03}.png");
                mask_to_png(p).save(dir.join(&name))?;
                files.push(name);
            }
        }
        summary.mask_count_a = trace.proposals_a.len();
        summary.mask_count_b = trace.proposals_b.len();
        summary.match_count = trace.matching.matches.len();
        summary.unmatched_a = trace.matching.unmatched_1.len();
        summary.unmatched_b = trace.matching.unmatched_2.len();

        let match_file = MatchFile {
            matches: trace
                .matching
                .matches
                .iter()
                .map(|&(i, j)| MatchLine {
                    a_index: i,
                    b_index: j,
                    score: trace.matching.scores[(i, j)],
                    a_centroid: trace.proposals_a[i].centroid,
                    b_centroid: trace.proposals_b[j].centroid,
                })
                .collect(),
            unmatched_a: trace.matching.unmatched_1.clone(),
            unmatched_b: trace.matching.unmatched_2.clone(),
        };
        std::fs::write(
            dir.join("matches.json"),
            serde_json::to_string_pretty(&match_file)?,
        )?;
        files.push("matches.json".to_string());
    }

    if model.cfg.ablation.sca {
        if let Some(miner) = &model.miner {
            for (tag, image) in [("a", &sample.image_a), ("b", &sample.image_b)] {
                let (_, trace) = miner.semantic_pool_traced(image, &model.adapters)?;
                if let Some(t) = trace {
                    let file = SemanticFile {
                        ranking: t.ranking.clone(),
                        selected: t.selected.clone(),
                        centroids: t.proposals.iter().map(|p| p.centroid).collect(),
                    };
                    let name = format!("semantic_{tag}.json");
                    std::fs::write(dir.join(&name), serde_json::to_string_pretty(&file)?)?;
                    files.push(name);
                }
            }
        }
    }

    summary.files = files;
    Ok(summary)
}
