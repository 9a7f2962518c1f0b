//! Cross-epoch region matching. The native matcher scores descriptor pairs
//! by cosine similarity of features and of centroid positional encodings,
//! runs Sinkhorn normalization with a dustbin row/column, then keeps
//! mutual-best pairs above the acceptance threshold. A pretrained-matcher
//! slot exists behind the same entry point.

use super::RegionDescriptor;
use crate::config::{MatcherKind, RegionConfig};
use crate::error::{Error, Result};
use crate::nn::posenc_point;
use ndarray::Array2;

/// Soft assignment scores plus the discrete matching derived from them.
#[derive(Debug, Clone)]
pub struct MatchResult {
    /// Real-region block of the soft assignment, `(n1, n2)` in [0, 1].
    pub scores: Array2<f64>,
    /// Full Sinkhorn output including the dustbin row/column.
    pub assignment: Array2<f64>,
    /// Mutual-best pairs with score above the threshold.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_1: Vec<usize>,
    pub unmatched_2: Vec<usize>,
}

impl MatchResult {
    pub fn empty(n1: usize, n2: usize) -> MatchResult {
        MatchResult {
            scores: Array2::zeros((n1, n2)),
            assignment: Array2::zeros((n1 + 1, n2 + 1)),
            matches: Vec::new(),
            unmatched_1: (0..n1).collect(),
            unmatched_2: (0..n2).collect(),
        }
    }

    pub fn match_matrix(&self) -> Array2<bool> {
        let mut m = Array2::from_elem(self.scores.dim(), false);
        for &(i, j) in &self.matches {
            m[(i, j)] = true;
        }
        m
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na < 1e-8 || nb < 1e-8 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Hard cap on Sinkhorn sweeps; convergence is usually far earlier.
const SINKHORN_MAX_SWEEPS: usize = 10_000;
/// Marginal convergence target, one digit tighter than the 1e-6 contract.
const SINKHORN_TOL: f64 = 1e-9;

/// Sinkhorn normalization of `exp(affinity / temp)` over the augmented
/// matrix with a dustbin row/column. Real rows and columns are normalized
/// towards marginal 1; the dustbin marginals absorb the size difference and
/// the corner cell stays active so the problem is feasible for any (n1, n2).
/// Runs at least `min_sweeps` row/column sweeps, then continues until every
/// real marginal is within `SINKHORN_TOL` of 1; a final row update leaves
/// real row sums exact.
pub fn sinkhorn_with_dustbin(
    affinity: &Array2<f64>,
    dustbin_score: f64,
    temp: f64,
    min_sweeps: usize,
) -> Array2<f64> {
    let (n1, n2) = affinity.dim();
    let mut k = Array2::zeros((n1 + 1, n2 + 1));
    for i in 0..=n1 {
        for j in 0..=n2 {
            let a = if i < n1 && j < n2 {
                affinity[(i, j)]
            } else {
                dustbin_score
            };
            k[(i, j)] = (a / temp).exp();
        }
    }
    let mut r = vec![1.0; n1 + 1];
    r[n1] = n2 as f64;
    let mut c = vec![1.0; n2 + 1];
    c[n2] = n1 as f64;

    let mut u = vec![1.0; n1 + 1];
    let mut v = vec![1.0; n2 + 1];
    for sweep in 0..SINKHORN_MAX_SWEEPS {
        for i in 0..=n1 {
            let s: f64 = (0..=n2).map(|j| k[(i, j)] * v[j]).sum();
            u[i] = if s > 0.0 { r[i] / s } else { 0.0 };
        }
        for j in 0..=n2 {
            let s: f64 = (0..=n1).map(|i| k[(i, j)] * u[i]).sum();
            v[j] = if s > 0.0 { c[j] / s } else { 0.0 };
        }
        if sweep + 1 >= min_sweeps {
            // rows are the stale side after a column update
            let worst = (0..n1)
                .map(|i| {
                    let s: f64 = (0..=n2).map(|j| u[i] * k[(i, j)] * v[j]).sum();
                    (s - 1.0).abs()
                })
                .fold(0.0f64, f64::max);
            if worst < SINKHORN_TOL {
                break;
            }
        }
    }
    for i in 0..=n1 {
        let s: f64 = (0..=n2).map(|j| k[(i, j)] * v[j]).sum();
        u[i] = if s > 0.0 { r[i] / s } else { 0.0 };
    }

    let mut p = Array2::zeros((n1 + 1, n2 + 1));
    for i in 0..=n1 {
        for j in 0..=n2 {
            p[(i, j)] = u[i] * k[(i, j)] * v[j];
        }
    }
    p
}

/// Native affinity: equal-weight blend of descriptor cosine and centroid
/// positional-encoding cosine.
pub fn native_affinity(
    desc1: &[RegionDescriptor],
    desc2: &[RegionDescriptor],
    pos_dim: usize,
) -> Array2<f64> {
    let enc = |d: &RegionDescriptor| posenc_point(d.centroid.0, d.centroid.1, pos_dim);
    let v1: Vec<Vec<f64>> = desc1.iter().map(|d| d.vector.data().row(0).to_vec()).collect();
    let v2: Vec<Vec<f64>> = desc2.iter().map(|d| d.vector.data().row(0).to_vec()).collect();
    let p1: Vec<Vec<f64>> = desc1.iter().map(enc).collect();
    let p2: Vec<Vec<f64>> = desc2.iter().map(enc).collect();
    Array2::from_shape_fn((desc1.len(), desc2.len()), |(i, j)| {
        0.5 * cosine(&v1[i], &v2[j]) + 0.5 * cosine(&p1[i], &p2[j])
    })
}

/// Mutual-best filtering above the threshold, then the unmatched sets.
fn discretize(scores: &Array2<f64>, assignment: Array2<f64>, tau: f64) -> MatchResult {
    let (n1, n2) = scores.dim();
    let mut matches = Vec::new();
    for i in 0..n1 {
        let Some(j) = argmax_row(scores, i) else { continue };
        if scores[(i, j)] <= tau {
            continue;
        }
        let Some(best_i) = argmax_col(scores, j) else { continue };
        if best_i == i {
            matches.push((i, j));
        }
    }
    let unmatched_1 = (0..n1).filter(|i| !matches.iter().any(|m| m.0 == *i)).collect();
    let unmatched_2 = (0..n2).filter(|j| !matches.iter().any(|m| m.1 == *j)).collect();
    MatchResult {
        scores: scores.clone(),
        assignment,
        matches,
        unmatched_1,
        unmatched_2,
    }
}

fn argmax_row(m: &Array2<f64>, i: usize) -> Option<usize> {
    (0..m.ncols()).reduce(|a, b| if m[(i, b)] > m[(i, a)] { b } else { a })
}

fn argmax_col(m: &Array2<f64>, j: usize) -> Option<usize> {
    (0..m.nrows()).reduce(|a, b| if m[(b, j)] > m[(a, j)] { b } else { a })
}

pub fn match_regions(
    desc1: &[RegionDescriptor],
    desc2: &[RegionDescriptor],
    cfg: &RegionConfig,
) -> Result<MatchResult> {
    if !(cfg.match_threshold > 0.0 && cfg.match_threshold < 1.0) {
        return Err(Error::Config(format!(
            "match threshold {} outside (0, 1)",
            cfg.match_threshold
        )));
    }
    let (n1, n2) = (desc1.len(), desc2.len());
    if n1 == 0 || n2 == 0 {
        return Ok(MatchResult::empty(n1, n2));
    }
    match cfg.matcher {
        MatcherKind::AllUnmatched => Ok(MatchResult::empty(n1, n2)),
        MatcherKind::Superglue => Err(Error::BackendUnavailable(
            "pretrained matcher needs adapters.matcher_weights; use matcher = \"native\"".into(),
        )),
        MatcherKind::Native => {
            let affinity = native_affinity(desc1, desc2, cfg.pos_dim);
            let p = sinkhorn_with_dustbin(
                &affinity,
                cfg.dustbin_score,
                cfg.sinkhorn_temp,
                cfg.sinkhorn_iters,
            );
            let scores = p.slice(ndarray::s![0..n1, 0..n2]).to_owned();
            Ok(discretize(&scores, p, cfg.match_threshold))
        }
    }
}
