//! Approximate METEOR: exact-match stage followed by a stem-match stage
//! (English Snowball stemmer), harmonic mean weighted toward recall
//! (alpha = 0.9) and a fragmentation penalty (gamma = 0.5, beta = 3). The
//! synonym stage of the reference implementation is omitted, which is why
//! this metric is reported as `meteor_approx`.

use super::EvalCorpus;
use crate::error::Result;
use rust_stemmers::{Algorithm, Stemmer};

const ALPHA: f64 = 0.9;
const BETA: f64 = 3.0;
const GAMMA: f64 = 0.5;

pub fn meteor_approx(corpus: &EvalCorpus) -> Result<f64> {
    corpus.validate()?;
    let stemmer = Stemmer::create(Algorithm::English);
    let mut total = 0.0;
    for (hyp, refs) in corpus.hypotheses.iter().zip(&corpus.references) {
        let best = refs
            .iter()
            .map(|r| sample_score(hyp, r, &stemmer))
            .fold(0.0f64, f64::max);
        total += best;
    }
    Ok(100.0 * total / corpus.len() as f64)
}

/// Greedy two-stage alignment; returns matched (hyp_idx, ref_idx) pairs.
fn align(hyp: &[String], reference: &[String], stemmer: &Stemmer) -> Vec<(usize, usize)> {
    let mut hyp_used = vec![false; hyp.len()];
    let mut ref_used = vec![false; reference.len()];
    let mut pairs = Vec::new();

    // stage 1: exact
    for (i, h) in hyp.iter().enumerate() {
        for (j, r) in reference.iter().enumerate() {
            if !ref_used[j] && h == r {
                hyp_used[i] = true;
                ref_used[j] = true;
                pairs.push((i, j));
                break;
            }
        }
    }
    // stage 2: stems of the remainder
    let hyp_stems: Vec<String> = hyp.iter().map(|t| stemmer.stem(t).to_string()).collect();
    let ref_stems: Vec<String> = reference
        .iter()
        .map(|t| stemmer.stem(t).to_string())
        .collect();
    for (i, hs) in hyp_stems.iter().enumerate() {
        if hyp_used[i] {
            continue;
        }
        for (j, rs) in ref_stems.iter().enumerate() {
            if !ref_used[j] && hs == rs {
                hyp_used[i] = true;
                ref_used[j] = true;
                pairs.push((i, j));
                break;
            }
        }
    }
    pairs.sort();
    pairs
}

fn count_chunks(pairs: &[(usize, usize)]) -> usize {
    if pairs.is_empty() {
        return 0;
    }
    let mut chunks = 1;
    for w in pairs.windows(2) {
        if w[1].0 != w[0].0 + 1 || w[1].1 != w[0].1 + 1 {
            chunks += 1;
        }
    }
    chunks
}

fn sample_score(hyp: &[String], reference: &[String], stemmer: &Stemmer) -> f64 {
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let pairs = align(hyp, reference, stemmer);
    let m = pairs.len() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let p = m / hyp.len() as f64;
    let r = m / reference.len() as f64;
    let f_mean = p * r / (ALPHA * p + (1.0 - ALPHA) * r);
    let chunks = count_chunks(&pairs) as f64;
    let penalty = GAMMA * (chunks / m).powf(BETA);
    f_mean * (1.0 - penalty)
}
