//! CIDEr-D: clipped TF-IDF n-gram cosine (n = 1..4) with a Gaussian length
//! penalty (sigma = 6), averaged over references and orders, scaled by 10.
//! IDF statistics come from the reference side of the corpus.

use super::{ngram_counts, EvalCorpus};
use crate::error::Result;
use std::collections::BTreeMap;

const SIGMA: f64 = 6.0;
const MAX_N: usize = 4;

type Gram = Vec<String>;

pub fn cider_d(corpus: &EvalCorpus) -> Result<f64> {
    corpus.validate()?;
    if corpus.len() < 2 {
        log::warn!("cider-d on a single-sample corpus: idf degenerates to log(1) = 0");
    }
    let num_images = corpus.len() as f64;

    // document frequency per order: in how many samples' references a gram appears
    let mut df: Vec<BTreeMap<Gram, f64>> = vec![BTreeMap::new(); MAX_N];
    for refs in &corpus.references {
        for n in 1..=MAX_N {
            let mut seen: std::collections::BTreeSet<Gram> = Default::default();
            for r in refs {
                seen.extend(ngram_counts(r, n).into_keys());
            }
            for g in seen {
                *df[n - 1].entry(g).or_insert(0.0) += 1.0;
            }
        }
    }
    let idf = |n: usize, g: &Gram| -> f64 {
        let d = df[n - 1].get(g).copied().unwrap_or(0.0).max(1.0);
        num_images.ln() - d.ln()
    };

    let tfidf = |tokens: &[String], n: usize| -> (BTreeMap<Gram, f64>, f64) {
        let mut vec: BTreeMap<Gram, f64> = BTreeMap::new();
        for (g, c) in ngram_counts(tokens, n) {
            let w = c as f64 * idf(n, &g);
            vec.insert(g, w);
        }
        let norm = vec.values().map(|v| v * v).sum::<f64>().sqrt();
        (vec, norm)
    };

    let mut total = 0.0;
    for (hyp, refs) in corpus.hypotheses.iter().zip(&corpus.references) {
        let mut per_n = [0.0f64; MAX_N];
        for n in 1..=MAX_N {
            let (hv, hnorm) = tfidf(hyp, n);
            let mut acc = 0.0;
            for r in refs {
                let (rv, rnorm) = tfidf(r, n);
                let mut dot = 0.0;
                for (g, hw) in &hv {
                    if let Some(rw) = rv.get(g) {
                        dot += hw.min(*rw) * rw;
                    }
                }
                let mut val = 0.0;
                if hnorm > 0.0 && rnorm > 0.0 {
                    val = dot / (hnorm * rnorm);
                }
                let delta = hyp.len() as f64 - r.len() as f64;
                val *= (-delta * delta / (2.0 * SIGMA * SIGMA)).exp();
                acc += val;
            }
            per_n[n - 1] = acc / refs.len() as f64;
        }
        let sample_score = per_n.iter().sum::<f64>() / MAX_N as f64 * 10.0;
        total += sample_score;
    }
    Ok(total / num_images)
}
