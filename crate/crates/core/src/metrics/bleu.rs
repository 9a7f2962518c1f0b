//! Corpus-level BLEU with clipped n-gram precision, geometric mean over
//! orders 1..n and the brevity penalty. Reported on a 0..100 scale.

use super::{ngram_counts, EvalCorpus};
use crate::error::{Error, Result};

pub fn bleu(corpus: &EvalCorpus, n: usize) -> Result<f64> {
    if !(1..=4).contains(&n) {
        return Err(Error::Input(format!("bleu order {n} outside 1..=4")));
    }
    corpus.validate()?;

    let mut clipped = vec![0u64; n];
    let mut totals = vec![0u64; n];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;

    for (hyp, refs) in corpus.hypotheses.iter().zip(&corpus.references) {
        hyp_len += hyp.len();
        // closest reference length; ties go to the shorter one
        let closest = refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| {
                let diff = (l as i64 - hyp.len() as i64).abs();
                (diff, l)
            })
            .unwrap_or(0);
        ref_len += closest;

        for order in 1..=n {
            let hyp_counts = ngram_counts(hyp, order);
            let mut ref_max: std::collections::BTreeMap<Vec<String>, u64> = Default::default();
            for r in refs {
                for (g, c) in ngram_counts(r, order) {
                    let slot = ref_max.entry(g).or_insert(0);
                    *slot = (*slot).max(c);
                }
            }
            for (g, c) in &hyp_counts {
                totals[order - 1] += c;
                clipped[order - 1] += (*c).min(ref_max.get(g).copied().unwrap_or(0));
            }
        }
    }

    let mut log_sum = 0.0;
    for order in 0..n {
        if totals[order] == 0 || clipped[order] == 0 {
            return Ok(0.0);
        }
        log_sum += (clipped[order] as f64 / totals[order] as f64).ln();
    }
    let precision = (log_sum / n as f64).exp();
    let bp = if hyp_len == 0 {
        return Ok(0.0);
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * bp * precision)
}
