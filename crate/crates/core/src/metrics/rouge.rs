//! ROUGE-L: longest-common-subsequence F-measure (beta = 1.2), max over
//! references, corpus mean on a 0..100 scale.

use super::EvalCorpus;
use crate::error::Result;

const BETA: f64 = 1.2;

pub fn rouge_l(corpus: &EvalCorpus) -> Result<f64> {
    corpus.validate()?;
    let mut total = 0.0;
    for (hyp, refs) in corpus.hypotheses.iter().zip(&corpus.references) {
        let best = refs
            .iter()
            .map(|r| sample_score(hyp, r))
            .fold(0.0f64, f64::max);
        total += best;
    }
    Ok(100.0 * total / corpus.len() as f64)
}

fn sample_score(hyp: &[String], reference: &[String]) -> f64 {
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(hyp, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let prec = lcs / hyp.len() as f64;
    let rec = lcs / reference.len() as f64;
    ((1.0 + BETA * BETA) * prec * rec) / (rec + BETA * BETA * prec)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            cur[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(hyps: &[&str], refs: &[Vec<&str>]) -> EvalCorpus {
        EvalCorpus::from_strings(hyps, refs).unwrap()
    }

    #[test]
    fn identical_is_100() {
        let c = corpus(&["a b c"], &[vec!["a b c"]]);
        assert_eq!(rouge_l(&c).unwrap(), 100.0);
    }

    #[test]
    fn hand_case_lcs_f_measure() {
        // hyp "a c", ref "a b c": LCS = 2, P = 1.0, R = 2/3.
        // F = (1 + 1.44) * 1 * (2/3) / ((2/3) + 1.44 * 1) = 0.7721518987...
        let c = corpus(&["a c"], &[vec!["a b c"]]);
        let expected = (2.44 * 1.0 * (2.0 / 3.0)) / ((2.0 / 3.0) + 1.44);
        let got = rouge_l(&c).unwrap();
        assert!((got - 100.0 * expected).abs() < 1e-9);
        assert!((got - 77.215_189_873).abs() < 1e-6);
    }

    #[test]
    fn disjoint_is_zero() {
        let c = corpus(&["x y"], &[vec!["a b c"]]);
        assert_eq!(rouge_l(&c).unwrap(), 0.0);
    }

    #[test]
    fn lcs_is_order_sensitive() {
        assert_eq!(
            lcs_len(
                &["a".into(), "b".into(), "c".into()],
                &["c".into(), "b".into(), "a".into()]
            ),
            1
        );
    }
}
