//! Native caption evaluation metrics: BLEU-N, ROUGE-L, METEOR (approximate:
//! exact + stem stages, no synonym dictionary) and CIDEr-D.

mod bleu;
mod cider;
mod meteor;
mod rouge;

pub use bleu::bleu;
pub use cider::cider_d;
pub use meteor::meteor_approx;
pub use rouge::rouge_l;

use crate::data::tokenize;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Tokenized hypotheses and references, aligned by sample.
#[derive(Debug, Clone, Default)]
pub struct EvalCorpus {
    pub hypotheses: Vec<Vec<String>>,
    pub references: Vec<Vec<Vec<String>>>,
}

impl EvalCorpus {
    pub fn from_strings<H, R>(hyps: &[H], refs: &[Vec<R>]) -> Result<EvalCorpus>
    where
        H: AsRef<str>,
        R: AsRef<str>,
    {
        let corpus = EvalCorpus {
            hypotheses: hyps.iter().map(|h| tokenize(h.as_ref())).collect(),
            references: refs
                .iter()
                .map(|rs| rs.iter().map(|r| tokenize(r.as_ref())).collect())
                .collect(),
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.hypotheses.is_empty() {
            return Err(Error::Input("empty hypothesis set".into()));
        }
        if self.hypotheses.len() != self.references.len() {
            return Err(Error::Input(format!(
                "{} hypotheses vs {} reference sets",
                self.hypotheses.len(),
                self.references.len()
            )));
        }
        if let Some(i) = self.references.iter().position(|r| r.is_empty()) {
            return Err(Error::Input(format!("sample {i} has no references")));
        }
        Ok(())
    }
}

/// The full metric report; key names are part of the output schema.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub meteor_approx: f64,
    pub rouge_l: f64,
    pub cider_d: f64,
}

pub fn score_all(corpus: &EvalCorpus) -> Result<MetricReport> {
    Ok(MetricReport {
        bleu1: bleu(corpus, 1)?,
        bleu2: bleu(corpus, 2)?,
        bleu3: bleu(corpus, 3)?,
        bleu4: bleu(corpus, 4)?,
        meteor_approx: meteor_approx(corpus)?,
        rouge_l: rouge_l(corpus)?,
        cider_d: cider_d(corpus)?,
    })
}

pub(crate) fn ngram_counts(
    tokens: &[String],
    n: usize,
) -> std::collections::BTreeMap<Vec<String>, u64> {
    let mut counts = std::collections::BTreeMap::new();
    if tokens.len() >= n {
        for win in tokens.windows(n) {
            *counts.entry(win.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(hyps: &[&str], refs: &[Vec<&str>]) -> EvalCorpus {
        EvalCorpus::from_strings(hyps, refs).unwrap()
    }

    #[test]
    fn identical_corpus_scores_are_maximal() {
        let c = corpus(
            &["a building appears on the bareland", "the road is removed"],
            &[
                vec!["a building appears on the bareland"],
                vec!["the road is removed"],
            ],
        );
        assert_eq!(bleu(&c, 4).unwrap(), 100.0);
        assert_eq!(rouge_l(&c).unwrap(), 100.0);
        assert!(cider_d(&c).unwrap() > 0.0);
    }

    #[test]
    fn report_schema_keys_are_stable() {
        let c = corpus(&["a b"], &[vec!["a b"]]);
        let report = score_all(&c).unwrap();
        let json = serde_json::to_value(&report).unwrap();
        let mut keys: Vec<&str> = json.as_object().unwrap().keys().map(|s| s.as_str()).collect();
        keys.sort_unstable();
        let mut expected = vec![
            "bleu1",
            "bleu2",
            "bleu3",
            "bleu4",
            "meteor_approx",
            "rouge_l",
            "cider_d",
        ];
        expected.sort_unstable();
        assert_eq!(keys, expected);
    }

    #[test]
    fn metrics_are_order_invariant_and_bounded() {
        let hyps = ["a b c", "d e f", "a c e"];
        let refs = [
            vec!["a b c d"],
            vec!["d e f", "d f e"],
            vec!["a b c e"],
        ];
        let c1 = corpus(&hyps, &refs);
        let perm = [2usize, 0, 1];
        let hyps2: Vec<&str> = perm.iter().map(|&i| hyps[i]).collect();
        let refs2: Vec<Vec<&str>> = perm.iter().map(|&i| refs[i].clone()).collect();
        let c2 = corpus(&hyps2, &refs2);
        let r1 = score_all(&c1).unwrap();
        let r2 = score_all(&c2).unwrap();
        assert_eq!(r1, r2);
        for v in [r1.bleu1, r1.bleu4, r1.rouge_l, r1.meteor_approx] {
            assert!((0.0..=100.0).contains(&v));
        }
        assert!(r1.cider_d >= 0.0);
    }

    #[test]
    fn replacing_hypothesis_with_reference_never_hurts() {
        let hyps = ["a b x", "q w e r", "the road is gone"];
        let refs = [
            vec!["a b c"],
            vec!["q w e r t"],
            vec!["the road is removed", "one road disappears"],
        ];
        let base = score_all(&corpus(&hyps, &refs)).unwrap();
        for i in 0..hyps.len() {
            let mut hyps2: Vec<&str> = hyps.to_vec();
            hyps2[i] = refs[i][0];
            let better = score_all(&corpus(&hyps2, &refs)).unwrap();
            assert!(better.bleu1 >= base.bleu1 - 1e-9);
            assert!(better.bleu4 >= base.bleu4 - 1e-9);
            assert!(better.rouge_l >= base.rouge_l - 1e-9);
            assert!(better.meteor_approx >= base.meteor_approx - 1e-9);
            assert!(better.cider_d >= base.cider_d - 1e-9);
        }
    }
}
