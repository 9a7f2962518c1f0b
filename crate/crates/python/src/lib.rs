//! Python bindings: dataset synthesis, knowledge-graph building, caption
//! metrics, and a Pipeline class wrapping train / load / caption / evaluate.

use changecap::captioner::DecodeStrategy;
use changecap::config::TrainConfig;
use changecap::data::{self, Split};
use changecap::harness::{self, Checkpoint};
use changecap::kg;
use changecap::metrics::{score_all, EvalCorpus, MetricReport};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn report_to_map(r: &MetricReport) -> BTreeMap<String, f64> {
    BTreeMap::from([
        ("bleu1".to_string(), r.bleu1),
        ("bleu2".to_string(), r.bleu2),
        ("bleu3".to_string(), r.bleu3),
        ("bleu4".to_string(), r.bleu4),
        ("meteor_approx".to_string(), r.meteor_approx),
        ("rouge_l".to_string(), r.rouge_l),
        ("cider_d".to_string(), r.cider_d),
    ])
}

fn parse_config(config_json: Option<&str>) -> PyResult<TrainConfig> {
    let cfg = match config_json {
        Some(s) => TrainConfig::from_json(s).map_err(err)?,
        None => TrainConfig::desk(),
    };
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

/// Generate a deterministic synthetic bi-temporal dataset on disk and
/// return the sample ids.
#[pyfunction]
#[pyo3(signature = (out_dir, seed=17, n=20, size=64, split="train"))]
fn synth_dataset(out_dir: &str, seed: u64, n: usize, size: u32, split: &str) -> PyResult<Vec<String>> {
    let split: Split = split.parse().map_err(err)?;
    let ds = data::synth::generate(seed, n, size, split).map_err(err)?;
    data::write_dataset(&ds, Path::new(out_dir)).map_err(err)?;
    Ok(ds.samples.iter().map(|s| s.id.clone()).collect())
}

/// Corpus metrics for hypotheses against reference sets.
#[pyfunction]
fn score_captions(
    hypotheses: Vec<String>,
    references: Vec<Vec<String>>,
) -> PyResult<BTreeMap<String, f64>> {
    let corpus = EvalCorpus::from_strings(&hypotheses, &references).map_err(err)?;
    let report = score_all(&corpus).map_err(err)?;
    Ok(report_to_map(&report))
}

/// Rule-based triple extraction; returns (head, relation, tail, frequency).
#[pyfunction]
fn extract_triples(captions: Vec<String>) -> PyResult<Vec<(String, String, String, u64)>> {
    let extractor = kg::RuleBasedExtractor::default();
    let triples = kg::extract_triples(&captions, &extractor).map_err(err)?;
    Ok(triples
        .into_iter()
        .map(|t| (t.head, t.relation, t.tail, t.frequency))
        .collect())
}

/// Build the change knowledge graph from captions and return its JSON.
#[pyfunction]
#[pyo3(signature = (captions, k=1, seed=17))]
fn build_kg(captions: Vec<String>, k: u64, seed: u64) -> PyResult<String> {
    let extractor = kg::RuleBasedExtractor::default();
    let triples = kg::extract_triples(&captions, &extractor).map_err(err)?;
    if triples.is_empty() {
        return Err(PyValueError::new_err("no triples matched the pattern table"));
    }
    let text = changecap::adapters::MockTextEncoder::new(32, seed);
    let merger = kg::EmbeddingMerger {
        text: &text,
        threshold: 0.9,
    };
    let (merged, _) = kg::merge_entities(&triples, &merger).map_err(err)?;
    let kept = kg::filter_by_frequency(&merged, k).map_err(err)?;
    let graph = kg::encode_graph(&kept).map_err(err)?;
    graph.to_json().map_err(err)
}

/// A trained captioning pipeline.
#[pyclass(unsendable)]
struct Pipeline {
    model: harness::Model,
    checkpoint_path: Option<PathBuf>,
}

#[pymethods]
impl Pipeline {
    /// Train on a dataset directory; writes the best checkpoint to
    /// `out_ckpt` and returns the training report.
    #[staticmethod]
    #[pyo3(signature = (data_dir, out_ckpt, config_json=None))]
    fn train(
        data_dir: &str,
        out_ckpt: &str,
        config_json: Option<&str>,
    ) -> PyResult<BTreeMap<String, f64>> {
        let cfg = parse_config(config_json)?;
        let dataset = data::load_dataset(Path::new(data_dir)).map_err(err)?;
        let outcome = harness::train(&cfg, &dataset).map_err(err)?;
        outcome.checkpoint.save(Path::new(out_ckpt)).map_err(err)?;
        let mut report = report_to_map(&outcome.best_report);
        report.insert("best_epoch".to_string(), outcome.best_epoch as f64);
        report.insert("final_train_ce".to_string(), outcome.final_train_ce);
        Ok(report)
    }

    /// Load a pipeline from a checkpoint file.
    #[staticmethod]
    fn load(ckpt_path: &str) -> PyResult<Pipeline> {
        let ckpt = Checkpoint::load(Path::new(ckpt_path)).map_err(err)?;
        let model = harness::model_from_checkpoint(&ckpt).map_err(err)?;
        Ok(Pipeline {
            model,
            checkpoint_path: Some(PathBuf::from(ckpt_path)),
        })
    }

    /// Caption a pair of image files.
    #[pyo3(signature = (image_a, image_b, beam=None))]
    fn caption(&self, image_a: &str, image_b: &str, beam: Option<usize>) -> PyResult<String> {
        let a = image::open(image_a).map_err(err)?.into_rgb8();
        let b = image::open(image_b).map_err(err)?.into_rgb8();
        let strategy = match beam {
            Some(k) if k > 1 => DecodeStrategy::Beam(k),
            _ => DecodeStrategy::Greedy,
        };
        let (caption, _) =
            harness::caption_pair(&self.model, &a, &b, strategy, None).map_err(err)?;
        Ok(caption)
    }

    /// Consistency and change prior maps for a pair, as nested lists
    /// (row-major, `h` rows of `w` values each).
    fn priors(&self, image_a: &str, image_b: &str) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let a = image::open(image_a).map_err(err)?.into_rgb8();
        let b = image::open(image_b).map_err(err)?.into_rgb8();
        let sample = data::BiTemporalSample {
            id: "pair".to_string(),
            split: Split::Test,
            image_a: a,
            image_b: b,
            captions: vec![String::new()],
        };
        let forward = self.model.forward_sample(&sample, false).map_err(err)?;
        let to_rows = |t: &changecap::tensor::Tensor| -> Vec<Vec<f64>> {
            let d = t.data();
            (0..forward.priors.h)
                .map(|y| {
                    (0..forward.priors.w)
                        .map(|x| d[(y * forward.priors.w + x, 0)])
                        .collect()
                })
                .collect()
        };
        Ok((
            to_rows(&forward.priors.consistency),
            to_rows(&forward.priors.change),
        ))
    }

    /// Evaluate the pipeline on a dataset split.
    #[pyo3(signature = (data_dir, split="train"))]
    fn evaluate(&self, data_dir: &str, split: &str) -> PyResult<BTreeMap<String, f64>> {
        let dataset = data::load_dataset(Path::new(data_dir)).map_err(err)?;
        let split: Split = split.parse().map_err(err)?;
        let samples = dataset.split(split);
        let report = harness::evaluate_model(&self.model, samples, DecodeStrategy::Greedy)
            .map_err(err)?;
        Ok(report_to_map(&report))
    }

    fn vocab_size(&self) -> usize {
        self.model.vocab.len()
    }

    fn param_count(&self) -> usize {
        self.model.param_count()
    }

    fn __repr__(&self) -> String {
        format!(
            "Pipeline(params={}, vocab={}, ckpt={:?})",
            self.model.param_count(),
            self.model.vocab.len(),
            self.checkpoint_path
        )
    }
}

#[pymodule]
fn changecap_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(synth_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(score_captions, m)?)?;
    m.add_function(wrap_pyfunction!(extract_triples, m)?)?;
    m.add_function(wrap_pyfunction!(build_kg, m)?)?;
    m.add_class::<Pipeline>()?;
    Ok(())
}
