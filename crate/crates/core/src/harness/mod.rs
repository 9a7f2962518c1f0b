//! End-to-end wiring: model assembly under ablation flags, the training
//! loop with its learning-rate schedule and checkpoint selection, split
//! evaluation, and single-pair captioning with optional debug dumps.

mod checkpoint;
mod debug;

pub use checkpoint::{Checkpoint, TensorBlob, CHECKPOINT_VERSION};
pub use debug::{write_debug_bundle, DebugSummary};

use crate::adapters::AdapterSet;
use crate::backbone::{BiTemporalEncoder, GlobalEmbedding, PriorMaps};
use crate::captioner::{ce_loss, generate, CaptionDecoder, ChangeFusion, DecodeStrategy};
use crate::config::{KgConfig, MatcherKind, TrainConfig};
use crate::data::{BiTemporalSample, Dataset, Split, Vocabulary, BOS, EOS};
use crate::error::{Error, Result};
use crate::kg::{
    encode_graph, extract_triples, filter_by_frequency, merge_entities, ChangeKG,
    EmbeddingMerger, RuleBasedExtractor,
};
use crate::metrics::{score_all, EvalCorpus, MetricReport};
use crate::reasoner::GraphReasoner;
use crate::regions::{MotionTrace, RegionMiner};
use crate::tensor::{Adam, ParamStore, Tensor};
use image::RgbImage;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_chacha::{rand_core::SeedableRng, ChaCha12Rng};
use std::cell::RefCell;
use std::path::Path;

/// Build the change knowledge graph from a caption corpus: rule-based
/// extraction, embedding-based entity merging, frequency filtering and
/// matrix encoding.
pub fn build_kg_from_captions(
    captions: &[String],
    cfg: &KgConfig,
    adapters: &AdapterSet,
) -> Result<ChangeKG> {
    let extractor = RuleBasedExtractor::default();
    let triples = extract_triples(captions, &extractor)?;
    if triples.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let merger = EmbeddingMerger {
        text: adapters.text.as_ref(),
        threshold: cfg.merge_threshold,
    };
    let (merged, _) = merge_entities(&triples, &merger)?;
    let kept = filter_by_frequency(&merged, cfg.min_frequency)?;
    encode_graph(&kept)
}

/// The assembled pipeline. Components excluded by the ablation flags are
/// not constructed; their change vectors come from learned null embeddings.
pub struct Model {
    pub cfg: TrainConfig,
    pub store: ParamStore,
    pub vocab: Vocabulary,
    pub adapters: AdapterSet,
    pub encoder: BiTemporalEncoder,
    pub miner: Option<RegionMiner>,
    pub reasoner: Option<GraphReasoner>,
    pub fusion: ChangeFusion,
    pub decoder: CaptionDecoder,
    pub kg: Option<ChangeKG>,
    null_motion: Option<Tensor>,
    null_semantic: Option<Tensor>,
    null_graph: Option<Tensor>,
    param_version: u64,
    cached_graph_prior: RefCell<Option<(u64, Array2<f64>)>>,
}

impl Model {
    pub fn build(cfg: &TrainConfig, vocab: Vocabulary, kg: Option<ChangeKG>) -> Result<Model> {
        cfg.validate()?;
        let seed = cfg.seed;
        let adapters = AdapterSet::build(&cfg.adapters, seed)?;
        let mut store = ParamStore::new();
        let encoder = BiTemporalEncoder::new(&mut store, &cfg.backbone, seed)?;

        let ab = cfg.ablation;
        let mut region_cfg = cfg.regions.clone();
        if !ab.sg {
            region_cfg.matcher = MatcherKind::AllUnmatched;
        }
        let miner = if ab.mcl || ab.sca {
            Some(RegionMiner::new(
                &mut store,
                &region_cfg,
                cfg.adapters.dense_channels,
                cfg.adapters.text_dim,
                seed,
            ))
        } else {
            None
        };

        let motion_dim = 2 * (cfg.regions.descriptor_dim + cfg.regions.pos_dim);
        let semantic_dim = 2 * cfg.regions.descriptor_dim;
        let graph_dim = cfg.reasoner.output_dim;

        let (reasoner, kg) = if ab.cgr {
            let kg = kg.ok_or_else(|| {
                Error::Config("graph reasoning enabled but no knowledge graph provided".into())
            })?;
            let reasoner = GraphReasoner::new(
                &mut store,
                &cfg.reasoner,
                kg.n_relations(),
                cfg.adapters.text_dim,
                seed,
                true,
            );
            (Some(reasoner), Some(kg))
        } else {
            (None, None)
        };

        let null_motion = (!ab.mcl)
            .then(|| crate::nn::zeros_param(&mut store, "model.null_motion", 1, motion_dim));
        let null_semantic = (!ab.sca)
            .then(|| crate::nn::zeros_param(&mut store, "model.null_semantic", 1, semantic_dim));
        let null_graph =
            (!ab.cgr).then(|| crate::nn::zeros_param(&mut store, "model.null_graph", 1, graph_dim));

        let fusion = ChangeFusion::new(
            &mut store,
            &cfg.decoder,
            motion_dim,
            semantic_dim,
            graph_dim,
            seed,
        );
        let decoder = CaptionDecoder::new(
            &mut store,
            &cfg.decoder,
            vocab.len(),
            cfg.backbone.embed_channels,
            seed,
        );

        Ok(Model {
            cfg: cfg.clone(),
            store,
            vocab,
            adapters,
            encoder,
            miner,
            reasoner,
            fusion,
            decoder,
            kg,
            null_motion,
            null_semantic,
            null_graph,
            param_version: 0,
            cached_graph_prior: RefCell::new(None),
        })
    }

    pub fn param_count(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn bump_version(&mut self) {
        self.param_version += 1;
    }

    /// Graph prior vector. During training the reasoner runs inside the
    /// loss graph so gradients reach its weights; outside training the
    /// value is cached per parameter version.
    fn graph_vector(&self, for_training: bool) -> Result<Tensor> {
        match (&self.reasoner, &self.kg) {
            (Some(reasoner), Some(kg)) => {
                if for_training {
                    return reasoner.graph_prior(kg, self.adapters.text.as_ref());
                }
                if let Some((version, value)) = self.cached_graph_prior.borrow().as_ref() {
                    if *version == self.param_version {
                        return Ok(Tensor::constant(value.clone()));
                    }
                }
                let value = reasoner.graph_prior(kg, self.adapters.text.as_ref())?;
                let array = value.to_array();
                *self.cached_graph_prior.borrow_mut() = Some((self.param_version, array.clone()));
                Ok(Tensor::constant(array))
            }
            _ => Ok(self
                .null_graph
                .as_ref()
                .expect("null graph embedding exists when CGR is off")
                .clone()),
        }
    }

    fn motion_vector(&self, sample: &BiTemporalSample) -> Result<(Tensor, Option<MotionTrace>)> {
        if self.cfg.ablation.mcl {
            let miner = self.miner.as_ref().expect("miner exists when MCL is on");
            let (v, trace) = miner.motion_from_pair(&sample.image_a, &sample.image_b, &self.adapters)?;
            Ok((v, Some(trace)))
        } else {
            Ok((
                self.null_motion
                    .as_ref()
                    .expect("null motion embedding exists when MCL is off")
                    .clone(),
                None,
            ))
        }
    }

    fn semantic_vector(&self, sample: &BiTemporalSample) -> Result<Tensor> {
        if self.cfg.ablation.sca {
            let miner = self.miner.as_ref().expect("miner exists when SCA is on");
            miner.semantic_change_repr(&sample.image_a, &sample.image_b, &self.adapters)
        } else {
            Ok(self
                .null_semantic
                .as_ref()
                .expect("null semantic embedding exists when SCA is off")
                .clone())
        }
    }

    /// Encoder + change vectors + fusion for one pair.
    pub fn forward_sample(
        &self,
        sample: &BiTemporalSample,
        for_training: bool,
    ) -> Result<SampleForward> {
        sample.validate()?;
        let (embedding, priors) = self.encoder.encode(sample)?;
        let (motion, motion_trace) = self.motion_vector(sample)?;
        let semantic = self.semantic_vector(sample)?;
        let graph = self.graph_vector(for_training)?;
        let fused = self.fusion.fuse(&motion, &semantic, &graph);
        Ok(SampleForward {
            embedding,
            priors,
            fused,
            motion_trace,
        })
    }

    /// Teacher-forced label-smoothed CE for one caption of one sample.
    pub fn caption_loss(&self, forward: &SampleForward, caption: &str) -> Result<Tensor> {
        let mut ids = vec![BOS];
        ids.extend(self.vocab.encode(caption));
        ids.push(EOS);
        ids.truncate(self.cfg.decoder.max_len + 1);
        let inputs = &ids[..ids.len() - 1];
        let targets = &ids[1..];
        let bias = self.decoder.build_bias(&forward.priors, inputs.len());
        let logits = self
            .decoder
            .forward(inputs, &forward.embedding, &forward.fused, &bias)?;
        ce_loss(&logits, targets, self.cfg.decoder.label_smoothing)
    }

    /// Mean training loss over the configured caption set of one sample.
    pub fn sample_loss(&self, sample: &BiTemporalSample) -> Result<Tensor> {
        let forward = self.forward_sample(sample, true)?;
        if self.cfg.all_captions {
            let losses: Vec<Tensor> = sample
                .captions
                .iter()
                .map(|c| self.caption_loss(&forward, c))
                .collect::<Result<_>>()?;
            let stacked = Tensor::concat_rows(&losses);
            Ok(stacked.mean_rows().reshape(1, 1))
        } else {
            self.caption_loss(&forward, &sample.captions[0])
        }
    }

    /// Decode a caption for one pair.
    pub fn caption_sample(
        &self,
        sample: &BiTemporalSample,
        strategy: DecodeStrategy,
    ) -> Result<String> {
        let forward = self.forward_sample(sample, false)?;
        let ids = generate(
            &self.decoder,
            &forward.embedding,
            &forward.fused,
            &forward.priors,
            strategy,
        )?;
        Ok(self.vocab.decode(&ids))
    }
}

/// Per-sample forward artifacts shared by loss and generation paths.
pub struct SampleForward {
    pub embedding: GlobalEmbedding,
    pub priors: PriorMaps,
    pub fused: Tensor,
    pub motion_trace: Option<MotionTrace>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_bleu4: f64,
}

#[derive(serde::Serialize)]
pub struct TrainOutcome {
    pub best_epoch: usize,
    pub best_report: MetricReport,
    pub final_train_ce: f64,
    pub history: Vec<EpochRecord>,
    #[serde(skip)]
    pub checkpoint: Checkpoint,
}

/// Train on the dataset's train split, validating each epoch with greedy
/// decoding and retaining the checkpoint with the best BLEU-4.
pub fn train(cfg: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_samples = dataset.split(Split::Train);
    if train_samples.is_empty() {
        return Err(Error::Dataset("train split is empty".into()));
    }
    let all_captions: Vec<String> = train_samples
        .iter()
        .flat_map(|s| s.captions.iter().cloned())
        .collect();
    let caption_refs: Vec<&str> = all_captions.iter().map(|s| s.as_str()).collect();
    let vocab = Vocabulary::build(caption_refs.iter().copied(), cfg.vocab_min_freq);

    let kg = if cfg.ablation.cgr {
        let adapters = AdapterSet::build(&cfg.adapters, cfg.seed)?;
        Some(build_kg_from_captions(&all_captions, &cfg.kg, &adapters)?)
    } else {
        None
    };

    let mut model = Model::build(cfg, vocab, kg)?;
    let mut opt = Adam::new(&model.store, cfg.lr);
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ crate::nn::fnv1a("train.shuffle"));

    let val_samples = dataset.val_or_train();
    let mut history = Vec::new();
    let mut best: Option<(usize, MetricReport, Checkpoint)> = None;
    let mut last_grad_norm = 0.0;

    for epoch in 1..=cfg.max_epochs {
        let lr = cfg.lr_at_epoch(epoch);
        opt.set_lr(lr);
        let mut order: Vec<usize> = (0..train_samples.len()).collect();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let losses: Vec<Tensor> = chunk
                .iter()
                .map(|&i| model.sample_loss(&train_samples[i]))
                .collect::<Result<_>>()?;
            let batch_loss = Tensor::concat_rows(&losses).mean_rows().reshape(1, 1);
            let loss_value = batch_loss.value();
            if !loss_value.is_finite() {
                return Err(Error::NanLoss {
                    batch: batch_idx,
                    grad_norm: last_grad_norm,
                });
            }
            batch_loss.backward();
            last_grad_norm = model.store.clip_grad_norm(cfg.grad_clip);
            if !last_grad_norm.is_finite() {
                return Err(Error::NanLoss {
                    batch: batch_idx,
                    grad_norm: last_grad_norm,
                });
            }
            opt.step(&model.store);
            model.bump_version();
            epoch_loss += loss_value;
            n_batches += 1;
        }
        let train_loss = epoch_loss / n_batches.max(1) as f64;

        let report = evaluate_model(&model, val_samples, DecodeStrategy::Greedy)?;
        log::info!(
            "epoch {epoch}: lr {lr:.6} loss {train_loss:.5} val bleu4 {:.2}",
            report.bleu4
        );
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_bleu4: report.bleu4,
        });
        let is_better = match &best {
            None => true,
            Some((_, best_report, _)) => report.bleu4 > best_report.bleu4,
        };
        if is_better {
            let ckpt = Checkpoint::capture(cfg, &model.vocab, model.kg.as_ref(), &model.store);
            best = Some((epoch, report, ckpt));
        }
    }

    let (best_epoch, best_report, checkpoint) = best.expect("at least one epoch ran");

    // teacher-forced CE of the final parameters over the train split
    let mut ce_sum = 0.0;
    for s in train_samples {
        ce_sum += model.sample_loss(s)?.value();
    }
    let final_train_ce = ce_sum / train_samples.len() as f64;

    Ok(TrainOutcome {
        best_epoch,
        best_report,
        final_train_ce,
        history,
        checkpoint,
    })
}

/// Greedy/beam decoding over a sample list plus the full metric report.
pub fn evaluate_model(
    model: &Model,
    samples: &[BiTemporalSample],
    strategy: DecodeStrategy,
) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::Dataset("evaluation split is empty".into()));
    }
    let mut hyps = Vec::with_capacity(samples.len());
    let mut refs = Vec::with_capacity(samples.len());
    for s in samples {
        hyps.push(model.caption_sample(s, strategy)?);
        refs.push(s.captions.clone());
    }
    let corpus = EvalCorpus::from_strings(&hyps, &refs)?;
    score_all(&corpus)
}

/// Rebuild the model a checkpoint was saved from.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<Model> {
    let model = Model::build(&ckpt.config, ckpt.vocab.clone(), ckpt.kg.clone())?;
    ckpt.restore_into(&model.store)?;
    Ok(model)
}

/// Share of dataset caption tokens unknown to the checkpoint vocabulary
/// above which evaluation refuses to run.
const MAX_OOV_RATE: f64 = 0.5;

/// Evaluate a checkpoint on one dataset split.
pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    dataset: &Dataset,
    split: Split,
    strategy: DecodeStrategy,
) -> Result<MetricReport> {
    let samples = dataset.split(split);
    if samples.is_empty() {
        return Err(Error::Dataset(format!("split {split} is empty")));
    }
    let mut total = 0usize;
    let mut unknown = 0usize;
    for s in samples {
        for c in &s.captions {
            for id in ckpt.vocab.encode(c) {
                total += 1;
                if id == crate::data::UNK {
                    unknown += 1;
                }
            }
        }
    }
    let oov = unknown as f64 / total.max(1) as f64;
    if oov > MAX_OOV_RATE {
        return Err(Error::VocabMismatch(format!(
            "{:.0}% of split {split} tokens are unknown to the checkpoint vocabulary",
            oov * 100.0
        )));
    }
    let model = model_from_checkpoint(ckpt)?;
    evaluate_model(&model, samples, strategy)
}

/// Caption one image pair; optionally write the debug bundle.
pub fn caption_pair(
    model: &Model,
    image_a: &RgbImage,
    image_b: &RgbImage,
    strategy: DecodeStrategy,
    debug_dir: Option<&Path>,
) -> Result<(String, Option<DebugSummary>)> {
    if image_a.dimensions() != image_b.dimensions() {
        return Err(Error::Input(format!(
            "image shapes differ: {:?} vs {:?}",
            image_a.dimensions(),
            image_b.dimensions()
        )));
    }
    let sample = BiTemporalSample {
        id: "pair".to_string(),
        split: Split::Test,
        image_a: image_a.clone(),
        image_b: image_b.clone(),
        captions: vec![String::new()],
    };
    let forward = model.forward_sample(&sample, false)?;
    let ids = generate(
        &model.decoder,
        &forward.embedding,
        &forward.fused,
        &forward.priors,
        strategy,
    )?;
    let caption = model.vocab.decode(&ids);
    let debug = match debug_dir {
        Some(dir) => Some(write_debug_bundle(dir, model, &sample, &forward)?),
        None => None,
    };
    Ok((caption, debug))
}
