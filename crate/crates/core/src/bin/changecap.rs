//! Command-line front end: dataset synthesis, knowledge-graph building,
//! training, evaluation, single-pair captioning and metric scoring. All
//! reports are JSON. The CHANGECAP_SEED environment variable overrides the
//! configured seed everywhere.

use changecap::captioner::DecodeStrategy;
use changecap::config::TrainConfig;
use changecap::data::{self, Split};
use changecap::error::{Error, Result};
use changecap::harness::{self, Checkpoint};
use changecap::kg::{
    encode_graph, extract_triples, filter_by_frequency, merge_entities, EmbeddingMerger,
    PatternTable, RuleBasedExtractor,
};
use changecap::metrics::{score_all, EvalCorpus};
use clap::{Parser, Subcommand};
use serde::Deserialize;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "changecap", about = "Bi-temporal remote-sensing change captioning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a dataset directory and write the best checkpoint.
    Train {
        /// TOML or JSON config; defaults to the desk preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Ablation preset: baseline, a, b, c or d.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Evaluate a checkpoint on one dataset split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Beam width; omitted means greedy decoding.
        #[arg(long)]
        beam: Option<usize>,
    },
    /// Caption a single image pair.
    Caption {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        beam: Option<usize>,
        /// Directory for prior/mask/match dumps.
        #[arg(long)]
        debug_dir: Option<PathBuf>,
    },
    /// Knowledge-graph operations.
    #[command(subcommand)]
    Kg(KgCommand),
    /// Dataset operations.
    #[command(subcommand)]
    Data(DataCommand),
    /// Metric operations.
    #[command(subcommand)]
    Metrics(MetricsCommand),
}

#[derive(Subcommand)]
enum KgCommand {
    /// Build the change graph from a captions JSONL file.
    Build {
        /// JSON lines of {"image_pair_id": ..., "captions": [...]}.
        #[arg(long)]
        captions: PathBuf,
        /// Minimum triple frequency kept.
        #[arg(long, default_value_t = 50)]
        k: u64,
        #[arg(long)]
        out: PathBuf,
        /// Custom pattern table (JSON); defaults to the built-in table.
        #[arg(long)]
        patterns: Option<PathBuf>,
        /// Skip embedding-based entity merging.
        #[arg(long)]
        no_merge: bool,
    },
}

#[derive(Subcommand)]
enum DataCommand {
    /// Generate a synthetic bi-temporal dataset.
    Synth {
        #[arg(long, default_value_t = 17)]
        seed: u64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        size: u32,
        #[arg(long, default_value = "train")]
        split: String,
    },
}

#[derive(Subcommand)]
enum MetricsCommand {
    /// Score hypotheses against references (JSONL, aligned by id).
    Score {
        /// JSON lines of {"id": ..., "caption": "..."}.
        #[arg(long)]
        hyp: PathBuf,
        /// JSON lines of {"id": ..., "captions": [...]}.
        #[arg(long)]
        refs: PathBuf,
    },
}

fn seed_override() -> Option<u64> {
    std::env::var("CHANGECAP_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
}

fn load_config(path: Option<&PathBuf>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::desk(),
    };
    if let Some(seed) = seed_override() {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn strategy(beam: Option<usize>) -> DecodeStrategy {
    match beam {
        Some(k) if k > 1 => DecodeStrategy::Beam(k),
        _ => DecodeStrategy::Greedy,
    }
}

#[derive(Deserialize)]
struct CaptionLine {
    #[allow(dead_code)]
    image_pair_id: serde_json::Value,
    captions: Vec<String>,
}

#[derive(Deserialize)]
struct HypLine {
    id: serde_json::Value,
    caption: String,
}

#[derive(Deserialize)]
struct RefLine {
    id: serde_json::Value,
    captions: Vec<String>,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &PathBuf) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train {
            config,
            data,
            out,
            preset,
        } => {
            let mut cfg = load_config(config.as_ref())?;
            if let Some(name) = preset {
                cfg.ablation = changecap::config::AblationConfig::preset(&name)
                    .ok_or_else(|| Error::Config(format!("unknown ablation preset {name:?}")))?;
            }
            let dataset = data::load_dataset(&data)?;
            let outcome = harness::train(&cfg, &dataset)?;
            outcome.checkpoint.save(&out)?;
            let report = serde_json::json!({
                "best_epoch": outcome.best_epoch,
                "best_report": outcome.best_report,
                "final_train_ce": outcome.final_train_ce,
                "history": outcome.history,
                "checkpoint": out,
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Eval {
            ckpt,
            data,
            split,
            beam,
        } => {
            let checkpoint = Checkpoint::load(&ckpt)?;
            let dataset = data::load_dataset(&data)?;
            let split: Split = split.parse()?;
            let report =
                harness::evaluate_checkpoint(&checkpoint, &dataset, split, strategy(beam))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Caption {
            ckpt,
            a,
            b,
            beam,
            debug_dir,
        } => {
            let checkpoint = Checkpoint::load(&ckpt)?;
            let model = harness::model_from_checkpoint(&checkpoint)?;
            let image_a = image::open(&a)?.into_rgb8();
            let image_b = image::open(&b)?.into_rgb8();
            let (caption, debug) = harness::caption_pair(
                &model,
                &image_a,
                &image_b,
                strategy(beam),
                debug_dir.as_deref(),
            )?;
            let report = serde_json::json!({ "caption": caption, "debug": debug });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Kg(KgCommand::Build {
            captions,
            k,
            out,
            patterns,
            no_merge,
        }) => {
            let lines: Vec<CaptionLine> = read_jsonl(&captions)?;
            let corpus: Vec<String> = lines.into_iter().flat_map(|l| l.captions).collect();
            if corpus.is_empty() {
                return Err(Error::Input("caption file holds no captions".into()));
            }
            let table = match patterns {
                Some(p) => PatternTable::from_path(&p)?,
                None => PatternTable::builtin(),
            };
            let extractor = RuleBasedExtractor::new(table);
            let triples = extract_triples(&corpus, &extractor)?;
            if triples.is_empty() {
                return Err(Error::EmptyGraph);
            }
            let merged = if no_merge {
                triples
            } else {
                let seed = seed_override().unwrap_or(17);
                let text = changecap::adapters::MockTextEncoder::new(32, seed);
                let merger = EmbeddingMerger {
                    text: &text,
                    threshold: 0.9,
                };
                merge_entities(&triples, &merger)?.0
            };
            let kept = filter_by_frequency(&merged, k)?;
            let kg = encode_graph(&kept)?;
            std::fs::write(&out, kg.to_json()?)?;
            let report = serde_json::json!({
                "entities": kg.n_entities(),
                "relations": kg.n_relations(),
                "edges": kg.n_edges(),
                "out": out,
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Data(DataCommand::Synth {
            seed,
            n,
            out,
            size,
            split,
        }) => {
            let seed = seed_override().unwrap_or(seed);
            let split: Split = split.parse()?;
            let ds = data::synth::generate(seed, n, size, split)?;
            data::write_dataset(&ds, &out)?;
            let report = serde_json::json!({
                "seed": seed,
                "n": n,
                "size": size,
                "split": split.to_string(),
                "out": out,
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Metrics(MetricsCommand::Score { hyp, refs }) => {
            let hyps: Vec<HypLine> = read_jsonl(&hyp)?;
            let ref_lines: Vec<RefLine> = read_jsonl(&refs)?;
            let mut ref_map = std::collections::BTreeMap::new();
            for r in ref_lines {
                ref_map.insert(r.id.to_string(), r.captions);
            }
            let mut hypotheses = Vec::new();
            let mut references = Vec::new();
            for h in hyps {
                let key = h.id.to_string();
                let Some(r) = ref_map.get(&key) else {
                    return Err(Error::Input(format!("no references for id {key}")));
                };
                hypotheses.push(h.caption);
                references.push(r.clone());
            }
            let corpus = EvalCorpus::from_strings(&hypotheses, &references)?;
            let report = score_all(&corpus)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
