//! Change-conditioned caption generation: fuse the motion/semantic/graph
//! change vectors into one conditioning vector, build the spatial attention
//! bias from the priors, decode with a Transformer whose cross-attention is
//! biased towards changed pixels, and score with label-smoothed
//! cross-entropy. Greedy and beam decoding share the same forward path.

use crate::backbone::{GlobalEmbedding, PriorMaps};
use crate::config::DecoderConfig;
use crate::data::{BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::nn::{posenc_seq, xavier, LayerNorm, Linear, MultiHeadAttention};
use crate::tensor::{ParamStore, Tensor};
use ndarray::Array2;

/// Projections of the three change sources plus the fusing LayerNorm.
pub struct ChangeFusion {
    w_motion: Linear,
    w_semantic: Linear,
    w_graph: Linear,
    ln: LayerNorm,
}

impl ChangeFusion {
    pub fn new(
        store: &mut ParamStore,
        cfg: &DecoderConfig,
        motion_dim: usize,
        semantic_dim: usize,
        graph_dim: usize,
        seed: u64,
    ) -> ChangeFusion {
        ChangeFusion {
            w_motion: Linear::new(store, "fusion.motion", motion_dim, cfg.motion_proj, seed),
            w_semantic: Linear::new(store, "fusion.semantic", semantic_dim, cfg.semantic_proj, seed),
            w_graph: Linear::new(store, "fusion.graph", graph_dim, cfg.graph_proj, seed),
            ln: LayerNorm::new(store, "fusion.ln", cfg.fused_dim()),
        }
    }

    /// Concatenated projections before normalization (test hook).
    pub fn concat_projected(&self, motion: &Tensor, semantic: &Tensor, graph: &Tensor) -> Tensor {
        Tensor::concat_cols(&[
            self.w_motion.forward(motion),
            self.w_semantic.forward(semantic),
            self.w_graph.forward(graph),
        ])
    }

    /// `r = LN([W_d f_motion ; W_s f_semantic ; W_g f_graph])`, `(1, d_f)`.
    pub fn fuse(&self, motion: &Tensor, semantic: &Tensor, graph: &Tensor) -> Tensor {
        self.ln.forward(&self.concat_projected(motion, semantic, graph))
    }
}

/// Spatial attention bias: `pi = alpha * vec(change) + beta * vec(consistency)`
/// broadcast to every caption position.
pub struct AttentionBias {
    /// `(1, h*w)` bias over visual tokens.
    pub pi: Tensor,
    /// `(T, h*w)`; every row equals `pi`.
    pub bias: Tensor,
}

/// The decoder with its learnable bias scales.
pub struct CaptionDecoder {
    pub cfg: DecoderConfig,
    vocab_size: usize,
    token_emb: Tensor,
    alpha: Tensor,
    beta: Tensor,
    layers: Vec<DecoderLayer>,
    out: Linear,
}

struct DecoderLayer {
    sa: MultiHeadAttention,
    ca: MultiHeadAttention,
    ln: LayerNorm,
    ffn_in: Linear,
    ffn_out: Linear,
}

impl CaptionDecoder {
    pub fn new(
        store: &mut ParamStore,
        cfg: &DecoderConfig,
        vocab_size: usize,
        visual_channels: usize,
        seed: u64,
    ) -> CaptionDecoder {
        let d_f = cfg.fused_dim();
        let token_emb = xavier(store, "decoder.token_emb", vocab_size, d_f, seed);
        let alpha = store.register(
            "decoder.alpha",
            Tensor::param(Array2::from_elem((1, 1), cfg.alpha_init)),
        );
        let beta = store.register(
            "decoder.beta",
            Tensor::param(Array2::from_elem((1, 1), cfg.beta_init)),
        );
        let layers = (0..cfg.layers)
            .map(|l| DecoderLayer {
                sa: MultiHeadAttention::new(store, &format!("decoder.l{l}.sa"), d_f, d_f, cfg.heads, seed),
                ca: MultiHeadAttention::new(
                    store,
                    &format!("decoder.l{l}.ca"),
                    d_f,
                    visual_channels,
                    cfg.heads,
                    seed,
                ),
                ln: LayerNorm::new(store, &format!("decoder.l{l}.ln"), d_f),
                ffn_in: Linear::new(store, &format!("decoder.l{l}.ffn_in"), d_f, cfg.ffn_dim, seed),
                ffn_out: Linear::new(store, &format!("decoder.l{l}.ffn_out"), cfg.ffn_dim, d_f, seed),
            })
            .collect();
        let out = Linear::new(store, "decoder.out", d_f, vocab_size, seed);
        CaptionDecoder {
            cfg: cfg.clone(),
            vocab_size,
            token_emb,
            alpha,
            beta,
            layers,
            out,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// `pi = alpha * vec(change) + beta * vec(consistency)`, broadcast over
    /// `t` caption positions. Added pre-softmax in every layer's
    /// cross-attention.
    pub fn build_bias(&self, priors: &PriorMaps, t: usize) -> AttentionBias {
        assert!(t >= 1, "bias needs at least one caption position");
        let change_row = priors.change.t();
        let consistency_row = priors.consistency.t();
        let pi = change_row
            .scale_by(&self.alpha)
            .add(&consistency_row.scale_by(&self.beta));
        let ones = Tensor::constant(Array2::from_elem((t, 1), 1.0));
        let bias = ones.matmul(&pi);
        AttentionBias { pi, bias }
    }

    /// Teacher-forced forward over `tokens` (ids, length T <= max_len),
    /// returning `(T, V)` logits.
    pub fn forward(
        &self,
        tokens: &[usize],
        visual: &GlobalEmbedding,
        fused: &Tensor,
        bias: &AttentionBias,
    ) -> Result<Tensor> {
        if tokens.is_empty() {
            return Err(Error::Input("decoder needs at least one token".into()));
        }
        if tokens.len() > self.cfg.max_len {
            return Err(Error::Input(format!(
                "sequence length {} exceeds max_len {}",
                tokens.len(),
                self.cfg.max_len
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.vocab_size) {
            return Err(Error::Input(format!(
                "token id {bad} outside vocabulary of {}",
                self.vocab_size
            )));
        }
        let t = tokens.len();
        assert_eq!(bias.bias.shape(), (t, visual.tensor.rows()), "bias shape");
        let pe = Tensor::constant(posenc_seq(t, self.cfg.fused_dim()));
        let mut y = self.token_emb.gather_rows(tokens).add(&pe);
        for layer in &self.layers {
            let sa = layer.sa.forward(&y, &y, None, true);
            let ca = layer.ca.forward(&sa, &visual.tensor, Some(&bias.bias), false);
            let pre = layer.ln.forward(&sa.add(&ca).add_row(fused));
            y = layer.ffn_out.forward(&layer.ffn_in.forward(&pre).relu());
        }
        Ok(self.out.forward(&y))
    }

    /// Cross-attention probabilities of one layer for the given input state,
    /// used by bias inspection; heads are returned separately.
    pub fn cross_attention_probs(
        &self,
        layer_idx: usize,
        tokens: &[usize],
        visual: &GlobalEmbedding,
        fused: &Tensor,
        bias: &AttentionBias,
    ) -> Result<Vec<Array2<f64>>> {
        let t = tokens.len();
        let pe = Tensor::constant(posenc_seq(t, self.cfg.fused_dim()));
        let mut y = self.token_emb.gather_rows(tokens).add(&pe);
        for (i, layer) in self.layers.iter().enumerate() {
            let sa = layer.sa.forward(&y, &y, None, true);
            if i == layer_idx {
                return Ok(layer
                    .ca
                    .attention_probs(&sa, &visual.tensor, Some(&bias.bias), false));
            }
            let ca = layer.ca.forward(&sa, &visual.tensor, Some(&bias.bias), false);
            let pre = layer.ln.forward(&sa.add(&ca).add_row(fused));
            y = layer.ffn_out.forward(&layer.ffn_in.forward(&pre).relu());
        }
        Err(Error::Input(format!("layer {layer_idx} out of range")))
    }
}

/// Label-smoothed cross-entropy averaged over non-pad positions. The target
/// distribution puts `1 - eps` on the gold token and `eps / (V - 1)` on
/// every other token.
pub fn ce_loss(logits: &Tensor, targets: &[usize], epsilon: f64) -> Result<Tensor> {
    let (t, v) = logits.shape();
    if targets.len() != t {
        return Err(Error::Input(format!(
            "{} targets for {} logit rows",
            targets.len(),
            t
        )));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::Config(format!("label smoothing {epsilon} outside [0, 1)")));
    }
    let active: Vec<usize> = (0..t).filter(|&i| targets[i] != PAD).collect();
    if active.is_empty() {
        return Err(Error::UndefinedLoss(
            "all target positions are padding".into(),
        ));
    }
    let lp = logits.log_softmax_rows();
    let mut mask = Array2::zeros((t, 1));
    for &i in &active {
        mask[(i, 0)] = 1.0;
    }
    let mask = Tensor::constant(mask);
    // pad rows gather an arbitrary in-range column and are masked out below
    let safe_targets: Vec<usize> = targets.iter().map(|&x| x.min(v - 1)).collect();
    let gold_lp = lp.gather_cols_per_row(&safe_targets); // (t, 1)
    let per_pos = if epsilon == 0.0 {
        // off-gold log-probs may be -inf under hard predictions; with zero
        // smoothing they carry no weight and must not be evaluated
        gold_lp.neg().mul(&mask)
    } else {
        let off_gold = lp.row_sums().sub(&gold_lp);
        let smooth = epsilon / (v as f64 - 1.0);
        gold_lp
            .scale(1.0 - epsilon)
            .add(&off_gold.scale(smooth))
            .neg()
            .mul(&mask)
    };
    let n = active.len() as f64;
    Ok(per_pos.sum_all().scale(1.0 / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeStrategy {
    Greedy,
    Beam(usize),
}

/// Autoregressive decoding from BOS until EOS or `max_len` tokens. The
/// returned ids exclude BOS/EOS. Beam search keeps `k` hypotheses by summed
/// log-probability and finalizes by length-normalized score.
pub fn generate(
    decoder: &CaptionDecoder,
    visual: &GlobalEmbedding,
    fused: &Tensor,
    priors: &PriorMaps,
    strategy: DecodeStrategy,
) -> Result<Vec<usize>> {
    match strategy {
        DecodeStrategy::Greedy => greedy(decoder, visual, fused, priors),
        DecodeStrategy::Beam(k) => beam(decoder, visual, fused, priors, k),
    }
}

fn step_log_probs(
    decoder: &CaptionDecoder,
    prefix: &[usize],
    visual: &GlobalEmbedding,
    fused: &Tensor,
    priors: &PriorMaps,
) -> Result<Vec<f64>> {
    let bias = decoder.build_bias(priors, prefix.len());
    let logits = decoder.forward(prefix, visual, fused, &bias)?;
    let lp = logits.log_softmax_rows();
    let last = lp.data().row(lp.rows() - 1).to_vec();
    Ok(last)
}

fn greedy(
    decoder: &CaptionDecoder,
    visual: &GlobalEmbedding,
    fused: &Tensor,
    priors: &PriorMaps,
) -> Result<Vec<usize>> {
    let mut prefix = vec![BOS];
    let mut out = Vec::new();
    while prefix.len() < decoder.cfg.max_len {
        let lp = step_log_probs(decoder, &prefix, visual, fused, priors)?;
        let next = argmax(&lp);
        if next == EOS {
            break;
        }
        out.push(next);
        prefix.push(next);
    }
    Ok(out)
}

#[derive(Clone)]
struct Hypothesis {
    tokens: Vec<usize>,
    log_prob: f64,
    finished: bool,
}

impl Hypothesis {
    /// Length-normalized score used at finalization.
    fn score(&self) -> f64 {
        let len = (self.tokens.len() - 1).max(1);
        self.log_prob / len as f64
    }
}

fn beam(
    decoder: &CaptionDecoder,
    visual: &GlobalEmbedding,
    fused: &Tensor,
    priors: &PriorMaps,
    k: usize,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::Generation("beam width must be >= 1".into()));
    }
    let mut beams = vec![Hypothesis {
        tokens: vec![BOS],
        log_prob: 0.0,
        finished: false,
    }];
    for _ in 1..decoder.cfg.max_len {
        if beams.iter().all(|b| b.finished) {
            break;
        }
        let mut candidates: Vec<Hypothesis> = Vec::new();
        for b in &beams {
            if b.finished {
                candidates.push(b.clone());
                continue;
            }
            let lp = step_log_probs(decoder, &b.tokens, visual, fused, priors)?;
            for (tok, &token_lp) in lp.iter().enumerate() {
                if tok == PAD || tok == BOS {
                    continue;
                }
                let mut tokens = b.tokens.clone();
                let finished = tok == EOS;
                if !finished {
                    tokens.push(tok);
                }
                candidates.push(Hypothesis {
                    tokens,
                    log_prob: b.log_prob + token_lp,
                    finished,
                });
            }
        }
        candidates.sort_by(|a, b| {
            b.log_prob
                .partial_cmp(&a.log_prob)
                .unwrap()
                .then_with(|| a.tokens.cmp(&b.tokens))
        });
        candidates.truncate(k);
        beams = candidates;
    }
    let best = beams
        .into_iter()
        .max_by(|a, b| {
            a.score()
                .partial_cmp(&b.score())
                .unwrap()
                .then_with(|| b.tokens.cmp(&a.tokens))
        })
        .expect("at least one hypothesis");
    Ok(best.tokens[1..].to_vec())
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{GlobalEmbedding, PriorMaps};
    use crate::nn::seeded_rng;
    use rand::Rng;

    fn fixture(
        cfg: &DecoderConfig,
        vocab: usize,
        hw: usize,
        d_e: usize,
        seed: u64,
    ) -> (ParamStore, CaptionDecoder, GlobalEmbedding, PriorMaps, Tensor) {
        let mut store = ParamStore::new();
        let dec = CaptionDecoder::new(&mut store, cfg, vocab, d_e, seed);
        let mut rng = seeded_rng(seed, "captioner-fixture");
        let visual = GlobalEmbedding {
            tensor: Tensor::constant(Array2::from_shape_fn((hw, d_e), |_| rng.gen_range(-1.0..1.0))),
            h: 1,
            w: hw,
        };
        let cons = Array2::from_shape_fn((hw, 1), |_| rng.gen_range(0.0..1.0));
        let chg = cons.mapv(|c| 1.0 - c);
        let priors = PriorMaps {
            consistency: Tensor::constant(cons),
            change: Tensor::constant(chg),
            h: 1,
            w: hw,
        };
        let fused = Tensor::constant(Array2::from_shape_fn((1, cfg.fused_dim()), |_| {
            rng.gen_range(-1.0..1.0)
        }));
        (store, dec, visual, priors, fused)
    }

    fn small_cfg() -> DecoderConfig {
        DecoderConfig {
            motion_proj: 4,
            semantic_proj: 4,
            graph_proj: 4,
            layers: 2,
            heads: 2,
            ffn_dim: 16,
            max_len: 8,
            label_smoothing: 0.0,
            alpha_init: 1.0,
            beta_init: 0.0,
        }
    }

    #[test]
    fn fusion_moments_and_passthrough() {
        let mut store = ParamStore::new();
        let cfg = small_cfg();
        let fusion = ChangeFusion::new(&mut store, &cfg, 6, 5, 4, 3);
        let mut rng = seeded_rng(2, "fusion");
        let m = Tensor::constant(Array2::from_shape_fn((1, 6), |_| rng.gen_range(-1.0..1.0)));
        let s = Tensor::constant(Array2::from_shape_fn((1, 5), |_| rng.gen_range(-1.0..1.0)));
        let g = Tensor::constant(Array2::from_shape_fn((1, 4), |_| rng.gen_range(-1.0..1.0)));
        let r = fusion.fuse(&m, &s, &g);
        assert_eq!(r.shape(), (1, 12));
        let d = r.data();
        let mean: f64 = d.row(0).sum() / 12.0;
        let var: f64 = d.row(0).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 12.0;
        assert!(mean.abs() < 1e-6, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-4, "var {var}");
        // all-zero inputs with zero biases: pre-norm vector is 0, LN gives 0
        for (name, p) in store.iter() {
            if name.ends_with(".b") {
                let (r0, c0) = p.shape();
                p.set_data(Array2::zeros((r0, c0)));
            }
        }
        let z6 = Tensor::constant(Array2::zeros((1, 6)));
        let z5 = Tensor::constant(Array2::zeros((1, 5)));
        let z4 = Tensor::constant(Array2::zeros((1, 4)));
        let r0 = fusion.fuse(&z6, &z5, &z4);
        assert!(r0.data().iter().all(|v| *v == 0.0));
        // passthrough hook: identity projections, no LN
        let pre = fusion.concat_projected(&m, &s, &g);
        fusion.w_motion.w.set_data(Array2::eye(6).slice(ndarray::s![.., 0..4]).to_owned());
        let _ = pre; // concat shape contract
        assert_eq!(fusion.concat_projected(&m, &s, &g).shape(), (1, 12));
    }

    #[test]
    fn bias_construction_and_linearity() {
        let cfg = small_cfg();
        let (_s, dec, _v, priors, _f) = fixture(&cfg, 10, 4, 6, 5);
        // alpha=0, beta=0 -> zero bias
        dec.alpha.set_data(Array2::zeros((1, 1)));
        dec.beta.set_data(Array2::zeros((1, 1)));
        let b = dec.build_bias(&priors, 3);
        assert!(b.bias.data().iter().all(|v| *v == 0.0));
        assert_eq!(b.bias.shape(), (3, 4));

        // alpha=1, beta=0 with one-hot change -> one-hot pi
        let onehot = PriorMaps {
            consistency: Tensor::constant(Array2::from_shape_fn((4, 1), |(i, _)| {
                if i == 2 { 0.0 } else { 1.0 }
            })),
            change: Tensor::constant(Array2::from_shape_fn((4, 1), |(i, _)| {
                if i == 2 { 1.0 } else { 0.0 }
            })),
            h: 1,
            w: 4,
        };
        dec.alpha.set_data(Array2::from_elem((1, 1), 1.0));
        let b = dec.build_bias(&onehot, 2);
        for j in 0..4 {
            let expect = if j == 2 { 1.0 } else { 0.0 };
            assert_eq!(b.pi.data()[(0, j)], expect);
            assert_eq!(b.bias.data()[(0, j)], expect);
            assert_eq!(b.bias.data()[(1, j)], expect, "every row equals pi");
        }

        // linearity: pi(a1+a2, b) = pi(a1, b) + pi(a2, 0)
        let (a1, a2, beta) = (0.7, 1.9, 0.4);
        dec.alpha.set_data(Array2::from_elem((1, 1), a1 + a2));
        dec.beta.set_data(Array2::from_elem((1, 1), beta));
        let lhs = dec.build_bias(&priors, 1);
        dec.alpha.set_data(Array2::from_elem((1, 1), a1));
        let p1 = dec.build_bias(&priors, 1);
        dec.alpha.set_data(Array2::from_elem((1, 1), a2));
        dec.beta.set_data(Array2::zeros((1, 1)));
        let p2 = dec.build_bias(&priors, 1);
        for j in 0..4 {
            let sum = p1.pi.data()[(0, j)] + p2.pi.data()[(0, j)];
            assert!((lhs.pi.data()[(0, j)] - sum).abs() < 1e-12);
        }
    }

    #[test]
    fn causal_masking_is_exact() {
        let cfg = small_cfg();
        let (_s, dec, visual, priors, fused) = fixture(&cfg, 12, 4, 6, 7);
        let tokens = vec![BOS, 5, 6, 7];
        let bias = dec.build_bias(&priors, 4);
        let base = dec.forward(&tokens, &visual, &fused, &bias).unwrap().to_array();
        // perturb token at position 3; logits at positions <= 2 unchanged
        let perturbed = vec![BOS, 5, 6, 9];
        let got = dec.forward(&perturbed, &visual, &fused, &bias).unwrap().to_array();
        for t in 0..3 {
            for v in 0..12 {
                assert_eq!(base[(t, v)], got[(t, v)], "position {t} changed");
            }
        }
        assert_ne!(base.row(3), got.row(3));
    }

    #[test]
    fn softmax_rows_of_logits_normalize() {
        let cfg = small_cfg();
        let (_s, dec, visual, priors, fused) = fixture(&cfg, 9, 4, 6, 1);
        let bias = dec.build_bias(&priors, 2);
        let logits = dec.forward(&[BOS, 4], &visual, &fused, &bias).unwrap();
        let probs = crate::tensor::softmax_probs(&logits.data());
        for row in probs.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn micro_decoder_matches_hand_rolled_evaluation() {
        // L=1, T=1, hw=1, d_f=2, 1 head: every step is scalar arithmetic.
        let cfg = DecoderConfig {
            motion_proj: 1,
            semantic_proj: 1,
            graph_proj: 0,
            layers: 1,
            heads: 1,
            ffn_dim: 3,
            max_len: 4,
            label_smoothing: 0.0,
            alpha_init: 1.0,
            beta_init: 0.0,
        };
        // graph_proj 0 is degenerate; use 2-dim fused via motion+semantic
        assert_eq!(cfg.fused_dim(), 2);
        let mut store = ParamStore::new();
        let dec = CaptionDecoder::new(&mut store, &cfg, 5, 3, 21);
        let visual = GlobalEmbedding {
            tensor: Tensor::constant(ndarray::array![[0.3, -0.6, 0.9]]),
            h: 1,
            w: 1,
        };
        let priors = PriorMaps {
            consistency: Tensor::constant(ndarray::array![[0.25]]),
            change: Tensor::constant(ndarray::array![[0.75]]),
            h: 1,
            w: 1,
        };
        let fused = Tensor::constant(ndarray::array![[0.4, -1.2]]);
        let bias = dec.build_bias(&priors, 1);
        let tokens = [BOS];
        let logits = dec.forward(&tokens, &visual, &fused, &bias).unwrap();

        let get = |n: &str| store.get(n).unwrap().to_array();
        // token embedding + sequence position encoding (pos 0)
        let pe = posenc_seq(1, 2);
        let y0 = [
            get("decoder.token_emb")[(BOS, 0)] + pe[(0, 0)],
            get("decoder.token_emb")[(BOS, 1)] + pe[(0, 1)],
        ];
        // self-attention over a single token: probs = 1
        let lin = |x: &[f64], w: &Array2<f64>, b: &Array2<f64>| -> Vec<f64> {
            (0..w.ncols())
                .map(|c| b[(0, c)] + (0..w.nrows()).map(|r| x[r] * w[(r, c)]).sum::<f64>())
                .collect()
        };
        let v_sa = lin(&y0, &get("decoder.l0.sa.v.w"), &get("decoder.l0.sa.v.b"));
        let sa = lin(&v_sa, &get("decoder.l0.sa.o.w"), &get("decoder.l0.sa.o.b"));
        // cross-attention over a single visual token: probs = 1 (bias shifts
        // the only logit, softmax is still 1)
        let xv: Vec<f64> = vec![0.3, -0.6, 0.9];
        let v_ca = lin(&xv, &get("decoder.l0.ca.v.w"), &get("decoder.l0.ca.v.b"));
        let ca = lin(&v_ca, &get("decoder.l0.ca.o.w"), &get("decoder.l0.ca.o.b"));
        // pre-FFN: LN(sa + ca + r)
        let pre = [sa[0] + ca[0] + 0.4, sa[1] + ca[1] - 1.2];
        let mean = (pre[0] + pre[1]) / 2.0;
        let var = ((pre[0] - mean).powi(2) + (pre[1] - mean).powi(2)) / 2.0;
        let g = get("decoder.l0.ln.gamma");
        let b = get("decoder.l0.ln.beta");
        let ln = [
            (pre[0] - mean) / (var + 1e-5).sqrt() * g[(0, 0)] + b[(0, 0)],
            (pre[1] - mean) / (var + 1e-5).sqrt() * g[(0, 1)] + b[(0, 1)],
        ];
        let hid: Vec<f64> = lin(&ln, &get("decoder.l0.ffn_in.w"), &get("decoder.l0.ffn_in.b"))
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        let y1 = lin(&hid, &get("decoder.l0.ffn_out.w"), &get("decoder.l0.ffn_out.b"));
        let expect = lin(&y1, &get("decoder.out.w"), &get("decoder.out.b"));
        for (a, e) in logits.data().iter().zip(expect.iter()) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn ce_loss_hand_cases() {
        // perfect prediction, eps 0 -> loss ~ 0
        let mut logits = Array2::from_elem((2, 4), -1e9);
        logits[(0, 2)] = 0.0;
        logits[(1, 3)] = 0.0;
        let loss = ce_loss(&Tensor::constant(logits), &[2, 3], 0.0).unwrap();
        assert!(loss.value().abs() < 1e-9);

        // uniform logits, V=10 -> ln 10
        let logits = Tensor::constant(Array2::zeros((3, 10)));
        let loss = ce_loss(&logits, &[4, 5, 6], 0.0).unwrap();
        assert!((loss.value() - 10.0f64.ln()).abs() < 1e-9);

        // eps=0.1, V=4, single position: direct sum -sum(q * log p)
        let raw = ndarray::array![[0.7, -0.3, 1.1, 0.2]];
        let logits = Tensor::constant(raw.clone());
        let loss = ce_loss(&logits, &[2], 0.1).unwrap();
        let mx = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = raw.iter().map(|v| (v - mx).exp()).sum();
        let logp: Vec<f64> = raw.iter().map(|v| v - mx - z.ln()).collect();
        let q = [0.1 / 3.0, 0.1 / 3.0, 0.9, 0.1 / 3.0];
        let expect: f64 = -q.iter().zip(&logp).map(|(qi, li)| qi * li).sum::<f64>();
        assert!((loss.value() - expect).abs() < 1e-12);

        // padding masked; all-pad is an error
        let logits = Tensor::constant(Array2::zeros((2, 10)));
        let loss = ce_loss(&logits, &[7, PAD], 0.0).unwrap();
        assert!((loss.value() - 10.0f64.ln()).abs() < 1e-9);
        assert!(matches!(
            ce_loss(&Tensor::constant(Array2::zeros((2, 10))), &[PAD, PAD], 0.0),
            Err(Error::UndefinedLoss(_))
        ));
    }

    #[test]
    fn out_of_range_token_is_input_error() {
        let cfg = small_cfg();
        let (_s, dec, visual, priors, fused) = fixture(&cfg, 10, 4, 6, 3);
        let bias = dec.build_bias(&priors, 1);
        assert!(matches!(
            dec.forward(&[10], &visual, &fused, &bias),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn beam_one_equals_greedy() {
        let cfg = small_cfg();
        let (_s, dec, visual, priors, fused) = fixture(&cfg, 10, 4, 6, 13);
        let g = generate(&dec, &visual, &fused, &priors, DecodeStrategy::Greedy).unwrap();
        let b = generate(&dec, &visual, &fused, &priors, DecodeStrategy::Beam(1)).unwrap();
        assert_eq!(g, b);
    }

    #[test]
    fn immediate_eos_gives_empty_caption() {
        let cfg = small_cfg();
        let (store, dec, visual, priors, fused) = fixture(&cfg, 10, 4, 6, 13);
        // force the output head to always put all mass on EOS
        let w = store.get("decoder.out.w").unwrap();
        let (r, c) = w.shape();
        w.set_data(Array2::zeros((r, c)));
        let b = store.get("decoder.out.b").unwrap();
        let mut bias_to_eos = Array2::zeros((1, c));
        bias_to_eos[(0, EOS)] = 50.0;
        b.set_data(bias_to_eos);
        let g = generate(&dec, &visual, &fused, &priors, DecodeStrategy::Greedy).unwrap();
        assert!(g.is_empty());
        let bm = generate(&dec, &visual, &fused, &priors, DecodeStrategy::Beam(3)).unwrap();
        assert!(bm.is_empty());
    }

    #[test]
    fn beam_matches_exhaustive_search_on_toy_model() {
        // 5-token vocab (pad/bos/eos + 2 words), max_len 4: enumerate all
        // sequences and compare length-normalized scores.
        let cfg = DecoderConfig {
            motion_proj: 2,
            semantic_proj: 1,
            graph_proj: 1,
            layers: 1,
            heads: 1,
            ffn_dim: 8,
            max_len: 4,
            label_smoothing: 0.0,
            alpha_init: 1.0,
            beta_init: 0.0,
        };
        let (_s, dec, visual, priors, fused) = fixture(&cfg, 5, 2, 4, 29);
        let beam_out = generate(&dec, &visual, &fused, &priors, DecodeStrategy::Beam(2)).unwrap();

        // exhaustive: sequences of words {3, 4} with length 0..=3
        let mut best: Option<(f64, Vec<usize>)> = None;
        let mut consider = |tokens: Vec<usize>| {
            // score = sum log p of each step (+ EOS if it terminates before
            // max_len), normalized by generated length
            let mut prefix = vec![BOS];
            let mut lp_sum = 0.0;
            for &t in &tokens {
                let lp = step_log_probs(&dec, &prefix, &visual, &fused, &priors).unwrap();
                lp_sum += lp[t];
                prefix.push(t);
            }
            if prefix.len() < dec.cfg.max_len {
                let lp = step_log_probs(&dec, &prefix, &visual, &fused, &priors).unwrap();
                lp_sum += lp[EOS];
            }
            let score = lp_sum / tokens.len().max(1) as f64;
            let better = match &best {
                None => true,
                Some((s, t)) => score > *s || (score == *s && tokens < t.clone()),
            };
            if better {
                best = Some((score, tokens));
            }
        };
        for len in 0..=3usize {
            let words = [3usize, 4];
            match len {
                0 => consider(vec![]),
                1 => {
                    for &a in &words {
                        consider(vec![a]);
                    }
                }
                2 => {
                    for &a in &words {
                        for &b in &words {
                            consider(vec![a, b]);
                        }
                    }
                }
                _ => {
                    for &a in &words {
                        for &b in &words {
                            for &c in &words {
                                consider(vec![a, b, c]);
                            }
                        }
                    }
                }
            }
        }
        let (_, expect) = best.unwrap();
        // beam(2) is not guaranteed optimal in general, but on this toy
        // model with width 2 over 2 words it explores the full tree level
        assert_eq!(beam_out, expect);
    }
}
