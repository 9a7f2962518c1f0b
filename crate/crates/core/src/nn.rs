//! Neural building blocks composed from tensor ops: linear layers,
//! layer/channel normalization, multi-head attention, 3x3 convolution via
//! im2col, and fixed sinusoidal positional encodings.

use crate::tensor::{ParamStore, Tensor};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha12Rng};

/// Deterministic per-component RNG derived from a global seed and a label.
pub fn seeded_rng(global_seed: u64, label: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(global_seed ^ fnv1a(label))
}

pub fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Xavier-uniform matrix, registered under `name`.
pub fn xavier(store: &mut ParamStore, name: &str, rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = seeded_rng(seed, name);
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound));
    store.register(name, Tensor::param(data))
}

pub fn zeros_param(store: &mut ParamStore, name: &str, rows: usize, cols: usize) -> Tensor {
    store.register(name, Tensor::param(Array2::zeros((rows, cols))))
}

pub fn ones_param(store: &mut ParamStore, name: &str, rows: usize, cols: usize) -> Tensor {
    store.register(name, Tensor::param(Array2::from_elem((rows, cols), 1.0)))
}

/// `y = x W + b` with `W: (d_in, d_out)`.
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, seed: u64) -> Self {
        Linear {
            w: xavier(store, &format!("{name}.w"), d_in, d_out, seed),
            b: zeros_param(store, &format!("{name}.b"), 1, d_out),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        x.matmul(&self.w).add_row(&self.b)
    }
}

/// Row-wise layer normalization with learnable affine (gamma=1, beta=0 at
/// init). A constant row normalizes to zero because of the variance epsilon.
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        LayerNorm {
            gamma: ones_param(store, &format!("{name}.gamma"), 1, d),
            beta: zeros_param(store, &format!("{name}.beta"), 1, d),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        normalize_rows(x, self.eps)
            .mul_row(&self.gamma)
            .add_row(&self.beta)
    }
}

/// `(x - mean) / sqrt(var + eps)` per row, without affine.
pub fn normalize_rows(x: &Tensor, eps: f64) -> Tensor {
    let centered = x.sub_col(&x.row_means());
    let var = centered.square().row_means();
    centered.div_col(&var.add_scalar(eps).sqrt())
}

/// Channel normalization over spatial positions of a flattened `(hw, C)`
/// grid, with learnable per-channel affine. Statistics are computed per
/// sample so the forward stays a pure function of its inputs.
pub struct ChannelNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

impl ChannelNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        ChannelNorm {
            gamma: ones_param(store, &format!("{name}.gamma"), 1, channels),
            beta: zeros_param(store, &format!("{name}.beta"), 1, channels),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let centered = x.sub_row(&x.mean_rows());
        let var = centered.square().mean_rows();
        centered
            .div_row(&var.add_scalar(self.eps).sqrt())
            .mul_row(&self.gamma)
            .add_row(&self.beta)
    }
}

/// Multi-head scaled dot-product attention. Queries come from `q_in`
/// `(Tq, d_model)`, keys and values from `kv_in` `(Tk, d_kv)`.
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub d_model: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        d_kv: usize,
        heads: usize,
        seed: u64,
    ) -> Self {
        assert!(d_model % heads == 0, "d_model {d_model} not divisible by {heads} heads");
        MultiHeadAttention {
            wq: Linear::new(store, &format!("{name}.q"), d_model, d_model, seed),
            wk: Linear::new(store, &format!("{name}.k"), d_kv, d_model, seed),
            wv: Linear::new(store, &format!("{name}.v"), d_kv, d_model, seed),
            wo: Linear::new(store, &format!("{name}.o"), d_model, d_model, seed),
            heads,
            d_model,
        }
    }

    /// `bias`, when present, is added to every head's pre-softmax logits
    /// (shape `(Tq, Tk)`). `causal` masks out keys at positions > query.
    pub fn forward(&self, q_in: &Tensor, kv_in: &Tensor, bias: Option<&Tensor>, causal: bool) -> Tensor {
        let outs: Vec<Tensor> = self
            .head_attention(q_in, kv_in, bias, causal)
            .into_iter()
            .map(|(probs, vh)| probs.matmul(&vh))
            .collect();
        self.wo.forward(&Tensor::concat_cols(&outs))
    }

    /// Per-head (softmax probabilities, value slice) pairs.
    fn head_attention(
        &self,
        q_in: &Tensor,
        kv_in: &Tensor,
        bias: Option<&Tensor>,
        causal: bool,
    ) -> Vec<(Tensor, Tensor)> {
        let q = self.wq.forward(q_in);
        let k = self.wk.forward(kv_in);
        let v = self.wv.forward(kv_in);
        let dh = self.d_model / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mask = causal.then(|| Tensor::constant(causal_mask(q.rows(), k.rows())));
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = q.slice_cols(lo, hi);
            let kh = k.slice_cols(lo, hi);
            let vh = v.slice_cols(lo, hi);
            let mut logits = qh.matmul(&kh.t()).scale(scale);
            if let Some(b) = bias {
                logits = logits.add(b);
            }
            if let Some(m) = &mask {
                logits = logits.add(m);
            }
            outs.push((logits.softmax_rows(), vh));
        }
        outs
    }

    /// Post-softmax attention probabilities per head, as plain arrays.
    pub fn attention_probs(
        &self,
        q_in: &Tensor,
        kv_in: &Tensor,
        bias: Option<&Tensor>,
        causal: bool,
    ) -> Vec<Array2<f64>> {
        self.head_attention(q_in, kv_in, bias, causal)
            .into_iter()
            .map(|(p, _)| p.to_array())
            .collect()
    }
}

/// Large negative (not -inf) so softmax max-subtraction stays finite.
const MASK_NEG: f64 = -1e30;

pub fn causal_mask(tq: usize, tk: usize) -> Array2<f64> {
    Array2::from_shape_fn((tq, tk), |(i, j)| if j > i { MASK_NEG } else { 0.0 })
}

/// 3x3 convolution over a flattened `(h*w, c_in)` grid via im2col with zero
/// padding, arbitrary stride. The weight is `(9*c_in, c_out)`.
pub struct Conv3x3 {
    pub w: Tensor,
    pub b: Tensor,
    pub stride: usize,
}

impl Conv3x3 {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
        seed: u64,
    ) -> Self {
        Conv3x3 {
            w: xavier(store, &format!("{name}.w"), 9 * c_in, c_out, seed),
            b: zeros_param(store, &format!("{name}.b"), 1, c_out),
            stride,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        // padding 1, kernel 3
        ((h + 2 - 3) / self.stride + 1, (w + 2 - 3) / self.stride + 1)
    }

    pub fn forward(&self, x: &Tensor, h: usize, w: usize) -> (Tensor, usize, usize) {
        assert_eq!(x.rows(), h * w, "grid rows != h*w");
        let (oh, ow) = self.out_hw(h, w);
        // Zero row appended at index h*w catches padded taps; its gradient is
        // discarded with the constant.
        let zero_row = Tensor::constant(Array2::zeros((1, x.cols())));
        let padded = Tensor::concat_rows(&[x.clone(), zero_row]);
        let mut idx = Vec::with_capacity(oh * ow * 9);
        let pad_idx = h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let cy = (oy * self.stride) as isize;
                let cx = (ox * self.stride) as isize;
                for ky in -1..=1isize {
                    for kx in -1..=1isize {
                        let y = cy + ky;
                        let x_ = cx + kx;
                        if y < 0 || y >= h as isize || x_ < 0 || x_ >= w as isize {
                            idx.push(pad_idx);
                        } else {
                            idx.push(y as usize * w + x_ as usize);
                        }
                    }
                }
            }
        }
        let patches = padded.gather_rows(&idx).reshape(oh * ow, 9 * x.cols());
        let out = patches.matmul(&self.w).add_row(&self.b);
        (out, oh, ow)
    }
}

/// Fixed 2-D sinusoidal positional embedding over an `h x w` grid with `c`
/// channels: the first half encodes the row index, the second half the
/// column index.
pub fn posenc_2d(h: usize, w: usize, c: usize) -> Array2<f64> {
    assert!(c % 2 == 0, "positional channels must be even");
    let half = c / 2;
    let mut out = Array2::zeros((h * w, c));
    for y in 0..h {
        for x in 0..w {
            let row = y * w + x;
            let pe_y = posenc_value(y as f64, half);
            let pe_x = posenc_value(x as f64, half);
            for i in 0..half {
                out[(row, i)] = pe_y[i];
                out[(row, half + i)] = pe_x[i];
            }
        }
    }
    out
}

/// Standard 1-D sinusoidal encoding of a scalar position into `d` dims.
pub fn posenc_value(pos: f64, d: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    let pairs = d / 2;
    for i in 0..pairs {
        let freq = 1.0 / 10_000f64.powf(2.0 * i as f64 / d as f64);
        v[2 * i] = (pos * freq).sin();
        v[2 * i + 1] = (pos * freq).cos();
    }
    if d % 2 == 1 {
        let freq = 1.0 / 10_000f64.powf((d - 1) as f64 / d as f64);
        v[d - 1] = (pos * freq).sin();
    }
    v
}

/// Sinusoidal encoding of a 2-D point (x, y): half the dims encode x, half y.
pub fn posenc_point(x: f64, y: f64, d: usize) -> Vec<f64> {
    assert!(d % 2 == 0);
    let mut v = posenc_value(x, d / 2);
    v.extend(posenc_value(y, d / 2));
    v
}

/// Token-position encoding matrix `(t, d)`.
pub fn posenc_seq(t: usize, d: usize) -> Array2<f64> {
    let mut out = Array2::zeros((t, d));
    for pos in 0..t {
        let v = posenc_value(pos as f64, d);
        for (j, val) in v.iter().enumerate() {
            out[(pos, j)] = *val;
        }
    }
    out
}
