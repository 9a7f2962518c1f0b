//! Differentiable operations on [`Tensor`].
//!
//! Each op builds a child node whose backward closure maps the upstream
//! gradient to per-parent gradients. Broadcast helpers follow a naming
//! convention: `*_row` broadcasts a `(1, d)` tensor across rows, `*_col`
//! broadcasts an `(n, 1)` tensor across columns.

use super::Tensor;
use ndarray::{s, Array2, Axis};

fn unary(t: &Tensor, out: Array2<f64>, back: impl Fn(&Array2<f64>) -> Array2<f64> + 'static) -> Tensor {
    Tensor::new(out, vec![t.clone()], Some(Box::new(move |g| vec![back(g)])))
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape(), other.shape(), "add shape mismatch");
        let out = &*self.data() + &*other.data();
        Tensor::new(
            out,
            vec![self.clone(), other.clone()],
            Some(Box::new(|g| vec![g.clone(), g.clone()])),
        )
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape(), other.shape(), "sub shape mismatch");
        let out = &*self.data() - &*other.data();
        Tensor::new(
            out,
            vec![self.clone(), other.clone()],
            Some(Box::new(|g| vec![g.clone(), -g])),
        )
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        let (a, b) = (self.shape(), other.shape());
        if a == (1, 1) && b != (1, 1) {
            return other.scale_by(self);
        }
        if b == (1, 1) && a != (1, 1) {
            return self.scale_by(other);
        }
        assert_eq!(a, b, "mul shape mismatch");
        let out = &*self.data() * &*other.data();
        let (sa, sb) = (self.clone(), other.clone());
        Tensor::new(
            out,
            vec![self.clone(), other.clone()],
            Some(Box::new(move |g| vec![g * &*sb.data(), g * &*sa.data()])),
        )
    }

    pub fn div(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape(), other.shape(), "div shape mismatch");
        let out = &*self.data() / &*other.data();
        let (sa, sb) = (self.clone(), other.clone());
        Tensor::new(
            out,
            vec![self.clone(), other.clone()],
            Some(Box::new(move |g| {
                let b = sb.data();
                let a = sa.data();
                vec![g / &*b, -(g * &*a) / (&*b * &*b)]
            })),
        )
    }

    /// Multiply by a scalar `(1,1)` tensor.
    pub fn scale_by(&self, k: &Tensor) -> Tensor {
        assert_eq!(k.shape(), (1, 1));
        let kv = k.value();
        let out = &*self.data() * kv;
        let (sa, sk) = (self.clone(), k.clone());
        Tensor::new(
            out,
            vec![self.clone(), k.clone()],
            Some(Box::new(move |g| {
                let da = g * sk.value();
                let dk = (g * &*sa.data()).sum();
                vec![da, Array2::from_elem((1, 1), dk)]
            })),
        )
    }

    pub fn scale(&self, k: f64) -> Tensor {
        let out = &*self.data() * k;
        unary(self, out, move |g| g * k)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, k: f64) -> Tensor {
        let out = &*self.data() + k;
        unary(self, out, |g| g.clone())
    }

    pub fn relu(&self) -> Tensor {
        let out = self.data().mapv(|v| v.max(0.0));
        let sa = self.clone();
        unary(self, out, move |g| {
            g * &sa.data().mapv(|v| if v > 0.0 { 1.0 } else { 0.0 })
        })
    }

    pub fn abs(&self) -> Tensor {
        let out = self.data().mapv(f64::abs);
        let sa = self.clone();
        unary(self, out, move |g| g * &sa.data().mapv(f64::signum))
    }

    pub fn sqrt(&self) -> Tensor {
        let out = self.data().mapv(f64::sqrt);
        let so = out.clone();
        unary(self, out, move |g| g * &so.mapv(|y| 0.5 / y))
    }

    pub fn exp(&self) -> Tensor {
        let out = self.data().mapv(f64::exp);
        let so = out.clone();
        unary(self, out, move |g| g * &so)
    }

    pub fn ln(&self) -> Tensor {
        let out = self.data().mapv(f64::ln);
        let sa = self.clone();
        unary(self, out, move |g| g / &*sa.data())
    }

    pub fn square(&self) -> Tensor {
        self.mul(self)
    }

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(
            self.cols(),
            other.rows(),
            "matmul inner dims: {:?} x {:?}",
            self.shape(),
            other.shape()
        );
        let out = self.data().dot(&*other.data());
        let (sa, sb) = (self.clone(), other.clone());
        Tensor::new(
            out,
            vec![self.clone(), other.clone()],
            Some(Box::new(move |g| {
                vec![g.dot(&sb.data().t()), sa.data().t().dot(g)]
            })),
        )
    }

    pub fn t(&self) -> Tensor {
        let out = self.data().t().to_owned();
        unary(self, out, |g| g.t().to_owned())
    }

    pub fn reshape(&self, rows: usize, cols: usize) -> Tensor {
        let (r0, c0) = self.shape();
        assert_eq!(r0 * c0, rows * cols, "reshape element count mismatch");
        let out = reshape_array(&self.data(), rows, cols);
        unary(self, out, move |g| reshape_array(g, r0, c0))
    }

    // ---- broadcast binary ops ----

    /// `(n, d) + (1, d)`, broadcast across rows.
    pub fn add_row(&self, row: &Tensor) -> Tensor {
        assert_eq!(row.rows(), 1);
        assert_eq!(self.cols(), row.cols(), "add_row width mismatch");
        let out = &*self.data() + &*row.data();
        Tensor::new(
            out,
            vec![self.clone(), row.clone()],
            Some(Box::new(move |g| {
                vec![g.clone(), g.sum_axis(Axis(0)).insert_axis(Axis(0))]
            })),
        )
    }

    /// `(n, d) - (1, d)`.
    pub fn sub_row(&self, row: &Tensor) -> Tensor {
        self.add_row(&row.neg())
    }

    /// `(n, d) * (1, d)`.
    pub fn mul_row(&self, row: &Tensor) -> Tensor {
        assert_eq!(row.rows(), 1);
        assert_eq!(self.cols(), row.cols(), "mul_row width mismatch");
        let out = &*self.data() * &*row.data();
        let (sa, sr) = (self.clone(), row.clone());
        Tensor::new(
            out,
            vec![self.clone(), row.clone()],
            Some(Box::new(move |g| {
                let da = g * &*sr.data();
                let dr = (g * &*sa.data()).sum_axis(Axis(0)).insert_axis(Axis(0));
                vec![da, dr]
            })),
        )
    }

    /// `(n, d) / (1, d)`.
    pub fn div_row(&self, row: &Tensor) -> Tensor {
        assert_eq!(row.rows(), 1);
        let out = &*self.data() / &*row.data();
        let (sa, sr) = (self.clone(), row.clone());
        Tensor::new(
            out,
            vec![self.clone(), row.clone()],
            Some(Box::new(move |g| {
                let r = sr.data();
                let da = g / &*r;
                let dr = (-(g * &*sa.data()) / (&*r * &*r))
                    .sum_axis(Axis(0))
                    .insert_axis(Axis(0));
                vec![da, dr]
            })),
        )
    }

    /// `(n, d) + (n, 1)`, broadcast across columns.
    pub fn add_col(&self, col: &Tensor) -> Tensor {
        assert_eq!(col.cols(), 1);
        assert_eq!(self.rows(), col.rows(), "add_col height mismatch");
        let out = &*self.data() + &*col.data();
        Tensor::new(
            out,
            vec![self.clone(), col.clone()],
            Some(Box::new(move |g| {
                vec![g.clone(), g.sum_axis(Axis(1)).insert_axis(Axis(1))]
            })),
        )
    }

    /// `(n, d) - (n, 1)`.
    pub fn sub_col(&self, col: &Tensor) -> Tensor {
        self.add_col(&col.neg())
    }

    /// `(n, d) * (n, 1)`.
    pub fn mul_col(&self, col: &Tensor) -> Tensor {
        assert_eq!(col.cols(), 1);
        assert_eq!(self.rows(), col.rows(), "mul_col height mismatch");
        let out = &*self.data() * &*col.data();
        let (sa, sc) = (self.clone(), col.clone());
        Tensor::new(
            out,
            vec![self.clone(), col.clone()],
            Some(Box::new(move |g| {
                let da = g * &*sc.data();
                let dc = (g * &*sa.data()).sum_axis(Axis(1)).insert_axis(Axis(1));
                vec![da, dc]
            })),
        )
    }

    /// `(n, d) / (n, 1)`.
    pub fn div_col(&self, col: &Tensor) -> Tensor {
        assert_eq!(col.cols(), 1);
        let out = &*self.data() / &*col.data();
        let (sa, sc) = (self.clone(), col.clone());
        Tensor::new(
            out,
            vec![self.clone(), col.clone()],
            Some(Box::new(move |g| {
                let c = sc.data();
                let da = g / &*c;
                let dc = (-(g * &*sa.data()) / (&*c * &*c))
                    .sum_axis(Axis(1))
                    .insert_axis(Axis(1));
                vec![da, dc]
            })),
        )
    }

    // ---- reductions ----

    pub fn sum_all(&self) -> Tensor {
        let (r, c) = self.shape();
        let out = Array2::from_elem((1, 1), self.data().sum());
        unary(self, out, move |g| Array2::from_elem((r, c), g[(0, 0)]))
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.data().len() as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Sum over rows: `(n, d) -> (1, d)`.
    pub fn sum_rows(&self) -> Tensor {
        let n = self.rows();
        let out = self.data().sum_axis(Axis(0)).insert_axis(Axis(0));
        unary(self, out, move |g| {
            let mut full = Array2::zeros((n, g.ncols()));
            for mut row in full.rows_mut() {
                row.assign(&g.row(0));
            }
            full
        })
    }

    /// Mean over rows: `(n, d) -> (1, d)`.
    pub fn mean_rows(&self) -> Tensor {
        let n = self.rows() as f64;
        self.sum_rows().scale(1.0 / n)
    }

    /// Per-row sum: `(n, d) -> (n, 1)`.
    pub fn row_sums(&self) -> Tensor {
        let d = self.cols();
        let out = self.data().sum_axis(Axis(1)).insert_axis(Axis(1));
        unary(self, out, move |g| {
            let mut full = Array2::zeros((g.nrows(), d));
            for (i, mut row) in full.rows_mut().into_iter().enumerate() {
                row.fill(g[(i, 0)]);
            }
            full
        })
    }

    /// Per-row mean: `(n, d) -> (n, 1)`.
    pub fn row_means(&self) -> Tensor {
        let d = self.cols() as f64;
        self.row_sums().scale(1.0 / d)
    }

    // ---- structure ops ----

    pub fn concat_cols(parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty());
        let n = parts[0].rows();
        let widths: Vec<usize> = parts.iter().map(|p| p.cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Array2::zeros((n, total));
        let mut off = 0;
        for p in parts {
            assert_eq!(p.rows(), n, "concat_cols row mismatch");
            out.slice_mut(s![.., off..off + p.cols()]).assign(&p.data());
            off += p.cols();
        }
        Tensor::new(
            out,
            parts.to_vec(),
            Some(Box::new(move |g| {
                let mut grads = Vec::with_capacity(widths.len());
                let mut off = 0;
                for w in &widths {
                    grads.push(g.slice(s![.., off..off + w]).to_owned());
                    off += w;
                }
                grads
            })),
        )
    }

    pub fn concat_rows(parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty());
        let d = parts[0].cols();
        let heights: Vec<usize> = parts.iter().map(|p| p.rows()).collect();
        let total: usize = heights.iter().sum();
        let mut out = Array2::zeros((total, d));
        let mut off = 0;
        for p in parts {
            assert_eq!(p.cols(), d, "concat_rows col mismatch");
            out.slice_mut(s![off..off + p.rows(), ..]).assign(&p.data());
            off += p.rows();
        }
        Tensor::new(
            out,
            parts.to_vec(),
            Some(Box::new(move |g| {
                let mut grads = Vec::with_capacity(heights.len());
                let mut off = 0;
                for h in &heights {
                    grads.push(g.slice(s![off..off + h, ..]).to_owned());
                    off += h;
                }
                grads
            })),
        )
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Tensor {
        let (n, d) = self.shape();
        assert!(start < end && end <= d);
        let out = self.data().slice(s![.., start..end]).to_owned();
        unary(self, out, move |g| {
            let mut full = Array2::zeros((n, d));
            full.slice_mut(s![.., start..end]).assign(g);
            full
        })
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor {
        let (n, d) = self.shape();
        assert!(start < end && end <= n);
        let out = self.data().slice(s![start..end, ..]).to_owned();
        unary(self, out, move |g| {
            let mut full = Array2::zeros((n, d));
            full.slice_mut(s![start..end, ..]).assign(g);
            full
        })
    }

    /// Pick one element per row: `out[i] = self[i, idx[i]]` as `(n, 1)`.
    pub fn gather_cols_per_row(&self, idx: &[usize]) -> Tensor {
        let (n, d) = self.shape();
        assert_eq!(idx.len(), n, "one index per row");
        let idx_owned: Vec<usize> = idx.to_vec();
        let mut out = Array2::zeros((n, 1));
        {
            let data = self.data();
            for (i, &j) in idx_owned.iter().enumerate() {
                assert!(j < d, "column index {j} out of {d}");
                out[(i, 0)] = data[(i, j)];
            }
        }
        unary(self, out, move |g| {
            let mut full = Array2::zeros((n, d));
            for (i, &j) in idx_owned.iter().enumerate() {
                full[(i, j)] = g[(i, 0)];
            }
            full
        })
    }

    /// Select rows by index (duplicates allowed). Backward scatter-adds.
    pub fn gather_rows(&self, idx: &[usize]) -> Tensor {
        let (n, d) = self.shape();
        let idx_owned: Vec<usize> = idx.to_vec();
        let mut out = Array2::zeros((idx.len(), d));
        {
            let data = self.data();
            for (k, &i) in idx_owned.iter().enumerate() {
                assert!(i < n, "gather_rows index {i} out of {n}");
                out.row_mut(k).assign(&data.row(i));
            }
        }
        unary(self, out, move |g| {
            let mut full = Array2::zeros((n, d));
            for (k, &i) in idx_owned.iter().enumerate() {
                let mut row = full.row_mut(i);
                row += &g.row(k);
            }
            full
        })
    }

    // ---- softmax family ----

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&self) -> Tensor {
        let out = softmax_array(&self.data());
        let so = out.clone();
        unary(self, out, move |g| {
            // dx_j = y_j * (g_j - sum_k g_k y_k) per row
            let mut dx = g * &so;
            for (mut row, yrow) in dx.rows_mut().into_iter().zip(so.rows()) {
                let dot: f64 = row.sum();
                row.zip_mut_with(&yrow, |r, &y| *r -= y * dot);
            }
            dx
        })
    }

    /// Row-wise log-softmax.
    pub fn log_softmax_rows(&self) -> Tensor {
        let p = softmax_array(&self.data());
        let out = p.mapv(f64::ln);
        unary(self, out, move |g| {
            let mut dx = g.clone();
            for (mut row, prow) in dx.rows_mut().into_iter().zip(p.rows()) {
                let s: f64 = row.sum();
                row.zip_mut_with(&prow, |r, &pv| *r -= pv * s);
            }
            dx
        })
    }

    /// Per-row cosine similarity between two `(n, d)` tensors -> `(n, 1)`.
    /// Rows where either side has norm below `eps` yield 0 with zero grads.
    pub fn cosine_rows(&self, other: &Tensor, eps: f64) -> Tensor {
        assert_eq!(self.shape(), other.shape(), "cosine_rows shape mismatch");
        let n = self.rows();
        let mut out = Array2::zeros((n, 1));
        {
            let a = self.data();
            let b = other.data();
            for i in 0..n {
                let (ar, br) = (a.row(i), b.row(i));
                let na = ar.dot(&ar).sqrt();
                let nb = br.dot(&br).sqrt();
                out[(i, 0)] = if na < eps || nb < eps {
                    0.0
                } else if ar == br {
                    // exactly 1 for bit-identical rows; the analytic gradient
                    // there is zero, which the backward form reproduces
                    1.0
                } else {
                    (ar.dot(&br) / (na * nb)).clamp(-1.0, 1.0)
                };
            }
        }
        let (sa, sb) = (self.clone(), other.clone());
        let so = out.clone();
        Tensor::new(
            out,
            vec![self.clone(), other.clone()],
            Some(Box::new(move |g| {
                let a = sa.data();
                let b = sb.data();
                let mut da = Array2::zeros(a.dim());
                let mut db = Array2::zeros(b.dim());
                for i in 0..a.nrows() {
                    let (ar, br) = (a.row(i), b.row(i));
                    let na = ar.dot(&ar).sqrt();
                    let nb = br.dot(&br).sqrt();
                    if na < eps || nb < eps {
                        continue;
                    }
                    let c = so[(i, 0)];
                    let gi = g[(i, 0)];
                    // d cos / d a = b/(|a||b|) - cos * a/|a|^2
                    for j in 0..a.ncols() {
                        da[(i, j)] = gi * (br[j] / (na * nb) - c * ar[j] / (na * na));
                        db[(i, j)] = gi * (ar[j] / (na * nb) - c * br[j] / (nb * nb));
                    }
                }
                vec![da, db]
            })),
        )
    }
}

fn reshape_array(a: &Array2<f64>, rows: usize, cols: usize) -> Array2<f64> {
    a.as_standard_layout()
        .to_owned()
        .into_shape_with_order((rows, cols))
        .expect("row-major reshape")
}

pub fn softmax_array(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}
