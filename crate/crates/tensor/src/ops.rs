//! Forward definitions of every differentiable op.
//!
//! Matrices are row-major `[rows, cols]`; any leading dimensions are folded
//! into rows. Row-broadcast operands have shape `[cols]` or `[1, cols]`.

use crate::error::{shape_err, Result};
use crate::real::Real;
use crate::tape::{Bcast, Op, Tape, Var};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const GRN_EPS: f64 = 1e-6;
pub const ROTARY_BASE: f64 = 10_000.0;
/// Additive pre-softmax bias for disallowed attention pairs.
pub const MASKED_LOGIT: f64 = -1e9;

pub(crate) fn gelu_parts<F: Real>(x: F) -> (F, F) {
    // Exact GELU: x * Phi(x).
    let half = F::c(0.5);
    let inv_sqrt2 = F::c(std::f64::consts::FRAC_1_SQRT_2);
    let cdf = half * (F::one() + (x * inv_sqrt2).erf());
    let pdf = F::c(1.0 / (2.0 * std::f64::consts::PI).sqrt()) * (-(x * x) * half).exp();
    (x * cdf, cdf + x * pdf)
}

pub(crate) fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub(crate) fn rotary_angle(pos: usize, pair: usize, head_dim: usize) -> f64 {
    let inv_freq = ROTARY_BASE.powf(-(2.0 * pair as f64) / head_dim as f64);
    pos as f64 * inv_freq
}

pub(crate) fn softmax_rows_in_place<F: Real>(data: &mut [F], cols: usize) {
    for row in data.chunks_mut(cols) {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut total = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
}

impl<'p, F: Real> Tape<'p, F> {
    fn is_row_of(&self, b: Var, cols: usize) -> bool {
        let s = self.shape(b);
        (s.len() == 1 && s[0] == cols) || (s.len() == 2 && s[0] == 1 && s[1] == cols)
    }

    fn unary(&mut self, x: Var, f: impl Fn(F) -> F, op: Op<F>) -> Var {
        let value: Vec<F> = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(shape, value, op, rg)
    }

    /// `[m, k] @ [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err("matmul", format!("{sa:?} @ {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![F::zero(); m * n];
        F::gemm(
            m,
            k,
            n,
            F::one(),
            self.value(a),
            k,
            1,
            self.value(b),
            n,
            1,
            F::zero(),
            &mut out,
            n,
            1,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), rg))
    }

    /// Affine projection `x @ w + b` with `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] {
            return shape_err("linear", format!("x {sx:?}, w {sw:?}"));
        }
        let (m, k, n) = (sx[0], sx[1], sw[1]);
        let mut out = vec![F::zero(); m * n];
        if let Some(b) = b {
            if !self.is_row_of(b, n) {
                return shape_err(
                    "linear",
                    format!("bias {:?} for {n} outputs", self.shape(b)),
                );
            }
            let bias = self.value(b);
            for row in out.chunks_mut(n) {
                row.copy_from_slice(bias);
            }
        }
        F::gemm(
            m,
            k,
            n,
            F::one(),
            self.value(x),
            k,
            1,
            self.value(w),
            n,
            1,
            F::one(),
            &mut out,
            n,
            1,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(vec![m, n], out, Op::Linear { x, w, b }, rg))
    }

    fn binary_bcast(&mut self, a: Var, b: Var, name: &'static str) -> Result<Bcast> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok(Bcast::Same)
        } else if self.is_row_of(b, self.cols(a)) {
            Ok(Bcast::Row)
        } else {
            shape_err(name, format!("{sa:?} vs {sb:?}"))
        }
    }

    fn zip_bcast(&self, a: Var, b: Var, bc: Bcast, f: impl Fn(F, F) -> F) -> Vec<F> {
        let (va, vb) = (self.value(a), self.value(b));
        match bc {
            Bcast::Same => va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect(),
            Bcast::Row => {
                let c = vb.len();
                va.iter()
                    .enumerate()
                    .map(|(i, &x)| f(x, vb[i % c]))
                    .collect()
            }
        }
    }

    /// Elementwise sum; `b` may be a row vector broadcast over `a`'s rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = self.binary_bcast(a, b, "add")?;
        let out = self.zip_bcast(a, b, bc, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b, bc), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err("sub", format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        let out = self.zip_bcast(a, b, Bcast::Same, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Sub(a, b), rg))
    }

    /// Elementwise product; `b` may be a row vector broadcast over `a`'s rows.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = self.binary_bcast(a, b, "mul")?;
        let out = self.zip_bcast(a, b, bc, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b, bc), rg))
    }

    pub fn scale(&mut self, x: Var, s: F) -> Var {
        self.unary(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn add_const(&mut self, x: Var, c: F) -> Var {
        self.unary(x, |v| v + c, Op::AddConst(x))
    }

    /// Concatenation along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat", "no inputs");
        };
        let rows = self.rows(first);
        if parts
            .iter()
            .any(|&p| self.rows(p) != rows || self.shape(p).len() != 2)
        {
            let shapes: Vec<_> = parts.iter().map(|&p| self.shape(p).to_vec()).collect();
            return shape_err("concat", format!("row counts differ: {shapes:?}"));
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.cols(p)).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(vec![rows, total], out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = (self.rows(x), self.cols(x));
        if start + len > cols {
            return shape_err("slice_cols", format!("{start}+{len} > {cols}"));
        }
        let v = self.value(x);
        let out: Vec<F> = (0..rows)
            .flat_map(|r| v[r * cols + start..r * cols + start + len].iter().copied())
            .collect();
        let rg = self.rg(x);
        Ok(self.push(vec![rows, len], out, Op::SliceCols { x, start }, rg))
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Var {
        let mut out = self.value(x).to_vec();
        softmax_rows_in_place(&mut out, self.cols(x));
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), out, Op::Softmax(x), rg)
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q: [tq, heads*dk]`, `k: [tk, heads*dk]`, `v: [tk, heads*dv]`;
    /// `bias`, when given, is a constant `[tq, tk]` additive logit bias
    /// (use [`MASKED_LOGIT`] to exclude a pair). Returns `[tq, heads*dv]`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        bias: Option<&[F]>,
    ) -> Result<Var> {
        let (tq, tk) = (self.rows(q), self.rows(k));
        let (qc, kc, vc) = (self.cols(q), self.cols(k), self.cols(v));
        if heads == 0 || qc != kc || qc % heads != 0 || vc % heads != 0 || self.rows(v) != tk {
            return shape_err(
                "attention",
                format!(
                    "q {:?}, k {:?}, v {:?}, heads {heads}",
                    self.shape(q),
                    self.shape(k),
                    self.shape(v)
                ),
            );
        }
        if bias.is_some_and(|b| b.len() != tq * tk) {
            return shape_err(
                "attention",
                format!("bias length {} for {tq}x{tk}", bias.map_or(0, <[F]>::len)),
            );
        }
        let (dk, dv) = (qc / heads, vc / heads);
        let scale = F::one() / F::c(dk as f64).sqrt();
        let mut probs = vec![F::zero(); heads * tq * tk];
        let mut out = vec![F::zero(); tq * vc];
        for h in 0..heads {
            let p = &mut probs[h * tq * tk..(h + 1) * tq * tk];
            F::gemm(
                tq,
                dk,
                tk,
                scale,
                &self.value(q)[h * dk..],
                qc,
                1,
                &self.value(k)[h * dk..],
                1,
                kc,
                F::zero(),
                p,
                tk,
                1,
            );
            if let Some(b) = bias {
                for (x, &y) in p.iter_mut().zip(b) {
                    *x += y;
                }
            }
            softmax_rows_in_place(p, tk);
            F::gemm(
                tq,
                tk,
                dv,
                F::one(),
                p,
                tk,
                1,
                &self.value(v)[h * dv..],
                vc,
                1,
                F::zero(),
                &mut out[h * dv..],
                vc,
                1,
            );
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(
            vec![tq, vc],
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Layer normalization over the last dimension, without affine terms.
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let cols = self.cols(x);
        let eps = F::c(LAYER_NORM_EPS);
        let n = F::c(cols as f64);
        let mut out = self.value(x).to_vec();
        let mut rstd = Vec::with_capacity(self.rows(x));
        for row in out.chunks_mut(cols) {
            let mean = row.iter().copied().fold(F::zero(), |a, b| a + b) / n;
            let var = row
                .iter()
                .map(|&v| (v - mean) * (v - mean))
                .fold(F::zero(), |a, b| a + b)
                / n;
            let r = F::one() / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * r;
            }
            rstd.push(r);
        }
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), out, Op::LayerNorm { x, rstd }, rg)
    }

    /// Depthwise 1-D convolution over rows (time) with zero "same" padding.
    ///
    /// `x: [t, c]`, `w: [kernel, c]` with odd kernel, `b: [c]`.
    pub fn depthwise_conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (t, c) = (self.rows(x), self.cols(x));
        let sw = self.shape(w).to_vec();
        if sw.len() != 2 || sw[1] != c || sw[0].is_multiple_of(2) || !self.is_row_of(b, c) {
            return shape_err(
                "depthwise_conv1d",
                format!("x {:?}, w {sw:?}, b {:?}", self.shape(x), self.shape(b)),
            );
        }
        let kernel = sw[0];
        let pad = kernel / 2;
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let mut out = vec![F::zero(); t * c];
        for ti in 0..t {
            let row = &mut out[ti * c..(ti + 1) * c];
            row.copy_from_slice(bv);
            for j in 0..kernel {
                let src = ti as isize + j as isize - pad as isize;
                if src < 0 || src >= t as isize {
                    continue;
                }
                let xs = &xv[src as usize * c..(src as usize + 1) * c];
                let ws = &wv[j * c..(j + 1) * c];
                for ((o, &xx), &ww) in row.iter_mut().zip(xs).zip(ws) {
                    *o += xx * ww;
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(vec![t, c], out, Op::DepthwiseConv { x, w, b }, rg))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, |v| gelu_parts(v).0, Op::Gelu(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(F::zero()), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, F::abs, Op::Abs(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    /// ConvNeXt-V2 global response normalization over `x: [t, c]`.
    ///
    /// `G_c = ||x[:, c]||_2`, `N_c = G_c / (mean(G) + eps)`,
    /// `y = gamma * (x * N) + beta + x`.
    pub fn grn(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (t, c) = (self.rows(x), self.cols(x));
        if !self.is_row_of(gamma, c) || !self.is_row_of(beta, c) {
            return shape_err(
                "grn",
                format!(
                    "x {:?}, gamma {:?}, beta {:?}",
                    self.shape(x),
                    self.shape(gamma),
                    self.shape(beta)
                ),
            );
        }
        let xv = self.value(x);
        let mut norms = vec![F::zero(); c];
        for row in xv.chunks(c) {
            for (n, &v) in norms.iter_mut().zip(row) {
                *n += v * v;
            }
        }
        for n in norms.iter_mut() {
            *n = n.sqrt();
        }
        let denom =
            norms.iter().copied().fold(F::zero(), |a, b| a + b) / F::c(c as f64) + F::c(GRN_EPS);
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let mut out = vec![F::zero(); t * c];
        for (orow, xrow) in out.chunks_mut(c).zip(xv.chunks(c)) {
            for j in 0..c {
                orow[j] = gv[j] * (xrow[j] * norms[j] / denom) + bv[j] + xrow[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            vec![t, c],
            out,
            Op::Grn {
                x,
                gamma,
                beta,
                norms,
                denom,
            },
            rg,
        ))
    }

    /// Rotary position rotation of adjacent channel pairs within each head.
    ///
    /// Row `r` is treated as position `offset + r`.
    pub fn rotary(&mut self, x: Var, head_dim: usize, offset: usize) -> Result<Var> {
        let cols = self.cols(x);
        if head_dim == 0 || !head_dim.is_multiple_of(2) || !cols.is_multiple_of(head_dim) {
            return shape_err("rotary", format!("{cols} columns, head_dim {head_dim}"));
        }
        let mut out = self.value(x).to_vec();
        for (r, row) in out.chunks_mut(cols).enumerate() {
            for pair in 0..head_dim / 2 {
                let (s, c) = rotary_angle(offset + r, pair, head_dim).sin_cos();
                let (s, c) = (F::c(s), F::c(c));
                for h in 0..cols / head_dim {
                    let i = h * head_dim + 2 * pair;
                    let (a, b) = (row[i], row[i + 1]);
                    row[i] = a * c - b * s;
                    row[i + 1] = a * s + b * c;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            self.shape(x).to_vec(),
            out,
            Op::Rotary {
                x,
                head_dim,
                offset,
            },
            rg,
        ))
    }

    /// `y[i] = x[idx[i]]`. Used for embedding lookup and frame selection.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (rows, cols) = (self.rows(x), self.cols(x));
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return shape_err("gather_rows", format!("index {bad} out of {rows} rows"));
        }
        let v = self.value(x);
        let out: Vec<F> = idx
            .iter()
            .flat_map(|&i| v[i * cols..(i + 1) * cols].iter().copied())
            .collect();
        let rg = self.rg(x);
        Ok(self.push(
            vec![idx.len(), cols],
            out,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Rows of `x` where `mask` is true, in order.
    pub fn select_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        if mask.len() != self.rows(x) {
            return shape_err(
                "select_rows",
                format!("mask length {} for {} rows", mask.len(), self.rows(x)),
            );
        }
        let idx: Vec<usize> = mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| i)
            .collect();
        self.gather_rows(x, &idx)
    }

    /// `y[idx[i]] += x[i]` into a zero matrix with `rows` rows.
    pub fn scatter_rows(&mut self, x: Var, idx: &[usize], rows: usize) -> Result<Var> {
        if idx.len() != self.rows(x) || idx.iter().any(|&i| i >= rows) {
            return shape_err(
                "scatter_rows",
                format!(
                    "{} indices for {} rows into {rows}",
                    idx.len(),
                    self.rows(x)
                ),
            );
        }
        let cols = self.cols(x);
        let mut out = vec![F::zero(); rows * cols];
        let v = self.value(x);
        for (src, &dst) in idx.iter().enumerate() {
            for j in 0..cols {
                out[dst * cols + j] += v[src * cols + j];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            vec![rows, cols],
            out,
            Op::ScatterRows {
                x,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Replaces every row flagged in `mask` by the row vector `fill`.
    pub fn mask_rows(&mut self, x: Var, fill: Var, mask: &[bool]) -> Result<Var> {
        let (rows, cols) = (self.rows(x), self.cols(x));
        if mask.len() != rows || !self.is_row_of(fill, cols) {
            return shape_err(
                "mask_rows",
                format!(
                    "x {:?}, fill {:?}, mask {}",
                    self.shape(x),
                    self.shape(fill),
                    mask.len()
                ),
            );
        }
        let mut out = self.value(x).to_vec();
        let fv = self.value(fill);
        for (r, &m) in mask.iter().enumerate() {
            if m {
                out[r * cols..(r + 1) * cols].copy_from_slice(fv);
            }
        }
        let rg = self.rg(x) || self.rg(fill);
        Ok(self.push(
            vec![rows, cols],
            out,
            Op::MaskRows {
                x,
                fill,
                mask: mask.to_vec(),
            },
            rg,
        ))
    }

    /// Column means, `[1, c]`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let (rows, cols) = (self.rows(x), self.cols(x));
        let mut out = vec![F::zero(); cols];
        for row in self.value(x).chunks(cols) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let n = F::c(rows as f64);
        for o in out.iter_mut() {
            *o /= n;
        }
        let rg = self.rg(x);
        self.push(vec![1, cols], out, Op::MeanRows(x), rg)
    }

    /// Repeats a row vector `rows` times.
    pub fn broadcast_rows(&mut self, x: Var, rows: usize) -> Result<Var> {
        let cols = self.cols(x);
        if self.rows(x) != 1 {
            return shape_err(
                "broadcast_rows",
                format!("expected one row, got {:?}", self.shape(x)),
            );
        }
        let out = self.value(x).repeat(rows);
        let rg = self.rg(x);
        Ok(self.push(vec![rows, cols], out, Op::BroadcastRows(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().fold(F::zero(), |a, b| a + b);
        let rg = self.rg(x);
        self.push(vec![], vec![s], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum(x);
        self.scale(s, F::one() / F::c(n as f64))
    }

    /// `sum_i w_i x_i` with constant weights.
    pub fn weighted_sum(&mut self, x: Var, weights: &[F]) -> Result<Var> {
        if weights.len() != self.value(x).len() {
            return shape_err(
                "weighted_sum",
                format!("{} weights for shape {:?}", weights.len(), self.shape(x)),
            );
        }
        let s = self
            .value(x)
            .iter()
            .zip(weights)
            .map(|(&a, &b)| a * b)
            .fold(F::zero(), |a, b| a + b);
        let rg = self.rg(x);
        Ok(self.push(vec![], vec![s], Op::WeightedSum(x, weights.to_vec()), rg))
    }

    /// Elementwise binary cross-entropy of logits against constant targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[F]) -> Result<Var> {
        if targets.len() != self.value(logits).len() {
            return shape_err(
                "bce_with_logits",
                format!(
                    "{} targets for shape {:?}",
                    targets.len(),
                    self.shape(logits)
                ),
            );
        }
        let out: Vec<F> = self
            .value(logits)
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(F::zero()) - z * y + (F::one() + (-z.abs()).exp()).ln())
            .collect();
        let rg = self.rg(logits);
        Ok(self.push(
            self.shape(logits).to_vec(),
            out,
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Convenience: constant matrix from rows of values.
    pub fn constant_matrix(&mut self, rows: usize, cols: usize, data: Vec<F>) -> Result<Var> {
        Ok(self.constant(Tensor::new(vec![rows, cols], data)?))
    }
}
