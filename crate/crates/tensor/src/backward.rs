//! Vector-Jacobian products for every op in [`crate::tape::Op`].

use crate::ops::{gelu_parts, rotary_angle, sigmoid};
use crate::real::Real;
use crate::tape::{Bcast, Op, Tape, Var};

fn col_sums<F: Real>(g: &[F], cols: usize) -> Vec<F> {
    let mut out = vec![F::zero(); cols];
    for row in g.chunks(cols) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

fn map2<F: Real>(a: &[F], b: &[F], f: impl Fn(F, F) -> F) -> Vec<F> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

impl<'p, F: Real> Tape<'p, F> {
    /// Gradient contributions of node `i` to its inputs, given upstream `g`.
    pub(crate) fn vjp(&self, i: usize, g: &[F]) -> Vec<(Var, Vec<F>)> {
        let node = &self.nodes[i];
        let y = &node.value[..];
        match &node.op {
            Op::Leaf | Op::Param => vec![],
            Op::MatMul(a, b) => {
                let (m, k) = (self.rows(*a), self.cols(*a));
                let n = self.cols(*b);
                let mut out = Vec::with_capacity(2);
                if self.rg(*a) {
                    let mut da = vec![F::zero(); m * k];
                    F::gemm(
                        m,
                        n,
                        k,
                        F::one(),
                        g,
                        n,
                        1,
                        self.value(*b),
                        1,
                        n,
                        F::zero(),
                        &mut da,
                        k,
                        1,
                    );
                    out.push((*a, da));
                }
                if self.rg(*b) {
                    let mut db = vec![F::zero(); k * n];
                    F::gemm(
                        k,
                        m,
                        n,
                        F::one(),
                        self.value(*a),
                        1,
                        k,
                        g,
                        n,
                        1,
                        F::zero(),
                        &mut db,
                        n,
                        1,
                    );
                    out.push((*b, db));
                }
                out
            }
            Op::Linear { x, w, b } => {
                let (m, k) = (self.rows(*x), self.cols(*x));
                let n = self.cols(*w);
                let mut out = Vec::with_capacity(3);
                if self.rg(*x) {
                    let mut dx = vec![F::zero(); m * k];
                    F::gemm(
                        m,
                        n,
                        k,
                        F::one(),
                        g,
                        n,
                        1,
                        self.value(*w),
                        1,
                        n,
                        F::zero(),
                        &mut dx,
                        k,
                        1,
                    );
                    out.push((*x, dx));
                }
                if self.rg(*w) {
                    let mut dw = vec![F::zero(); k * n];
                    F::gemm(
                        k,
                        m,
                        n,
                        F::one(),
                        self.value(*x),
                        1,
                        k,
                        g,
                        n,
                        1,
                        F::zero(),
                        &mut dw,
                        n,
                        1,
                    );
                    out.push((*w, dw));
                }
                if let Some(b) = b {
                    out.push((*b, col_sums(g, n)));
                }
                out
            }
            Op::Add(a, b, bc) => {
                let db = match bc {
                    Bcast::Same => g.to_vec(),
                    Bcast::Row => col_sums(g, self.cols(*a)),
                };
                vec![(*a, g.to_vec()), (*b, db)]
            }
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|&v| -v).collect())],
            Op::Mul(a, b, bc) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                match bc {
                    Bcast::Same => vec![
                        (*a, map2(g, vb, |x, y| x * y)),
                        (*b, map2(g, va, |x, y| x * y)),
                    ],
                    Bcast::Row => {
                        let c = vb.len();
                        let da = g
                            .iter()
                            .enumerate()
                            .map(|(j, &gv)| gv * vb[j % c])
                            .collect();
                        let prod = map2(g, va, |x, y| x * y);
                        vec![(*a, da), (*b, col_sums(&prod, c))]
                    }
                }
            }
            Op::Scale(x, s) => vec![(*x, g.iter().map(|&v| v * *s).collect())],
            Op::AddConst(x) => vec![(*x, g.to_vec())],
            Op::ConcatCols(parts) => {
                let rows = node.shape[0];
                let total = node.shape[1];
                let mut offset = 0;
                parts
                    .iter()
                    .map(|&p| {
                        let w = self.cols(p);
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        offset += w;
                        (p, d)
                    })
                    .collect()
            }
            Op::SliceCols { x, start } => {
                let (rows, cols) = (self.rows(*x), self.cols(*x));
                let len = node.shape[1];
                let mut dx = vec![F::zero(); rows * cols];
                for r in 0..rows {
                    dx[r * cols + start..r * cols + start + len]
                        .copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                vec![(*x, dx)]
            }
            Op::Softmax(x) => {
                let cols = self.cols(*x);
                let mut dx = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(cols).zip(y.chunks(cols)) {
                    let dot = gr
                        .iter()
                        .zip(yr)
                        .map(|(&a, &b)| a * b)
                        .fold(F::zero(), |a, b| a + b);
                    dx.extend(gr.iter().zip(yr).map(|(&a, &b)| b * (a - dot)));
                }
                vec![(*x, dx)]
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => self.attention_vjp(*q, *k, *v, *heads, probs, g),
            Op::LayerNorm { x, rstd } => {
                let cols = self.cols(*x);
                let n = F::c(cols as f64);
                let mut dx = Vec::with_capacity(g.len());
                for ((gr, yr), &r) in g.chunks(cols).zip(y.chunks(cols)).zip(rstd) {
                    let mg = gr.iter().copied().fold(F::zero(), |a, b| a + b) / n;
                    let mgy = gr
                        .iter()
                        .zip(yr)
                        .map(|(&a, &b)| a * b)
                        .fold(F::zero(), |a, b| a + b)
                        / n;
                    dx.extend(gr.iter().zip(yr).map(|(&gv, &yv)| r * (gv - mg - yv * mgy)));
                }
                vec![(*x, dx)]
            }
            Op::DepthwiseConv { x, w, b } => {
                let (t, c) = (self.rows(*x), self.cols(*x));
                let kernel = self.rows(*w);
                let pad = kernel / 2;
                let (xv, wv) = (self.value(*x), self.value(*w));
                let mut dx = vec![F::zero(); t * c];
                let mut dw = vec![F::zero(); kernel * c];
                for ti in 0..t {
                    let gr = &g[ti * c..(ti + 1) * c];
                    for j in 0..kernel {
                        let src = ti as isize + j as isize - pad as isize;
                        if src < 0 || src >= t as isize {
                            continue;
                        }
                        let s = src as usize;
                        for ch in 0..c {
                            dx[s * c + ch] += wv[j * c + ch] * gr[ch];
                            dw[j * c + ch] += xv[s * c + ch] * gr[ch];
                        }
                    }
                }
                vec![(*x, dx), (*w, dw), (*b, col_sums(g, c))]
            }
            Op::Gelu(x) => vec![(*x, map2(g, self.value(*x), |gv, xv| gv * gelu_parts(xv).1))],
            Op::Relu(x) => vec![(
                *x,
                map2(g, self.value(*x), |gv, xv| {
                    if xv > F::zero() {
                        gv
                    } else {
                        F::zero()
                    }
                }),
            )],
            Op::Sigmoid(x) => vec![(*x, map2(g, y, |gv, yv| gv * yv * (F::one() - yv)))],
            Op::Abs(x) => vec![(
                *x,
                map2(g, self.value(*x), |gv, xv| {
                    if xv > F::zero() {
                        gv
                    } else if xv < F::zero() {
                        -gv
                    } else {
                        F::zero()
                    }
                }),
            )],
            Op::Square(x) => vec![(*x, map2(g, self.value(*x), |gv, xv| F::c(2.0) * gv * xv))],
            Op::Grn {
                x,
                gamma,
                beta,
                norms,
                denom,
            } => {
                let (t, c) = (self.rows(*x), self.cols(*x));
                let (xv, gv) = (self.value(*x), self.value(*gamma));
                let nx: Vec<F> = norms.iter().map(|&n| n / *denom).collect();
                let mut dgamma = vec![F::zero(); c];
                let mut a = vec![F::zero(); c];
                let mut dx = vec![F::zero(); t * c];
                for ti in 0..t {
                    for j in 0..c {
                        let gg = g[ti * c + j];
                        let xx = xv[ti * c + j];
                        dgamma[j] += gg * xx * nx[j];
                        a[j] += gg * gv[j] * xx;
                        dx[ti * c + j] = gg * (gv[j] * nx[j] + F::one());
                    }
                }
                // N_c = G_c / D with D = mean(G) + eps.
                let cf = F::c(c as f64);
                let cross = a
                    .iter()
                    .zip(norms)
                    .map(|(&ai, &ni)| ai * ni)
                    .fold(F::zero(), |p, q| p + q)
                    / (*denom * *denom * cf);
                for j in 0..c {
                    if norms[j] <= F::zero() {
                        continue;
                    }
                    let dg = a[j] / *denom - cross;
                    let coeff = dg / norms[j];
                    for ti in 0..t {
                        dx[ti * c + j] += coeff * xv[ti * c + j];
                    }
                }
                vec![(*x, dx), (*gamma, dgamma), (*beta, col_sums(g, c))]
            }
            Op::Rotary {
                x,
                head_dim,
                offset,
            } => {
                let cols = self.cols(*x);
                let mut dx = g.to_vec();
                for (r, row) in dx.chunks_mut(cols).enumerate() {
                    for pair in 0..head_dim / 2 {
                        let (s, c) = rotary_angle(offset + r, pair, *head_dim).sin_cos();
                        let (s, c) = (F::c(s), F::c(c));
                        for h in 0..cols / head_dim {
                            let i = h * head_dim + 2 * pair;
                            let (a, b) = (row[i], row[i + 1]);
                            row[i] = a * c + b * s;
                            row[i + 1] = -a * s + b * c;
                        }
                    }
                }
                vec![(*x, dx)]
            }
            Op::GatherRows { x, idx } => {
                let cols = self.cols(*x);
                let mut dx = vec![F::zero(); self.value(*x).len()];
                for (src, &dst) in idx.iter().enumerate() {
                    for j in 0..cols {
                        dx[dst * cols + j] += g[src * cols + j];
                    }
                }
                vec![(*x, dx)]
            }
            Op::ScatterRows { x, idx } => {
                let cols = self.cols(*x);
                let dx = idx
                    .iter()
                    .flat_map(|&d| g[d * cols..(d + 1) * cols].iter().copied())
                    .collect();
                vec![(*x, dx)]
            }
            Op::MaskRows { x, fill, mask } => {
                let cols = self.cols(*x);
                let mut dx = g.to_vec();
                let mut dfill = vec![F::zero(); cols];
                for (r, &m) in mask.iter().enumerate() {
                    if m {
                        for j in 0..cols {
                            dfill[j] += g[r * cols + j];
                            dx[r * cols + j] = F::zero();
                        }
                    }
                }
                vec![(*x, dx), (*fill, dfill)]
            }
            Op::MeanRows(x) => {
                let rows = self.rows(*x);
                let n = F::c(rows as f64);
                let row: Vec<F> = g.iter().map(|&v| v / n).collect();
                vec![(*x, row.repeat(rows))]
            }
            Op::BroadcastRows(x) => vec![(*x, col_sums(g, self.cols(*x)))],
            Op::Sum(x) => vec![(*x, vec![g[0]; self.value(*x).len()])],
            Op::WeightedSum(x, w) => vec![(*x, w.iter().map(|&wv| wv * g[0]).collect())],
            Op::BceWithLogits { logits, targets } => vec![(
                *logits,
                self.value(*logits)
                    .iter()
                    .zip(targets)
                    .zip(g)
                    .map(|((&z, &t), &gv)| gv * (sigmoid(z) - t))
                    .collect(),
            )],
        }
    }

    fn attention_vjp(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: &[F],
        g: &[F],
    ) -> Vec<(Var, Vec<F>)> {
        let (tq, tk) = (self.rows(q), self.rows(k));
        let (qc, vc) = (self.cols(q), self.cols(v));
        let (dk, dv) = (qc / heads, vc / heads);
        let scale = F::one() / F::c(dk as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut dq = vec![F::zero(); tq * qc];
        let mut dkk = vec![F::zero(); tk * qc];
        let mut dvv = vec![F::zero(); tk * vc];
        let mut ds = vec![F::zero(); tq * tk];
        for h in 0..heads {
            let p = &probs[h * tq * tk..(h + 1) * tq * tk];
            // dV = P^T G
            F::gemm(
                tk,
                tq,
                dv,
                F::one(),
                p,
                1,
                tk,
                &g[h * dv..],
                vc,
                1,
                F::zero(),
                &mut dvv[h * dv..],
                vc,
                1,
            );
            // dP = G V^T
            F::gemm(
                tq,
                dv,
                tk,
                F::one(),
                &g[h * dv..],
                vc,
                1,
                &vv[h * dv..],
                1,
                vc,
                F::zero(),
                &mut ds,
                tk,
                1,
            );
            for (dsr, pr) in ds.chunks_mut(tk).zip(p.chunks(tk)) {
                let dot = dsr
                    .iter()
                    .zip(pr)
                    .map(|(&a, &b)| a * b)
                    .fold(F::zero(), |a, b| a + b);
                for (d, &pp) in dsr.iter_mut().zip(pr) {
                    *d = pp * (*d - dot);
                }
            }
            F::gemm(
                tq,
                tk,
                dk,
                scale,
                &ds,
                tk,
                1,
                &kv[h * dk..],
                qc,
                1,
                F::zero(),
                &mut dq[h * dk..],
                qc,
                1,
            );
            F::gemm(
                tk,
                tq,
                dk,
                scale,
                &ds,
                1,
                tk,
                &qv[h * dk..],
                qc,
                1,
                F::zero(),
                &mut dkk[h * dk..],
                qc,
                1,
            );
        }
        vec![(q, dq), (k, dkk), (v, dvv)]
    }
}
