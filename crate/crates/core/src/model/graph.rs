//! Define-by-run reverse-mode autodiff over [`Tensor`]s.
//!
//! A [`Graph`] records every op in execution order; [`Graph::backward`]
//! walks the tape in reverse and returns one gradient per parameter.

use super::tensor::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Tensor};
use crate::metrics::mean_abs_diff;

pub const LN_EPS: f64 = 1e-5;
pub const DEMOD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    MatMul(Var, Var),
    Linear(Var, Var, Var),
    Add(Var, Var),
    AddTiled(Var, Var),
    AddColBias(Var, Var),
    MulScalar(Var, Var),
    Mask(Var, Vec<f64>),
    Gelu(Var),
    LeakyRelu(Var, f64),
    LayerNorm(Var, Var, Var),
    Attention { qkv: Var, seq_len: usize, heads: usize },
    ConcatRows(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    MeanRows(Var),
    SliceCols(Var, usize, usize),
    ModDemod(Var, Var),
    Im2Col3(Var, usize, usize),
    Upsample2x(Var, usize, usize),
    L1(Var, Vec<f64>),
}

struct Node {
    op: Op,
    value: Tensor,
    /// Op-specific forward intermediates reused by the backward pass.
    cache: Vec<f64>,
}

pub struct Graph<'p> {
    params: &'p [Tensor],
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

#[inline]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Bilinear 2x upsampling taps (half-pixel centres, edge clamped): for each
/// output pixel four `(source index, weight)` pairs.
fn upsample_taps(h: usize, w: usize) -> Vec<[(usize, f64); 4]> {
    let axis = |n: usize, o: usize| {
        let s = ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut taps = Vec::with_capacity(4 * h * w);
    for oy in 0..2 * h {
        let (y0, y1, fy) = axis(h, oy);
        for ox in 0..2 * w {
            let (x0, x1, fx) = axis(w, ox);
            taps.push([
                (y0 * w + x0, (1.0 - fy) * (1.0 - fx)),
                (y0 * w + x1, (1.0 - fy) * fx),
                (y1 * w + x0, fy * (1.0 - fx)),
                (y1 * w + x1, fy * fx),
            ]);
        }
    }
    taps
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p [Tensor]) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match self.nodes[v.0].op {
            Op::Param(id) => &self.params[id],
            _ => &self.nodes[v.0].value,
        }
    }

    fn push(&mut self, op: Op, value: Tensor, cache: Vec<f64>) -> Var {
        self.nodes.push(Node { op, value, cache });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Input, t, Vec::new())
    }

    pub fn param(&mut self, id: usize) -> Var {
        self.push(Op::Param(id), Tensor::default(), Vec::new())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.cols, tb.rows, "matmul shape");
        let mut out = Tensor::zeros(ta.rows, tb.cols);
        matmul_acc(&ta.data, &tb.data, &mut out.data, ta.rows, ta.cols, tb.cols);
        self.push(Op::MatMul(a, b), out, Vec::new())
    }

    /// `x * w + b` with `b` a `1 x m` row broadcast.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        assert_eq!(tx.cols, tw.rows, "linear shape");
        assert_eq!(tb.data.len(), tw.cols, "linear bias");
        let mut out = Tensor::zeros(tx.rows, tw.cols);
        for r in 0..tx.rows {
            out.row_mut(r).copy_from_slice(&tb.data);
        }
        matmul_acc(&tx.data, &tw.data, &mut out.data, tx.rows, tx.cols, tw.cols);
        self.push(Op::Linear(x, w, b), out, Vec::new())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.shape(), self.value(b).shape(), "add shape");
        out.add_assign(self.value(b));
        self.push(Op::Add(a, b), out, Vec::new())
    }

    /// `a + b` with `b` repeated down the rows of `a`.
    pub fn add_tiled(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        let tb = self.value(b);
        assert!(tb.cols == out.cols && out.rows % tb.rows == 0, "add_tiled shape");
        let block = tb.data.len();
        for chunk in out.data.chunks_mut(block) {
            chunk.iter_mut().zip(&tb.data).for_each(|(o, v)| *o += v);
        }
        self.push(Op::AddTiled(a, b), out, Vec::new())
    }

    /// `a + b` with `b` a column (`rows x 1`) broadcast across columns.
    pub fn add_col_bias(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        let tb = self.value(b);
        assert_eq!(tb.data.len(), out.rows, "column bias");
        for r in 0..out.rows {
            let bv = tb.data[r];
            out.row_mut(r).iter_mut().for_each(|v| *v += bv);
        }
        self.push(Op::AddColBias(a, b), out, Vec::new())
    }

    /// `a * s` for a `1 x 1` tensor `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let sv = self.value(s).data[0];
        let mut out = self.value(a).clone();
        out.scale(sv);
        self.push(Op::MulScalar(a, s), out, Vec::new())
    }

    /// Element-wise product with a constant mask (inverted dropout).
    pub fn mask(&mut self, a: Var, mask: Vec<f64>) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(mask.len(), out.data.len(), "mask length");
        out.data.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        self.push(Op::Mask(a, mask), out, Vec::new())
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|v| *v = gelu(*v));
        self.push(Op::Gelu(a), out, Vec::new())
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|v| {
            if *v < 0.0 {
                *v *= slope
            }
        });
        self.push(Op::LeakyRelu(a, slope), out, Vec::new())
    }

    /// Row-wise layer normalization with `1 x cols` gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let (n, d) = tx.shape();
        let mut out = Tensor::zeros(n, d);
        // cache: normalized values then one inverse std per row
        let mut cache = vec![0.0; n * d + n];
        for r in 0..n {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            cache[n * d + r] = inv;
            for c in 0..d {
                let xh = (row[c] - mean) * inv;
                cache[r * d + c] = xh;
                out.data[r * d + c] = xh * tg.data[c] + tb.data[c];
            }
        }
        self.push(Op::LayerNorm(x, gamma, beta), out, cache)
    }

    /// Multi-head scaled dot-product attention over consecutive sequences of
    /// `seq_len` rows. `qkv` holds `[Q | K | V]` column blocks.
    pub fn attention(&mut self, qkv: Var, seq_len: usize, heads: usize) -> Var {
        let t = self.value(qkv);
        let (n, three_d) = t.shape();
        assert!(three_d % 3 == 0 && n % seq_len == 0, "attention shape");
        let d = three_d / 3;
        assert!(d % heads == 0, "heads must divide width");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let n_seq = n / seq_len;
        let mut out = Tensor::zeros(n, d);
        let mut probs = vec![0.0; n_seq * heads * seq_len * seq_len];
        for s in 0..n_seq {
            for h in 0..heads {
                let pbase = (s * heads + h) * seq_len * seq_len;
                for i in 0..seq_len {
                    let qi = &t.row(s * seq_len + i)[h * dh..(h + 1) * dh];
                    let prow = &mut probs[pbase + i * seq_len..pbase + (i + 1) * seq_len];
                    for j in 0..seq_len {
                        let kj = &t.row(s * seq_len + j)[d + h * dh..d + (h + 1) * dh];
                        prow[j] = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                    }
                    let m = prow.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for p in prow.iter_mut() {
                        *p = (*p - m).exp();
                        z += *p;
                    }
                    prow.iter_mut().for_each(|p| *p /= z);
                    let orow = &mut out.data[(s * seq_len + i) * d + h * dh..(s * seq_len + i) * d + (h + 1) * dh];
                    for j in 0..seq_len {
                        let pj = prow[j];
                        let vj = &t.row(s * seq_len + j)[2 * d + h * dh..2 * d + (h + 1) * dh];
                        orow.iter_mut().zip(vj).for_each(|(o, v)| *o += pj * v);
                    }
                }
            }
        }
        self.push(Op::Attention { qkv, seq_len, heads }, out, probs)
    }

    /// Attention probabilities of the most recent attention node `v`,
    /// laid out `[sequence][head][query][key]`.
    pub fn attention_probs(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].cache
    }

    pub fn concat_rows(&mut self, parts: Vec<Var>) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        for &p in &parts {
            let t = self.value(p);
            assert_eq!(t.cols, cols, "concat_rows width");
            data.extend_from_slice(&t.data);
        }
        let rows = data.len() / cols;
        self.push(Op::ConcatRows(parts), Tensor { rows, cols, data }, Vec::new())
    }

    pub fn select_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let t = self.value(a);
        let mut out = Tensor::zeros(idx.len(), t.cols);
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(i));
        }
        self.push(Op::SelectRows(a, idx), out, Vec::new())
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = Tensor::zeros(1, t.cols);
        for r in 0..t.rows {
            out.data.iter_mut().zip(t.row(r)).for_each(|(o, v)| *o += v);
        }
        out.scale(1.0 / t.rows as f64);
        self.push(Op::MeanRows(a), out, Vec::new())
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let t = self.value(a);
        let mut out = Tensor::zeros(t.rows, end - start);
        for r in 0..t.rows {
            out.row_mut(r).copy_from_slice(&t.row(r)[start..end]);
        }
        self.push(Op::SliceCols(a, start, end), out, Vec::new())
    }

    /// Style modulation and weight demodulation of a 3x3 conv kernel
    /// `w: c_out x (c_in * 9)` by a `1 x c_in` style.
    pub fn mod_demod(&mut self, w: Var, style: Var) -> Var {
        let (tw, ts) = (self.value(w), self.value(style));
        let c_in = ts.data.len();
        assert_eq!(tw.cols, 9 * c_in, "mod_demod shape");
        let mut out = tw.clone();
        let mut demod = vec![0.0; tw.rows];
        for o in 0..tw.rows {
            let row = out.row_mut(o);
            for (j, v) in row.iter_mut().enumerate() {
                *v *= ts.data[j / 9];
            }
            let d = 1.0 / (row.iter().map(|v| v * v).sum::<f64>() + DEMOD_EPS).sqrt();
            row.iter_mut().for_each(|v| *v *= d);
            demod[o] = d;
        }
        self.push(Op::ModDemod(w, style), out, demod)
    }

    /// Zero-padded 3x3 patch matrix of a `c x (h*w)` feature map.
    pub fn im2col3(&mut self, x: Var, h: usize, w: usize) -> Var {
        let t = self.value(x);
        assert_eq!(t.cols, h * w, "im2col size");
        let mut out = Tensor::zeros(t.rows * 9, h * w);
        for c in 0..t.rows {
            let src = t.row(c);
            for k in 0..9 {
                let (dy, dx) = (k as i64 / 3 - 1, k as i64 % 3 - 1);
                let dst = out.row_mut(c * 9 + k);
                for y in 0..h as i64 {
                    let sy = y + dy;
                    if sy < 0 || sy >= h as i64 {
                        continue;
                    }
                    for xx in 0..w as i64 {
                        let sx = xx + dx;
                        if sx >= 0 && sx < w as i64 {
                            dst[(y * w as i64 + xx) as usize] = src[(sy * w as i64 + sx) as usize];
                        }
                    }
                }
            }
        }
        self.push(Op::Im2Col3(x, h, w), out, Vec::new())
    }

    pub fn upsample2x(&mut self, x: Var, h: usize, w: usize) -> Var {
        let t = self.value(x);
        assert_eq!(t.cols, h * w, "upsample size");
        let taps = upsample_taps(h, w);
        let mut out = Tensor::zeros(t.rows, 4 * h * w);
        for c in 0..t.rows {
            let src = t.row(c);
            for (o, tp) in out.row_mut(c).iter_mut().zip(&taps) {
                *o = tp.iter().map(|(i, wt)| src[*i] * wt).sum();
            }
        }
        self.push(Op::Upsample2x(x, h, w), out, Vec::new())
    }

    /// Mean absolute error against a constant target, as a `1 x 1` node.
    pub fn l1_loss(&mut self, pred: Var, target: Vec<f64>) -> Var {
        let v = mean_abs_diff(&self.value(pred).data, &target).expect("loss target length matches prediction");
        self.push(Op::L1(pred, target), Tensor::filled(1, 1, v), Vec::new())
    }

    /// Gradients of the scalar node `loss` with respect to every parameter
    /// (zero tensors for parameters not on the tape).
    pub fn backward(&self, loss: Var) -> Vec<Tensor> {
        let mut pgrads: Vec<Tensor> = self.params.iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect();
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(1, 1, 1.0));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(t) => t.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        fn zeros_like(t: &Tensor) -> Tensor {
            Tensor::zeros(t.rows, t.cols)
        }

        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Input => {}
                Op::Param(id) => pgrads[*id].add_assign(&gy),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let mut ga = zeros_like(ta);
                    matmul_nt_acc(&gy.data, &tb.data, &mut ga.data, ta.rows, tb.cols, ta.cols);
                    let mut gb = zeros_like(tb);
                    matmul_tn_acc(&ta.data, &gy.data, &mut gb.data, ta.rows, ta.cols, tb.cols);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Linear(x, w, b) => {
                    let (tx, tw) = (self.value(*x), self.value(*w));
                    let mut gx = zeros_like(tx);
                    matmul_nt_acc(&gy.data, &tw.data, &mut gx.data, tx.rows, tw.cols, tx.cols);
                    let mut gw = zeros_like(tw);
                    matmul_tn_acc(&tx.data, &gy.data, &mut gw.data, tx.rows, tx.cols, tw.cols);
                    let mut gb = zeros_like(self.value(*b));
                    for r in 0..gy.rows {
                        gb.data.iter_mut().zip(gy.row(r)).for_each(|(o, v)| *o += v);
                    }
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *w, gw);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, gy.clone());
                    acc(&mut grads, *b, gy);
                }
                Op::AddTiled(a, b) => {
                    let mut gb = zeros_like(self.value(*b));
                    let block = gb.data.len();
                    for chunk in gy.data.chunks(block) {
                        gb.data.iter_mut().zip(chunk).for_each(|(o, v)| *o += v);
                    }
                    acc(&mut grads, *a, gy);
                    acc(&mut grads, *b, gb);
                }
                Op::AddColBias(a, b) => {
                    let mut gb = zeros_like(self.value(*b));
                    for r in 0..gy.rows {
                        gb.data[r] = gy.row(r).iter().sum();
                    }
                    acc(&mut grads, *a, gy);
                    acc(&mut grads, *b, gb);
                }
                Op::MulScalar(a, s) => {
                    let ta = self.value(*a);
                    let sv = self.value(*s).data[0];
                    let gs: f64 = gy.data.iter().zip(&ta.data).map(|(g, v)| g * v).sum();
                    let mut ga = gy;
                    ga.scale(sv);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *s, Tensor::filled(1, 1, gs));
                }
                Op::Mask(a, mask) => {
                    let mut ga = gy;
                    ga.data.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
                    acc(&mut grads, *a, ga);
                }
                Op::Gelu(a) => {
                    let ta = self.value(*a);
                    let mut ga = gy;
                    ga.data.iter_mut().zip(&ta.data).for_each(|(g, x)| *g *= gelu_grad(*x));
                    acc(&mut grads, *a, ga);
                }
                Op::LeakyRelu(a, slope) => {
                    let ta = self.value(*a);
                    let mut ga = gy;
                    ga.data.iter_mut().zip(&ta.data).for_each(|(g, x)| {
                        if *x < 0.0 {
                            *g *= slope
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm(x, gamma, beta) => {
                    let tg = self.value(*gamma);
                    let (n, d) = y.shape();
                    let (xhat, inv) = node.cache.split_at(n * d);
                    let mut gx = Tensor::zeros(n, d);
                    let mut gg = Tensor::zeros(1, d);
                    let mut gbeta = Tensor::zeros(1, d);
                    let mut dxh = vec![0.0; d];
                    for r in 0..n {
                        let gyr = gy.row(r);
                        let xr = &xhat[r * d..(r + 1) * d];
                        for c in 0..d {
                            gbeta.data[c] += gyr[c];
                            gg.data[c] += gyr[c] * xr[c];
                            dxh[c] = gyr[c] * tg.data[c];
                        }
                        let m1 = dxh.iter().sum::<f64>() / d as f64;
                        let m2 = dxh.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        let gr = gx.row_mut(r);
                        for c in 0..d {
                            gr[c] = inv[r] * (dxh[c] - m1 - xr[c] * m2);
                        }
                    }
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *gamma, gg);
                    acc(&mut grads, *beta, gbeta);
                }
                Op::Attention { qkv, seq_len, heads } => {
                    let t = self.value(*qkv);
                    let (seq_len, heads) = (*seq_len, *heads);
                    let d = t.cols / 3;
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let n_seq = t.rows / seq_len;
                    let mut g = Tensor::zeros(t.rows, t.cols);
                    let mut dp = vec![0.0; seq_len];
                    for s in 0..n_seq {
                        for h in 0..heads {
                            let pbase = (s * heads + h) * seq_len * seq_len;
                            for i in 0..seq_len {
                                let row_i = s * seq_len + i;
                                let go = &gy.row(row_i)[h * dh..(h + 1) * dh];
                                let prow = &node.cache[pbase + i * seq_len..pbase + (i + 1) * seq_len];
                                for j in 0..seq_len {
                                    let row_j = s * seq_len + j;
                                    let vj = &t.row(row_j)[2 * d + h * dh..2 * d + (h + 1) * dh];
                                    dp[j] = go.iter().zip(vj).map(|(a, b)| a * b).sum();
                                    // dV_j += p_ij * dO_i
                                    let gv = &mut g.data[row_j * 3 * d + 2 * d + h * dh..row_j * 3 * d + 2 * d + (h + 1) * dh];
                                    gv.iter_mut().zip(go).for_each(|(o, v)| *o += prow[j] * v);
                                }
                                let dot: f64 = dp.iter().zip(prow).map(|(a, b)| a * b).sum();
                                for j in 0..seq_len {
                                    let ds = prow[j] * (dp[j] - dot) * scale;
                                    if ds == 0.0 {
                                        continue;
                                    }
                                    let row_j = s * seq_len + j;
                                    for c in 0..dh {
                                        let qic = t.at(row_i, h * dh + c);
                                        let kjc = t.at(row_j, d + h * dh + c);
                                        g.data[row_i * 3 * d + h * dh + c] += ds * kjc;
                                        g.data[row_j * 3 * d + d + h * dh + c] += ds * qic;
                                    }
                                }
                            }
                        }
                    }
                    acc(&mut grads, *qkv, g);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.value(*p).data.len();
                        let t = self.value(*p);
                        let part = Tensor {
                            rows: t.rows,
                            cols: t.cols,
                            data: gy.data[offset..offset + len].to_vec(),
                        };
                        offset += len;
                        acc(&mut grads, *p, part);
                    }
                }
                Op::SelectRows(a, idx) => {
                    let mut ga = zeros_like(self.value(*a));
                    for (r, &src) in idx.iter().enumerate() {
                        ga.row_mut(src).iter_mut().zip(gy.row(r)).for_each(|(o, v)| *o += v);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::MeanRows(a) => {
                    let ta = self.value(*a);
                    let mut ga = zeros_like(ta);
                    let inv = 1.0 / ta.rows as f64;
                    for r in 0..ta.rows {
                        ga.row_mut(r).iter_mut().zip(&gy.data).for_each(|(o, v)| *o = v * inv);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start, end) => {
                    let mut ga = zeros_like(self.value(*a));
                    for r in 0..ga.rows {
                        ga.row_mut(r)[*start..*end].copy_from_slice(gy.row(r));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ModDemod(w, style) => {
                    let (tw, ts) = (self.value(*w), self.value(*style));
                    let mut gw = zeros_like(tw);
                    let mut gs = zeros_like(ts);
                    for o in 0..tw.rows {
                        let d = node.cache[o];
                        // y = m * d with m the modulated row; recover m = y / d
                        let yr = y.row(o);
                        let gyr = gy.row(o);
                        let dot_m: f64 = gyr.iter().zip(yr).map(|(g, v)| g * v / d).sum();
                        let wr = tw.row(o);
                        let gwr = gw.row_mut(o);
                        for j in 0..tw.cols {
                            let m = yr[j] / d;
                            let gm = d * gyr[j] - d * d * d * m * dot_m;
                            gwr[j] = gm * ts.data[j / 9];
                            gs.data[j / 9] += gm * wr[j];
                        }
                    }
                    acc(&mut grads, *w, gw);
                    acc(&mut grads, *style, gs);
                }
                Op::Im2Col3(x, h, w) => {
                    let (h, w) = (*h, *w);
                    let tx = self.value(*x);
                    let mut gx = zeros_like(tx);
                    for c in 0..tx.rows {
                        let dst = gx.row_mut(c);
                        for k in 0..9 {
                            let (dy, dx) = (k as i64 / 3 - 1, k as i64 % 3 - 1);
                            let src = gy.row(c * 9 + k);
                            for yy in 0..h as i64 {
                                let sy = yy + dy;
                                if sy < 0 || sy >= h as i64 {
                                    continue;
                                }
                                for xx in 0..w as i64 {
                                    let sx = xx + dx;
                                    if sx >= 0 && sx < w as i64 {
                                        dst[(sy * w as i64 + sx) as usize] += src[(yy * w as i64 + xx) as usize];
                                    }
                                }
                            }
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Upsample2x(x, h, w) => {
                    let taps = upsample_taps(*h, *w);
                    let mut gx = zeros_like(self.value(*x));
                    for c in 0..gx.rows {
                        let gyr = gy.row(c);
                        let dst = gx.row_mut(c);
                        for (g, tp) in gyr.iter().zip(&taps) {
                            for (i, wt) in tp {
                                dst[*i] += g * wt;
                            }
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::L1(pred, target) => {
                    let tp = self.value(*pred);
                    let scale = gy.data[0] / tp.data.len() as f64;
                    let mut gp = zeros_like(tp);
                    for ((g, p), t) in gp.data.iter_mut().zip(&tp.data).zip(target) {
                        let diff = p - t;
                        *g = if diff > 0.0 {
                            scale
                        } else if diff < 0.0 {
                            -scale
                        } else {
                            0.0
                        };
                    }
                    acc(&mut grads, *pred, gp);
                }
            }
        }
        pgrads
    }
}
