//! Reverse-mode differentiation over row-major matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Activations are
//! `[rows, features]` matrices where rows enumerate `(sample, slot)` pairs.
//! Attention and the mixture likelihood are fused ops with hand-written
//! adjoints; everything else is elementwise or a matrix product.

use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

use crate::scalar::Real;

/// Lower bound added to every mixture standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-4;
const LN_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Shape and masking of one batched attention call.
#[derive(Debug, Clone)]
pub struct AttnSpec {
    pub batch: usize,
    pub len_q: usize,
    pub len_k: usize,
    pub heads: usize,
    pub causal: bool,
    /// `batch * len_k` flags; false keys receive zero attention.
    pub key_valid: Vec<bool>,
}

impl AttnSpec {
    #[inline]
    fn allowed(&self, b: usize, i: usize, j: usize) -> bool {
        self.key_valid[b * self.len_k + j] && (!self.causal || j <= i)
    }
}

/// Scoring data for the mixture negative log-likelihood.
#[derive(Debug, Clone)]
pub struct GmmTargets<T> {
    pub components: usize,
    pub targets: Vec<[T; 2]>,
    /// Per-row weight, typically 0 (ignored) or 1 (scored).
    pub weights: Vec<T>,
}

enum Op<T> {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Gelu(Var),
    Sigmoid(Var),
    Tanh(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Array2<T>,
        inv_std: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        spec: Rc<AttnSpec>,
        probs: Vec<T>,
    },
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    MaskRows {
        x: Var,
        token: Var,
        keep: Vec<bool>,
    },
    GmmNll {
        raw: Var,
        data: Rc<GmmTargets<T>>,
        total_weight: T,
    },
}

struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recorded computation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::with_capacity(256),
        }
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>) -> Var {
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::Param(_) => true,
            Op::MatMul(a, b) | Op::AddBias(a, b) | Op::Add(a, b) | Op::Mul(a, b) => {
                self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad
            }
            Op::Gelu(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::SliceCols(a, _, _)
            | Op::GatherRows(a, _) => {
                self.nodes[a.0].needs_grad
            }
            Op::LayerNorm { x, gain, bias, .. } => {
                self.nodes[x.0].needs_grad
                    || self.nodes[gain.0].needs_grad
                    || self.nodes[bias.0].needs_grad
            }
            Op::Attention { q, k, v, .. } => {
                self.nodes[q.0].needs_grad || self.nodes[k.0].needs_grad || self.nodes[v.0].needs_grad
            }
            Op::ConcatCols(vs) | Op::ConcatRows(vs) => vs.iter().any(|v| self.nodes[v.0].needs_grad),
            Op::MaskRows { x, token, .. } => {
                self.nodes[x.0].needs_grad || self.nodes[token.0].needs_grad
            }
            Op::GmmNll { raw, .. } => self.nodes[raw.0].needs_grad,
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Binds trainable parameter `id`. Its gradient is reported under that id.
    pub fn param(&mut self, id: usize, value: Array2<T>) -> Var {
        self.push(value, Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `x + bias` with `bias` a `[1, cols]` row broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let v = self.value(x) + self.value(bias);
        self.push(v, Op::AddBias(x, bias))
    }

    /// `x W + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let h = self.matmul(x, w);
        self.add_bias(h, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|z| gelu(z).0);
        self.push(v, Op::Gelu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(sigmoid);
        self.push(v, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(T::tanh);
        self.push(v, Op::Tanh(x))
    }

    /// Row-wise normalization followed by an elementwise affine map.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.dim();
        let n = T::lit(cols as f64);
        let eps = T::lit(LN_EPS);
        let mut xhat = Array2::<T>::zeros((rows, cols));
        let mut inv_std = Vec::with_capacity(rows);
        for (row, mut out) in xv.outer_iter().zip(xhat.outer_iter_mut()) {
            let mean = row.sum() / n;
            let var = row.iter().map(|&z| (z - mean) * (z - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            Zip::from(&mut out).and(&row).for_each(|o, &z| *o = (z - mean) * is);
        }
        let out = &xhat * self.value(gain) + self.value(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// Scaled dot-product multi-head attention on `[batch * len, d]` inputs.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, spec: Rc<AttnSpec>) -> Var {
        let qv = self.value(q).as_standard_layout().into_owned();
        let kv = self.value(k).as_standard_layout().into_owned();
        let vv = self.value(v).as_standard_layout().into_owned();
        let d = qv.ncols();
        assert_eq!(qv.nrows(), spec.batch * spec.len_q, "query rows");
        assert_eq!(kv.nrows(), spec.batch * spec.len_k, "key rows");
        assert_eq!(d % spec.heads, 0, "model width divisible by heads");
        let dh = d / spec.heads;
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let (lq, lk, h) = (spec.len_q, spec.len_k, spec.heads);
        let mut probs = vec![T::zero(); spec.batch * h * lq * lk];
        let mut out = Array2::<T>::zeros((qv.nrows(), d));
        let qs = qv.as_slice().expect("contiguous");
        let ks = kv.as_slice().expect("contiguous");
        let vs = vv.as_slice().expect("contiguous");
        let os = out.as_slice_mut().expect("contiguous");
        for b in 0..spec.batch {
            for head in 0..h {
                let off = head * dh;
                for i in 0..lq {
                    let qrow = &qs[(b * lq + i) * d + off..(b * lq + i) * d + off + dh];
                    let p = &mut probs[((b * h + head) * lq + i) * lk..((b * h + head) * lq + i + 1) * lk];
                    let mut max = T::neg_infinity();
                    for j in 0..lk {
                        if spec.allowed(b, i, j) {
                            let krow = &ks[(b * lk + j) * d + off..(b * lk + j) * d + off + dh];
                            let sc = dot(qrow, krow) * scale;
                            p[j] = sc;
                            max = max.max(sc);
                        }
                    }
                    if max == T::neg_infinity() {
                        continue;
                    }
                    let mut sum = T::zero();
                    for j in 0..lk {
                        if spec.allowed(b, i, j) {
                            let e = (p[j] - max).exp();
                            p[j] = e;
                            sum += e;
                        } else {
                            p[j] = T::zero();
                        }
                    }
                    let orow = &mut os[(b * lq + i) * d + off..(b * lq + i) * d + off + dh];
                    for j in 0..lk {
                        p[j] /= sum;
                        if p[j] != T::zero() {
                            let vrow = &vs[(b * lk + j) * d + off..(b * lk + j) * d + off + dh];
                            for (o, &x) in orow.iter_mut().zip(vrow) {
                                *o += p[j] * x;
                            }
                        }
                    }
                }
            }
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                spec,
                probs,
            },
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let v = self.value(x).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(x, start, end))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("column counts agree");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    /// `out[r] = x[index[r]]`.
    pub fn gather_rows(&mut self, x: Var, index: Vec<usize>) -> Var {
        let v = self.value(x).select(Axis(0), &index);
        self.push(v, Op::GatherRows(x, index))
    }

    /// Rows with `keep[r] == false` are replaced by the single-row `token`.
    pub fn mask_rows(&mut self, x: Var, token: Var, keep: Vec<bool>) -> Var {
        let mut v = self.value(x).to_owned();
        let t = self.value(token).row(0).to_owned();
        for (r, mut row) in v.outer_iter_mut().enumerate() {
            if !keep[r] {
                row.assign(&t);
            }
        }
        self.push(v, Op::MaskRows { x, token, keep })
    }

    /// Weighted mean mixture negative log-likelihood of `raw` head outputs.
    ///
    /// Each row of `raw` holds `[mu_x(K), mu_y(K), s_x(K), s_y(K), logits(K)]`;
    /// standard deviations are `softplus(s) + SIGMA_FLOOR`.
    pub fn gmm_nll(&mut self, raw: Var, data: Rc<GmmTargets<T>>) -> Var {
        let rv = self.value(raw);
        let k = data.components;
        assert_eq!(rv.ncols(), 5 * k, "head width");
        assert_eq!(rv.nrows(), data.targets.len(), "target rows");
        let total_weight: T = data.weights.iter().copied().sum();
        let mut loss = T::zero();
        let mut scratch = vec![T::zero(); k];
        for (r, row) in rv.outer_iter().enumerate() {
            let w = data.weights[r];
            if w == T::zero() {
                continue;
            }
            let row = row.to_vec();
            let (nll, _) = row_nll(&row, data.targets[r], k, &mut scratch);
            loss += w * nll;
        }
        let value = if total_weight > T::zero() {
            loss / total_weight
        } else {
            T::zero()
        };
        self.push(
            Array2::from_elem((1, 1), value),
            Op::GmmNll {
                raw,
                data,
                total_weight,
            },
        )
    }

    /// Gradients of the scalar `loss` for every parameter id below `num_params`.
    pub fn backward(&self, loss: Var, num_params: usize) -> Vec<Option<Array2<T>>> {
        assert_eq!(self.value(loss).dim(), (1, 1), "loss must be scalar");
        let mut grads: Vec<Option<Array2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::from_elem((1, 1), T::one()));
        let mut out: Vec<Option<Array2<T>>> = (0..num_params).map(|_| None).collect();
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => accumulate(&mut out[*id], g),
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        let ga = g.dot(&self.value(*b).t());
                        self.acc(&mut grads, *a, ga);
                    }
                    if self.nodes[b.0].needs_grad {
                        let gb = self.value(*a).t().dot(&g);
                        self.acc(&mut grads, *b, gb);
                    }
                }
                Op::AddBias(x, b) => {
                    if self.nodes[b.0].needs_grad {
                        let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        self.acc(&mut grads, *b, gb);
                    }
                    self.acc(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    if self.nodes[b.0].needs_grad {
                        self.acc(&mut grads, *b, g.clone());
                    }
                    self.acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        let ga = &g * self.value(*b);
                        self.acc(&mut grads, *a, ga);
                    }
                    if self.nodes[b.0].needs_grad {
                        let gb = &g * self.value(*a);
                        self.acc(&mut grads, *b, gb);
                    }
                }
                Op::Gelu(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(self.value(*x))
                        .for_each(|gv, &z| *gv *= gelu(z).1);
                    self.acc(&mut grads, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(&node.value)
                        .for_each(|gv, &y| *gv *= y * (T::one() - y));
                    self.acc(&mut grads, *x, gx);
                }
                Op::Tanh(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(&node.value)
                        .for_each(|gv, &y| *gv *= T::one() - y * y);
                    self.acc(&mut grads, *x, gx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    if self.nodes[bias.0].needs_grad {
                        let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        self.acc(&mut grads, *bias, gb);
                    }
                    if self.nodes[gain.0].needs_grad {
                        let gg = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                        self.acc(&mut grads, *gain, gg);
                    }
                    if self.nodes[x.0].needs_grad {
                        let gxhat = &g * self.value(*gain);
                        let n = T::lit(xhat.ncols() as f64);
                        let mut gx = Array2::<T>::zeros(xhat.dim());
                        for (r, mut out) in gx.outer_iter_mut().enumerate() {
                            let dh = gxhat.row(r);
                            let xh = xhat.row(r);
                            let sum_d = dh.sum();
                            let sum_dx = dh.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<T>();
                            let is = inv_std[r];
                            Zip::from(&mut out).and(&dh).and(&xh).for_each(|o, &d, &xv| {
                                *o = is / n * (n * d - sum_d - xv * sum_dx);
                            });
                        }
                        self.acc(&mut grads, *x, gx);
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    spec,
                    probs,
                } => {
                    let (gq, gk, gv) = self.attention_backward(&g, *q, *k, *v, spec, probs);
                    if self.nodes[q.0].needs_grad {
                        self.acc(&mut grads, *q, gq);
                    }
                    if self.nodes[k.0].needs_grad {
                        self.acc(&mut grads, *k, gk);
                    }
                    if self.nodes[v.0].needs_grad {
                        self.acc(&mut grads, *v, gv);
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        if self.nodes[p.0].needs_grad {
                            let gp = g.slice(s![.., start..start + w]).to_owned();
                            self.acc(&mut grads, *p, gp);
                        }
                        start += w;
                    }
                }
                Op::SliceCols(x, start, end) => {
                    let mut gx = Array2::<T>::zeros(self.value(*x).dim());
                    gx.slice_mut(s![.., *start..*end]).assign(&g);
                    self.acc(&mut grads, *x, gx);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let h = self.value(*p).nrows();
                        if self.nodes[p.0].needs_grad {
                            let gp = g.slice(s![start..start + h, ..]).to_owned();
                            self.acc(&mut grads, *p, gp);
                        }
                        start += h;
                    }
                }
                Op::GatherRows(x, index) => {
                    let mut gx = Array2::<T>::zeros(self.value(*x).dim());
                    for (r, row) in g.outer_iter().enumerate() {
                        let mut dst = gx.row_mut(index[r]);
                        dst += &row;
                    }
                    self.acc(&mut grads, *x, gx);
                }
                Op::MaskRows { x, token, keep } => {
                    if self.nodes[token.0].needs_grad {
                        let mut gt = Array2::<T>::zeros((1, g.ncols()));
                        for (r, row) in g.outer_iter().enumerate() {
                            if !keep[r] {
                                let mut t = gt.row_mut(0);
                                t += &row;
                            }
                        }
                        self.acc(&mut grads, *token, gt);
                    }
                    if self.nodes[x.0].needs_grad {
                        let mut gx = g;
                        for (r, mut row) in gx.outer_iter_mut().enumerate() {
                            if !keep[r] {
                                row.fill(T::zero());
                            }
                        }
                        self.acc(&mut grads, *x, gx);
                    }
                }
                Op::GmmNll {
                    raw,
                    data,
                    total_weight,
                } => {
                    let scale = g[[0, 0]];
                    let gr = self.gmm_backward(*raw, data, *total_weight, scale);
                    self.acc(&mut grads, *raw, gr);
                }
            }
        }
        out
    }

    fn acc(&self, grads: &mut [Option<Array2<T>>], v: Var, g: Array2<T>) {
        if self.nodes[v.0].needs_grad {
            accumulate(&mut grads[v.0], g);
        }
    }

    fn attention_backward(
        &self,
        g: &Array2<T>,
        q: Var,
        k: Var,
        v: Var,
        spec: &AttnSpec,
        probs: &[T],
    ) -> (Array2<T>, Array2<T>, Array2<T>) {
        let qv = self.value(q).as_standard_layout().into_owned();
        let kv = self.value(k).as_standard_layout().into_owned();
        let vv = self.value(v).as_standard_layout().into_owned();
        let g = g.as_standard_layout();
        let d = qv.ncols();
        let dh = d / spec.heads;
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let (lq, lk, h) = (spec.len_q, spec.len_k, spec.heads);
        let mut gq = Array2::<T>::zeros(qv.dim());
        let mut gk = Array2::<T>::zeros(kv.dim());
        let mut gv = Array2::<T>::zeros(vv.dim());
        let qs = qv.as_slice().expect("contiguous");
        let ks = kv.as_slice().expect("contiguous");
        let vs = vv.as_slice().expect("contiguous");
        let gs = g.as_slice().expect("contiguous");
        let gqs = gq.as_slice_mut().expect("contiguous");
        let gks = gk.as_slice_mut().expect("contiguous");
        let gvs = gv.as_slice_mut().expect("contiguous");
        let mut dp = vec![T::zero(); lk];
        for b in 0..spec.batch {
            for head in 0..h {
                let off = head * dh;
                for i in 0..lq {
                    let p = &probs[((b * h + head) * lq + i) * lk..((b * h + head) * lq + i + 1) * lk];
                    let grow = &gs[(b * lq + i) * d + off..(b * lq + i) * d + off + dh];
                    let mut weighted = T::zero();
                    for j in 0..lk {
                        if p[j] == T::zero() {
                            dp[j] = T::zero();
                            continue;
                        }
                        let vrow = &vs[(b * lk + j) * d + off..(b * lk + j) * d + off + dh];
                        dp[j] = dot(grow, vrow);
                        weighted += p[j] * dp[j];
                        let gvrow = &mut gvs[(b * lk + j) * d + off..(b * lk + j) * d + off + dh];
                        for (o, &x) in gvrow.iter_mut().zip(grow) {
                            *o += p[j] * x;
                        }
                    }
                    let qrow = &qs[(b * lq + i) * d + off..(b * lq + i) * d + off + dh];
                    for j in 0..lk {
                        if p[j] == T::zero() {
                            continue;
                        }
                        let ds = p[j] * (dp[j] - weighted) * scale;
                        let krow = &ks[(b * lk + j) * d + off..(b * lk + j) * d + off + dh];
                        let gqrow = &mut gqs[(b * lq + i) * d + off..(b * lq + i) * d + off + dh];
                        for (o, &x) in gqrow.iter_mut().zip(krow) {
                            *o += ds * x;
                        }
                        let gkrow = &mut gks[(b * lk + j) * d + off..(b * lk + j) * d + off + dh];
                        for (o, &x) in gkrow.iter_mut().zip(qrow) {
                            *o += ds * x;
                        }
                    }
                }
            }
        }
        (gq, gk, gv)
    }

    fn gmm_backward(&self, raw: Var, data: &GmmTargets<T>, total_weight: T, scale: T) -> Array2<T> {
        let rv = self.value(raw);
        let k = data.components;
        let mut gr = Array2::<T>::zeros(rv.dim());
        if total_weight <= T::zero() {
            return gr;
        }
        let mut scratch = vec![T::zero(); k];
        for (r, (row, mut grow)) in rv.outer_iter().zip(gr.outer_iter_mut()).enumerate() {
            let w = data.weights[r];
            if w == T::zero() {
                continue;
            }
            let c = scale * w / total_weight;
            let row = row.to_vec();
            let [tx, ty] = data.targets[r];
            let (_, terms) = row_nll(&row, data.targets[r], k, &mut scratch);
            for j in 0..k {
                let gamma = terms.posterior[j];
                let (sx, dsx) = softplus_floor(row[2 * k + j]);
                let (sy, dsy) = softplus_floor(row[3 * k + j]);
                let dx = tx - row[j];
                let dy = ty - row[k + j];
                grow[j] = -c * gamma * dx / (sx * sx);
                grow[k + j] = -c * gamma * dy / (sy * sy);
                let zx2 = dx * dx / (sx * sx);
                let zy2 = dy * dy / (sy * sy);
                grow[2 * k + j] = c * gamma * (T::one() - zx2) / sx * dsx;
                grow[3 * k + j] = c * gamma * (T::one() - zy2) / sy * dsy;
                grow[4 * k + j] = c * (terms.prior[j] - gamma);
            }
        }
        gr
    }
}

fn accumulate<T: Real>(slot: &mut Option<Array2<T>>, g: Array2<T>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Tanh-approximated GELU and its derivative.
#[inline]
fn gelu<T: Real>(z: T) -> (T, T) {
    let c = T::lit(0.797_884_560_802_865_4);
    let a = T::lit(0.044_715);
    let half = T::lit(0.5);
    let u = c * (z + a * z * z * z);
    let t = u.tanh();
    let y = half * z * (T::one() + t);
    let dy = half * (T::one() + t) + half * z * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * z * z);
    (y, dy)
}

#[inline]
pub(crate) fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `softplus(r) + SIGMA_FLOOR` and its derivative.
#[inline]
pub(crate) fn softplus_floor<T: Real>(r: T) -> (T, T) {
    let sp = r.max(T::zero()) + (-r.abs()).exp().ln_1p();
    (sp + T::lit(SIGMA_FLOOR), sigmoid(r))
}

pub(crate) struct RowTerms<'a, T> {
    pub posterior: &'a [T],
    pub prior: Vec<T>,
}

/// Negative log-likelihood of one head row; also returns the component
/// posteriors (in `scratch`) and prior weights.
pub(crate) fn row_nll<'a, T: Real>(
    row: &[T],
    target: [T; 2],
    k: usize,
    scratch: &'a mut [T],
) -> (T, RowTerms<'a, T>) {
    let logits = &row[4 * k..5 * k];
    let lmax = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse_l = lmax + logits.iter().map(|&l| (l - lmax).exp()).sum::<T>().ln();
    let ln_2pi = T::lit((2.0 * std::f64::consts::PI).ln());
    let half = T::lit(0.5);
    let mut prior = Vec::with_capacity(k);
    for j in 0..k {
        let log_pi = logits[j] - lse_l;
        prior.push(log_pi.exp());
        let (sx, _) = softplus_floor(row[2 * k + j]);
        let (sy, _) = softplus_floor(row[3 * k + j]);
        let zx = (target[0] - row[j]) / sx;
        let zy = (target[1] - row[k + j]) / sy;
        scratch[j] = log_pi - ln_2pi - sx.ln() - sy.ln() - half * (zx * zx + zy * zy);
    }
    let amax = scratch.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = scratch.iter().map(|&a| (a - amax).exp()).sum();
    let lse = amax + sum.ln();
    for a in scratch.iter_mut() {
        *a = (*a - lse).exp();
    }
    (
        -lse,
        RowTerms {
            posterior: scratch,
            prior,
        },
    )
}
