//! Reverse-mode automatic differentiation over [`Mat`] values.
//!
//! A [`Tape`] records every operation of one forward computation. Parameters
//! enter as leaves tagged with their [`ParamId`]; [`Tape::backward`] walks the
//! record in reverse and returns gradients aligned with the parameter store.
//! Nodes that do not depend on any parameter are never differentiated.

use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU32, Ordering};

use crate::error::{shape_err, Error, Result};
use crate::params::{Grads, ParamId, ParamStore};
use crate::tensor::{Mat, Scalar};

static NEXT_TAPE: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u32,
    index: usize,
}

enum Op<F> {
    Leaf,
    Param(ParamId),
    MatMul(usize, usize),
    MatMulNt(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    MulConst(usize, Mat<F>),
    Scale(usize, F),
    Relu(usize),
    Silu(usize),
    Exp(usize),
    SoftmaxRows(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Mat<F>,
        inv_std: Vec<F>,
    },
    SliceCols {
        src: usize,
        start: usize,
    },
    ConcatCols(Vec<usize>),
    BroadcastRows(usize),
    SubstituteRows {
        src: usize,
        pad: usize,
        mask: Vec<bool>,
    },
    Sum(usize),
    BceWithLogits {
        logits: usize,
        targets: Vec<F>,
    },
    MaskedMse {
        pred: usize,
        target: Vec<F>,
        mask: Vec<bool>,
    },
}

struct Node<F> {
    value: Mat<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Record of one differentiable computation.
pub struct Tape<F> {
    id: u32,
    nodes: Vec<Node<F>>,
    param_nodes: Vec<Option<usize>>,
}

const LN_EPS: f64 = 1e-5;

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            param_nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        v.index
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    pub fn value(&self, v: Var) -> &Mat<F> {
        &self.nodes[self.idx(v)].value
    }

    /// Scalar value of a `1 × 1` variable.
    pub fn scalar(&self, v: Var) -> F {
        self.value(v).as_slice()[0]
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Mat<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Parameter leaf. Repeated requests for the same id share one node.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        if self.param_nodes.len() <= id.0 {
            self.param_nodes.resize(id.0 + 1, None);
        }
        if let Some(i) = self.param_nodes[id.0] {
            return Var {
                tape: self.id,
                index: i,
            };
        }
        let v = self.push(store.get(id).clone(), Op::Param(id), true);
        self.param_nodes[id.0] = Some(v.index);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let out = self.nodes[ia].value.matmul(&self.nodes[ib].value)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(out, Op::MatMul(ia, ib), rg))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let out = self.nodes[ia].value.matmul_nt(&self.nodes[ib].value)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(out, Op::MatMulNt(ia, ib), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.shape() != vb.shape() {
            return Err(shape_err("add", va.shape_string(), vb.shape_string()));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(out, Op::Add(ia, ib), rg))
    }

    /// Adds a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a), self.idx(row));
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if vb.rows() != 1 || vb.cols() != va.cols() {
            return Err(shape_err(
                "add_row",
                alloc::format!("1x{}", va.cols()),
                vb.shape_string(),
            ));
        }
        let mut out = va.clone();
        let bias = vb.as_slice();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bias) {
                *o = *o + *b;
            }
        }
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(out, Op::AddRow(ia, ib), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.shape() != vb.shape() {
            return Err(shape_err("mul", va.shape_string(), vb.shape_string()));
        }
        let data = va
            .as_slice()
            .iter()
            .zip(vb.as_slice())
            .map(|(x, y)| *x * *y)
            .collect();
        let out = Mat::from_vec(va.rows(), va.cols(), data)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(out, Op::Mul(ia, ib), rg))
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: Var, c: Mat<F>) -> Result<Var> {
        let ia = self.idx(a);
        let va = &self.nodes[ia].value;
        if va.shape() != c.shape() {
            return Err(shape_err("mul_const", va.shape_string(), c.shape_string()));
        }
        let data = va
            .as_slice()
            .iter()
            .zip(c.as_slice())
            .map(|(x, y)| *x * *y)
            .collect();
        let out = Mat::from_vec(va.rows(), va.cols(), data)?;
        let rg = self.rg(ia);
        Ok(self.push(out, Op::MulConst(ia, c), rg))
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        let ia = self.idx(a);
        let mut out = self.nodes[ia].value.clone();
        out.scale_assign(s);
        let rg = self.rg(ia);
        self.push(out, Op::Scale(ia, s), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(F) -> F, op: impl FnOnce(usize) -> Op<F>) -> Var {
        let ia = self.idx(a);
        let out = self.nodes[ia].value.map(|v| f(*v));
        let rg = self.rg(ia);
        self.push(out, op(ia), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |v| if v > F::zero() { v } else { F::zero() }, Op::Relu)
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, |v| v * sigmoid(v), Op::Silu)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, F::exp, Op::Exp)
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let mut out = self.nodes[ia].value.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        let rg = self.rg(ia);
        self.push(out, Op::SoftmaxRows(ia), rg)
    }

    /// Row-wise layer normalization with `1 × cols` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (ix, ig, ib) = (self.idx(x), self.idx(gain), self.idx(bias));
        let vx = &self.nodes[ix].value;
        let cols = vx.cols();
        for v in [&self.nodes[ig].value, &self.nodes[ib].value] {
            if v.shape() != (1, cols) {
                return Err(shape_err(
                    "layer_norm",
                    alloc::format!("1x{cols}"),
                    v.shape_string(),
                ));
            }
        }
        let n = F::from_usize(cols).unwrap_or_else(F::one);
        let eps = F::from_f64_lossy(LN_EPS);
        let mut xhat = Mat::zeros(vx.rows(), cols);
        let mut inv_std = Vec::with_capacity(vx.rows());
        for r in 0..vx.rows() {
            let row = vx.row(r);
            let mean = row.iter().copied().sum::<F>() / n;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<F>() / n;
            let is = F::one() / (var + eps).sqrt();
            for (o, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (*v - mean) * is;
            }
            inv_std.push(is);
        }
        let g = self.nodes[ig].value.as_slice();
        let b = self.nodes[ib].value.as_slice();
        let mut out = xhat.clone();
        for r in 0..out.rows() {
            for ((o, g), b) in out.row_mut(r).iter_mut().zip(g).zip(b) {
                *o = *o * *g + *b;
            }
        }
        let rg = self.rg(ix) || self.rg(ig) || self.rg(ib);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x: ix,
                gain: ig,
                bias: ib,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let ia = self.idx(a);
        let va = &self.nodes[ia].value;
        if start + width > va.cols() {
            return Err(shape_err(
                "slice_cols",
                alloc::format!("columns {}..{}", start, start + width),
                va.shape_string(),
            ));
        }
        let out = va.slice_cols(start, width);
        let rg = self.rg(ia);
        Ok(self.push(out, Op::SliceCols { src: ia, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let idx: Vec<usize> = parts.iter().map(|v| self.idx(*v)).collect();
        let rows = idx.first().map_or(0, |i| self.nodes[*i].value.rows());
        let mut cols = 0;
        for i in &idx {
            let v = &self.nodes[*i].value;
            if v.rows() != rows {
                return Err(shape_err("concat_cols", rows, v.rows()));
            }
            cols += v.cols();
        }
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let dst = out.row_mut(r);
            let mut at = 0;
            for i in &idx {
                let src = self.nodes[*i].value.row(r);
                dst[at..at + src.len()].copy_from_slice(src);
                at += src.len();
            }
        }
        let rg = idx.iter().any(|i| self.rg(*i));
        Ok(self.push(out, Op::ConcatCols(idx), rg))
    }

    /// Repeats a `1 × cols` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let ia = self.idx(a);
        let va = &self.nodes[ia].value;
        if va.rows() != 1 {
            return Err(shape_err("broadcast_rows", "1 row", va.shape_string()));
        }
        let mut out = Mat::zeros(rows, va.cols());
        for r in 0..rows {
            out.row_mut(r).copy_from_slice(va.as_slice());
        }
        let rg = self.rg(ia);
        Ok(self.push(out, Op::BroadcastRows(ia), rg))
    }

    /// Replaces row `t` of `src` with the `1 × cols` row `pad` wherever
    /// `mask[t]` is set.
    pub fn substitute_rows(&mut self, src: Var, pad: Var, mask: &[bool]) -> Result<Var> {
        let (is, ip) = (self.idx(src), self.idx(pad));
        let (vs, vp) = (&self.nodes[is].value, &self.nodes[ip].value);
        if vp.shape() != (1, vs.cols()) || mask.len() != vs.rows() {
            return Err(shape_err(
                "substitute_rows",
                alloc::format!("pad 1x{} and mask of {}", vs.cols(), vs.rows()),
                alloc::format!("pad {} and mask of {}", vp.shape_string(), mask.len()),
            ));
        }
        let mut out = vs.clone();
        for (t, m) in mask.iter().enumerate() {
            if *m {
                out.row_mut(t).copy_from_slice(vp.as_slice());
            }
        }
        let rg = self.rg(is) || self.rg(ip);
        Ok(self.push(
            out,
            Op::SubstituteRows {
                src: is,
                pad: ip,
                mask: mask.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let out = Mat::scalar(self.nodes[ia].value.sum());
        let rg = self.rg(ia);
        self.push(out, Op::Sum(ia), rg)
    }

    /// Mean numerically stable binary cross-entropy of logits against
    /// `targets`. Returns a `1 × 1` variable.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[F]) -> Result<Var> {
        let il = self.idx(logits);
        let vl = &self.nodes[il].value;
        if vl.as_slice().len() != targets.len() {
            return Err(shape_err(
                "bce_with_logits",
                vl.as_slice().len(),
                targets.len(),
            ));
        }
        let value = bce_mean(vl.as_slice(), targets);
        let rg = self.rg(il);
        Ok(self.push(
            Mat::scalar(value),
            Op::BceWithLogits {
                logits: il,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Mean squared error over mask-true positions; an all-false mask gives 0.
    pub fn masked_mse(&mut self, pred: Var, target: &[F], mask: &[bool]) -> Result<Var> {
        let ip = self.idx(pred);
        let vp = &self.nodes[ip].value;
        let n = vp.as_slice().len();
        if target.len() != n || mask.len() != n {
            return Err(shape_err(
                "masked_mse",
                n,
                alloc::format!("target {} / mask {}", target.len(), mask.len()),
            ));
        }
        let value = masked_mse_value(vp.as_slice(), target, mask);
        let rg = self.rg(ip);
        Ok(self.push(
            Mat::scalar(value),
            Op::MaskedMse {
                pred: ip,
                target: target.to_vec(),
                mask: mask.to_vec(),
            },
            rg,
        ))
    }

    /// Gradients of the scalar `loss` with respect to every parameter used on
    /// this tape, aligned with a store of `n_params` tensors.
    pub fn backward(&self, loss: Var, n_params: usize) -> Result<Grads<F>> {
        if loss.tape != self.id || loss.index >= self.nodes.len() {
            return Err(Error::NoRecordedForward(
                "variable not recorded on this tape",
            ));
        }
        if self.nodes[loss.index].value.shape() != (1, 1) {
            return Err(Error::NoRecordedForward("loss is not a scalar"));
        }
        let mut grads: Vec<Option<Mat<F>>> = (0..=loss.index).map(|_| None).collect();
        grads[loss.index] = Some(Mat::scalar(F::one()));
        let mut out = Grads::empty(n_params);

        for i in (0..=loss.index).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    if id.0 < n_params {
                        out.accumulate(*id, &g);
                    }
                }
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        let vb = &self.nodes[*b].value;
                        slot(&mut grads, *a, &self.nodes[*a].value).gemm_acc(
                            &g,
                            false,
                            vb,
                            true,
                            F::one(),
                        );
                    }
                    if self.rg(*b) {
                        let va = &self.nodes[*a].value;
                        slot(&mut grads, *b, &self.nodes[*b].value).gemm_acc(
                            va,
                            true,
                            &g,
                            false,
                            F::one(),
                        );
                    }
                }
                Op::MatMulNt(a, b) => {
                    // c = a·bᵀ: da = g·b, db = gᵀ·a
                    if self.rg(*a) {
                        let vb = &self.nodes[*b].value;
                        slot(&mut grads, *a, &self.nodes[*a].value).gemm_acc(
                            &g,
                            false,
                            vb,
                            false,
                            F::one(),
                        );
                    }
                    if self.rg(*b) {
                        let va = &self.nodes[*a].value;
                        slot(&mut grads, *b, &self.nodes[*b].value).gemm_acc(
                            &g,
                            true,
                            va,
                            false,
                            F::one(),
                        );
                    }
                }
                Op::Add(a, b) => {
                    for p in [*a, *b] {
                        if self.rg(p) {
                            slot(&mut grads, p, &self.nodes[p].value).add_assign(&g);
                        }
                    }
                }
                Op::AddRow(a, r) => {
                    if self.rg(*a) {
                        slot(&mut grads, *a, &self.nodes[*a].value).add_assign(&g);
                    }
                    if self.rg(*r) {
                        slot(&mut grads, *r, &self.nodes[*r].value).add_assign(&g.col_sums());
                    }
                }
                Op::Mul(a, b) => {
                    for (p, q) in [(*a, *b), (*b, *a)] {
                        if self.rg(p) {
                            let other = self.nodes[q].value.as_slice();
                            let dst = slot(&mut grads, p, &self.nodes[p].value);
                            for ((d, gv), o) in
                                dst.as_mut_slice().iter_mut().zip(g.as_slice()).zip(other)
                            {
                                *d = *d + *gv * *o;
                            }
                        }
                    }
                }
                Op::MulConst(a, c) => {
                    let dst = slot(&mut grads, *a, &self.nodes[*a].value);
                    for ((d, gv), o) in dst
                        .as_mut_slice()
                        .iter_mut()
                        .zip(g.as_slice())
                        .zip(c.as_slice())
                    {
                        *d = *d + *gv * *o;
                    }
                }
                Op::Scale(a, s) => {
                    let dst = slot(&mut grads, *a, &self.nodes[*a].value);
                    for (d, gv) in dst.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *d = *d + *gv * *s;
                    }
                }
                Op::Relu(a) => {
                    let y = node.value.as_slice();
                    let dst = slot(&mut grads, *a, &self.nodes[*a].value);
                    for ((d, gv), yv) in dst.as_mut_slice().iter_mut().zip(g.as_slice()).zip(y) {
                        if *yv > F::zero() {
                            *d = *d + *gv;
                        }
                    }
                }
                Op::Silu(a) => {
                    let x = self.nodes[*a].value.as_slice();
                    let dst = slot(&mut grads, *a, &self.nodes[*a].value);
                    for ((d, gv), xv) in dst.as_mut_slice().iter_mut().zip(g.as_slice()).zip(x) {
                        let s = sigmoid(*xv);
                        *d = *d + *gv * s * (F::one() + *xv * (F::one() - s));
                    }
                }
                Op::Exp(a) => {
                    let y = node.value.as_slice();
                    let dst = slot(&mut grads, *a, &self.nodes[*a].value);
                    for ((d, gv), yv) in dst.as_mut_slice().iter_mut().zip(g.as_slice()).zip(y) {
                        *d = *d + *gv * *yv;
                    }
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let dst = slot(&mut grads, *a, &self.nodes[*a].value);
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: F = yr.iter().zip(gr).map(|(p, q)| *p * *q).sum();
                        for ((d, yv), gv) in dst.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *d = *d + *yv * (*gv - dot);
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.nodes[*gain].value.as_slice();
                    if self.rg(*gain) {
                        let dst = slot(&mut grads, *gain, &self.nodes[*gain].value);
                        for r in 0..g.rows() {
                            for ((d, gr), xh) in
                                dst.as_mut_slice().iter_mut().zip(g.row(r)).zip(xhat.row(r))
                            {
                                *d = *d + *gr * *xh;
                            }
                        }
                    }
                    if self.rg(*bias) {
                        slot(&mut grads, *bias, &self.nodes[*bias].value).add_assign(&g.col_sums());
                    }
                    if self.rg(*x) {
                        let cols = g.cols();
                        let n = F::from_usize(cols).unwrap_or_else(F::one);
                        let dst = slot(&mut grads, *x, &self.nodes[*x].value);
                        let mut dxhat = vec![F::zero(); cols];
                        for r in 0..g.rows() {
                            for ((dh, gr), gn) in dxhat.iter_mut().zip(g.row(r)).zip(gv) {
                                *dh = *gr * *gn;
                            }
                            let xh = xhat.row(r);
                            let s1: F = dxhat.iter().copied().sum();
                            let s2: F = dxhat.iter().zip(xh).map(|(a, b)| *a * *b).sum();
                            let k = inv_std[r] / n;
                            for ((d, dh), xv) in dst.row_mut(r).iter_mut().zip(&dxhat).zip(xh) {
                                *d = *d + k * (n * *dh - s1 - *xv * s2);
                            }
                        }
                    }
                }
                Op::SliceCols { src, start } => {
                    let dst = slot(&mut grads, *src, &self.nodes[*src].value);
                    let w = g.cols();
                    for r in 0..g.rows() {
                        for (d, gv) in dst.row_mut(r)[*start..*start + w].iter_mut().zip(g.row(r)) {
                            *d = *d + *gv;
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let w = self.nodes[*p].value.cols();
                        if self.rg(*p) {
                            let dst = slot(&mut grads, *p, &self.nodes[*p].value);
                            for r in 0..g.rows() {
                                for (d, gv) in dst.row_mut(r).iter_mut().zip(&g.row(r)[at..at + w])
                                {
                                    *d = *d + *gv;
                                }
                            }
                        }
                        at += w;
                    }
                }
                Op::BroadcastRows(a) => {
                    slot(&mut grads, *a, &self.nodes[*a].value).add_assign(&g.col_sums());
                }
                Op::SubstituteRows { src, pad, mask } => {
                    if self.rg(*src) {
                        let dst = slot(&mut grads, *src, &self.nodes[*src].value);
                        for (t, m) in mask.iter().enumerate() {
                            if !*m {
                                for (d, gv) in dst.row_mut(t).iter_mut().zip(g.row(t)) {
                                    *d = *d + *gv;
                                }
                            }
                        }
                    }
                    if self.rg(*pad) {
                        let dst = slot(&mut grads, *pad, &self.nodes[*pad].value);
                        for (t, m) in mask.iter().enumerate() {
                            if *m {
                                for (d, gv) in dst.as_mut_slice().iter_mut().zip(g.row(t)) {
                                    *d = *d + *gv;
                                }
                            }
                        }
                    }
                }
                Op::Sum(a) => {
                    let gv = g.as_slice()[0];
                    let dst = slot(&mut grads, *a, &self.nodes[*a].value);
                    for d in dst.as_mut_slice() {
                        *d = *d + gv;
                    }
                }
                Op::BceWithLogits { logits, targets } => {
                    let gv = g.as_slice()[0];
                    let n = F::from_usize(targets.len().max(1)).unwrap_or_else(F::one);
                    let x = self.nodes[*logits].value.as_slice();
                    let dst = slot(&mut grads, *logits, &self.nodes[*logits].value);
                    for ((d, xv), t) in dst.as_mut_slice().iter_mut().zip(x).zip(targets) {
                        *d = *d + gv * (sigmoid(*xv) - *t) / n;
                    }
                }
                Op::MaskedMse { pred, target, mask } => {
                    let count = mask.iter().filter(|m| **m).count();
                    if count == 0 {
                        continue;
                    }
                    let gv = g.as_slice()[0];
                    let two = F::from_f64_lossy(2.0);
                    let n = F::from_usize(count).unwrap_or_else(F::one);
                    let p = self.nodes[*pred].value.as_slice();
                    let dst = slot(&mut grads, *pred, &self.nodes[*pred].value);
                    for (((d, pv), t), m) in
                        dst.as_mut_slice().iter_mut().zip(p).zip(target).zip(mask)
                    {
                        if *m {
                            *d = *d + gv * two * (*pv - *t) / n;
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

fn slot<'a, F: Scalar>(grads: &'a mut [Option<Mat<F>>], i: usize, like: &Mat<F>) -> &'a mut Mat<F> {
    grads[i].get_or_insert_with(|| Mat::zeros(like.rows(), like.cols()))
}

pub(crate) fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub(crate) fn softmax_in_place<F: Scalar>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut total = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

/// `mean(max(x,0) − x·t + ln(1 + e^{−|x|}))`.
pub(crate) fn bce_mean<F: Scalar>(logits: &[F], targets: &[F]) -> F {
    if logits.is_empty() {
        return F::zero();
    }
    let total: F = logits
        .iter()
        .zip(targets)
        .map(|(x, t)| x.max(F::zero()) - *x * *t + (-x.abs()).exp().ln_1p())
        .sum();
    total / F::from_usize(logits.len()).unwrap_or_else(F::one)
}

pub(crate) fn masked_mse_value<F: Scalar>(pred: &[F], target: &[F], mask: &[bool]) -> F {
    let mut total = F::zero();
    let mut count = 0usize;
    for ((p, t), m) in pred.iter().zip(target).zip(mask) {
        if *m {
            total = total + (*p - *t) * (*p - *t);
            count += 1;
        }
    }
    if count == 0 {
        F::zero()
    } else {
        total / F::from_usize(count).unwrap_or_else(F::one)
    }
}
