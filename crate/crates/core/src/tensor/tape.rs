//! Reverse-mode tape over rank-2 row/column views of [`Tensor`].
//!
//! Each op stores what its vector-Jacobian product needs. `backward`
//! walks the tape in exact reverse order of recording.

use super::kernels::{attention_head, attention_head_backward, axpy, matmul, matmul_nt, matmul_tn};
use super::{Real, Tensor};
use crate::error::{shape_err, Error, Result};

const LN_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`GradTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<F> {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow {
        x: Var,
        row: Var,
    },
    Scale {
        x: Var,
        factor: F,
    },
    LayerNorm {
        x: Var,
        inv_std: Vec<F>,
    },
    Silu {
        x: Var,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<F>,
    },
    Rotate {
        x: Var,
        heads: usize,
        rows: Vec<Option<usize>>,
        cos_sin: Vec<(Vec<F>, Vec<F>)>,
    },
    Gather {
        table: Var,
        rows: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    MeanRows {
        x: Var,
    },
    WeightedSq {
        pred: Var,
        target: Tensor<F>,
        weights: Vec<F>,
    },
    SumSq {
        x: Var,
    },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Recorded forward computation.
pub struct GradTape<F: Real> {
    nodes: Vec<Node<F>>,
}

/// Gradients indexed by [`Var`], produced by [`GradTape::backward`].
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn as2d<F: Real>(t: &Tensor<F>) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl<F: Real> Default for GradTape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> GradTape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that gradients are not propagated into.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, t: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// `x[n,i] · w[i,o] (+ b[o])`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, i) = as2d(self.value(x));
        let wt = self.value(w);
        if wt.rank() != 2 || wt.shape()[0] != i {
            return shape_err(format!("linear: input width {i}, weight {:?}", wt.shape()));
        }
        let o = wt.shape()[1];
        let mut out = vec![F::zero(); n * o];
        if let Some(b) = b {
            let bt = self.value(b);
            if bt.len() != o {
                return shape_err(format!("linear: bias {:?} for width {o}", bt.shape()));
            }
            for r in 0..n {
                out[r * o..(r + 1) * o].copy_from_slice(bt.data());
            }
        }
        matmul(
            self.value(x).data(),
            self.value(w).data(),
            n,
            i,
            o,
            &mut out,
        );
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(Tensor::new([n, o], out)?, Op::Linear { x, w, b }, &inputs))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(F, F) -> F, op: Op<F>) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), f)?;
        Ok(self.push(out, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `[1,d]` (or `[d]`) row to every row of `x[n,d]`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let xt = self.value(x);
        let rt = self.value(row);
        let d = xt.cols();
        if rt.len() != d {
            return shape_err(format!("add_row: row {:?} for width {d}", rt.shape()));
        }
        let mut out = xt.clone();
        for r in out.data_mut().chunks_exact_mut(d) {
            for (o, &v) in r.iter_mut().zip(rt.data()) {
                *o += v;
            }
        }
        Ok(self.push(out, Op::AddRow { x, row }, &[x, row]))
    }

    pub fn scale(&mut self, x: Var, factor: F) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale { x, factor }, &[x])
    }

    /// Per-row normalization to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let (n, d) = as2d(xt);
        let eps = F::of(LN_EPS);
        let dn = F::of(d as f64);
        let mut out = xt.clone();
        let mut inv_std = Vec::with_capacity(n);
        for row in out.data_mut().chunks_exact_mut(d) {
            let mut mean = F::zero();
            for &v in row.iter() {
                mean += v;
            }
            mean /= dn;
            let mut var = F::zero();
            for v in row.iter_mut() {
                *v -= mean;
                var += *v * *v;
            }
            var /= dn;
            let r = F::one() / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v *= r;
            }
            inv_std.push(r);
        }
        self.push(out, Op::LayerNorm { x, inv_std }, &[x])
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v / (F::one() + (-v).exp()));
        self.push(out, Op::Silu { x }, &[x])
    }

    /// Multi-head softmax attention. Heads split the column axis evenly.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (qt, kt, vt) = (self.value(q), self.value(k), self.value(v));
        let (n_q, d) = as2d(qt);
        let (n_k, dk) = as2d(kt);
        let (n_v, dv) = as2d(vt);
        if d != dk || n_k != n_v || heads == 0 || d % heads != 0 || dv % heads != 0 {
            return shape_err(format!(
                "attention: q {:?}, k {:?}, v {:?}, heads {heads}",
                qt.shape(),
                kt.shape(),
                vt.shape()
            ));
        }
        let (hd, hv) = (d / heads, dv / heads);
        let mut out = vec![F::zero(); n_q * dv];
        let mut probs = vec![F::zero(); heads * n_q * n_k];
        let mut head_out = vec![F::zero(); n_q * hv];
        for h in 0..heads {
            let qh = gather_cols(qt.data(), d, h * hd, hd);
            let kh = gather_cols(kt.data(), d, h * hd, hd);
            let vh = gather_cols(vt.data(), dv, h * hv, hv);
            head_out.iter_mut().for_each(|x| *x = F::zero());
            attention_head(
                &qh,
                &kh,
                &vh,
                n_q,
                n_k,
                hd,
                hv,
                &mut head_out,
                &mut probs[h * n_q * n_k..(h + 1) * n_q * n_k],
            );
            scatter_cols(&head_out, &mut out, dv, h * hv, hv);
        }
        Ok(self.push(
            Tensor::new([n_q, dv], out)?,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Rotates adjacent column pairs of each head. `rows[r]` selects an
    /// entry of `cos_sin` for row `r` or leaves the row untouched.
    /// Each `cos_sin` entry holds `head_dim / 2` cosines and sines.
    pub fn rotate_pairs(
        &mut self,
        x: Var,
        heads: usize,
        rows: Vec<Option<usize>>,
        cos_sin: Vec<(Vec<F>, Vec<F>)>,
    ) -> Result<Var> {
        let xt = self.value(x);
        let (n, d) = as2d(xt);
        if heads == 0 || d % heads != 0 || (d / heads) % 2 != 0 || rows.len() != n {
            return shape_err(format!(
                "rotate_pairs: {:?} with {heads} heads and {} row entries",
                xt.shape(),
                rows.len()
            ));
        }
        let half = d / heads / 2;
        if cos_sin
            .iter()
            .any(|(c, s)| c.len() != half || s.len() != half)
        {
            return shape_err("rotate_pairs: cos/sin tables must hold head_dim/2 entries");
        }
        if rows.iter().flatten().any(|&i| i >= cos_sin.len()) {
            return Err(Error::InvalidArgument(
                "rotate_pairs: rotation index out of range".into(),
            ));
        }
        let mut out = xt.clone();
        for (r, sel) in rows.iter().enumerate() {
            if let Some(i) = sel {
                let (c, s) = &cos_sin[*i];
                for head in out.data_mut()[r * d..(r + 1) * d].chunks_exact_mut(2 * half) {
                    rotate_row(head, c, s, false);
                }
            }
        }
        Ok(self.push(
            out,
            Op::Rotate {
                x,
                heads,
                rows,
                cos_sin,
            },
            &[x],
        ))
    }

    /// Rows of `table` selected by index.
    pub fn gather(&mut self, table: Var, rows: Vec<usize>) -> Result<Var> {
        let tt = self.value(table);
        let (n, d) = as2d(tt);
        if rows.is_empty() || rows.iter().any(|&r| r >= n) {
            return Err(Error::InvalidArgument(format!(
                "gather: rows {rows:?} from table of {n}"
            )));
        }
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in &rows {
            out.extend_from_slice(tt.row(r));
        }
        let out = Tensor::new([rows.len(), d], out)?;
        Ok(self.push(out, Op::Gather { table, rows }, &[table]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat_rows: no parts".into()));
        }
        let d = self.value(parts[0]).cols();
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.cols() != d {
                return shape_err(format!("concat_rows: width {} vs {d}", t.cols()));
            }
            out.extend_from_slice(t.data());
        }
        let n = out.len() / d;
        Ok(self.push(
            Tensor::new([n, d], out)?,
            Op::ConcatRows(parts.to_vec()),
            parts,
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xt = self.value(x);
        let (n, d) = as2d(xt);
        if len == 0 || start + len > n {
            return shape_err(format!("slice_rows: [{start}, {}) of {n}", start + len));
        }
        let out = Tensor::new([len, d], xt.data()[start * d..(start + len) * d].to_vec())?;
        Ok(self.push(out, Op::SliceRows { x, start }, &[x]))
    }

    /// Column means, `[n,d] -> [1,d]`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let (n, d) = as2d(xt);
        let mut out = vec![F::zero(); d];
        for r in 0..n {
            for (o, &v) in out.iter_mut().zip(xt.row(r)) {
                *o += v;
            }
        }
        let inv = F::one() / F::of(n as f64);
        out.iter_mut().for_each(|o| *o *= inv);
        let out = Tensor::new([1, d], out).expect("positive width");
        self.push(out, Op::MeanRows { x }, &[x])
    }

    /// Scalar `Σ wᵢ (predᵢ − targetᵢ)²`.
    pub fn weighted_sq_error(
        &mut self,
        pred: Var,
        target: Tensor<F>,
        weights: Vec<F>,
    ) -> Result<Var> {
        let pt = self.value(pred);
        pt.expect_same_shape(&target)?;
        if weights.len() != pt.len() {
            return shape_err(format!(
                "weighted_sq_error: {} weights for {} values",
                weights.len(),
                pt.len()
            ));
        }
        let mut s = F::zero();
        for ((&p, &t), &w) in pt.data().iter().zip(target.data()).zip(&weights) {
            let r = p - t;
            s += w * r * r;
        }
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedSq {
                pred,
                target,
                weights,
            },
            &[pred],
        ))
    }

    /// Scalar `Σ xᵢ²`.
    pub fn sum_sq(&mut self, x: Var) -> Var {
        let s = self.value(x).sum_sq();
        self.push(Tensor::scalar(s), Op::SumSq { x }, &[x])
    }

    /// Vector-Jacobian products of a scalar node with respect to every
    /// node that requires gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.value(loss).len() != 1 {
            return shape_err("backward needs a scalar output");
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(F::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node<F>, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xt, wt) = (self.value(*x), self.value(*w));
                let (n, i) = as2d(xt);
                let o = wt.shape()[1];
                if self.wants(*x) {
                    let mut dx = vec![F::zero(); n * i];
                    matmul_nt(gd, wt.data(), n, o, i, &mut dx);
                    accumulate(grads, *x, xt.shape(), dx);
                }
                if self.wants(*w) {
                    let mut dw = vec![F::zero(); i * o];
                    matmul_tn(xt.data(), gd, n, i, o, &mut dw);
                    accumulate(grads, *w, wt.shape(), dw);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let mut db = vec![F::zero(); o];
                        for r in gd.chunks_exact(o) {
                            for (d, &v) in db.iter_mut().zip(r) {
                                *d += v;
                            }
                        }
                        accumulate(grads, *b, self.value(*b).shape(), db);
                    }
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.shape(), gd.to_vec());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.shape(), gd.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.shape(), gd.to_vec());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.shape(), gd.iter().map(|&v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                let (at, bt) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let d = gd.iter().zip(bt.data()).map(|(&g, &y)| g * y).collect();
                    accumulate(grads, *a, g.shape(), d);
                }
                if self.wants(*b) {
                    let d = gd.iter().zip(at.data()).map(|(&g, &x)| g * x).collect();
                    accumulate(grads, *b, g.shape(), d);
                }
            }
            Op::AddRow { x, row } => {
                if self.wants(*x) {
                    accumulate(grads, *x, g.shape(), gd.to_vec());
                }
                if self.wants(*row) {
                    let rt = self.value(*row);
                    let d = rt.len();
                    let mut dr = vec![F::zero(); d];
                    for r in gd.chunks_exact(d) {
                        for (o, &v) in dr.iter_mut().zip(r) {
                            *o += v;
                        }
                    }
                    accumulate(grads, *row, rt.shape(), dr);
                }
            }
            Op::Scale { x, factor } => {
                if self.wants(*x) {
                    accumulate(
                        grads,
                        *x,
                        g.shape(),
                        gd.iter().map(|&v| v * *factor).collect(),
                    );
                }
            }
            Op::LayerNorm { x, inv_std } => {
                if self.wants(*x) {
                    let y = node.value.data();
                    let d = node.value.cols();
                    let dn = F::of(d as f64);
                    let mut dx = vec![F::zero(); y.len()];
                    for (r, &istd) in inv_std.iter().enumerate() {
                        let (yr, gr) = (&y[r * d..(r + 1) * d], &gd[r * d..(r + 1) * d]);
                        let mut mg = F::zero();
                        let mut mgy = F::zero();
                        for (&yv, &gv) in yr.iter().zip(gr) {
                            mg += gv;
                            mgy += gv * yv;
                        }
                        mg /= dn;
                        mgy /= dn;
                        for ((o, &yv), &gv) in dx[r * d..(r + 1) * d].iter_mut().zip(yr).zip(gr) {
                            *o = istd * (gv - mg - yv * mgy);
                        }
                    }
                    accumulate(grads, *x, g.shape(), dx);
                }
            }
            Op::Silu { x } => {
                if self.wants(*x) {
                    let xt = self.value(*x);
                    let dx = xt
                        .data()
                        .iter()
                        .zip(gd)
                        .map(|(&v, &gv)| {
                            let s = F::one() / (F::one() + (-v).exp());
                            gv * s * (F::one() + v * (F::one() - s))
                        })
                        .collect();
                    accumulate(grads, *x, g.shape(), dx);
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => {
                let (qt, kt, vt) = (self.value(*q), self.value(*k), self.value(*v));
                let (n_q, d) = as2d(qt);
                let n_k = kt.rows();
                let dv = vt.cols();
                let (hd, hv) = (d / heads, dv / heads);
                let mut dq = vec![F::zero(); n_q * d];
                let mut dk = vec![F::zero(); n_k * d];
                let mut dvv = vec![F::zero(); n_k * dv];
                for h in 0..*heads {
                    let qh = gather_cols(qt.data(), d, h * hd, hd);
                    let kh = gather_cols(kt.data(), d, h * hd, hd);
                    let vh = gather_cols(vt.data(), dv, h * hv, hv);
                    let gh = gather_cols(gd, dv, h * hv, hv);
                    let mut dqh = vec![F::zero(); n_q * hd];
                    let mut dkh = vec![F::zero(); n_k * hd];
                    let mut dvh = vec![F::zero(); n_k * hv];
                    attention_head_backward(
                        &qh,
                        &kh,
                        &vh,
                        &probs[h * n_q * n_k..(h + 1) * n_q * n_k],
                        &gh,
                        n_q,
                        n_k,
                        hd,
                        hv,
                        &mut dqh,
                        &mut dkh,
                        &mut dvh,
                    );
                    scatter_cols(&dqh, &mut dq, d, h * hd, hd);
                    scatter_cols(&dkh, &mut dk, d, h * hd, hd);
                    scatter_cols(&dvh, &mut dvv, dv, h * hv, hv);
                }
                if self.wants(*q) {
                    accumulate(grads, *q, qt.shape(), dq);
                }
                if self.wants(*k) {
                    accumulate(grads, *k, kt.shape(), dk);
                }
                if self.wants(*v) {
                    accumulate(grads, *v, vt.shape(), dvv);
                }
            }
            Op::Rotate {
                x,
                heads,
                rows,
                cos_sin,
            } => {
                if self.wants(*x) {
                    let d = g.cols();
                    let half = d / heads / 2;
                    let mut dx = gd.to_vec();
                    for (r, sel) in rows.iter().enumerate() {
                        if let Some(i) = sel {
                            let (c, s) = &cos_sin[*i];
                            for head in dx[r * d..(r + 1) * d].chunks_exact_mut(2 * half) {
                                rotate_row(head, c, s, true);
                            }
                        }
                    }
                    accumulate(grads, *x, g.shape(), dx);
                }
            }
            Op::Gather { table, rows } => {
                if self.wants(*table) {
                    let tt = self.value(*table);
                    let d = tt.cols();
                    let mut dt = vec![F::zero(); tt.len()];
                    for (i, &r) in rows.iter().enumerate() {
                        axpy(
                            F::one(),
                            &gd[i * d..(i + 1) * d],
                            &mut dt[r * d..(r + 1) * d],
                        );
                    }
                    accumulate(grads, *table, tt.shape(), dt);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pt = self.value(p);
                    let n = pt.len();
                    if self.wants(p) {
                        accumulate(grads, p, pt.shape(), gd[off..off + n].to_vec());
                    }
                    off += n;
                }
            }
            Op::SliceRows { x, start } => {
                if self.wants(*x) {
                    let xt = self.value(*x);
                    let d = xt.cols();
                    let mut dx = vec![F::zero(); xt.len()];
                    dx[start * d..start * d + gd.len()].copy_from_slice(gd);
                    accumulate(grads, *x, xt.shape(), dx);
                }
            }
            Op::MeanRows { x } => {
                if self.wants(*x) {
                    let xt = self.value(*x);
                    let (n, _) = as2d(xt);
                    let inv = F::one() / F::of(n as f64);
                    let row: Vec<F> = gd.iter().map(|&v| v * inv).collect();
                    let mut dx = Vec::with_capacity(xt.len());
                    for _ in 0..n {
                        dx.extend_from_slice(&row);
                    }
                    accumulate(grads, *x, xt.shape(), dx);
                }
            }
            Op::WeightedSq {
                pred,
                target,
                weights,
            } => {
                let pt = self.value(*pred);
                let two = F::of(2.0) * gd[0];
                let dp = pt
                    .data()
                    .iter()
                    .zip(target.data())
                    .zip(weights)
                    .map(|((&p, &t), &w)| two * w * (p - t))
                    .collect();
                accumulate(grads, *pred, pt.shape(), dp);
            }
            Op::SumSq { x } => {
                let xt = self.value(*x);
                let two = F::of(2.0) * gd[0];
                accumulate(
                    grads,
                    *x,
                    xt.shape(),
                    xt.data().iter().map(|&v| two * v).collect(),
                );
            }
        }
    }
}

/// `(a, b) -> (c·a − s·b, s·a + c·b)` per pair, or its inverse.
#[inline]
pub(crate) fn rotate_row<F: Real>(head: &mut [F], cos: &[F], sin: &[F], inverse: bool) {
    for (j, pair) in head.chunks_exact_mut(2).enumerate() {
        let (a, b) = (pair[0], pair[1]);
        let (c, s) = (cos[j], if inverse { -sin[j] } else { sin[j] });
        pair[0] = c * a - s * b;
        pair[1] = s * a + c * b;
    }
}

fn gather_cols<F: Real>(src: &[F], width: usize, start: usize, len: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(src.len() / width * len);
    for row in src.chunks_exact(width) {
        out.extend_from_slice(&row[start..start + len]);
    }
    out
}

fn scatter_cols<F: Real>(src: &[F], dst: &mut [F], width: usize, start: usize, len: usize) {
    for (s, d) in src.chunks_exact(len).zip(dst.chunks_exact_mut(width)) {
        for (o, &v) in d[start..start + len].iter_mut().zip(s) {
            *o += v;
        }
    }
}

fn accumulate<F: Real>(grads: &mut [Option<Tensor<F>>], v: Var, shape: &[usize], d: Vec<F>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(d) {
                *e += x;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), d).expect("gradient shape matches value"));
        }
    }
}
