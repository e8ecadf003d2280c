//! Reverse-mode automatic differentiation over whole tensors.
//!
//! Every operation appends one node to a [`Tape`]; a node stores its value,
//! the handles of its inputs and whatever activations its backward rule
//! needs. Nodes can only reference earlier nodes, so the tape is always in
//! topological order and [`Tape::backward`] is a single reverse sweep.

use crate::error::{shape_err, Error, Result};
use crate::linalg::{householder_qr, qr_q_adjoint};
use crate::tensor::{kernels, Tensor};

/// Variance epsilon used by [`Tape::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `b` matches the trailing axes of `a` and repeats over the leading ones.
    AddBroadcast(Var, Var),
    MulBroadcast(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    /// Tensor times a one-element tensor.
    MulScalar(Var, Var),
    Sqrt(Var),
    Recip(Var),
    Relu(Var),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    MeanTokens(Var),
    BroadcastTokens(Var),
    MatMul(Var, Var),
    BatchMatMul { a: Var, b: Var, trans_b: bool },
    Transpose(Var),
    Softmax { x: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    SliceLast { x: Var, start: usize },
    ConcatLast(Vec<Var>),
    Reshape(Var),
    WhereRows { mask: Vec<bool>, a: Var, b: Var },
    Orthogonalize { a: Var, r: Tensor },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | AddBroadcast(a, b) | MulBroadcast(a, b)
            | MulScalar(a, b) | MatMul(a, b) => vec![*a, *b],
            BatchMatMul { a, b, .. } | WhereRows { a, b, .. } => vec![*a, *b],
            Scale(x, _) | MulConst(x, _) | Sqrt(x) | Recip(x) | Relu(x) | Sigmoid(x) | Sum(x)
            | Mean(x) | SumLast(x) | MeanTokens(x) | BroadcastTokens(x) | Transpose(x)
            | Reshape(x) => vec![*x],
            Softmax { x, .. } | SliceLast { x, .. } => vec![*x],
            Orthogonalize { a, .. } => vec![*a],
            LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            ConcatLast(xs) => xs.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of tensor operations.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient with respect to `v`; exactly zero when `v` does not reach the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => Tensor::from_vec(self.shapes[v.0].clone(), g.to_vec()),
            None => Tensor::zeros(self.shapes[v.0].clone()),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Input handles of a node, for inspection.
    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = op.inputs().iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::from_vec(x.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_map(a, b, |p, q| p + q);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_map(a, b, |p, q| p - q);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_map(a, b, |p, q| p * q);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    fn check_trailing(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(())
    }

    /// `a + b` where `b`'s shape equals the trailing axes of `a`.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_trailing("add_broadcast", a, b)?;
        let bv = self.value(b).data();
        let n = bv.len();
        let mut out = self.value(a).clone();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o += bv[i % n];
        }
        Ok(self.push(out, Op::AddBroadcast(a, b)))
    }

    /// `a * b` where `b`'s shape equals the trailing axes of `a`.
    pub fn mul_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_trailing("mul_broadcast", a, b)?;
        let bv = self.value(b).data();
        let n = bv.len();
        let mut out = self.value(a).clone();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o *= bv[i % n];
        }
        Ok(self.push(out, Op::MulBroadcast(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let v = self.value(x).map(|p| p * s);
        self.push(v, Op::Scale(x, s))
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        if self.shape(x) != c.shape() {
            return Err(shape_err("mul_const", self.shape(x), c.shape()));
        }
        let data = self.value(x).data().iter().zip(c.data()).map(|(p, q)| p * q).collect();
        let v = Tensor::from_vec(c.shape().to_vec(), data);
        Ok(self.push(v, Op::MulConst(x, c.data().to_vec())))
    }

    /// Tensor times a one-element tensor.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(shape_err("mul_scalar", self.shape(x), self.shape(s)));
        }
        let sv = self.value(s).item();
        let v = self.value(x).map(|p| p * sv);
        Ok(self.push(v, Op::MulScalar(x, s)))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::sqrt);
        self.push(v, Op::Sqrt(x))
    }

    pub fn recip(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::recip);
        self.push(v, Op::Recip(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|p| p.max(0.0));
        self.push(v, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(sigmoid);
        self.push(v, Op::Sigmoid(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(m), Op::Mean(x))
    }

    /// Sums the trailing axis away; a rank-1 input becomes a scalar.
    pub fn sum_last(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = t.last_dim();
        let data: Vec<f64> = t.data().chunks(n).map(|c| c.iter().sum()).collect();
        let mut shape = t.shape()[..t.rank() - 1].to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        let v = Tensor::from_vec(shape, data);
        self.push(v, Op::SumLast(x))
    }

    /// Average pooling over the token axis: `[B, L, d] -> [B, d]`.
    pub fn mean_tokens(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let &[b, l, d] = t.shape() else {
            return Err(shape_err("mean_tokens", t.shape(), &[0, 0, 0]));
        };
        let mut out = vec![0.0; b * d];
        for bi in 0..b {
            let o = &mut out[bi * d..(bi + 1) * d];
            for li in 0..l {
                let row = &t.data()[(bi * l + li) * d..(bi * l + li + 1) * d];
                for (ov, rv) in o.iter_mut().zip(row) {
                    *ov += rv;
                }
            }
            for ov in o.iter_mut() {
                *ov /= l as f64;
            }
        }
        let v = Tensor::from_vec([b, d], out);
        Ok(self.push(v, Op::MeanTokens(x)))
    }

    /// Repeats each row of `[B, d]` over `len` tokens: `[B, len, d]`.
    pub fn broadcast_tokens(&mut self, x: Var, len: usize) -> Result<Var> {
        let t = self.value(x);
        let &[b, d] = t.shape() else {
            return Err(shape_err("broadcast_tokens", t.shape(), &[0, 0]));
        };
        let mut out = Vec::with_capacity(b * len * d);
        for bi in 0..b {
            for _ in 0..len {
                out.extend_from_slice(&t.data()[bi * d..(bi + 1) * d]);
            }
        }
        let v = Tensor::from_vec([b, len, d], out);
        Ok(self.push(v, Op::BroadcastTokens(x)))
    }

    /// `a[..., k] · b[k, n] -> [..., n]`, the leading axes of `a` acting as rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (k, n) = (sb[0], sb[1]);
        let m = self.value(a).numel() / k;
        let mut out = vec![0.0; m * n];
        kernels::gemm(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = n;
        Ok(self.push(Tensor::from_vec(shape, out), Op::MatMul(a, b)))
    }

    /// Batched product `a[B, m, k] · b[B, k, n]`, or `a · bᵀ` with `b[B, n, k]`
    /// when `trans_b` is set.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ok = sa.len() == 3
            && sb.len() == 3
            && sa[0] == sb[0]
            && if trans_b { sa[2] == sb[2] } else { sa[2] == sb[1] };
        if !ok {
            return Err(shape_err("batch_matmul", sa, sb));
        }
        let (bs, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b { sb[1] } else { sb[2] };
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; bs * m * n];
        for i in 0..bs {
            let ab = &av[i * m * k..(i + 1) * m * k];
            let bb = &bv[i * k * n..(i + 1) * k * n];
            let ob = &mut out[i * m * n..(i + 1) * m * n];
            if trans_b {
                kernels::gemm_nt(ab, bb, ob, m, k, n);
            } else {
                kernels::gemm(ab, bb, ob, m, k, n);
            }
        }
        let v = Tensor::from_vec([bs, m, n], out);
        Ok(self.push(v, Op::BatchMatMul { a, b, trans_b }))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        if self.value(x).rank() != 2 {
            return Err(shape_err("transpose", self.shape(x), &[0, 0]));
        }
        let v = self.value(x).transpose();
        Ok(self.push(v, Op::Transpose(x)))
    }

    /// Row-wise softmax over the trailing axis, shifted by the row max.
    pub fn softmax(&mut self, x: Var) -> Var {
        let v = softmax_rows(self.value(x), None);
        self.push(v, Op::Softmax { x })
    }

    /// Softmax where entries with `mask == false` are excluded and get
    /// probability exactly zero. Every row must keep at least one entry.
    pub fn softmax_masked(&mut self, x: Var, mask: Vec<bool>) -> Result<Var> {
        let t = self.value(x);
        if mask.len() != t.numel() {
            return Err(Error::Contract(format!(
                "softmax mask has {} entries for {} values",
                mask.len(),
                t.numel()
            )));
        }
        if mask.chunks(t.last_dim()).any(|r| !r.iter().any(|&m| m)) {
            return Err(Error::Contract("softmax mask removes a whole row".into()));
        }
        let v = softmax_rows(t, Some(&mask));
        Ok(self.push(v, Op::Softmax { x }))
    }

    /// Normalizes every trailing-axis vector to zero mean and unit variance
    /// (variance epsilon [`LAYER_NORM_EPS`]) and applies `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let t = self.value(x);
        let d = t.last_dim();
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(shape_err("layer_norm", t.shape(), self.shape(gamma)));
        }
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let rows = t.numel() / d;
        let mut xhat = vec![0.0; t.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; t.numel()];
        for r in 0..rows {
            let row = &t.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + bt[j];
            }
        }
        let v = Tensor::from_vec(t.shape().to_vec(), out);
        Ok(self.push(
            v,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// Columns `start..start + len` of the trailing axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let d = t.last_dim();
        if start + len > d || len == 0 {
            return Err(Error::Contract(format!(
                "slice {start}..{} out of trailing axis {d}",
                start + len
            )));
        }
        let data: Vec<f64> = t
            .data()
            .chunks(d)
            .flat_map(|r| r[start..start + len].iter().copied())
            .collect();
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        Ok(self.push(Tensor::from_vec(shape, data), Op::SliceLast { x, start }))
    }

    /// Concatenates along the trailing axis; leading axes must agree.
    pub fn concat_last(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        for &x in xs {
            let s = self.shape(x);
            if s[..s.len() - 1] != lead[..] {
                return Err(shape_err("concat_last", self.shape(first), s));
            }
        }
        let rows: usize = lead.iter().product();
        let widths: Vec<usize> = xs.iter().map(|&x| self.value(x).last_dim()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(x).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        Ok(self.push(Tensor::from_vec(shape, out), Op::ConcatLast(xs.to_vec())))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(v, Op::Reshape(x)))
    }

    /// Per trailing-axis row: take `a` where `mask` is set, `b` otherwise.
    pub fn where_rows(&mut self, mask: Vec<bool>, a: Var, b: Var) -> Result<Var> {
        self.same_shape("where_rows", a, b)?;
        let d = self.value(a).last_dim();
        if mask.len() * d != self.value(a).numel() {
            return Err(Error::Contract("where_rows mask length".into()));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(av.len());
        for (r, &m) in mask.iter().enumerate() {
            let src = if m { av } else { bv };
            out.extend_from_slice(&src[r * d..(r + 1) * d]);
        }
        let v = Tensor::from_vec(self.shape(a).to_vec(), out);
        Ok(self.push(v, Op::WhereRows { mask, a, b }))
    }

    /// Orthogonal factor `Q` of the Householder QR of a square matrix,
    /// with `R` normalized to a non-negative diagonal.
    pub fn orthogonalize(&mut self, a: Var) -> Result<Var> {
        let (q, r) = householder_qr(self.value(a))?;
        Ok(self.push(q, Op::Orthogonalize { a, r }))
    }

    /// Mean squared error between two equally shaped nodes.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let diff = self.sub(pred, target)?;
        let sq = self.mul(diff, diff)?;
        Ok(self.mean(sq))
    }

    /// Propagates `∂loss/∂node` to every node that depends on a trainable leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes[..n].iter().map(|nd| nd.value.shape().to_vec()).collect(),
        })
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(ga) = self.acc(grads, v) {
                        axpy(ga, g, 1.0);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    axpy(ga, g, 1.0);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    axpy(gb, g, -1.0);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
            }
            Op::AddBroadcast(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    axpy(ga, g, 1.0);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    let n = gb.len();
                    for (i, gi) in g.iter().enumerate() {
                        gb[i % n] += gi;
                    }
                }
            }
            Op::MulBroadcast(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let n = bv.len();
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i % n];
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for i in 0..g.len() {
                        gb[i % n] += g[i] * av[i];
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(gx) = self.acc(grads, *x) {
                    axpy(gx, g, *s);
                }
            }
            Op::MulConst(x, c) => {
                if let Some(gx) = self.acc(grads, *x) {
                    for i in 0..g.len() {
                        gx[i] += g[i] * c[i];
                    }
                }
            }
            Op::MulScalar(x, s) => {
                let sv = val(*s)[0];
                let xv = val(*x);
                if let Some(gx) = self.acc(grads, *x) {
                    axpy(gx, g, sv);
                }
                if let Some(gs) = self.acc(grads, *s) {
                    gs[0] += kernels::dot(g, xv);
                }
            }
            Op::Sqrt(x) => {
                let y = node.value.data();
                if let Some(gx) = self.acc(grads, *x) {
                    for i in 0..g.len() {
                        gx[i] += g[i] / (2.0 * y[i]);
                    }
                }
            }
            Op::Recip(x) => {
                let y = node.value.data();
                if let Some(gx) = self.acc(grads, *x) {
                    for i in 0..g.len() {
                        gx[i] -= g[i] * y[i] * y[i];
                    }
                }
            }
            Op::Relu(x) => {
                let xv = val(*x);
                if let Some(gx) = self.acc(grads, *x) {
                    for i in 0..g.len() {
                        if xv[i] > 0.0 {
                            gx[i] += g[i];
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                if let Some(gx) = self.acc(grads, *x) {
                    for i in 0..g.len() {
                        gx[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    let s = g[0] / gx.len() as f64;
                    gx.iter_mut().for_each(|v| *v += s);
                }
            }
            Op::SumLast(x) => {
                let d = self.nodes[x.0].value.last_dim();
                if let Some(gx) = self.acc(grads, *x) {
                    for (i, v) in gx.iter_mut().enumerate() {
                        *v += g[i / d];
                    }
                }
            }
            Op::MeanTokens(x) => {
                let s = self.nodes[x.0].value.shape();
                let (l, d) = (s[1], s[2]);
                if let Some(gx) = self.acc(grads, *x) {
                    for (i, v) in gx.iter_mut().enumerate() {
                        let (bi, k) = (i / (l * d), i % d);
                        *v += g[bi * d + k] / l as f64;
                    }
                }
            }
            Op::BroadcastTokens(x) => {
                let s = node.value.shape();
                let (l, d) = (s[1], s[2]);
                if let Some(gx) = self.acc(grads, *x) {
                    for (i, gi) in g.iter().enumerate() {
                        let (bi, k) = (i / (l * d), i % d);
                        gx[bi * d + k] += gi;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let sb = self.nodes[b.0].value.shape();
                let (k, n) = (sb[0], sb[1]);
                let m = g.len() / n;
                let (av, bv) = (val(*a), val(*b));
                if let Some(ga) = self.acc(grads, *a) {
                    kernels::gemm_nt(g, bv, ga, m, n, k);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    kernels::gemm_tn(av, g, gb, k, m, n);
                }
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let sa = self.nodes[a.0].value.shape();
                let (bs, m, k) = (sa[0], sa[1], sa[2]);
                let n = node.value.shape()[2];
                let (av, bv) = (val(*a), val(*b));
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..bs {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let bb = &bv[i * k * n..(i + 1) * k * n];
                        let gab = &mut ga[i * m * k..(i + 1) * m * k];
                        if *trans_b {
                            kernels::gemm(gi, bb, gab, m, n, k);
                        } else {
                            kernels::gemm_nt(gi, bb, gab, m, n, k);
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for i in 0..bs {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let ab = &av[i * m * k..(i + 1) * m * k];
                        let gbb = &mut gb[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            kernels::gemm_tn(gi, ab, gbb, n, m, k);
                        } else {
                            kernels::gemm_tn(ab, gi, gbb, k, m, n);
                        }
                    }
                }
            }
            Op::Orthogonalize { a, r } => {
                if let Some(ga) = self.acc(grads, *a) {
                    let n = r.shape()[0];
                    let q_bar = Tensor::from_vec([n, n], g.to_vec());
                    let adj = qr_q_adjoint(&node.value, r, &q_bar);
                    axpy(ga, adj.data(), 1.0);
                }
            }
            Op::Transpose(x) => {
                let s = node.value.shape();
                let (r, c) = (s[0], s[1]);
                if let Some(gx) = self.acc(grads, *x) {
                    for i in 0..r {
                        for j in 0..c {
                            gx[j * r + i] += g[i * c + j];
                        }
                    }
                }
            }
            Op::Softmax { x, .. } => {
                let y = node.value.data();
                let d = node.value.last_dim();
                if let Some(gx) = self.acc(grads, *x) {
                    for r in 0..y.len() / d {
                        let (yr, gr) = (&y[r * d..(r + 1) * d], &g[r * d..(r + 1) * d]);
                        let s = kernels::dot(yr, gr);
                        for j in 0..d {
                            gx[r * d + j] += yr[j] * (gr[j] - s);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = node.value.last_dim();
                let gv = val(*gamma);
                if let Some(gg) = self.acc(grads, *gamma) {
                    for (i, gi) in g.iter().enumerate() {
                        gg[i % d] += gi * xhat[i];
                    }
                }
                if let Some(gb) = self.acc(grads, *beta) {
                    for (i, gi) in g.iter().enumerate() {
                        gb[i % d] += gi;
                    }
                }
                if let Some(gx) = self.acc(grads, *x) {
                    let mut dxhat = vec![0.0; d];
                    for (r, &inv) in inv_std.iter().enumerate() {
                        let xh = &xhat[r * d..(r + 1) * d];
                        for j in 0..d {
                            dxhat[j] = g[r * d + j] * gv[j];
                        }
                        let s1: f64 = dxhat.iter().sum();
                        let s2 = kernels::dot(&dxhat, xh);
                        let df = d as f64;
                        for j in 0..d {
                            gx[r * d + j] += inv / df * (df * dxhat[j] - s1 - xh[j] * s2);
                        }
                    }
                }
            }
            Op::SliceLast { x, start } => {
                let d = self.nodes[x.0].value.last_dim();
                let w = node.value.last_dim();
                if let Some(gx) = self.acc(grads, *x) {
                    for (r, gr) in g.chunks(w).enumerate() {
                        for (j, gv) in gr.iter().enumerate() {
                            gx[r * d + start + j] += gv;
                        }
                    }
                }
            }
            Op::ConcatLast(xs) => {
                let total = node.value.last_dim();
                let mut offset = 0;
                for &x in xs {
                    let w = self.nodes[x.0].value.last_dim();
                    if let Some(gx) = self.acc(grads, x) {
                        for (r, chunk) in gx.chunks_mut(w).enumerate() {
                            for (j, v) in chunk.iter_mut().enumerate() {
                                *v += g[r * total + offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    axpy(gx, g, 1.0);
                }
            }
            Op::WhereRows { mask, a, b } => {
                let d = node.value.last_dim();
                for (v, keep) in [(*a, true), (*b, false)] {
                    if let Some(gv) = self.acc(grads, v) {
                        for (r, &m) in mask.iter().enumerate() {
                            if m == keep {
                                for j in r * d..(r + 1) * d {
                                    gv[j] += g[j];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn axpy(y: &mut [f64], x: &[f64], a: f64) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable row softmax over the trailing axis.
pub fn softmax_rows(t: &Tensor, mask: Option<&[bool]>) -> Tensor {
    let d = t.last_dim();
    let mut out = vec![0.0; t.numel()];
    for (r, row) in t.data().chunks(d).enumerate() {
        let keep = |j: usize| mask.is_none_or(|m| m[r * d + j]);
        let max = (0..d)
            .filter(|&j| keep(j))
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        let o = &mut out[r * d..(r + 1) * d];
        let mut sum = 0.0;
        for j in 0..d {
            if keep(j) {
                o[j] = (row[j] - max).exp();
                sum += o[j];
            }
        }
        for v in o.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::from_vec(t.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::from_vec(shape.to_vec(), v.to_vec())
    }

    #[test]
    fn square_derivative() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).item(), 6.0);
    }

    #[test]
    fn disconnected_parameter_gets_exact_zero() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let unused = tape.param(t(&[2], &[1.0, 2.0]));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.wrt(unused).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn matmul_examples() {
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::eye(2));
        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let c = tape.matmul(i, a).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);

        let r = tape.constant(t(&[1, 2], &[1.0, 0.0]));
        let col = tape.constant(t(&[2, 1], &[0.0, 5.0]));
        let z = tape.matmul(r, col).unwrap();
        assert_eq!(tape.value(z).data(), &[0.0]);

        let bad = tape.constant(Tensor::zeros([3, 3]));
        let err = tape.matmul(a, bad).unwrap_err().to_string();
        assert!(err.contains("[2, 2]") && err.contains("[3, 3]"), "{err}");
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3, 2], &[0.0, 0.0, 1000.0, 1000.0, 0.0, 3f64.ln()]));
        let y = tape.softmax(x);
        let v = tape.value(y).data();
        assert_eq!(&v[..4], &[0.5, 0.5, 0.5, 0.5]);
        assert!((v[4] - 0.25).abs() < 1e-15 && (v[5] - 0.75).abs() < 1e-15);

        let z = tape.constant(Tensor::zeros([1, 4]));
        let y = tape.softmax(z);
        assert_eq!(tape.value(y).data(), &[0.25; 4]);
    }

    #[test]
    fn masked_softmax_zeroes_excluded_entries() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 3], &[1.0, 2.0, 3.0]));
        let y = tape.softmax_masked(x, vec![true, false, true]).unwrap();
        let v = tape.value(y).data();
        assert_eq!(v[1], 0.0);
        assert!((v[0] + v[2] - 1.0).abs() < 1e-15);
        assert!(tape.softmax_masked(x, vec![false; 3]).is_err());
    }

    #[test]
    fn layer_norm_examples() {
        let mut tape = Tape::new();
        let ones = tape.constant(Tensor::full([2], 1.0));
        let zeros = tape.constant(Tensor::zeros([2]));
        let fives = tape.constant(Tensor::full([2], 5.0));

        let c = tape.constant(t(&[1, 2], &[4.0, 4.0]));
        let y = tape.layer_norm(c, ones, zeros).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0]);

        let x = tape.constant(t(&[1, 2], &[1.0, 3.0]));
        let y = tape.layer_norm(x, ones, zeros).unwrap();
        let v = tape.value(y).data().to_vec();
        assert!((v[0] + 1.0).abs() < 1e-3 && (v[1] - 1.0).abs() < 1e-3);
        let expected = 1.0 / (1.0 + LAYER_NORM_EPS).sqrt();
        assert!((v[1] - expected).abs() < 1e-15);

        let y5 = tape.layer_norm(x, ones, fives).unwrap();
        for (s, base) in tape.value(y5).data().iter().zip(&v) {
            assert!((s - 5.0 - base).abs() < 1e-14);
        }
    }

    #[test]
    fn mse_examples() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros([2]));
        let o = tape.constant(Tensor::full([2], 1.0));
        let p = tape.constant(t(&[2], &[0.0, 3.0]));
        let same = tape.mse(o, o).unwrap();
        let one = tape.mse(o, z).unwrap();
        let half = tape.mse(p, z).unwrap();
        assert_eq!(tape.value(same).item(), 0.0);
        assert_eq!(tape.value(one).item(), 1.0);
        assert_eq!(tape.value(half).item(), 4.5);
        let three = tape.constant(Tensor::zeros([3]));
        assert!(tape.mse(p, three).is_err());
    }

    #[test]
    fn backward_is_bitwise_deterministic() {
        let mut tape = Tape::new();
        let a = tape.param(t(&[2, 3], &[0.1, -0.2, 0.3, 0.4, -0.5, 0.6]));
        let b = tape.param(t(&[3, 2], &[0.7, 0.8, -0.9, 0.15, 0.25, -0.35]));
        let c = tape.matmul(a, b).unwrap();
        let s = tape.softmax(c);
        let l = tape.sum(s);
        let sq = tape.mul(l, l).unwrap();
        let g1 = tape.backward(sq).unwrap();
        let g2 = tape.backward(sq).unwrap();
        assert_eq!(g1.wrt(a), g2.wrt(a));
        assert_eq!(g1.wrt(b), g2.wrt(b));
    }
}
