//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every op appends a node to the [`Graph`]; inputs always precede outputs, so
//! the backward pass is a single reverse sweep over the tape. Gradients are
//! only computed for nodes that (transitively) depend on a leaf created with
//! `requires_grad = true`. [`Graph::stop_grad`] cuts that dependency.
//!
//! Broadcasting is limited to [`Graph::add_row`] (a row vector added to every
//! row of a matrix). Per-row coefficients are materialized as full constants by
//! the caller.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Ln(Var),
    Softplus(Var),
    Sum(Var),
    Mean(Var),
    RowSqNorm(Var),
    Concat(Vec<Var>),
    StopGrad(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddRow(..) => "add_row",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Ln(..) => "ln",
            Op::Softplus(..) => "softplus",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::RowSqNorm(..) => "row_sq_norm",
            Op::Concat(..) => "concat",
            Op::StopGrad(..) => "stop_grad",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::LeakyRelu(a, _)
            | Op::Sigmoid(a)
            | Op::Ln(a)
            | Op::Softplus(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::RowSqNorm(a)
            | Op::StopGrad(a) => vec![*a],
            Op::Concat(parts) => parts.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation plus the gradients of the last backward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass; zeros when `v` was unreachable.
    pub fn grad(&self, v: Var) -> Tensor {
        self.grads
            .get(v.0)
            .and_then(Option::as_ref)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()))
    }

    /// Sign pattern (`input >= 0`) of every leaky-rectifier input, in graph
    /// order. Two evaluations with equal patterns lie on the same linear piece.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::LeakyRelu(a, _) = node.op {
                out.extend(self.value(a).data().iter().map(|&v| v >= 0.0));
            }
        }
        out
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = match op {
            Op::StopGrad(_) => false,
            _ => op.inputs().iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.value(v).shape();
        if s.len() != 2 {
            return Err(Error::ShapeMismatch {
                op,
                left: s.to_vec(),
                right: vec![0, 0],
            });
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: vec![m, k],
                right: vec![k2, n],
            });
        }
        let out = gemm(self.value(a).data(), false, self.value(b).data(), false, m, k, n);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b))
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), op.name(), f)?;
        self.push(value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x * factor);
        self.push(value, Op::Scale(a, factor))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    /// Adds a `[n]` or `[1, n]` row to every row of a `[b, n]` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (b, n) = self.matrix_dims(a, "add_row")?;
        let r = self.value(row);
        let ok = match r.shape() {
            [len] => *len == n,
            [1, len] => *len == n,
            _ => false,
        };
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                left: vec![b, n],
                right: r.shape().to_vec(),
            });
        }
        let rd = r.data();
        let mut out = self.value(a).data().to_vec();
        for chunk in out.chunks_mut(n.max(1)) {
            for (o, x) in chunk.iter_mut().zip(rd) {
                *o += x;
            }
        }
        self.push(Tensor::from_parts(vec![b, n], out), Op::AddRow(a, row))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(value, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    /// Natural logarithm.
    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::ln);
        self.push(value, Op::Ln(a))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(softplus);
        self.push(value, Op::Softplus(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(Error::InvalidArgument("mean of an empty tensor".into()));
        }
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Squared L2 norm of each row: `[b, n] -> [b, 1]`.
    pub fn row_sq_norm(&mut self, a: Var) -> Result<Var> {
        let (b, n) = self.matrix_dims(a, "row_sq_norm")?;
        let data = self.value(a).data();
        let out = (0..b)
            .map(|i| data[i * n..(i + 1) * n].iter().map(|x| x * x).sum())
            .collect();
        self.push(Tensor::from_parts(vec![b, 1], out), Op::RowSqNorm(a))
    }

    /// Concatenation along the feature (column) axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let (rows, _) = self.matrix_dims(parts[0], "concat")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.matrix_dims(p, "concat")?;
            if r != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: self.value(parts[0]).shape().to_vec(),
                    right: vec![r, c],
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        self.push(Tensor::from_parts(vec![rows, total], out), Op::Concat(parts.to_vec()))
    }

    /// Identity in the forward pass; blocks all gradient flow into `a`.
    pub fn stop_grad(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).clone();
        self.push(value, Op::StopGrad(a))
    }

    /// Populates gradients of `loss` with respect to every node that requires
    /// them. Previous gradients are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape();
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::ones(shape));
        }
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].as_ref() else { continue };
            let contributions = self.vjp(i, g)?;
            for (input, contribution) in contributions {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Vector-Jacobian products of node `i` for upstream gradient `g`.
    fn vjp(&self, i: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[i];
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        let out = match &node.op {
            Op::Leaf | Op::StopGrad(_) => Vec::new(),
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).cols();
                let mut v = Vec::new();
                if needs(a) {
                    // dA = dC · Bᵀ
                    let da = gemm(g.data(), false, self.value(*b).data(), true, m, n, k);
                    v.push((*a, Tensor::from_parts(vec![m, k], da)));
                }
                if needs(b) {
                    // dB = Aᵀ · dC
                    let db = gemm(self.value(*a).data(), true, g.data(), false, k, m, n);
                    v.push((*b, Tensor::from_parts(vec![k, n], db)));
                }
                v
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|x| -x))],
            Op::Mul(a, b) => {
                let da = g.zip_map(self.value(*b), "mul", |x, y| x * y)?;
                let db = g.zip_map(self.value(*a), "mul", |x, y| x * y)?;
                vec![(*a, da), (*b, db)]
            }
            Op::Scale(a, f) => vec![(*a, g.map(|x| x * f))],
            Op::AddRow(a, row) => {
                let n = g.cols();
                let mut dr = vec![0.0; n];
                for chunk in g.data().chunks(n.max(1)) {
                    for (d, x) in dr.iter_mut().zip(chunk) {
                        *d += x;
                    }
                }
                let rshape = self.value(*row).shape().to_vec();
                vec![(*a, g.clone()), (*row, Tensor::from_parts(rshape, dr))]
            }
            Op::LeakyRelu(a, slope) => {
                let d = g.zip_map(self.value(*a), "leaky_relu", |gi, x| {
                    if x > 0.0 {
                        gi
                    } else {
                        slope * gi
                    }
                })?;
                vec![(*a, d)]
            }
            Op::Sigmoid(a) => {
                let d = g.zip_map(&node.value, "sigmoid", |gi, s| gi * s * (1.0 - s))?;
                vec![(*a, d)]
            }
            Op::Ln(a) => {
                let d = g.zip_map(self.value(*a), "ln", |gi, x| gi / x)?;
                vec![(*a, d)]
            }
            Op::Softplus(a) => {
                let d = g.zip_map(self.value(*a), "softplus", |gi, x| gi * sigmoid(x))?;
                vec![(*a, d)]
            }
            Op::Sum(a) => {
                let gv = g.item();
                vec![(*a, Tensor::full(self.value(*a).shape(), gv))]
            }
            Op::Mean(a) => {
                let x = self.value(*a);
                let gv = g.item() / x.len() as f64;
                vec![(*a, Tensor::full(x.shape(), gv))]
            }
            Op::RowSqNorm(a) => {
                let x = self.value(*a);
                let n = x.cols();
                let mut d = x.data().to_vec();
                for (r, chunk) in d.chunks_mut(n.max(1)).enumerate() {
                    let gr = g.data()[r];
                    for v in chunk {
                        *v *= 2.0 * gr;
                    }
                }
                vec![(*a, Tensor::from_parts(x.shape().to_vec(), d))]
            }
            Op::Concat(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                let mut v = Vec::with_capacity(parts.len());
                for p in parts {
                    let w = self.value(*p).cols();
                    if needs(p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        v.push((*p, Tensor::from_parts(vec![rows, w], d)));
                    }
                    offset += w;
                }
                v
            }
        };
        Ok(out)
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

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `op(A) · op(B)` for row-major buffers, where `op` optionally transposes.
/// The logical product is `[m, k] x [k, n]`.
fn gemm(a: &[f64], trans_a: bool, b: &[f64], trans_b: bool, m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    // Stored shapes: A is [m, k] or (transposed) [k, m]; likewise for B.
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides describe in-bounds layouts of `a` (m*k), `b` (k*n) and
    // `c` (m*n); `c` does not alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let a = g.constant(mat(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let i = g.constant(mat(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let c = g.matmul(a, i).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_rectangular() {
        let mut g = Graph::new();
        let a = g.constant(mat(&[&[1.0, 2.0, 3.0]]));
        let b = g.constant(mat(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).shape(), &[1, 2]);
        assert_eq!(g.value(c).data(), &[4.0, 5.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
        let c = g.constant(Tensor::zeros(&[3, 2]));
        assert!(g.add(a, c).is_err());
    }

    #[test]
    fn mean_sq_of_self_difference_is_zero() {
        let mut g = Graph::new();
        let x = g.param(mat(&[&[1.5, -2.0], &[0.25, 9.0]]));
        let d = g.sub(x, x).unwrap();
        let s = g.row_sq_norm(d).unwrap();
        let m = g.mean(s).unwrap();
        assert_eq!(g.scalar(m), 0.0);
    }

    #[test]
    fn sigmoid_and_log_at_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(0.0));
        let s = g.sigmoid(x).unwrap();
        assert_eq!(g.scalar(s), 0.5);
        let l = g.ln(s).unwrap();
        let nl = g.neg(l).unwrap();
        assert!((g.scalar(nl) - std::f64::consts::LN_2).abs() < 1e-15);
        let sp = g.softplus(x).unwrap();
        assert!((g.scalar(sp) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn non_finite_output_is_an_error_naming_the_op() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(0.0));
        let err = g.ln(x).unwrap_err();
        assert!(matches!(err, Error::NonFinite { op: "ln" }));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(&[2, 2]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn constant_loss_gives_zero_grads() {
        let mut g = Graph::new();
        let x = g.param(Tensor::ones(&[2]));
        let c = g.constant(Tensor::scalar(3.0));
        g.backward(c).unwrap();
        assert_eq!(g.grad(x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![1], vec![3.0]).unwrap());
        let xx = g.mul(x, x).unwrap();
        let s = g.sum(xx).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).data(), &[6.0]);
    }

    #[test]
    fn stop_grad_blocks_flow() {
        let mut g = Graph::new();
        let x = g.param(mat(&[&[1.0, 2.0]]));
        let y = g.param(mat(&[&[3.0, -1.0]]));
        let sx = g.stop_grad(x).unwrap();
        let p = g.mul(sx, y).unwrap();
        let s = g.sum(p).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).data(), &[0.0, 0.0]);
        assert_eq!(g.grad(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn concat_splits_gradient_exactly() {
        let mut g = Graph::new();
        let a = g.param(mat(&[&[1.0], &[2.0]]));
        let b = g.param(mat(&[&[3.0, 4.0], &[5.0, 6.0]]));
        let c = g.concat(&[a, b]).unwrap();
        let w = g.constant(mat(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]));
        let p = g.mul(c, w).unwrap();
        let s = g.sum(p).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).data(), &[1.0, 4.0]);
        assert_eq!(g.grad(b).data(), &[2.0, 3.0, 5.0, 6.0]);
    }

    #[test]
    fn add_row_broadcasts_and_reduces() {
        let mut g = Graph::new();
        let a = g.param(Tensor::zeros(&[3, 2]));
        let r = g.param(Tensor::new(vec![2], vec![1.0, -1.0]).unwrap());
        let o = g.add_row(a, r).unwrap();
        assert_eq!(g.value(o).data(), &[1.0, -1.0, 1.0, -1.0, 1.0, -1.0]);
        let s = g.sum(o).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(r).data(), &[3.0, 3.0]);
    }

    #[test]
    fn reused_node_accumulates() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![1], vec![2.0]).unwrap());
        let y = g.add(x, x).unwrap();
        let z = g.mul(y, x).unwrap();
        let s = g.sum(z).unwrap();
        g.backward(s).unwrap();
        // z = 2x², dz/dx = 4x
        assert_eq!(g.grad(x).data(), &[8.0]);
    }
}
