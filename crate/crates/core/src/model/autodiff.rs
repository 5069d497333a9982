//! Minimal reverse-mode differentiation over dense row-major matrices.
//!
//! Every node is evaluated eagerly when it is recorded; [`Tape::backward`]
//! then walks the tape once in reverse. The set of primitives is closed: an
//! operation that is not a method on [`Tape`] cannot be recorded, and shape
//! errors are reported when a node is created.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn scalar(v: f64) -> Self {
        Matrix {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn add_assign(&mut self, other: &Matrix) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `c = alpha·op(a)·op(b) + beta·c`, where `op` optionally transposes.
#[allow(clippy::too_many_arguments)]
fn gemm(
    a: &Matrix,
    transpose_a: bool,
    b: &Matrix,
    transpose_b: bool,
    c: &mut Matrix,
    beta: f64,
) {
    let (m, k) = if transpose_a {
        (a.cols, a.rows)
    } else {
        (a.rows, a.cols)
    };
    let n = if transpose_b { b.rows } else { b.cols };
    debug_assert_eq!(c.shape(), (m, n));
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if transpose_a {
        (1, a.cols as isize)
    } else {
        (a.cols as isize, 1)
    };
    let (rsb, csb) = if transpose_b {
        (1, b.cols as isize)
    } else {
        (b.cols as isize, 1)
    };
    if k == 0 {
        c.data.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: strides and extents describe exactly the buffers above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    /// `x·w + b` with `b` a row broadcast over rows.
    Affine(NodeId, NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Log(NodeId),
    Square(NodeId),
    Clamp(NodeId, f64, f64),
    /// Column-wise max over rows; stores the winning row per column.
    MaxPool(NodeId, Vec<usize>),
    /// Softmax probabilities are kept for the backward pass.
    SoftmaxCrossEntropy(NodeId, usize, Vec<f64>),
    Sum(NodeId),
    /// Scalar with externally supplied partial derivatives.
    Custom(Vec<(NodeId, Matrix)>),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar output, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, node: NodeId) -> Option<&Matrix> {
        self.grads.get(node.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, node: NodeId) -> Option<Matrix> {
        self.grads.get_mut(node.0).and_then(|g| g.take())
    }
}

fn shape_error(op: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::invalid(format!("{op}: incompatible shapes {a:?} and {b:?}"))
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

    pub fn value(&self, node: NodeId) -> &Matrix {
        &self.nodes[node.0].value
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// A differentiable input (parameters, or anything whose gradient is wanted).
    pub fn variable(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// A constant input; no gradient is computed for it.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols != vb.rows {
            return Err(shape_error("matmul", va.shape(), vb.shape()));
        }
        let mut out = Matrix::zeros(va.rows, vb.cols);
        gemm(va, false, vb, false, &mut out, 0.0);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        if vx.cols != vw.rows {
            return Err(shape_error("affine", vx.shape(), vw.shape()));
        }
        if vb.shape() != (1, vw.cols) {
            return Err(shape_error("affine bias", vw.shape(), vb.shape()));
        }
        let mut out = Matrix::zeros(vx.rows, vw.cols);
        for r in 0..out.rows {
            out.data[r * out.cols..(r + 1) * out.cols].copy_from_slice(&vb.data);
        }
        gemm(vx, false, vw, false, &mut out, 1.0);
        let rg = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(out, Op::Affine(x, w, b), rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_error("add", va.shape(), vb.shape()));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Adds a `1×m` row to every row of an `n×m` matrix.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.shape() != (1, va.cols) {
            return Err(shape_error("add_row", va.shape(), vr.shape()));
        }
        let mut out = va.clone();
        for r in 0..out.rows {
            for (o, b) in out.data[r * out.cols..(r + 1) * out.cols].iter_mut().zip(&vr.data) {
                *o += b;
            }
        }
        let rg = self.needs(a) || self.needs(row);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_error("mul", va.shape(), vb.shape()));
        }
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect();
        let out = Matrix {
            rows: va.rows,
            cols: va.cols,
            data,
        };
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let va = self.value(a);
        let out = Matrix {
            rows: va.rows,
            cols: va.cols,
            data: va.data.iter().map(|&x| f(x)).collect(),
        };
        let rg = self.needs(a);
        self.push(out, op, rg)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.unary(a, Op::Scale(a, factor), |x| x * factor)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// Elementwise clamp; the gradient is zero where the bound is active.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Column-wise max over the rows: `n×m → 1×m`. The gradient goes to the
    /// first row attaining the max.
    pub fn max_pool(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        if va.rows == 0 {
            return Err(Error::invalid("max_pool over zero rows"));
        }
        let mut arg = vec![0usize; va.cols];
        let mut out = va.row(0).to_vec();
        for r in 1..va.rows {
            for (c, v) in va.row(r).iter().enumerate() {
                if *v > out[c] {
                    out[c] = *v;
                    arg[c] = r;
                }
            }
        }
        let out = Matrix {
            rows: 1,
            cols: va.cols,
            data: out,
        };
        let rg = self.needs(a);
        Ok(self.push(out, Op::MaxPool(a, arg), rg))
    }

    /// `-log softmax(row)[target]` of a `1×n` row.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let v = self.value(logits);
        if v.rows != 1 || target >= v.cols {
            return Err(Error::invalid(format!(
                "softmax_cross_entropy: target {target} for shape {:?}",
                v.shape()
            )));
        }
        let max = v.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = v.data.iter().map(|x| (x - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let loss = max + sum.ln() - v.data[target];
        let probs = exps.iter().map(|e| e / sum).collect();
        let rg = self.needs(logits);
        Ok(self.push(
            Matrix::scalar(loss),
            Op::SoftmaxCrossEntropy(logits, target, probs),
            rg,
        ))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data.iter().sum();
        let rg = self.needs(a);
        self.push(Matrix::scalar(s), Op::Sum(a), rg)
    }

    /// Records a scalar computed outside the tape together with its partial
    /// derivatives with respect to existing nodes.
    pub fn custom(&mut self, value: f64, partials: Vec<(NodeId, Matrix)>) -> Result<NodeId> {
        for (id, g) in &partials {
            if self.value(*id).shape() != g.shape() {
                return Err(shape_error("custom partial", self.value(*id).shape(), g.shape()));
            }
        }
        let rg = partials.iter().any(|(id, _)| self.needs(*id));
        Ok(self.push(Matrix::scalar(value), Op::Custom(partials), rg))
    }

    /// Hash of every discrete choice made in the forward pass (ReLU and
    /// clamp activity, max-pool winners). Two evaluations with equal
    /// fingerprints lie on the same smooth piece.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => {
                    for x in &self.nodes[a.0].value.data {
                        (*x > 0.0).hash(&mut h);
                    }
                }
                Op::Clamp(a, lo, hi) => {
                    for x in &self.nodes[a.0].value.data {
                        (*x < *lo, *x > *hi).hash(&mut h);
                    }
                }
                Op::MaxPool(_, arg) => arg.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse pass from a `1×1` node.
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        if self.value(output).shape() != (1, 1) {
            return Err(Error::invalid(format!(
                "backward needs a scalar output, got {:?}",
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Matrix::scalar(1.0));

        fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        let mut ga = Matrix::zeros(va.rows, va.cols);
                        gemm(&g, false, vb, true, &mut ga, 0.0);
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let mut gb = Matrix::zeros(vb.rows, vb.cols);
                        gemm(va, true, &g, false, &mut gb, 0.0);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Affine(x, w, b) => {
                    let (vx, vw) = (self.value(*x), self.value(*w));
                    if self.needs(*x) {
                        let mut gx = Matrix::zeros(vx.rows, vx.cols);
                        gemm(&g, false, vw, true, &mut gx, 0.0);
                        accumulate(&mut grads, *x, gx);
                    }
                    if self.needs(*w) {
                        let mut gw = Matrix::zeros(vw.rows, vw.cols);
                        gemm(vx, true, &g, false, &mut gw, 0.0);
                        accumulate(&mut grads, *w, gw);
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, column_sums(&g));
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.needs(*row) {
                        accumulate(&mut grads, *row, column_sums(&g));
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, zip_map(&g, vb, |g, y| g * y));
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, zip_map(&g, va, |g, x| g * x));
                    }
                }
                Op::Scale(a, f) => {
                    let f = *f;
                    accumulate(&mut grads, *a, map(&g, |x| x * f));
                }
                Op::Relu(a) => {
                    let va = self.value(*a);
                    accumulate(&mut grads, *a, zip_map(&g, va, |g, x| if x > 0.0 { g } else { 0.0 }));
                }
                Op::Log(a) => {
                    let va = self.value(*a);
                    accumulate(&mut grads, *a, zip_map(&g, va, |g, x| g / x));
                }
                Op::Square(a) => {
                    let va = self.value(*a);
                    accumulate(&mut grads, *a, zip_map(&g, va, |g, x| 2.0 * g * x));
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let va = self.value(*a);
                    accumulate(
                        &mut grads,
                        *a,
                        zip_map(&g, va, |g, x| if x < lo || x > hi { 0.0 } else { g }),
                    );
                }
                Op::MaxPool(a, arg) => {
                    let va = self.value(*a);
                    let mut ga = Matrix::zeros(va.rows, va.cols);
                    for (c, &r) in arg.iter().enumerate() {
                        ga.data[r * va.cols + c] = g.data[c];
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SoftmaxCrossEntropy(a, target, probs) => {
                    let s = g.data[0];
                    let mut data: Vec<f64> = probs.iter().map(|p| p * s).collect();
                    data[*target] -= s;
                    accumulate(
                        &mut grads,
                        *a,
                        Matrix {
                            rows: 1,
                            cols: data.len(),
                            data,
                        },
                    );
                }
                Op::Sum(a) => {
                    let va = self.value(*a);
                    let s = g.data[0];
                    accumulate(
                        &mut grads,
                        *a,
                        Matrix {
                            rows: va.rows,
                            cols: va.cols,
                            data: vec![s; va.data.len()],
                        },
                    );
                }
                Op::Custom(partials) => {
                    let s = g.data[0];
                    for (id, p) in partials {
                        if self.needs(*id) {
                            accumulate(&mut grads, *id, map(p, |x| x * s));
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn column_sums(g: &Matrix) -> Matrix {
    let mut out = vec![0.0; g.cols];
    for r in 0..g.rows {
        for (o, v) in out.iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    Matrix {
        rows: 1,
        cols: g.cols,
        data: out,
    }
}

fn map(a: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    Matrix {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().map(|&x| f(x)).collect(),
    }
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    Matrix {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::from_vec(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn square_derivative() {
        let mut t = Tape::new();
        let x = t.variable(Matrix::scalar(3.0));
        let y = t.square(x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn max_pool_routes_to_argmax() {
        let mut t = Tape::new();
        let x = t.variable(m(3, 1, &[1.0, 5.0, 2.0]));
        let p = t.max_pool(x).unwrap();
        let s = t.sum(p);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn max_pool_ties_go_to_first_row() {
        let mut t = Tape::new();
        let x = t.variable(m(3, 1, &[5.0, 5.0, 2.0]));
        let p = t.max_pool(x).unwrap();
        let s = t.sum(p);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn shape_errors_at_construction() {
        let mut t = Tape::new();
        let a = t.variable(Matrix::zeros(2, 3));
        let b = t.variable(Matrix::zeros(2, 3));
        assert!(t.matmul(a, b).is_err());
        let row = t.variable(Matrix::zeros(1, 2));
        assert!(t.add_row(a, row).is_err());
        assert!(t.backward(a).is_err());
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let x = t.constant(m(1, 2, &[1.0, 2.0]));
        let w = t.variable(m(2, 1, &[3.0, 4.0]));
        let y = t.matmul(x, w).unwrap();
        let g = t.backward(y).unwrap();
        assert!(g.get(x).is_none());
        assert_eq!(g.get(w).unwrap().data(), &[1.0, 2.0]);
    }

    /// Composite graph checked against central differences.
    #[test]
    fn composite_graph_matches_finite_differences() {
        let x0 = m(4, 3, &[0.1, -0.4, 0.3, 0.9, 0.2, -0.5, -0.3, 0.8, 0.6, 0.05, -0.7, 0.4]);
        let w0 = m(3, 2, &[0.5, -0.3, 0.2, 0.8, -0.6, 0.1]);
        let b0 = m(1, 2, &[0.05, -0.02]);
        let f = |x: &Matrix, w: &Matrix, b: &Matrix| -> (f64, Vec<Matrix>) {
            let mut t = Tape::new();
            let (xi, wi, bi) = (t.variable(x.clone()), t.variable(w.clone()), t.variable(b.clone()));
            let h = t.affine(xi, wi, bi).unwrap();
            let r = t.relu(h);
            let sq = t.square(h);
            let c = t.clamp(sq, 0.0, 0.2);
            let mixed = t.mul(r, c).unwrap();
            let added = t.add(mixed, sq).unwrap();
            let pooled = t.max_pool(added).unwrap();
            let shifted = t.add_row(h, pooled).unwrap();
            let scaled = t.scale(shifted, 0.5);
            let sq2 = t.square(scaled);
            let one = t.constant(Matrix::from_vec(4, 2, vec![1.0; 8]).unwrap());
            let pos = t.add(sq2, one).unwrap();
            let lg = t.log(pos);
            let s = t.sum(lg);
            let g = t.backward(s).unwrap();
            (
                t.value(s).data()[0],
                vec![g.get(xi).unwrap().clone(), g.get(wi).unwrap().clone(), g.get(bi).unwrap().clone()],
            )
        };
        let (_, grads) = f(&x0, &w0, &b0);
        let h = 1e-6;
        let inputs = [x0.clone(), w0.clone(), b0.clone()];
        for which in 0..3 {
            for k in 0..inputs[which].data.len() {
                let mut up = inputs.clone();
                let mut dn = inputs.clone();
                up[which].data[k] += h;
                dn[which].data[k] -= h;
                let fd = (f(&up[0], &up[1], &up[2]).0 - f(&dn[0], &dn[1], &dn[2]).0) / (2.0 * h);
                let an = grads[which].data[k];
                assert!((fd - an).abs() <= 1e-6 * fd.abs().max(an.abs()).max(1e-3), "input {which}[{k}]: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn softmax_cross_entropy_gradient() {
        let mut t = Tape::new();
        let l = t.variable(m(1, 3, &[1.0, 2.0, 0.5]));
        let ce = t.softmax_cross_entropy(l, 1).unwrap();
        let g = t.backward(ce).unwrap();
        let z: f64 = [1.0f64, 2.0, 0.5].iter().map(|v| v.exp()).sum();
        let expect = [1f64.exp() / z, 2f64.exp() / z - 1.0, 0.5f64.exp() / z];
        for (a, b) in g.get(l).unwrap().data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((t.value(ce).data()[0] - (z.ln() - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn custom_node_scales_partials() {
        let mut t = Tape::new();
        let x = t.variable(m(1, 2, &[1.0, 2.0]));
        let c = t.custom(5.0, vec![(x, m(1, 2, &[0.5, -1.0]))]).unwrap();
        let s = t.scale(c, 2.0);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, -2.0]);
    }
}
