//! Define-by-run reverse-mode differentiation on dense `f64` tensors.
//!
//! A [`Graph`] owns every tensor created during one forward pass and records
//! one op node per primitive. [`Graph::backward`] replays the nodes in
//! reverse order, accumulating vector-Jacobian products into the `grad`
//! buffer of every tensor that requires gradients. The graph is rebuilt for
//! every training step; a second backward on the same graph is rejected.
//!
//! The op set is exactly what the model and losses need: matrix products,
//! elementwise arithmetic, row softmax / row normalization, reductions, and
//! a gradient-reversal node ([`Graph::grad_reverse`]) that is the identity in
//! the forward pass and multiplies the upstream gradient by a negative
//! coefficient in the backward pass.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    /// An op was given tensors whose shapes do not conform.
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// An op requires a rank the tensor does not have.
    #[error("{op}: expected a rank-{expected} tensor, got shape {shape:?}")]
    BadRank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    /// `backward` was called on a tensor with more than one element.
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    /// `backward` was already run; the graph must be rebuilt first.
    #[error("backward already run on this graph; rebuild it before differentiating again")]
    BackwardAlreadyRun,
}

pub type Result<T> = std::result::Result<T, DiffError>;

/// Handle to a tensor stored in a [`Graph`]. Only valid for the graph that
/// produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

/// Dense row-major tensor participating in a differentiable computation.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    fn new(data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        assert!(
            shape.iter().all(|&d| d > 0),
            "zero dimension in shape {shape:?}"
        );
        Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Gradient buffer; populated by `backward` for tensors that require grad.
    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// One recorded primitive. Stores the tensor ids needed to replay its
/// vector-Jacobian product.
#[derive(Debug, Clone)]
enum Op {
    /// out = a @ b, a: [m,k], b: [k,n]
    Matmul {
        a: TensorId,
        b: TensorId,
        out: TensorId,
        m: usize,
        k: usize,
        n: usize,
    },
    /// out = a @ b^T, a: [m,k], b: [n,k]
    MatmulNt {
        a: TensorId,
        b: TensorId,
        out: TensorId,
        m: usize,
        k: usize,
        n: usize,
    },
    /// out = a + b, same shape
    Add {
        a: TensorId,
        b: TensorId,
        out: TensorId,
    },
    /// out[r] = x[r] + bias, x: [m,d], bias: [d]
    AddRow {
        x: TensorId,
        bias: TensorId,
        out: TensorId,
        rows: usize,
        cols: usize,
    },
    /// out = c * x
    Scale { x: TensorId, c: f64, out: TensorId },
    /// out = a * b elementwise
    Mul {
        a: TensorId,
        b: TensorId,
        out: TensorId,
    },
    /// out = max(x, 0)
    Relu { x: TensorId, out: TensorId },
    /// out[r] = x[r] / (||x[r]|| + eps)
    L2NormalizeRows {
        x: TensorId,
        out: TensorId,
        rows: usize,
        cols: usize,
    },
    /// out[r] = softmax(x[r]) with max subtraction
    SoftmaxRows {
        x: TensorId,
        out: TensorId,
        rows: usize,
        cols: usize,
    },
    /// out = ln(x) elementwise
    Log { x: TensorId, out: TensorId },
    /// out = min(max(x, lo), hi); gradient passes where lo <= x <= hi
    Clamp {
        x: TensorId,
        lo: f64,
        hi: f64,
        out: TensorId,
    },
    /// out[r] = <a[r], b[r]>, a,b: [m,d] -> out: [m,1]
    RowsDot {
        a: TensorId,
        b: TensorId,
        out: TensorId,
        rows: usize,
        cols: usize,
    },
    /// out = sum of all elements -> [1]
    Sum { x: TensorId, out: TensorId },
    /// out = mean of all elements -> [1]
    Mean { x: TensorId, out: TensorId },
    /// out = x^2 elementwise
    Square { x: TensorId, out: TensorId },
    /// forward identity; backward multiplies upstream by -coefficient
    GradReverse {
        x: TensorId,
        coefficient: f64,
        out: TensorId,
    },
}

/// Recorded computation: tensors plus op nodes in creation order. Creation
/// order is a topological order, so backward is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Graph {
    tensors: Vec<Tensor>,
    ops: Vec<Op>,
    backward_done: bool,
}

/// L2-normalization guard against zero rows.
pub const NORM_EPS: f64 = 1e-12;

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// Tensor that does not receive gradients.
    pub fn constant(&mut self, data: Vec<f64>, shape: &[usize]) -> TensorId {
        self.push(Tensor::new(data, shape, false))
    }

    /// Leaf tensor that accumulates gradients during backward.
    pub fn variable(&mut self, data: Vec<f64>, shape: &[usize]) -> TensorId {
        self.push(Tensor::new(data, shape, true))
    }

    fn push(&mut self, t: Tensor) -> TensorId {
        let id = TensorId(self.tensors.len());
        self.tensors.push(t);
        id
    }

    fn output(&mut self, data: Vec<f64>, shape: &[usize], inputs: &[TensorId]) -> TensorId {
        let requires = inputs.iter().any(|&i| self.tensors[i.0].requires_grad);
        self.push(Tensor::new(data, shape, requires))
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn value(&self, id: TensorId) -> &[f64] {
        &self.tensors[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.tensors[id.0].shape
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.tensors[id.0].grad.as_deref()
    }

    /// Value of a single-element tensor.
    pub fn scalar(&self, id: TensorId) -> f64 {
        let t = &self.tensors[id.0];
        assert_eq!(t.numel(), 1, "scalar() on tensor of shape {:?}", t.shape);
        t.data[0]
    }

    fn rank2(&self, op: &'static str, id: TensorId) -> Result<(usize, usize)> {
        let s = self.shape(id);
        if s.len() != 2 {
            return Err(DiffError::BadRank {
                op,
                expected: 2,
                shape: s.to_vec(),
            });
        }
        Ok((s[0], s[1]))
    }

    // ── Primitives ───────────────────────────────────────────────────

    /// Matrix product `a @ b`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, k) = self.rank2("matmul", a)?;
        let (k2, n) = self.rank2("matmul", b)?;
        if k != k2 {
            return Err(DiffError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        {
            let av = self.value(a);
            let bv = self.value(b);
            for i in 0..m {
                for p in 0..k {
                    let aip = av[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        out[i * n + j] += aip * bv[p * n + j];
                    }
                }
            }
        }
        let id = self.output(out, &[m, n], &[a, b]);
        self.ops.push(Op::Matmul {
            a,
            b,
            out: id,
            m,
            k,
            n,
        });
        Ok(id)
    }

    /// Matrix product against a transposed right operand, `a @ b^T`.
    pub fn matmul_nt(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, k) = self.rank2("matmul_nt", a)?;
        let (n, k2) = self.rank2("matmul_nt", b)?;
        if k != k2 {
            return Err(DiffError::ShapeMismatch {
                op: "matmul_nt",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        {
            let av = self.value(a);
            let bv = self.value(b);
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for p in 0..k {
                        acc += av[i * k + p] * bv[j * k + p];
                    }
                    out[i * n + j] = acc;
                }
            }
        }
        let id = self.output(out, &[m, n], &[a, b]);
        self.ops.push(Op::MatmulNt {
            a,
            b,
            out: id,
            m,
            k,
            n,
        });
        Ok(id)
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(DiffError::ShapeMismatch {
                op: "add",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let id = self.output(out, &shape, &[a, b]);
        self.ops.push(Op::Add { a, b, out: id });
        Ok(id)
    }

    /// Adds a rank-1 bias to every row of a rank-2 tensor.
    pub fn add_row(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId> {
        let (rows, cols) = self.rank2("add_row", x)?;
        let bs = self.shape(bias);
        if bs.len() != 1 || bs[0] != cols {
            return Err(DiffError::ShapeMismatch {
                op: "add_row",
                lhs: self.shape(x).to_vec(),
                rhs: bs.to_vec(),
            });
        }
        let mut out = self.value(x).to_vec();
        {
            let bv = self.value(bias);
            for r in 0..rows {
                for c in 0..cols {
                    out[r * cols + c] += bv[c];
                }
            }
        }
        let id = self.output(out, &[rows, cols], &[x, bias]);
        self.ops.push(Op::AddRow {
            x,
            bias,
            out: id,
            rows,
            cols,
        });
        Ok(id)
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, x: TensorId, c: f64) -> TensorId {
        let out: Vec<f64> = self.value(x).iter().map(|v| c * v).collect();
        let shape = self.shape(x).to_vec();
        let id = self.output(out, &shape, &[x]);
        self.ops.push(Op::Scale { x, c, out: id });
        id
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(DiffError::ShapeMismatch {
                op: "mul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let id = self.output(out, &shape, &[a, b]);
        self.ops.push(Op::Mul { a, b, out: id });
        Ok(id)
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let out: Vec<f64> = self.value(x).iter().map(|v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        let id = self.output(out, &shape, &[x]);
        self.ops.push(Op::Relu { x, out: id });
        id
    }

    /// Scales every row to unit Euclidean norm; zero rows stay zero thanks to
    /// the [`NORM_EPS`] guard in the denominator.
    pub fn l2_normalize_rows(&mut self, x: TensorId) -> Result<TensorId> {
        let (rows, cols) = self.rank2("l2_normalize_rows", x)?;
        let mut out = vec![0.0; rows * cols];
        {
            let xv = self.value(x);
            for r in 0..rows {
                let row = &xv[r * cols..(r + 1) * cols];
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                let denom = norm + NORM_EPS;
                for c in 0..cols {
                    out[r * cols + c] = row[c] / denom;
                }
            }
        }
        let id = self.output(out, &[rows, cols], &[x]);
        self.ops.push(Op::L2NormalizeRows {
            x,
            out: id,
            rows,
            cols,
        });
        Ok(id)
    }

    /// Row softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: TensorId) -> Result<TensorId> {
        let (rows, cols) = self.rank2("softmax_rows", x)?;
        let mut out = vec![0.0; rows * cols];
        {
            let xv = self.value(x);
            for r in 0..rows {
                let row = &xv[r * cols..(r + 1) * cols];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut denom = 0.0;
                for c in 0..cols {
                    let e = (row[c] - max).exp();
                    out[r * cols + c] = e;
                    denom += e;
                }
                for c in 0..cols {
                    out[r * cols + c] /= denom;
                }
            }
        }
        let id = self.output(out, &[rows, cols], &[x]);
        self.ops.push(Op::SoftmaxRows {
            x,
            out: id,
            rows,
            cols,
        });
        Ok(id)
    }

    pub fn log(&mut self, x: TensorId) -> TensorId {
        let out: Vec<f64> = self.value(x).iter().map(|v| v.ln()).collect();
        let shape = self.shape(x).to_vec();
        let id = self.output(out, &shape, &[x]);
        self.ops.push(Op::Log { x, out: id });
        id
    }

    /// Clamps every element to `[lo, hi]`. The gradient passes through
    /// unchanged where `lo <= x <= hi` and is zero where clamping was active.
    pub fn clamp(&mut self, x: TensorId, lo: f64, hi: f64) -> TensorId {
        assert!(lo <= hi, "clamp: lo {lo} > hi {hi}");
        let out: Vec<f64> = self.value(x).iter().map(|v| v.clamp(lo, hi)).collect();
        let shape = self.shape(x).to_vec();
        let id = self.output(out, &shape, &[x]);
        self.ops.push(Op::Clamp { x, lo, hi, out: id });
        id
    }

    /// Inner product of corresponding rows: `[m,d] x [m,d] -> [m,1]`.
    pub fn rows_dot(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (rows, cols) = self.rank2("rows_dot", a)?;
        if self.shape(a) != self.shape(b) {
            return Err(DiffError::ShapeMismatch {
                op: "rows_dot",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut out = vec![0.0; rows];
        {
            let av = self.value(a);
            let bv = self.value(b);
            for r in 0..rows {
                let mut acc = 0.0;
                for c in 0..cols {
                    acc += av[r * cols + c] * bv[r * cols + c];
                }
                out[r] = acc;
            }
        }
        let id = self.output(out, &[rows, 1], &[a, b]);
        self.ops.push(Op::RowsDot {
            a,
            b,
            out: id,
            rows,
            cols,
        });
        Ok(id)
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: TensorId) -> TensorId {
        let total: f64 = self.value(x).iter().sum();
        let id = self.output(vec![total], &[1], &[x]);
        self.ops.push(Op::Sum { x, out: id });
        id
    }

    /// Mean of all elements, as a `[1]` tensor.
    pub fn mean(&mut self, x: TensorId) -> TensorId {
        let n = self.tensor(x).numel();
        let total: f64 = self.value(x).iter().sum();
        let id = self.output(vec![total / n as f64], &[1], &[x]);
        self.ops.push(Op::Mean { x, out: id });
        id
    }

    pub fn square(&mut self, x: TensorId) -> TensorId {
        let out: Vec<f64> = self.value(x).iter().map(|v| v * v).collect();
        let shape = self.shape(x).to_vec();
        let id = self.output(out, &shape, &[x]);
        self.ops.push(Op::Square { x, out: id });
        id
    }

    /// Identity in the forward pass; multiplies the upstream gradient by
    /// `-coefficient` in the backward pass. Realizes minimax objectives with
    /// a single backward sweep.
    pub fn grad_reverse(&mut self, x: TensorId, coefficient: f64) -> TensorId {
        assert!(
            coefficient >= 0.0,
            "grad_reverse: coefficient must be >= 0, got {coefficient}"
        );
        let out = self.value(x).to_vec();
        let shape = self.shape(x).to_vec();
        let id = self.output(out, &shape, &[x]);
        self.ops.push(Op::GradReverse {
            x,
            coefficient,
            out: id,
        });
        id
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Seeds the loss gradient with 1.0
    /// and accumulates `d loss / d tensor` into every tensor that requires
    /// gradients. Each node is visited exactly once, in reverse creation
    /// order.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.backward_done {
            return Err(DiffError::BackwardAlreadyRun);
        }
        let lt = &self.tensors[loss.0];
        if lt.numel() != 1 {
            return Err(DiffError::NonScalarLoss {
                shape: lt.shape.clone(),
            });
        }
        self.backward_done = true;
        for t in &mut self.tensors {
            if t.requires_grad {
                t.grad = Some(vec![0.0; t.data.len()]);
            }
        }
        if let Some(g) = self.tensors[loss.0].grad.as_mut() {
            g[0] = 1.0;
        } else {
            // Loss of constants only: nothing to differentiate.
            return Ok(());
        }
        for i in (0..self.ops.len()).rev() {
            let op = self.ops[i].clone();
            self.backward_op(&op);
        }
        Ok(())
    }

    fn take_out_grad(&self, out: TensorId) -> Option<Vec<f64>> {
        self.tensors[out.0].grad.clone()
    }

    fn accumulate(&mut self, id: TensorId, contrib: &[f64]) {
        if let Some(g) = self.tensors[id.0].grad.as_mut() {
            for (gi, ci) in g.iter_mut().zip(contrib) {
                *gi += ci;
            }
        }
    }

    fn wants_grad(&self, id: TensorId) -> bool {
        self.tensors[id.0].requires_grad
    }

    fn backward_op(&mut self, op: &Op) {
        match *op {
            Op::Matmul { a, b, out, m, k, n } => {
                let Some(d_out) = self.take_out_grad(out) else {
                    return;
                };
                if self.wants_grad(a) {
                    let bv = self.value(b);
                    let mut d_a = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let d = d_out[i * n + j];
                            if d == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                d_a[i * k + p] += d * bv[p * n + j];
                            }
                        }
                    }
                    self.accumulate(a, &d_a);
                }
                if self.wants_grad(b) {
                    let av = self.value(a);
                    let mut d_b = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let aip = av[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                d_b[p * n + j] += aip * d_out[i * n + j];
                            }
                        }
                    }
                    self.accumulate(b, &d_b);
                }
            }
            Op::MatmulNt { a, b, out, m, k, n } => {
                let Some(d_out) = self.take_out_grad(out) else {
                    return;
                };
                if self.wants_grad(a) {
                    let bv = self.value(b);
                    let mut d_a = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let d = d_out[i * n + j];
                            for p in 0..k {
                                d_a[i * k + p] += d * bv[j * k + p];
                            }
                        }
                    }
                    self.accumulate(a, &d_a);
                }
                if self.wants_grad(b) {
                    let av = self.value(a);
                    let mut d_b = vec![0.0; n * k];
                    for i in 0..m {
                        for j in 0..n {
                            let d = d_out[i * n + j];
                            for p in 0..k {
                                d_b[j * k + p] += d * av[i * k + p];
                            }
                        }
                    }
                    self.accumulate(b, &d_b);
                }
            }
            Op::Add { a, b, out } => {
                let Some(d_out) = self.take_out_grad(out) else {
                    return;
                };
                self.accumulate(a, &d_out);
                self.accumulate(b, &d_out);
            }
            Op::AddRow {
                x,
                bias,
                out,
                rows,
                cols,
            } => {
                let Some(d_out) = self.take_out_grad(out) else {
                    return;
                };
                self.accumulate(x, &d_out);
                if self.wants_grad(bias) {
                    let mut d_b = vec![0.0; cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            d_b[c] += d_out[r * cols + c];
                        }
                    }
                    self.accumulate(bias, &d_b);
                }
            }
            Op::Scale { x, c, out } => {
                let Some(d_out) = self.take_out_grad(out) else {
                    return;
                };
                let d_x: Vec<f64> = d_out.iter().map(|d| c * d).collect();
                self.accumulate(x, &d_x);
            }
            Op::Mul { a, b, out } => {
                let Some(d_out) = self.take_out_grad(out) else {
                    return;
                };
                if self.wants_grad(a) {
                    let d_a: Vec<f64> = d_out
                        .iter()
                        .zip(self.value(b))
                        .map(|(d, v)| d * v)
                        .collect();
                    self.accumulate(a, &d_a);
                }
                if self.wants_grad(b) {
                    let d_b: Vec<f64> = d_out
                        .iter()
                        .zip(self.value(a))
                        .map(|(d, v)| d * v)
                        .collect();
                    self.accumulate(b, &d_b);
                }
            }
            Op::Relu { x, out } => {
                let Some(d_out) = self.take_out_grad(out) else {
                    return;
                };
                let d_x: Vec<f64> = d_out
                    .iter()
                    .zip(self.value(x))
                    .map(|(d, v)| if *v > 0.0 { *d } else { 0.0 })
                    .collect();
                self.accumulate(x, &d_x);
            }
            Op::L2NormalizeRows { x, out, rows, cols } => {
                let Some(d_out) = self.take_out_grad(out) else {
                    return;
                };
                if !self.wants_grad(x) {
                    return;
                }
                let xv = self.value(x);
                let mut d_x = vec![0.0; rows * cols];
                for r in 0..rows {
                    let row = &xv[r * cols..(r + 1) * cols];
                    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let denom = norm + NORM_EPS;
                    let d_row = &d_out[r * cols..(r + 1) * cols];
                    let dot: f64 = d_row.iter().zip(row).map(|(d, v)| d * v).sum();
                    for c in 0..cols {
                        let mut g = d_row[c] / denom;
                        if norm > 0.0 {
                            g -= row[c] * dot / (denom * denom * norm);
                        }
                        d_x[r * cols + c] = g;
                    }
                }
                self.accumulate(x, &d_x);
            }
            Op::SoftmaxRows { x, out, rows, cols } => {
                let Some(d_out) = self.take_out_grad(out) else {
                    return;
                };
                if !self.wants_grad(x) {
                    return;
                }
                let yv = self.value(out);
                let mut d_x = vec![0.0; rows * cols];
                for r in 0..rows {
                    let y = &yv[r * cols..(r + 1) * cols];
                    let d = &d_out[r * cols..(r + 1) * cols];
                    let dot: f64 = d.iter().zip(y).map(|(di, yi)| di * yi).sum();
                    for c in 0..cols {
                        d_x[r * cols + c] = y[c] * (d[c] - dot);
                    }
                }
                self.accumulate(x, &d_x);
            }
            Op::Log { x, out } => {
                let Some(d_out) = self.take_out_grad(out) else {
                    return;
                };
                let d_x: Vec<f64> = d_out
                    .iter()
                    .zip(self.value(x))
                    .map(|(d, v)| d / v)
                    .collect();
                self.accumulate(x, &d_x);
            }
            Op::Clamp { x, lo, hi, out } => {
                let Some(d_out) = self.take_out_grad(out) else {
                    return;
                };
                let d_x: Vec<f64> = d_out
                    .iter()
                    .zip(self.value(x))
                    .map(|(d, v)| if *v >= lo && *v <= hi { *d } else { 0.0 })
                    .collect();
                self.accumulate(x, &d_x);
            }
            Op::RowsDot {
                a,
                b,
                out,
                rows,
                cols,
            } => {
                let Some(d_out) = self.take_out_grad(out) else {
                    return;
                };
                if self.wants_grad(a) {
                    let bv = self.value(b);
                    let mut d_a = vec![0.0; rows * cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            d_a[r * cols + c] = d_out[r] * bv[r * cols + c];
                        }
                    }
                    self.accumulate(a, &d_a);
                }
                if self.wants_grad(b) {
                    let av = self.value(a);
                    let mut d_b = vec![0.0; rows * cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            d_b[r * cols + c] = d_out[r] * av[r * cols + c];
                        }
                    }
                    self.accumulate(b, &d_b);
                }
            }
            Op::Sum { x, out } => {
                let Some(d_out) = self.take_out_grad(out) else {
                    return;
                };
                let n = self.tensor(x).numel();
                let d_x = vec![d_out[0]; n];
                self.accumulate(x, &d_x);
            }
            Op::Mean { x, out } => {
                let Some(d_out) = self.take_out_grad(out) else {
                    return;
                };
                let n = self.tensor(x).numel();
                let d_x = vec![d_out[0] / n as f64; n];
                self.accumulate(x, &d_x);
            }
            Op::Square { x, out } => {
                let Some(d_out) = self.take_out_grad(out) else {
                    return;
                };
                let d_x: Vec<f64> = d_out
                    .iter()
                    .zip(self.value(x))
                    .map(|(d, v)| d * 2.0 * v)
                    .collect();
                self.accumulate(x, &d_x);
            }
            Op::GradReverse {
                x,
                coefficient,
                out,
            } => {
                let Some(d_out) = self.take_out_grad(out) else {
                    return;
                };
                let d_x: Vec<f64> = d_out.iter().map(|d| -coefficient * d).collect();
                self.accumulate(x, &d_x);
            }
        }
    }
}
