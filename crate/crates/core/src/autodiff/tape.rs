//! Define-by-run reverse-mode differentiation over batched matrices.
//!
//! A [`Tape`] is created per forward pass. Every operation appends a node
//! holding its output value and the indices of its inputs; [`Tape::backward`]
//! walks the nodes in reverse and accumulates exact adjoints. Nodes built only
//! from constants never receive gradients, which keeps the first-layer input
//! products out of the backward pass.

use thiserror::Error;

use super::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },
    #[error("{op}: input {value} at index {index} is outside the domain")]
    Domain {
        op: &'static str,
        index: usize,
        value: f64,
    },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: [usize; 2] },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MulScalarVar(usize, usize),
    Min(usize, usize),
    Relu(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Softplus(usize),
    Square(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Clamp(usize, f64, f64),
    Sum(usize),
    Mean(usize),
    RowSum(usize),
    Softmax(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    ConcatCols(Vec<usize>),
    SliceCols(usize, usize),
    GroupDot {
        q: usize,
        k: usize,
        groups: usize,
    },
    GroupWeightedSum {
        w: usize,
        v: usize,
        groups: usize,
    },
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

impl Node {
    fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when the node does not depend on any differentiable leaf.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `var` into `tensor.grad`.
    pub fn accumulate_into(&self, var: Var, tensor: &mut Tensor) {
        if let Some(g) = self.get(var) {
            for (dst, src) in tensor.grad_mut().iter_mut().zip(g) {
                *dst += src;
            }
        }
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn check_same(op: &'static str, a: [usize; 2], b: [usize; 2]) -> Result<()> {
    if a != b {
        return Err(AutodiffError::ShapeMismatch {
            op,
            left: a,
            right: b,
        });
    }
    Ok(())
}

fn stable_softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn grad_slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], j: usize) -> Option<&'a mut Vec<f64>> {
    if !nodes[j].requires_grad {
        return None;
    }
    let len = nodes[j].value.len();
    Some(grads[j].get_or_insert_with(|| vec![0.0; len]))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `c (m x n) = beta * c + a (m x k) * b (k x n)` with arbitrary strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c.iter_mut().for_each(|x| *x = 0.0);
        }
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides describe in-bounds accesses for the slice lengths
    // checked by every caller (a: m*k, b: k*n, c: m*n, all row-major or
    // their transposes).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
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

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].shape()
    }

    /// Value of a `[1, 1]` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::from_vec(n.rows, n.cols, n.value.clone())
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: usize) -> bool {
        self.nodes[v].requires_grad
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        assert_eq!(data.len(), rows * cols, "constant data does not match shape");
        self.push(rows, cols, data, Op::Leaf, false)
    }

    pub fn constant_tensor(&mut self, t: &Tensor) -> Var {
        self.push(t.rows(), t.cols(), t.data().to_vec(), Op::Leaf, false)
    }

    /// Differentiable leaf holding a copy of `t`'s data.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.rows(), t.cols(), t.data().to_vec(), Op::Leaf, true)
    }

    pub fn leaf(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        assert_eq!(data.len(), rows * cols, "leaf data does not match shape");
        self.push(rows, cols, data, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            &self.nodes[a.0].value,
            (k as isize, 1),
            &self.nodes[b.0].value,
            (n as isize, 1),
            0.0,
            &mut out,
        );
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(m, n, out, Op::MatMul(a.0, b.0), rg))
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, mk: fn(usize, usize) -> Op) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        check_same(op, sa, sb)?;
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(sa[0], sa[1], out, mk(a.0, b.0), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("min", a, b, f64::min, Op::Min)
    }

    /// Adds the `[1, n]` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sb[0] != 1 || sb[1] != sa[1] {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_row",
                left: sa,
                right: sb,
            });
        }
        let n = sa[1];
        let bv = &self.nodes[bias.0].value;
        let mut out = self.nodes[a.0].value.clone();
        for row in out.chunks_exact_mut(n.max(1)) {
            row.iter_mut().zip(bv).for_each(|(x, b)| *x += b);
        }
        let rg = self.rg(a.0) || self.rg(bias.0);
        Ok(self.push(sa[0], n, out, Op::AddRow(a.0, bias.0), rg))
    }

    /// Multiplies every entry of `a` by the `[1, 1]` node `s`.
    pub fn mul_scalar_var(&mut self, a: Var, s: Var) -> Result<Var> {
        let (sa, ss) = (self.shape(a), self.shape(s));
        if ss != [1, 1] {
            return Err(AutodiffError::ShapeMismatch {
                op: "mul_scalar_var",
                left: sa,
                right: ss,
            });
        }
        let k = self.nodes[s.0].value[0];
        let out: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x * k).collect();
        let rg = self.rg(a.0) || self.rg(s.0);
        Ok(self.push(sa[0], sa[1], out, Op::MulScalarVar(a.0, s.0), rg))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let [r, c] = self.shape(a);
        let out: Vec<f64> = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        let rg = self.rg(a.0);
        self.push(r, c, out, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a.0))
    }

    /// Natural log; every input must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some((index, &value)) = self.nodes[a.0]
            .value
            .iter()
            .enumerate()
            .find(|(_, x)| !(**x > 0.0))
        {
            return Err(AutodiffError::Domain {
                op: "log",
                index,
                value,
            });
        }
        Ok(self.map(a, f64::ln, Op::Log(a.0)))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, stable_softplus, Op::Softplus(a.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |x| x * x, Op::Square(a.0))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.map(a, |x| x * k, Op::Scale(a.0, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.map(a, |x| x + k, Op::AddScalar(a.0))
    }

    /// Hard clamp; the gradient is zero outside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, |x| x.clamp(lo, hi), Op::Clamp(a.0, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().sum();
        let rg = self.rg(a.0);
        self.push(1, 1, vec![s], Op::Sum(a.0), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.nodes[a.0].value.len();
        if n == 0 {
            return Err(AutodiffError::Invalid {
                op: "mean",
                msg: "empty input".into(),
            });
        }
        let s: f64 = self.nodes[a.0].value.iter().sum();
        let rg = self.rg(a.0);
        Ok(self.push(1, 1, vec![s / n as f64], Op::Mean(a.0), rg))
    }

    /// Sums each row, producing `[rows, 1]`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let [r, c] = self.shape(a);
        let v = &self.nodes[a.0].value;
        let out: Vec<f64> = (0..r).map(|i| v[i * c..(i + 1) * c].iter().sum()).collect();
        let rg = self.rg(a.0);
        self.push(r, 1, out, Op::RowSum(a.0), rg)
    }

    /// Softmax over the last axis (each row independently).
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let [r, c] = self.shape(a);
        if c == 0 {
            return Err(AutodiffError::Invalid {
                op: "softmax",
                msg: "zero-width rows".into(),
            });
        }
        let v = &self.nodes[a.0].value;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &v[i * c..(i + 1) * c];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let dst = &mut out[i * c..(i + 1) * c];
            let mut z = 0.0;
            for (d, &x) in dst.iter_mut().zip(row) {
                *d = (x - mx).exp();
                z += *d;
            }
            dst.iter_mut().for_each(|d| *d /= z);
        }
        let rg = self.rg(a.0);
        Ok(self.push(r, c, out, Op::Softmax(a.0), rg))
    }

    /// Row-wise layer normalization with `[1, n]` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let sx = self.shape(x);
        for p in [gain, bias] {
            let sp = self.shape(p);
            if sp != [1, sx[1]] {
                return Err(AutodiffError::ShapeMismatch {
                    op: "layer_norm",
                    left: sx,
                    right: sp,
                });
            }
        }
        let [r, c] = sx;
        let xv = &self.nodes[x.0].value;
        let g = &self.nodes[gain.0].value;
        let b = &self.nodes[bias.0].value;
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(x.0) || self.rg(gain.0) || self.rg(bias.0);
        Ok(self.push(
            r,
            c,
            out,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(AutodiffError::Invalid {
                op: "concat_cols",
                msg: "no inputs".into(),
            });
        };
        let rows = self.shape(*first)[0];
        for p in parts {
            let sp = self.shape(*p);
            if sp[0] != rows {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.shape(*first),
                    right: sp,
                });
            }
        }
        let cols: usize = parts.iter().map(|p| self.shape(*p)[1]).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for p in parts {
                let n = &self.nodes[p.0];
                out.extend_from_slice(&n.value[i * n.cols..(i + 1) * n.cols]);
            }
        }
        let rg = parts.iter().any(|p| self.rg(p.0));
        Ok(self.push(
            rows,
            cols,
            out,
            Op::ConcatCols(parts.iter().map(|p| p.0).collect()),
            rg,
        ))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let [r, c] = self.shape(a);
        if start > end || end > c {
            return Err(AutodiffError::Invalid {
                op: "slice_cols",
                msg: format!("range {start}..{end} out of bounds for {c} columns"),
            });
        }
        let w = end - start;
        let v = &self.nodes[a.0].value;
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&v[i * c + start..i * c + end]);
        }
        let rg = self.rg(a.0);
        Ok(self.push(r, w, out, Op::SliceCols(a.0, start), rg))
    }

    /// `out[b, g] = q[b] . k[b * groups + g]` for `q: [B, d]`, `k: [B * groups, d]`.
    pub fn group_dot(&mut self, q: Var, k: Var, groups: usize) -> Result<Var> {
        let (sq, sk) = (self.shape(q), self.shape(k));
        if sq[1] != sk[1] || sk[0] != sq[0] * groups {
            return Err(AutodiffError::ShapeMismatch {
                op: "group_dot",
                left: sq,
                right: sk,
            });
        }
        let (b, d) = (sq[0], sq[1]);
        let qv = &self.nodes[q.0].value;
        let kv = &self.nodes[k.0].value;
        let mut out = vec![0.0; b * groups];
        for i in 0..b {
            let qr = &qv[i * d..(i + 1) * d];
            for g in 0..groups {
                let row = i * groups + g;
                let kr = &kv[row * d..(row + 1) * d];
                out[row] = qr.iter().zip(kr).map(|(x, y)| x * y).sum();
            }
        }
        let rg = self.rg(q.0) || self.rg(k.0);
        Ok(self.push(b, groups, out, Op::GroupDot { q: q.0, k: k.0, groups }, rg))
    }

    /// `out[b] = sum_g w[b, g] * v[b * groups + g]` for `w: [B, groups]`, `v: [B * groups, d]`.
    pub fn group_weighted_sum(&mut self, w: Var, v: Var, groups: usize) -> Result<Var> {
        let (sw, sv) = (self.shape(w), self.shape(v));
        if sw[1] != groups || sv[0] != sw[0] * groups {
            return Err(AutodiffError::ShapeMismatch {
                op: "group_weighted_sum",
                left: sw,
                right: sv,
            });
        }
        let (b, d) = (sw[0], sv[1]);
        let wv = &self.nodes[w.0].value;
        let vv = &self.nodes[v.0].value;
        let mut out = vec![0.0; b * d];
        for i in 0..b {
            let dst = &mut out[i * d..(i + 1) * d];
            for g in 0..groups {
                let row = i * groups + g;
                let a = wv[row];
                for (o, x) in dst.iter_mut().zip(&vv[row * d..(row + 1) * d]) {
                    *o += a * x;
                }
            }
        }
        let rg = self.rg(w.0) || self.rg(v.0);
        Ok(self.push(b, d, out, Op::GroupWeightedSum { w: w.0, v: v.0, groups }, rg))
    }

    /// `x * w + b` for `w: [in, out]`, `b: [1, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    /// Reverse sweep from the scalar `loss`. Its own adjoint is seeded with 1.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != [1, 1] {
            return Err(AutodiffError::NonScalarLoss { shape });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.backprop_node(i, &g, &mut grads);
            }
            // Interior adjoints are dead once propagated; freeing them lets
            // the allocator hand the memory straight back to later nodes.
            if i == loss.0 || matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        macro_rules! acc {
            ($j:expr, |$buf:ident| $body:block) => {
                if let Some($buf) = grad_slot(nodes, grads, $j) {
                    $body
                }
            };
        }
        let val = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[*a].rows, nodes[*a].cols);
                let n = nodes[*b].cols;
                acc!(*a, |da| {
                    gemm(m, n, k, g, (n as isize, 1), &nodes[*b].value, (1, n as isize), 1.0, da);
                });
                acc!(*b, |db| {
                    gemm(k, m, n, &nodes[*a].value, (1, k as isize), g, (n as isize, 1), 1.0, db);
                });
            }
            Op::Add(a, b) => {
                acc!(*a, |da| {
                    da.iter_mut().zip(g).for_each(|(d, x)| *d += x);
                });
                acc!(*b, |db| {
                    db.iter_mut().zip(g).for_each(|(d, x)| *d += x);
                });
            }
            Op::Sub(a, b) => {
                acc!(*a, |da| {
                    da.iter_mut().zip(g).for_each(|(d, x)| *d += x);
                });
                acc!(*b, |db| {
                    db.iter_mut().zip(g).for_each(|(d, x)| *d -= x);
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                acc!(*a, |da| {
                    for (t, d) in da.iter_mut().enumerate() {
                        *d += g[t] * bv[t];
                    }
                });
                acc!(*b, |db| {
                    for (t, d) in db.iter_mut().enumerate() {
                        *d += g[t] * av[t];
                    }
                });
            }
            Op::Min(a, b) => {
                let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                acc!(*a, |da| {
                    for (t, d) in da.iter_mut().enumerate() {
                        if av[t] <= bv[t] {
                            *d += g[t];
                        }
                    }
                });
                acc!(*b, |db| {
                    for (t, d) in db.iter_mut().enumerate() {
                        if av[t] > bv[t] {
                            *d += g[t];
                        }
                    }
                });
            }
            Op::AddRow(a, b) => {
                let n = node.cols;
                acc!(*a, |da| {
                    da.iter_mut().zip(g).for_each(|(d, x)| *d += x);
                });
                acc!(*b, |db| {
                    for row in g.chunks_exact(n.max(1)) {
                        db.iter_mut().zip(row).for_each(|(d, x)| *d += x);
                    }
                });
            }
            Op::MulScalarVar(a, s) => {
                let k = nodes[*s].value[0];
                let av = &nodes[*a].value;
                acc!(*a, |da| {
                    da.iter_mut().zip(g).for_each(|(d, x)| *d += x * k);
                });
                acc!(*s, |ds| {
                    ds[0] += g.iter().zip(av).map(|(x, y)| x * y).sum::<f64>();
                });
            }
            Op::Relu(a) => {
                let av = &nodes[*a].value;
                acc!(*a, |da| {
                    for (t, d) in da.iter_mut().enumerate() {
                        if av[t] > 0.0 {
                            *d += g[t];
                        }
                    }
                });
            }
            Op::Tanh(a) => acc!(*a, |da| {
                for (t, d) in da.iter_mut().enumerate() {
                    *d += g[t] * (1.0 - val[t] * val[t]);
                }
            }),
            Op::Exp(a) => acc!(*a, |da| {
                for (t, d) in da.iter_mut().enumerate() {
                    *d += g[t] * val[t];
                }
            }),
            Op::Log(a) => {
                let av = &nodes[*a].value;
                acc!(*a, |da| {
                    for (t, d) in da.iter_mut().enumerate() {
                        *d += g[t] / av[t];
                    }
                });
            }
            Op::Softplus(a) => {
                let av = &nodes[*a].value;
                acc!(*a, |da| {
                    for (t, d) in da.iter_mut().enumerate() {
                        *d += g[t] * sigmoid(av[t]);
                    }
                });
            }
            Op::Square(a) => {
                let av = &nodes[*a].value;
                acc!(*a, |da| {
                    for (t, d) in da.iter_mut().enumerate() {
                        *d += 2.0 * g[t] * av[t];
                    }
                });
            }
            Op::Scale(a, k) => acc!(*a, |da| {
                da.iter_mut().zip(g).for_each(|(d, x)| *d += x * k);
            }),
            Op::AddScalar(a) => acc!(*a, |da| {
                da.iter_mut().zip(g).for_each(|(d, x)| *d += x);
            }),
            Op::Clamp(a, lo, hi) => {
                let av = &nodes[*a].value;
                acc!(*a, |da| {
                    for (t, d) in da.iter_mut().enumerate() {
                        if av[t] >= *lo && av[t] <= *hi {
                            *d += g[t];
                        }
                    }
                });
            }
            Op::Sum(a) => acc!(*a, |da| {
                da.iter_mut().for_each(|d| *d += g[0]);
            }),
            Op::Mean(a) => acc!(*a, |da| {
                let s = g[0] / da.len() as f64;
                da.iter_mut().for_each(|d| *d += s);
            }),
            Op::RowSum(a) => {
                let c = nodes[*a].cols;
                acc!(*a, |da| {
                    for (t, d) in da.iter_mut().enumerate() {
                        *d += g[t / c];
                    }
                });
            }
            Op::Softmax(a) => {
                let c = node.cols;
                acc!(*a, |da| {
                    for r in 0..node.rows {
                        let y = &val[r * c..(r + 1) * c];
                        let gr = &g[r * c..(r + 1) * c];
                        let dot: f64 = y.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for j in 0..c {
                            da[r * c + j] += y[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let c = node.cols;
                let gv = &nodes[*gain].value;
                acc!(*gain, |dg| {
                    for (t, x) in g.iter().enumerate() {
                        dg[t % c] += x * xhat[t];
                    }
                });
                acc!(*bias, |db| {
                    for (t, x) in g.iter().enumerate() {
                        db[t % c] += x;
                    }
                });
                acc!(*x, |dx| {
                    let mut dxhat = vec![0.0; c];
                    for r in 0..node.rows {
                        let off = r * c;
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..c {
                            dxhat[j] = g[off + j] * gv[j];
                            m1 += dxhat[j];
                            m2 += dxhat[j] * xhat[off + j];
                        }
                        m1 /= c as f64;
                        m2 /= c as f64;
                        for j in 0..c {
                            dx[off + j] += rstd[r] * (dxhat[j] - m1 - xhat[off + j] * m2);
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.cols;
                let mut off = 0;
                for &p in parts {
                    let w = nodes[p].cols;
                    acc!(p, |dp| {
                        for r in 0..node.rows {
                            for j in 0..w {
                                dp[r * w + j] += g[r * total + off + j];
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::SliceCols(a, start) => {
                let c = nodes[*a].cols;
                let w = node.cols;
                acc!(*a, |da| {
                    for r in 0..node.rows {
                        for j in 0..w {
                            da[r * c + start + j] += g[r * w + j];
                        }
                    }
                });
            }
            Op::GroupDot { q, k, groups } => {
                let d = nodes[*q].cols;
                let (qv, kv) = (&nodes[*q].value, &nodes[*k].value);
                let b = nodes[*q].rows;
                acc!(*q, |dq| {
                    for i in 0..b {
                        for gi in 0..*groups {
                            let row = i * groups + gi;
                            let s = g[row];
                            for c in 0..d {
                                dq[i * d + c] += s * kv[row * d + c];
                            }
                        }
                    }
                });
                acc!(*k, |dk| {
                    for i in 0..b {
                        for gi in 0..*groups {
                            let row = i * groups + gi;
                            let s = g[row];
                            for c in 0..d {
                                dk[row * d + c] += s * qv[i * d + c];
                            }
                        }
                    }
                });
            }
            Op::GroupWeightedSum { w, v, groups } => {
                let d = nodes[*v].cols;
                let (wv, vv) = (&nodes[*w].value, &nodes[*v].value);
                let b = nodes[*w].rows;
                acc!(*w, |dw| {
                    for i in 0..b {
                        let gr = &g[i * d..(i + 1) * d];
                        for gi in 0..*groups {
                            let row = i * groups + gi;
                            dw[row] += gr.iter().zip(&vv[row * d..(row + 1) * d]).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc!(*v, |dv| {
                    for i in 0..b {
                        for gi in 0..*groups {
                            let row = i * groups + gi;
                            let a = wv[row];
                            for c in 0..d {
                                dv[row * d + c] += a * g[i * d + c];
                            }
                        }
                    }
                });
            }
        }
    }
}
