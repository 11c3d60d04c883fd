//! Reverse-mode differentiation over a per-pass tape.
//!
//! A [`Tape`] records every operation of one forward pass as a node in an
//! append-only arena, so the graph is acyclic by construction. [`Var`] is a
//! cheap handle into that arena. Calling [`Tape::backward`] on a scalar node
//! walks the arena in reverse and accumulates gradients into the leaves.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{matmul_at_into, matmul_bt_into, matmul_into, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
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
    Scale(Var, f64),
    MulScalar(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Transpose(Var),
    Exp(Var),
    Log(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    L2NormalizeRows(Var, f64),
    LayerNormRows(Var, f64),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    PoolRows(Var, Vec<Vec<usize>>),
    PairRotate(Var, Var, f64),
    Sum(Var),
    MaskedLogSumExpRows(Var, Vec<bool>),
    Pick(Var, Vec<(usize, usize)>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradient tape for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

fn shape_err(what: &str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape(alloc::format!(
        "{what}: [{}, {}] vs [{}, {}]",
        a.rows(),
        a.cols(),
        b.rows(),
        b.cols()
    ))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(
            value.is_finite() || !cfg!(feature = "nan-check"),
            "non-finite value produced by {op:?}"
        );
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A trainable input whose gradient is collected by [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn zero_grad(&mut self) {
        self.grads.clear();
    }

    fn same_shape(&self, what: &str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(what, ta, tb));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.rows(), ta.cols(), data).expect("shape preserved")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| f(*x)).collect();
        Tensor::new(ta.rows(), ta.cols(), data).expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_map(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_map(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_map(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    /// Multiplication by a fixed constant.
    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.map(a, |x| x * k);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, k), rg)
    }

    /// `a · s` where `s` is a `1 × 1` node.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let ts = self.value(s);
        if ts.shape() != [1, 1] {
            return Err(shape_err("mul_scalar expects a 1x1 scalar", self.value(a), ts));
        }
        let k = ts.item();
        let v = self.map(a, |x| x * k);
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(v, Op::MulScalar(a, s), rg))
    }

    /// `x + b` with the `1 × n` row `b` broadcast over every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        if tb.rows() != 1 || tb.cols() != tx.cols() {
            return Err(shape_err("add_row", tx, tb));
        }
        let mut v = tx.clone();
        for r in 0..v.rows() {
            for (o, bv) in v.row_mut(r).iter_mut().zip(tb.data()) {
                *o += bv;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(v, Op::AddRow(x, b), rg))
    }

    /// `x ⊙ g` with the `1 × n` row `g` broadcast over every row of `x`.
    pub fn mul_row(&mut self, x: Var, g: Var) -> Result<Var> {
        let (tx, tg) = (self.value(x), self.value(g));
        if tg.rows() != 1 || tg.cols() != tx.cols() {
            return Err(shape_err("mul_row", tx, tg));
        }
        let mut v = tx.clone();
        for r in 0..v.rows() {
            for (o, gv) in v.row_mut(r).iter_mut().zip(tg.data()) {
                *o *= gv;
            }
        }
        let rg = self.rg(x) || self.rg(g);
        Ok(self.push(v, Op::MulRow(x, g), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` without materialising the transpose.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(shape_err("matmul_bt inner dimensions disagree", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
        let mut out = vec![0.0; m * n];
        matmul_bt_into(ta.data(), tb.data(), &mut out, m, k, n);
        let v = Tensor::new(m, n, out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::MatMulBt(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(v, Op::Transpose(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.map(a, libm::exp);
        let rg = self.rg(a);
        self.push(v, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.map(a, libm::log);
        let rg = self.rg(a);
        self.push(v, Op::Log(a), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.map(a, |x| 0.5 * x * (1.0 + libm::tanh(GELU_C * (x + GELU_A * x * x * x))));
        let rg = self.rg(a);
        self.push(v, Op::Gelu(a), rg)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            softmax_in_place(v.row_mut(r));
        }
        let rg = self.rg(a);
        self.push(v, Op::SoftmaxRows(a), rg)
    }

    /// Scales each row to unit norm; rows with norm below `eps` are divided by `eps`.
    pub fn l2_normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let n = crate::tensor::norm(row).max(eps);
            for x in row {
                *x /= n;
            }
        }
        let rg = self.rg(a);
        self.push(v, Op::L2NormalizeRows(a, eps), rg)
    }

    /// Per-row standardisation (no affine parameters).
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let inv = 1.0 / libm::sqrt(var + eps);
            for x in row {
                *x = (*x - mean) * inv;
            }
        }
        let rg = self.rg(a);
        self.push(v, Op::LayerNormRows(a, eps), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map_or(0, |p| self.value(*p).cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = self.value(*p);
            if t.cols() != cols {
                return Err(shape_err("concat_rows", self.value(parts[0]), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let v = Tensor::new(rows, cols, data)?;
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(v, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |p| self.value(*p).rows());
        let mut cols = 0;
        for p in parts {
            let t = self.value(*p);
            if t.rows() != rows {
                return Err(shape_err("concat_cols", self.value(parts[0]), t));
            }
            cols += t.cols();
        }
        let mut v = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            let t = self.value(*p);
            for r in 0..rows {
                v.row_mut(r)[offset..offset + t.cols()].copy_from_slice(t.row(r));
            }
            offset += t.cols();
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        assert!(start + len <= t.rows(), "slice_rows out of range");
        let data = t.data()[start * t.cols()..(start + len) * t.cols()].to_vec();
        let v = Tensor::new(len, t.cols(), data).expect("slice shape");
        let rg = self.rg(a);
        self.push(v, Op::SliceRows(a, start), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        assert!(start + len <= t.cols(), "slice_cols out of range");
        let mut data = Vec::with_capacity(t.rows() * len);
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        let v = Tensor::new(t.rows(), len, data).expect("slice shape");
        let rg = self.rg(a);
        self.push(v, Op::SliceCols(a, start), rg)
    }

    /// Embedding lookup. The backward pass scatter-adds into the table.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Var {
        let t = self.value(table);
        let mut data = Vec::with_capacity(indices.len() * t.cols());
        for &i in indices {
            data.extend_from_slice(t.row(i));
        }
        let v = Tensor::new(indices.len(), t.cols(), data).expect("gather shape");
        let rg = self.rg(table);
        self.push(v, Op::GatherRows(table, indices.to_vec()), rg)
    }

    /// Mean over each group of row positions; one output row per group.
    /// An empty group yields a zero row.
    pub fn pool_rows(&mut self, a: Var, groups: &[Vec<usize>]) -> Var {
        let t = self.value(a);
        let mut v = Tensor::zeros(groups.len(), t.cols());
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            let k = 1.0 / members.len() as f64;
            let out = v.row_mut(g);
            for &m in members {
                for (o, x) in out.iter_mut().zip(t.row(m)) {
                    *o += x * k;
                }
            }
        }
        let rg = self.rg(a);
        self.push(v, Op::PoolRows(a, groups.to_vec()), rg)
    }

    /// Mean over the positions where `mask` is true, as a `1 × n` row.
    pub fn masked_mean_rows(&mut self, a: Var, mask: &[bool]) -> Var {
        let members = mask.iter().enumerate().filter_map(|(i, m)| m.then_some(i)).collect();
        self.pool_rows(a, &[members])
    }

    /// Treats consecutive column pairs as complex numbers and multiplies each
    /// row of `x` by the phase of the matching row of `phase`
    /// (pairs of `phase` are renormalised to unit modulus first).
    pub fn pair_rotate(&mut self, x: Var, phase: Var, eps: f64) -> Result<Var> {
        self.same_shape("pair_rotate", x, phase)?;
        let (tx, tp) = (self.value(x), self.value(phase));
        if tx.cols() % 2 != 0 {
            return Err(Error::Shape(alloc::format!(
                "pair_rotate needs an even width, got {}",
                tx.cols()
            )));
        }
        let mut v = Tensor::zeros(tx.rows(), tx.cols());
        for r in 0..tx.rows() {
            let (xr, pr) = (tx.row(r), tp.row(r));
            let out = v.row_mut(r);
            for k in 0..xr.len() / 2 {
                let (a, b) = (xr[2 * k], xr[2 * k + 1]);
                let (u, w) = unit_phase(pr[2 * k], pr[2 * k + 1], eps);
                out[2 * k] = a * u - b * w;
                out[2 * k + 1] = a * w + b * u;
            }
        }
        let rg = self.rg(x) || self.rg(phase);
        Ok(self.push(v, Op::PairRotate(x, phase, eps), rg))
    }

    /// Sum of all elements as a `1 × 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(v, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Row-wise `log Σ exp` over the entries where `include` is true
    /// (`include` is row-major with the same shape as `a`). Output is `m × 1`.
    /// A row with nothing included evaluates to `-inf` and passes no gradient.
    pub fn masked_logsumexp_rows(&mut self, a: Var, include: &[bool]) -> Result<Var> {
        let t = self.value(a);
        if include.len() != t.len() {
            return Err(Error::Shape(alloc::format!(
                "mask length {} does not match [{}, {}]",
                include.len(),
                t.rows(),
                t.cols()
            )));
        }
        let mut out = Vec::with_capacity(t.rows());
        for r in 0..t.rows() {
            let row = t.row(r);
            let mask = &include[r * t.cols()..(r + 1) * t.cols()];
            out.push(masked_lse(row, mask));
        }
        let v = Tensor::new(t.rows(), 1, out)?;
        let rg = self.rg(a);
        Ok(self.push(v, Op::MaskedLogSumExpRows(a, include.to_vec()), rg))
    }

    /// Extracts the listed `(row, col)` entries as a `k × 1` column.
    pub fn pick(&mut self, a: Var, at: &[(usize, usize)]) -> Var {
        let t = self.value(a);
        let data = at.iter().map(|&(r, c)| t.get(r, c)).collect();
        let v = Tensor::new(at.len(), 1, data).expect("pick shape");
        let rg = self.rg(a);
        self.push(v, Op::Pick(a, at.to_vec()), rg)
    }

    /// Reverse pass from a scalar root. Leaf gradients accumulate across calls
    /// until [`Tape::zero_grad`].
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let shape = self.value(root).shape();
        if shape != [1, 1] {
            return Err(Error::NonScalarRoot(shape[0], shape[1]));
        }
        let n = self.nodes.len();
        if self.grads.len() < n {
            self.grads.resize(n, None);
        }
        let mut tmp: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        tmp[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = tmp[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match &mut self.grads[i] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut tmp);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, tmp: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        let val = |v: Var| &nodes[v.0].value;
        let wants = |v: Var| nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut Tensor)| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = &mut tmp[v.0];
            let t = slot.get_or_insert_with(|| {
                let s = nodes[v.0].value.shape();
                Tensor::zeros(s[0], s[1])
            });
            f(t);
        };

        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |t| t.add_assign(g));
                acc(*b, &mut |t| t.add_assign(g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |t| t.add_assign(g));
                acc(*b, &mut |t| {
                    for (o, x) in t.data_mut().iter_mut().zip(g.data()) {
                        *o -= x;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                acc(*a, &mut |t| {
                    for ((o, gv), bv) in t.data_mut().iter_mut().zip(g.data()).zip(tb.data()) {
                        *o += gv * bv;
                    }
                });
                acc(*b, &mut |t| {
                    for ((o, gv), av) in t.data_mut().iter_mut().zip(g.data()).zip(ta.data()) {
                        *o += gv * av;
                    }
                });
            }
            Op::Scale(a, k) => acc(*a, &mut |t| {
                for (o, gv) in t.data_mut().iter_mut().zip(g.data()) {
                    *o += gv * k;
                }
            }),
            Op::MulScalar(a, s) => {
                let k = val(*s).item();
                let ta = val(*a);
                acc(*a, &mut |t| {
                    for (o, gv) in t.data_mut().iter_mut().zip(g.data()) {
                        *o += gv * k;
                    }
                });
                if wants(*s) {
                    let d: f64 = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).sum();
                    acc(*s, &mut |t| t.data_mut()[0] += d);
                }
            }
            Op::AddRow(x, b) => {
                acc(*x, &mut |t| t.add_assign(g));
                acc(*b, &mut |t| {
                    for r in 0..g.rows() {
                        for (o, gv) in t.data_mut().iter_mut().zip(g.row(r)) {
                            *o += gv;
                        }
                    }
                });
            }
            Op::MulRow(x, gain) => {
                let (tx, tg) = (val(*x), val(*gain));
                acc(*x, &mut |t| {
                    for r in 0..g.rows() {
                        let row = t.row_mut(r);
                        for ((o, gv), s) in row.iter_mut().zip(g.row(r)).zip(tg.data()) {
                            *o += gv * s;
                        }
                    }
                });
                acc(*gain, &mut |t| {
                    for r in 0..g.rows() {
                        for ((o, gv), xv) in t.data_mut().iter_mut().zip(g.row(r)).zip(tx.row(r)) {
                            *o += gv * xv;
                        }
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                // dA = G · Bᵀ, dB = Aᵀ · G
                acc(*a, &mut |t| matmul_bt_into(g.data(), tb.data(), t.data_mut(), m, n, k));
                acc(*b, &mut |t| matmul_at_into(ta.data(), g.data(), t.data_mut(), m, k, n));
            }
            Op::MatMulBt(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                // out = A · Bᵀ: dA = G · B, dB = Gᵀ · A
                acc(*a, &mut |t| matmul_into(g.data(), tb.data(), t.data_mut(), m, n, k));
                acc(*b, &mut |t| matmul_at_into(g.data(), ta.data(), t.data_mut(), m, n, k));
            }
            Op::Transpose(a) => {
                let gt = g.transpose();
                acc(*a, &mut |t| t.add_assign(&gt));
            }
            Op::Exp(a) => acc(*a, &mut |t| {
                for ((o, gv), y) in t.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                    *o += gv * y;
                }
            }),
            Op::Log(a) => {
                let ta = val(*a);
                acc(*a, &mut |t| {
                    for ((o, gv), x) in t.data_mut().iter_mut().zip(g.data()).zip(ta.data()) {
                        *o += gv / x;
                    }
                });
            }
            Op::Gelu(a) => {
                let ta = val(*a);
                acc(*a, &mut |t| {
                    for ((o, gv), &x) in t.data_mut().iter_mut().zip(g.data()).zip(ta.data()) {
                        let th = libm::tanh(GELU_C * (x + GELU_A * x * x * x));
                        let d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        *o += gv * d;
                    }
                });
            }
            Op::SoftmaxRows(a) => acc(*a, &mut |t| {
                for r in 0..g.rows() {
                    let (gr, yr) = (g.row(r), out.row(r));
                    let inner: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                    for ((o, gv), y) in t.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *o += y * (gv - inner);
                    }
                }
            }),
            Op::L2NormalizeRows(a, eps) => {
                let ta = val(*a);
                acc(*a, &mut |t| {
                    for r in 0..g.rows() {
                        let n = crate::tensor::norm(ta.row(r));
                        let (gr, yr) = (g.row(r), out.row(r));
                        if n < *eps {
                            for (o, gv) in t.row_mut(r).iter_mut().zip(gr) {
                                *o += gv / eps;
                            }
                            continue;
                        }
                        let inner: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                        for ((o, gv), y) in t.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *o += (gv - y * inner) / n;
                        }
                    }
                });
            }
            Op::LayerNormRows(a, eps) => {
                let ta = val(*a);
                acc(*a, &mut |t| {
                    for r in 0..g.rows() {
                        let x = ta.row(r);
                        let n = x.len() as f64;
                        let mean = x.iter().sum::<f64>() / n;
                        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let inv = 1.0 / libm::sqrt(var + eps);
                        let (gr, yr) = (g.row(r), out.row(r));
                        let g_mean = gr.iter().sum::<f64>() / n;
                        let gy_mean = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                        for ((o, gv), y) in t.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *o += inv * (gv - g_mean - y * gy_mean);
                        }
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let rows = val(*p).rows();
                    let cols = g.cols();
                    acc(*p, &mut |t| {
                        for (o, gv) in t
                            .data_mut()
                            .iter_mut()
                            .zip(&g.data()[start * cols..(start + rows) * cols])
                        {
                            *o += gv;
                        }
                    });
                    start += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let cols = val(*p).cols();
                    acc(*p, &mut |t| {
                        for r in 0..g.rows() {
                            for (o, gv) in t.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + cols]) {
                                *o += gv;
                            }
                        }
                    });
                    offset += cols;
                }
            }
            Op::SliceRows(a, start) => acc(*a, &mut |t| {
                let cols = g.cols();
                for (o, gv) in t.data_mut()[start * cols..].iter_mut().zip(g.data()) {
                    *o += gv;
                }
            }),
            Op::SliceCols(a, start) => acc(*a, &mut |t| {
                for r in 0..g.rows() {
                    for (o, gv) in t.row_mut(r)[*start..].iter_mut().zip(g.row(r)) {
                        *o += gv;
                    }
                }
            }),
            Op::GatherRows(table, idx) => acc(*table, &mut |t| {
                for (k, &i) in idx.iter().enumerate() {
                    for (o, gv) in t.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += gv;
                    }
                }
            }),
            Op::PoolRows(a, groups) => acc(*a, &mut |t| {
                for (gi, members) in groups.iter().enumerate() {
                    if members.is_empty() {
                        continue;
                    }
                    let k = 1.0 / members.len() as f64;
                    for &m in members {
                        for (o, gv) in t.row_mut(m).iter_mut().zip(g.row(gi)) {
                            *o += gv * k;
                        }
                    }
                }
            }),
            Op::PairRotate(x, phase, eps) => {
                let (tx, tp) = (val(*x), val(*phase));
                acc(*x, &mut |t| {
                    for r in 0..g.rows() {
                        let (gr, pr) = (g.row(r), tp.row(r));
                        let row = t.row_mut(r);
                        for k in 0..gr.len() / 2 {
                            let (u, w) = unit_phase(pr[2 * k], pr[2 * k + 1], *eps);
                            let (g0, g1) = (gr[2 * k], gr[2 * k + 1]);
                            row[2 * k] += g0 * u + g1 * w;
                            row[2 * k + 1] += -g0 * w + g1 * u;
                        }
                    }
                });
                acc(*phase, &mut |t| {
                    for r in 0..g.rows() {
                        let (gr, xr, pr) = (g.row(r), tx.row(r), tp.row(r));
                        let row = t.row_mut(r);
                        for k in 0..gr.len() / 2 {
                            let (c, d) = (pr[2 * k], pr[2 * k + 1]);
                            let rho = libm::sqrt(c * c + d * d);
                            let (u, w) = unit_phase(c, d, *eps);
                            let (a, b) = (xr[2 * k], xr[2 * k + 1]);
                            let (g0, g1) = (gr[2 * k], gr[2 * k + 1]);
                            let gu = g0 * a + g1 * b;
                            let gw = -g0 * b + g1 * a;
                            if rho < *eps {
                                row[2 * k] += gu / eps;
                                row[2 * k + 1] += gw / eps;
                            } else {
                                let inner = gu * u + gw * w;
                                row[2 * k] += (gu - u * inner) / rho;
                                row[2 * k + 1] += (gw - w * inner) / rho;
                            }
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let gv = g.item();
                acc(*a, &mut |t| {
                    for o in t.data_mut() {
                        *o += gv;
                    }
                });
            }
            Op::MaskedLogSumExpRows(a, include) => {
                let ta = val(*a);
                acc(*a, &mut |t| {
                    let cols = ta.cols();
                    for r in 0..ta.rows() {
                        let lse = out.get(r, 0);
                        if lse == f64::NEG_INFINITY {
                            continue;
                        }
                        let gr = g.get(r, 0);
                        let mask = &include[r * cols..(r + 1) * cols];
                        for ((o, x), m) in t.row_mut(r).iter_mut().zip(ta.row(r)).zip(mask) {
                            if *m {
                                *o += gr * libm::exp(x - lse);
                            }
                        }
                    }
                });
            }
            Op::Pick(a, at) => acc(*a, &mut |t| {
                for (k, &(r, c)) in at.iter().enumerate() {
                    let cols = t.cols();
                    t.data_mut()[r * cols + c] += g.data()[k];
                }
            }),
        }
    }
}

fn unit_phase(c: f64, d: f64, eps: f64) -> (f64, f64) {
    let rho = libm::sqrt(c * c + d * d).max(eps);
    (c / rho, d / rho)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = libm::exp(*x - max);
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

pub(crate) fn masked_lse(row: &[f64], mask: &[bool]) -> f64 {
    let max = row
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(x, _)| *x)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let s: f64 = row
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(x, _)| libm::exp(x - max))
        .sum();
    max + libm::log(s)
}
