//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its output value. [`Tape::backward`] walks the nodes in reverse creation
//! order and accumulates exact analytic gradients into every node that
//! requires them; leaf gradients end up in the leaf tensor's `grad` buffer.
//!
//! All operands are treated as matrices: a tensor with dims `[.., c]` is a
//! `rows × c` matrix and a 1-D tensor is a single row. Gradient flow is
//! pruned at nodes whose inputs are all constants.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::scalar::{lit, Scalar};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    ConcatCols(Var, Var),
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>),
    Relu(Var),
    LeakyRelu(Var, T),
    Tanh(Var),
    Exp(Var),
    GroupedSoftmax(Var, Arc<[usize]>),
    SegmentMax(Var, Vec<usize>),
    MulHeads(Var, Var),
    BlockSum(Var, usize),
    ScaleRows(Var, Arc<[T]>),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        probs: Vec<T>,
        labels: Arc<[i64]>,
        count: usize,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Recorded computation graph for one forward pass.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn shape_err<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Error {
    Error::Shape {
        op,
        left: a.dims().to_vec(),
        right: b.dims().to_vec(),
    }
}

fn matrix<T: Scalar>(rows: usize, cols: usize, data: Vec<T>) -> Tensor<T> {
    Tensor::new(vec![rows, cols], data).expect("internal dims")
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a constant; no gradient is tracked for it.
    pub fn constant(&mut self, mut value: Tensor<T>) -> Var {
        value.requires_grad = false;
        value.grad = None;
        self.push_raw(value, Op::Leaf)
    }

    /// Adds a differentiable leaf.
    pub fn variable(&mut self, mut value: Tensor<T>) -> Var {
        value.requires_grad = true;
        value.grad = None;
        self.push_raw(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, mut value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        value.requires_grad = inputs.iter().any(|v| self.nodes[v.0].value.requires_grad);
        self.push_raw(value, op)
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.val(a), self.val(b));
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        if bv.rows() != k {
            return Err(shape_err("matmul", av, bv));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, av.data(), (k as isize, 1), bv.data(), (n as isize, 1), T::zero(), &mut out);
        Ok(self.push(matrix(m, n, out), Op::MatMul(a, b), &[a, b]))
    }

    fn zip(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let (av, bv) = (self.val(a), self.val(b));
        if av.dims() != bv.dims() {
            return Err(shape_err(op_name, av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(av.dims().to_vec(), data)?;
        Ok(self.push(t, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `x + bias` with `bias` broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.val(x), self.val(bias));
        let n = xv.cols();
        if bv.len() != n {
            return Err(shape_err("add_row", xv, bv));
        }
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let t = matrix(xv.rows(), n, data);
        Ok(self.push(t, Op::AddRow(x, bias), &[x, bias]))
    }

    /// `x * v` with `v` broadcast over rows.
    pub fn mul_row(&mut self, x: Var, v: Var) -> Result<Var> {
        let (xv, vv) = (self.val(x), self.val(v));
        let n = xv.cols();
        if vv.len() != n {
            return Err(shape_err("mul_row", xv, vv));
        }
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            for (o, &s) in row.iter_mut().zip(vv.data()) {
                *o *= s;
            }
        }
        let t = matrix(xv.rows(), n, data);
        Ok(self.push(t, Op::MulRow(x, v), &[x, v]))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let xv = self.val(x);
        let data = xv.data().iter().map(|&a| a * s).collect();
        let t = Tensor::new(xv.dims().to_vec(), data).unwrap();
        self.push(t, Op::Scale(x, s), &[x])
    }

    /// Column-wise concatenation `[a | b]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.val(a), self.val(b));
        if av.rows() != bv.rows() {
            return Err(shape_err("concat_cols", av, bv));
        }
        let (p, q) = (av.cols(), bv.cols());
        let mut data = Vec::with_capacity(av.rows() * (p + q));
        for r in 0..av.rows() {
            data.extend_from_slice(av.row(r));
            data.extend_from_slice(bv.row(r));
        }
        let t = matrix(av.rows(), p + q, data);
        Ok(self.push(t, Op::ConcatCols(a, b), &[a, b]))
    }

    /// Selects rows `index[e]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: Arc<[usize]>) -> Result<Var> {
        let xv = self.val(x);
        let n = xv.cols();
        let mut data = Vec::with_capacity(index.len() * n);
        for &r in index.iter() {
            if r >= xv.rows() {
                return Err(Error::Shape {
                    op: "gather_rows",
                    left: xv.dims().to_vec(),
                    right: vec![r],
                });
            }
            data.extend_from_slice(xv.row(r));
        }
        let t = matrix(index.len(), n, data);
        Ok(self.push(t, Op::GatherRows(x, index), &[x]))
    }

    /// Sums row `e` of `x` into output row `index[e]`; output has `rows` rows.
    pub fn scatter_add_rows(&mut self, x: Var, index: Arc<[usize]>, rows: usize) -> Result<Var> {
        let xv = self.val(x);
        if xv.rows() != index.len() {
            return Err(Error::Shape {
                op: "scatter_add_rows",
                left: xv.dims().to_vec(),
                right: vec![index.len()],
            });
        }
        let n = xv.cols();
        let mut data = vec![T::zero(); rows * n];
        for (e, &r) in index.iter().enumerate() {
            if r >= rows {
                return Err(Error::Shape {
                    op: "scatter_add_rows",
                    left: vec![rows, n],
                    right: vec![r],
                });
            }
            for (o, &s) in data[r * n..(r + 1) * n].iter_mut().zip(xv.row(e)) {
                *o += s;
            }
        }
        let t = matrix(rows, n, data);
        Ok(self.push(t, Op::ScatterAddRows(x, index), &[x]))
    }

    fn map(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let xv = self.val(x);
        let data = xv.data().iter().map(|&a| f(a)).collect();
        let t = Tensor::new(xv.dims().to_vec(), data).unwrap();
        self.push(t, op, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |a| if a > T::zero() { a } else { T::zero() }, Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        self.map(x, move |a| if a > T::zero() { a } else { a * slope }, Op::LeakyRelu(x, slope))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let two = lit::<T>(2.0);
        self.map(
            x,
            move |a| {
                let t = (-two * a.abs()).exp();
                ((T::one() - t) / (T::one() + t)).copysign(a)
            },
            Op::Tanh(x),
        )
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, |a| a.exp(), Op::Exp(x))
    }

    /// Softmax over the rows sharing a group id, independently per column.
    ///
    /// Groups without members produce no output; the max is subtracted per
    /// group for stability.
    pub fn grouped_softmax(&mut self, x: Var, group_of: Arc<[usize]>) -> Result<Var> {
        let xv = self.val(x);
        if xv.rows() != group_of.len() {
            return Err(Error::Shape {
                op: "grouped_softmax",
                left: xv.dims().to_vec(),
                right: vec![group_of.len()],
            });
        }
        let data = grouped_softmax_values(xv.data(), xv.cols(), &group_of);
        let t = matrix(xv.rows(), xv.cols(), data);
        Ok(self.push(t, Op::GroupedSoftmax(x, group_of), &[x]))
    }

    /// Per-group, per-column max over rows. Ties go to the lowest row.
    pub fn segment_max(&mut self, x: Var, segment_of: &[usize], groups: usize) -> Result<Var> {
        let xv = self.val(x);
        if xv.rows() != segment_of.len() {
            return Err(Error::Shape {
                op: "segment_max",
                left: xv.dims().to_vec(),
                right: vec![segment_of.len()],
            });
        }
        let c = xv.cols();
        let mut arg = vec![usize::MAX; groups * c];
        let mut out = vec![T::zero(); groups * c];
        for (p, &g) in segment_of.iter().enumerate() {
            if g >= groups {
                return Err(Error::ContractViolation(format!(
                    "segment id {g} out of range for {groups} groups"
                )));
            }
            let row = xv.row(p);
            for ch in 0..c {
                let slot = g * c + ch;
                if arg[slot] == usize::MAX || row[ch] > out[slot] {
                    arg[slot] = p;
                    out[slot] = row[ch];
                }
            }
        }
        if c > 0 {
            if let Some(g) = (0..groups).find(|&g| arg[g * c] == usize::MAX) {
                return Err(Error::ContractViolation(format!("segment_max: group {g} is empty")));
            }
        }
        let t = matrix(groups, c, out);
        Ok(self.push(t, Op::SegmentMax(x, arg), &[x]))
    }

    /// Scales column block `h` of each row of `x` by `w[row, h]`.
    ///
    /// `x` is `rows × (heads·d)` and `w` is `rows × heads`.
    pub fn mul_heads(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.val(x), self.val(w));
        let heads = wv.cols();
        if xv.rows() != wv.rows() || heads == 0 || xv.cols() % heads != 0 {
            return Err(shape_err("mul_heads", xv, wv));
        }
        let d = xv.cols() / heads;
        let mut data = xv.data().to_vec();
        if d > 0 {
            for (row, w) in data.chunks_mut(xv.cols()).zip(wv.data().chunks(heads)) {
                for (block, &s) in row.chunks_mut(d).zip(w) {
                    block.iter_mut().for_each(|o| *o *= s);
                }
            }
        }
        let t = matrix(xv.rows(), xv.cols(), data);
        Ok(self.push(t, Op::MulHeads(x, w), &[x, w]))
    }

    /// Sums each row's `heads` contiguous column blocks: `rows × heads`.
    pub fn block_sum(&mut self, x: Var, heads: usize) -> Result<Var> {
        let xv = self.val(x);
        if heads == 0 || xv.cols() % heads != 0 {
            return Err(Error::Shape {
                op: "block_sum",
                left: xv.dims().to_vec(),
                right: vec![heads],
            });
        }
        let d = xv.cols() / heads;
        let mut data = Vec::with_capacity(xv.rows() * heads);
        for r in 0..xv.rows() {
            for chunk in xv.row(r).chunks(d) {
                data.push(chunk.iter().copied().sum());
            }
        }
        let t = matrix(xv.rows(), heads, data);
        Ok(self.push(t, Op::BlockSum(x, heads), &[x]))
    }

    /// Multiplies row `r` by the constant `factors[r]`.
    pub fn scale_rows(&mut self, x: Var, factors: Arc<[T]>) -> Result<Var> {
        let xv = self.val(x);
        if xv.rows() != factors.len() {
            return Err(Error::Shape {
                op: "scale_rows",
                left: xv.dims().to_vec(),
                right: vec![factors.len()],
            });
        }
        let n = xv.cols();
        let mut data = xv.data().to_vec();
        for (row, &f) in data.chunks_mut(n.max(1)).zip(factors.iter()) {
            for o in row {
                *o *= f;
            }
        }
        let t = matrix(xv.rows(), n, data);
        Ok(self.push(t, Op::ScaleRows(x, factors), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.val(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Mean cross-entropy over rows whose label is not `-1`.
    pub fn cross_entropy(&mut self, logits: Var, labels: Arc<[i64]>) -> Result<Var> {
        let lv = self.val(logits);
        let k = lv.cols();
        if lv.rows() != labels.len() {
            return Err(Error::Shape {
                op: "cross_entropy",
                left: lv.dims().to_vec(),
                right: vec![labels.len()],
            });
        }
        let mut probs = vec![T::zero(); lv.len()];
        let mut total = T::zero();
        let mut count = 0usize;
        for (r, &label) in labels.iter().enumerate() {
            if label < -1 || label >= k as i64 {
                return Err(Error::ContractViolation(format!("label {label} outside [-1, {k})")));
            }
            let row = lv.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (p, &x) in probs[r * k..(r + 1) * k].iter_mut().zip(row) {
                *p = (x - max).exp();
                z += *p;
            }
            for p in &mut probs[r * k..(r + 1) * k] {
                *p /= z;
            }
            if label >= 0 {
                let l = label as usize;
                total += if row[l] == max {
                    // no cancellation when the loss is small
                    let rest: T = (0..k).filter(|&c| c != l).map(|c| (row[c] - max).exp()).sum();
                    rest.ln_1p()
                } else {
                    z.ln() + max - row[l]
                };
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::UndefinedLoss);
        }
        let loss = total / lit::<T>(count as f64);
        let op = Op::CrossEntropy {
            logits,
            probs,
            labels,
            count,
        };
        Ok(self.push(Tensor::scalar(loss), op, &[logits]))
    }

    /// Backpropagates from a scalar root with unit seed.
    pub fn backward(&mut self, root: Var) {
        self.backward_scaled(root, T::one());
    }

    /// Backpropagates `seed · d(root)` into every leaf that requires grad.
    pub fn backward_scaled(&mut self, root: Var, seed: T) {
        let mut grads: Vec<Option<Vec<T>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(vec![seed; self.nodes[root.0].value.len()]);
        let mut leaf_grads = Vec::new();

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.value.requires_grad {
                continue;
            }
            let nodes = &self.nodes;
            let needs = |v: Var| nodes[v.0].value.requires_grad;
            // `copy` is the gradient contribution when it is a plain copy of
            // `src`; the first contribution then skips the zero fill.
            let mut acc = |v: Var, copy: Option<&[T]>, f: &mut dyn FnMut(&mut [T])| {
                if !needs(v) {
                    return;
                }
                match (&mut grads[v.0], copy) {
                    (Some(slot), _) => f(slot),
                    (empty @ None, Some(src)) => *empty = Some(src.to_vec()),
                    (empty @ None, None) => f(empty.insert(vec![T::zero(); nodes[v.0].value.len()])),
                }
            };
            let out = &node.value;
            match &node.op {
                Op::Leaf => leaf_grads.push((i, g)),
                Op::MatMul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    acc(*a, None, &mut |ga| {
                        T::gemm(m, n, k, &g, (n as isize, 1), bv.data(), (1, n as isize), T::one(), ga)
                    });
                    acc(*b, None, &mut |gb| {
                        T::gemm(k, m, n, av.data(), (1, k as isize), &g, (n as isize, 1), T::one(), gb)
                    });
                }
                Op::Add(a, b) => {
                    acc(*a, Some(&g), &mut |ga| add_into(ga, &g));
                    acc(*b, Some(&g), &mut |gb| add_into(gb, &g));
                }
                Op::Sub(a, b) => {
                    acc(*a, Some(&g), &mut |ga| add_into(ga, &g));
                    acc(*b, None, &mut |gb| {
                        for (o, &x) in gb.iter_mut().zip(&g) {
                            *o -= x;
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    acc(*a, None, &mut |ga| {
                        for ((o, &x), &y) in ga.iter_mut().zip(&g).zip(bv) {
                            *o += x * y;
                        }
                    });
                    acc(*b, None, &mut |gb| {
                        for ((o, &x), &y) in gb.iter_mut().zip(&g).zip(av) {
                            *o += x * y;
                        }
                    });
                }
                Op::AddRow(x, bias) => {
                    let n = out.cols();
                    acc(*x, Some(&g), &mut |gx| add_into(gx, &g));
                    acc(*bias, None, &mut |gb| {
                        for row in g.chunks(n.max(1)) {
                            add_into(gb, row);
                        }
                    });
                }
                Op::MulRow(x, v) => {
                    let n = out.cols();
                    let (xv, vv) = (nodes[x.0].value.data(), nodes[v.0].value.data());
                    acc(*x, None, &mut |gx| {
                        for (grow, orow) in g.chunks(n.max(1)).zip(gx.chunks_mut(n.max(1))) {
                            for ((o, &gg), &s) in orow.iter_mut().zip(grow).zip(vv) {
                                *o += gg * s;
                            }
                        }
                    });
                    acc(*v, None, &mut |gv| {
                        for (grow, xrow) in g.chunks(n.max(1)).zip(xv.chunks(n.max(1))) {
                            for ((o, &gg), &xx) in gv.iter_mut().zip(grow).zip(xrow) {
                                *o += gg * xx;
                            }
                        }
                    });
                }
                Op::Scale(x, s) => acc(*x, None, &mut |gx| {
                    for (o, &gg) in gx.iter_mut().zip(&g) {
                        *o += gg * *s;
                    }
                }),
                Op::ConcatCols(a, b) => {
                    let p = nodes[a.0].value.cols();
                    let q = nodes[b.0].value.cols();
                    let w = p + q;
                    acc(*a, None, &mut |ga| {
                        for (grow, orow) in g.chunks(w.max(1)).zip(ga.chunks_mut(p.max(1))) {
                            add_into(orow, &grow[..p]);
                        }
                    });
                    acc(*b, None, &mut |gb| {
                        for (grow, orow) in g.chunks(w.max(1)).zip(gb.chunks_mut(q.max(1))) {
                            add_into(orow, &grow[p..]);
                        }
                    });
                }
                Op::GatherRows(x, index) => {
                    let n = out.cols();
                    acc(*x, None, &mut |gx| {
                        for (e, &r) in index.iter().enumerate() {
                            add_into(&mut gx[r * n..(r + 1) * n], &g[e * n..(e + 1) * n]);
                        }
                    });
                }
                Op::ScatterAddRows(x, index) => {
                    let n = out.cols();
                    acc(*x, None, &mut |gx| {
                        for (e, &r) in index.iter().enumerate() {
                            add_into(&mut gx[e * n..(e + 1) * n], &g[r * n..(r + 1) * n]);
                        }
                    });
                }
                Op::Relu(x) => {
                    let xv = nodes[x.0].value.data();
                    acc(*x, None, &mut |gx| {
                        for ((o, &gg), &a) in gx.iter_mut().zip(&g).zip(xv) {
                            *o += if a > T::zero() { gg } else { T::zero() };
                        }
                    });
                }
                Op::LeakyRelu(x, slope) => {
                    let xv = nodes[x.0].value.data();
                    acc(*x, None, &mut |gx| {
                        for ((o, &gg), &a) in gx.iter_mut().zip(&g).zip(xv) {
                            *o += if a > T::zero() { gg } else { gg * *slope };
                        }
                    });
                }
                Op::Tanh(x) => acc(*x, None, &mut |gx| {
                    for ((o, &gg), &y) in gx.iter_mut().zip(&g).zip(out.data()) {
                        *o += gg * (T::one() - y * y);
                    }
                }),
                Op::Exp(x) => acc(*x, None, &mut |gx| {
                    for ((o, &gg), &y) in gx.iter_mut().zip(&g).zip(out.data()) {
                        *o += gg * y;
                    }
                }),
                Op::GroupedSoftmax(x, group_of) => {
                    let c = out.cols();
                    let y = out.data();
                    let groups = group_of.iter().max().map_or(0, |m| m + 1);
                    let mut dot = vec![T::zero(); groups * c];
                    for (r, &grp) in group_of.iter().enumerate() {
                        for ch in 0..c {
                            dot[grp * c + ch] += y[r * c + ch] * g[r * c + ch];
                        }
                    }
                    acc(*x, None, &mut |gx| {
                        for (r, &grp) in group_of.iter().enumerate() {
                            for ch in 0..c {
                                let i = r * c + ch;
                                gx[i] += y[i] * (g[i] - dot[grp * c + ch]);
                            }
                        }
                    });
                }
                Op::SegmentMax(x, arg) => {
                    let c = out.cols();
                    acc(*x, None, &mut |gx| {
                        for (slot, &p) in arg.iter().enumerate() {
                            gx[p * c + slot % c] += g[slot];
                        }
                    });
                }
                Op::MulHeads(x, w) => {
                    let (xv, wv) = (&nodes[x.0].value, &nodes[w.0].value);
                    let heads = wv.cols();
                    let n = xv.cols();
                    let d = n / heads;
                    if d == 0 {
                        continue;
                    }
                    acc(*x, None, &mut |gx| {
                        for ((orow, grow), w) in gx.chunks_mut(n).zip(g.chunks(n)).zip(wv.data().chunks(heads)) {
                            for ((o, gb), &s) in orow.chunks_mut(d).zip(grow.chunks(d)).zip(w) {
                                for (o, &gg) in o.iter_mut().zip(gb) {
                                    *o += gg * s;
                                }
                            }
                        }
                    });
                    acc(*w, None, &mut |gw| {
                        for ((orow, grow), xrow) in gw.chunks_mut(heads).zip(g.chunks(n)).zip(xv.data().chunks(n)) {
                            for ((o, gb), xb) in orow.iter_mut().zip(grow.chunks(d)).zip(xrow.chunks(d)) {
                                *o += gb.iter().zip(xb).map(|(&a, &b)| a * b).sum::<T>();
                            }
                        }
                    });
                }
                Op::BlockSum(x, heads) => {
                    let n = nodes[x.0].value.cols();
                    let d = n / heads;
                    if d == 0 {
                        continue;
                    }
                    acc(*x, None, &mut |gx| {
                        for (orow, grow) in gx.chunks_mut(n).zip(g.chunks(*heads)) {
                            for (o, &gg) in orow.chunks_mut(d).zip(grow) {
                                o.iter_mut().for_each(|o| *o += gg);
                            }
                        }
                    });
                }
                Op::ScaleRows(x, factors) => {
                    let n = out.cols();
                    acc(*x, None, &mut |gx| {
                        for ((orow, grow), &f) in gx.chunks_mut(n.max(1)).zip(g.chunks(n.max(1))).zip(factors.iter()) {
                            for (o, &gg) in orow.iter_mut().zip(grow) {
                                *o += gg * f;
                            }
                        }
                    });
                }
                Op::Sum(x) => acc(*x, None, &mut |gx| {
                    for o in gx.iter_mut() {
                        *o += g[0];
                    }
                }),
                Op::CrossEntropy {
                    logits,
                    probs,
                    labels,
                    count,
                } => {
                    let k = nodes[logits.0].value.cols();
                    let scale = g[0] / lit::<T>(*count as f64);
                    acc(*logits, None, &mut |gl| {
                        for (r, &label) in labels.iter().enumerate() {
                            if label < 0 {
                                continue;
                            }
                            for c in 0..k {
                                let onehot = if c as i64 == label { T::one() } else { T::zero() };
                                gl[r * k + c] += scale * (probs[r * k + c] - onehot);
                            }
                        }
                    });
                }
            }
        }

        for (i, g) in leaf_grads {
            let slot = self.nodes[i].value.grad_or_zeros();
            add_into(slot, &g);
        }
    }

    /// Moves a leaf's gradient out of the tape.
    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].value.grad.take()
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (o, &x) in dst.iter_mut().zip(src) {
        *o += x;
    }
}

/// Forward pass of [`Tape::grouped_softmax`] on raw data.
pub fn grouped_softmax_values<T: Scalar>(x: &[T], cols: usize, group_of: &[usize]) -> Vec<T> {
    let groups = group_of.iter().max().map_or(0, |m| m + 1);
    let mut max = vec![T::neg_infinity(); groups * cols];
    for (r, &grp) in group_of.iter().enumerate() {
        for ch in 0..cols {
            let slot = &mut max[grp * cols + ch];
            *slot = slot.max(x[r * cols + ch]);
        }
    }
    let mut out = vec![T::zero(); x.len()];
    let mut denom = vec![T::zero(); groups * cols];
    for (r, &grp) in group_of.iter().enumerate() {
        for ch in 0..cols {
            let e = (x[r * cols + ch] - max[grp * cols + ch]).exp();
            out[r * cols + ch] = e;
            denom[grp * cols + ch] += e;
        }
    }
    for (r, &grp) in group_of.iter().enumerate() {
        for ch in 0..cols {
            out[r * cols + ch] /= denom[grp * cols + ch];
        }
    }
    out
}
