//! Tape-based reverse-mode automatic differentiation.
//!
//! Every forward operation appends one node to the [`Tape`]. A node refers to
//! its inputs by index, and inputs are always recorded before the node that
//! consumes them, so the tape is topologically ordered by construction.
//! [`Tape::backward`] walks the nodes in exact reverse recording order and
//! accumulates gradients additively, which handles fan-out without any extra
//! bookkeeping.
//!
//! ```
//! use kdslu::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
//! let sq = tape.mul(x, x).unwrap();
//! let y = tape.sum(sq, 0).unwrap();
//! tape.backward(y).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);
//! ```

use std::borrow::Cow;
use std::fmt;

use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

/// Epsilon used by [`Tape::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a [`Tape::custom`] node: receives the upstream gradient,
/// the input values and the output value, returns one gradient per input.
pub type CustomBackward<'a> = Box<dyn Fn(&[f64], &[&[f64]], &[f64]) -> Vec<Vec<f64>> + Send + 'a>;

enum Op<'a> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    /// Elementwise with the smaller operand broadcast over the leading axes of
    /// the larger one. `inner` is the length of the smaller operand.
    Add(Var, Var, usize),
    Sub(Var, Var, usize),
    Mul(Var, Var, usize),
    Scale(Var, f64),
    Gather(Var, Vec<usize>),
    Softmax(Var),
    Log(Var),
    ClampMin(Var, f64),
    Sum(Var, usize),
    Mean(Var, usize),
    Relu(Var),
    LayerNorm(Var, Vec<f64>),
    Concat(Vec<Var>, usize),
    Custom(Vec<Var>, CustomBackward<'a>),
}

impl Op<'_> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Gather(..) => "embedding_gather",
            Op::Softmax(..) => "softmax",
            Op::Log(..) => "log",
            Op::ClampMin(..) => "clamp_min",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Relu(..) => "relu",
            Op::LayerNorm(..) => "layer_norm",
            Op::Concat(..) => "concat",
            Op::Custom(..) => "custom",
        }
    }
}

struct Node<'a> {
    shape: Vec<usize>,
    value: Cow<'a, [f64]>,
    op: Op<'a>,
    requires_grad: bool,
}

/// Ordered record of executed operations.
///
/// Leaves may borrow their values (see [`Tape::param`]) so model parameters
/// are not copied on every forward pass.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    grads: Vec<Option<Vec<f64>>>,
}

impl fmt::Debug for Tape<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list()
            .entries(self.nodes.iter().map(|n| (n.op.name(), &n.shape)))
            .finish()
    }
}

/// Splits `shape` around `axis` into (outer, axis length, inner).
fn split_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Domain {
            op,
            msg: format!("axis {axis} out of range for shape {shape:?}"),
        });
    }
    Ok((
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    ))
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Cow<'a, [f64]>, op: Op<'a>, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<'a> {
        &self.nodes[v.0]
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf owning its value.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, Cow::Owned(t.into_data()), Op::Leaf, true)
    }

    /// Non-trainable leaf owning its value.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, Cow::Owned(t.into_data()), Op::Leaf, false)
    }

    /// Leaf borrowing an existing tensor.
    pub fn param(&mut self, t: &'a Tensor, requires_grad: bool) -> Var {
        self.push(t.shape().to_vec(), Cow::Borrowed(t.data()), Op::Leaf, requires_grad)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.to_vec()).expect("node shape is consistent")
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// Gradient of the last backward root with respect to `v`.
    ///
    /// `None` if `v` does not require gradients or was not reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    // ---- forward ops ------------------------------------------------------

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &y) in row.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        let rg = self.needs(&[a, b]);
        Ok(self.push(vec![m, n], Cow::Owned(out), Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let sa = self.shape(a);
        if sa.len() != 2 {
            return Err(Error::shape("transpose", sa, &[]));
        }
        let (m, n) = (sa[0], sa[1]);
        let av = self.value(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        let rg = self.needs(&[a]);
        Ok(self.push(vec![n, m], Cow::Owned(out), Op::Transpose(a), rg))
    }

    /// Same values under a new shape with equal element count.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != numel(self.shape(a)) {
            return Err(Error::shape("reshape", self.shape(a), shape));
        }
        let out = self.value(a).to_vec();
        let rg = self.needs(&[a]);
        Ok(self.push(shape.to_vec(), Cow::Owned(out), Op::Reshape(a), rg))
    }

    /// Resolves broadcasting for a binary elementwise op. Returns the output
    /// shape, whether the operands were swapped (so the larger one comes
    /// first), and the length of the smaller operand.
    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<(Vec<usize>, bool, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() >= sb.len() && sa.ends_with(sb) {
            Ok((sa.to_vec(), false, numel(sb)))
        } else if sb.ends_with(sa) {
            Ok((sb.to_vec(), true, numel(sa)))
        } else {
            Err(Error::shape(op, sa, sb))
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(Var, Var, usize) -> Op<'a>,
    ) -> Result<Var> {
        let (shape, swapped, inner) = self.broadcast(name, a, b)?;
        let (big, small) = if swapped { (b, a) } else { (a, b) };
        let (bv, sv) = (self.value(big), self.value(small));
        let out: Vec<f64> = if inner == 0 {
            Vec::new()
        } else {
            bv.chunks(inner)
                .flat_map(|chunk| {
                    chunk.iter().zip(sv).map(|(&x, &y)| {
                        if swapped {
                            f(y, x)
                        } else {
                            f(x, y)
                        }
                    })
                })
                .collect()
        };
        let rg = self.needs(&[a, b]);
        Ok(self.push(shape, Cow::Owned(out), make(a, b, inner), rg))
    }

    /// Elementwise sum; the smaller operand broadcasts over leading axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out: Vec<f64> = self.value(a).iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a]);
        self.push(shape, Cow::Owned(out), Op::Scale(a, c), rg)
    }

    /// Selects rows of a 2-D `table`: `[V, d]` and `k` indices give `[k, d]`.
    pub fn embedding_gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let st = self.shape(table);
        if st.len() != 2 {
            return Err(Error::shape("embedding_gather", st, &[indices.len()]));
        }
        let (rows, d) = (st[0], st[1]);
        let tv = self.value(table);
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= rows {
                return Err(Error::OutOfRange {
                    what: "embedding_gather table",
                    index: i,
                    size: rows,
                });
            }
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let rg = self.needs(&[table]);
        Ok(self.push(
            vec![indices.len(), d],
            Cow::Owned(out),
            Op::Gather(table, indices.to_vec()),
            rg,
        ))
    }

    fn last_dim(&self, op: &'static str, a: Var) -> Result<usize> {
        match self.shape(a).last() {
            Some(&w) if w > 0 => Ok(w),
            _ => Err(Error::shape(op, self.shape(a), &[])),
        }
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let w = self.last_dim("softmax", a)?;
        let av = self.value(a);
        if av.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain {
                op: "softmax",
                msg: "non-finite input".into(),
            });
        }
        let mut out = vec![0.0; av.len()];
        for (row, o) in av.chunks(w).zip(out.chunks_mut(w)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (oi, &x) in o.iter_mut().zip(row) {
                *oi = (x - max).exp();
                z += *oi;
            }
            for oi in o.iter_mut() {
                *oi /= z;
            }
        }
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a]);
        Ok(self.push(shape, Cow::Owned(out), Op::Softmax(a), rg))
    }

    /// Natural log; every input must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if let Some(x) = av.iter().find(|&&x| x.is_nan() || x <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                msg: format!("non-positive input {x}"),
            });
        }
        let out: Vec<f64> = av.iter().map(|x| x.ln()).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a]);
        Ok(self.push(shape, Cow::Owned(out), Op::Log(a), rg))
    }

    /// `max(x, floor)`; the gradient passes only where `x > floor`.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let out: Vec<f64> = self.value(a).iter().map(|&x| x.max(floor)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a]);
        self.push(shape, Cow::Owned(out), Op::ClampMin(a, floor), rg)
    }

    fn reduce(&mut self, a: Var, axis: usize, mean: bool) -> Result<Var> {
        let name = if mean { "mean" } else { "sum" };
        let shape = self.shape(a).to_vec();
        let (outer, len, inner) = split_axis(name, &shape, axis)?;
        if mean && len == 0 {
            return Err(Error::Domain {
                op: "mean",
                msg: "empty axis".into(),
            });
        }
        let av = self.value(a);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &av[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        if mean {
            let inv = 1.0 / len as f64;
            out.iter_mut().for_each(|x| *x *= inv);
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let rg = self.needs(&[a]);
        let op = if mean { Op::Mean(a, axis) } else { Op::Sum(a, axis) };
        Ok(self.push(out_shape, Cow::Owned(out), op, rg))
    }

    /// Sum over `axis`, removing it.
    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(a, axis, false)
    }

    /// Mean over `axis`, removing it.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(a, axis, true)
    }

    /// Sum of every element, as a scalar.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let mut v = a;
        while !self.shape(v).is_empty() {
            v = self.sum(v, 0)?;
        }
        Ok(v)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self.value(a).iter().map(|&x| x.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a]);
        self.push(shape, Cow::Owned(out), Op::Relu(a), rg)
    }

    /// Normalises the last axis to zero mean and unit variance
    /// (biased variance, epsilon [`LAYER_NORM_EPS`]). No affine part.
    pub fn layer_norm(&mut self, a: Var) -> Result<Var> {
        let w = self.last_dim("layer_norm", a)?;
        let av = self.value(a);
        let mut out = vec![0.0; av.len()];
        let mut inv_std = Vec::with_capacity(av.len() / w);
        for (row, o) in av.chunks(w).zip(out.chunks_mut(w)) {
            let mu = row.iter().sum::<f64>() / w as f64;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / w as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (oi, &x) in o.iter_mut().zip(row) {
                *oi = (x - mu) * is;
            }
            inv_std.push(is);
        }
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a]);
        Ok(self.push(shape, Cow::Owned(out), Op::LayerNorm(a, inv_std), rg))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = match parts.first() {
            Some(&p) => self.shape(p).to_vec(),
            None => return Err(Error::Empty("concat inputs")),
        };
        split_axis("concat", &first, axis)?;
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", &first, s));
            }
            total += s[axis];
        }
        let outer = numel(&first[..axis]);
        let inner = numel(&first[axis + 1..]);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let block = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p)[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = self.needs(parts);
        Ok(self.push(shape, Cow::Owned(out), Op::Concat(parts.to_vec(), axis), rg))
    }

    /// Records an operation with a caller-supplied value and backward rule.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        output: Tensor,
        backward: CustomBackward<'a>,
    ) -> Var {
        let shape = output.shape().to_vec();
        let rg = self.needs(inputs);
        self.push(
            shape,
            Cow::Owned(output.into_data()),
            Op::Custom(inputs.to_vec(), backward),
            rg,
        )
    }

    // ---- backward ---------------------------------------------------------

    /// Propagates d`root`/d`x` to every node reachable from the scalar `root`.
    ///
    /// Gradients from a previous call are discarded.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_shape = self.shape(root);
        if numel(root_shape) != 1 {
            return Err(Error::NonScalarRoot(root_shape.to_vec()));
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(dy) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &dy);
            self.grads[i] = Some(dy);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [f64], &[f64], &Self)) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let mut g = self.grads[v.0]
            .take()
            .unwrap_or_else(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(&mut g, &self.nodes[v.0].value, self);
        self.grads[v.0] = Some(g);
    }

    /// Accumulates an elementwise-broadcast gradient: `big` receives
    /// `fb(dy, other)`, `small` receives the sum over broadcast repeats.
    fn propagate(&mut self, i: usize, dy: &[f64]) {
        // Inputs always precede node i, so taking node i's op out temporarily
        // is unnecessary; we copy the few scalars we need.
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                self.accumulate(a, |g, _, t| {
                    let bv = t.value(b);
                    for r in 0..m {
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            let drow = &dy[r * n..(r + 1) * n];
                            g[r * k + p] += drow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                self.accumulate(b, |g, _, t| {
                    let av = t.value(a);
                    for r in 0..m {
                        let drow = &dy[r * n..(r + 1) * n];
                        for p in 0..k {
                            let x = av[r * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (gi, &d) in g[p * n..(p + 1) * n].iter_mut().zip(drow) {
                                *gi += x * d;
                            }
                        }
                    }
                });
            }
            &Op::Transpose(a) => {
                let (m, n) = (self.shape(a)[0], self.shape(a)[1]);
                self.accumulate(a, |g, _, _| {
                    for r in 0..m {
                        for c in 0..n {
                            g[r * n + c] += dy[c * m + r];
                        }
                    }
                });
            }
            &Op::Reshape(a) => {
                self.accumulate(a, |g, _, _| {
                    for (gi, &d) in g.iter_mut().zip(dy) {
                        *gi += d;
                    }
                });
            }
            &Op::Add(a, b, inner) | &Op::Sub(a, b, inner) => {
                let sign = if matches!(self.nodes[i].op, Op::Sub(..)) { -1.0 } else { 1.0 };
                for (v, s) in [(a, 1.0), (b, sign)] {
                    self.accumulate(v, |g, _, _| {
                        if g.len() == dy.len() {
                            for (gi, &d) in g.iter_mut().zip(dy) {
                                *gi += s * d;
                            }
                        } else {
                            for chunk in dy.chunks(inner) {
                                for (gi, &d) in g.iter_mut().zip(chunk) {
                                    *gi += s * d;
                                }
                            }
                        }
                    });
                }
            }
            &Op::Mul(a, b, inner) => {
                for (v, other) in [(a, b), (b, a)] {
                    self.accumulate(v, |g, _, t| {
                        let ov = t.value(other);
                        if g.len() == dy.len() {
                            // `v` is the large operand; `other` may be broadcast.
                            for (j, (gi, &d)) in g.iter_mut().zip(dy).enumerate() {
                                *gi += d * ov[j % ov.len()];
                            }
                        } else {
                            // `v` is the small operand, repeated every `inner`.
                            for (chunk, ochunk) in dy.chunks(inner).zip(ov.chunks(inner)) {
                                for ((gi, &d), &o) in g.iter_mut().zip(chunk).zip(ochunk) {
                                    *gi += d * o;
                                }
                            }
                        }
                    });
                }
            }
            &Op::Scale(a, c) => {
                self.accumulate(a, |g, _, _| {
                    for (gi, &d) in g.iter_mut().zip(dy) {
                        *gi += c * d;
                    }
                });
            }
            Op::Gather(table, idx) => {
                let (table, idx) = (*table, idx.clone());
                let d = self.shape(table)[1];
                self.accumulate(table, |g, _, _| {
                    for (r, &row) in idx.iter().enumerate() {
                        for (gi, &dd) in g[row * d..(row + 1) * d].iter_mut().zip(&dy[r * d..(r + 1) * d]) {
                            *gi += dd;
                        }
                    }
                });
            }
            &Op::Softmax(a) => {
                let w = *self.shape(a).last().unwrap();
                let y = self.nodes[i].value.to_vec();
                self.accumulate(a, |g, _, _| {
                    for ((gr, yr), dr) in g.chunks_mut(w).zip(y.chunks(w)).zip(dy.chunks(w)) {
                        let dot: f64 = yr.iter().zip(dr).map(|(p, q)| p * q).sum();
                        for ((gi, &yi), &di) in gr.iter_mut().zip(yr).zip(dr) {
                            *gi += yi * (di - dot);
                        }
                    }
                });
            }
            &Op::Log(a) => {
                self.accumulate(a, |g, x, _| {
                    for ((gi, &xi), &d) in g.iter_mut().zip(x).zip(dy) {
                        *gi += d / xi;
                    }
                });
            }
            &Op::ClampMin(a, floor) => {
                self.accumulate(a, |g, x, _| {
                    for ((gi, &xi), &d) in g.iter_mut().zip(x).zip(dy) {
                        if xi > floor {
                            *gi += d;
                        }
                    }
                });
            }
            &Op::Sum(a, axis) | &Op::Mean(a, axis) => {
                let scale = if matches!(self.nodes[i].op, Op::Mean(..)) {
                    1.0 / self.shape(a)[axis] as f64
                } else {
                    1.0
                };
                let (outer, len, inner) = split_axis("sum", self.shape(a), axis).unwrap();
                self.accumulate(a, |g, _, _| {
                    for o in 0..outer {
                        let src = &dy[o * inner..(o + 1) * inner];
                        for l in 0..len {
                            let dst = &mut g[(o * len + l) * inner..(o * len + l + 1) * inner];
                            for (gi, &d) in dst.iter_mut().zip(src) {
                                *gi += scale * d;
                            }
                        }
                    }
                });
            }
            &Op::Relu(a) => {
                self.accumulate(a, |g, x, _| {
                    for ((gi, &xi), &d) in g.iter_mut().zip(x).zip(dy) {
                        if xi > 0.0 {
                            *gi += d;
                        }
                    }
                });
            }
            Op::LayerNorm(a, inv_std) => {
                let a = *a;
                let inv_std = inv_std.clone();
                let w = *self.shape(a).last().unwrap();
                let y = self.nodes[i].value.to_vec();
                self.accumulate(a, |g, _, _| {
                    for (r, ((gr, yr), dr)) in g.chunks_mut(w).zip(y.chunks(w)).zip(dy.chunks(w)).enumerate() {
                        let mean_d = dr.iter().sum::<f64>() / w as f64;
                        let mean_dy = dr.iter().zip(yr).map(|(d, y)| d * y).sum::<f64>() / w as f64;
                        for ((gi, &yi), &di) in gr.iter_mut().zip(yr).zip(dr) {
                            *gi += inv_std[r] * (di - mean_d - yi * mean_dy);
                        }
                    }
                });
            }
            Op::Concat(parts, axis) => {
                let (parts, axis) = (parts.clone(), *axis);
                let out_shape = self.nodes[i].shape.clone();
                let outer = numel(&out_shape[..axis]);
                let inner = numel(&out_shape[axis + 1..]);
                let row = out_shape[axis] * inner;
                let mut offset = 0;
                for p in parts {
                    let block = self.shape(p)[axis] * inner;
                    self.accumulate(p, |g, _, _| {
                        for o in 0..outer {
                            let src = &dy[o * row + offset..o * row + offset + block];
                            for (gi, &d) in g[o * block..(o + 1) * block].iter_mut().zip(src) {
                                *gi += d;
                            }
                        }
                    });
                    offset += block;
                }
            }
            Op::Custom(inputs, rule) => {
                let inputs = inputs.clone();
                let values: Vec<&[f64]> = inputs.iter().map(|&v| self.value(v)).collect();
                let grads = rule(dy, &values, &self.nodes[i].value);
                for (v, gv) in inputs.into_iter().zip(grads) {
                    self.accumulate(v, |g, _, _| {
                        for (gi, d) in g.iter_mut().zip(gv) {
                            *gi += d;
                        }
                    });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![0.0, 0.0]));
        let y = t.softmax(x).unwrap();
        assert_eq!(t.value(y), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_reference_values() {
        // exp(x_i) / sum_j exp(x_j), evaluated with 30-digit arithmetic.
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let y = t.softmax(x).unwrap();
        for (a, b) in t.value(y).iter().zip([0.09003057317038046, 0.24472847105479764, 0.6652409557748219]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-5);
        }
    }

    #[test]
    fn identity_matmul() {
        let a = Tensor::matrix(3, 2, vec![1.0, -2.0, 3.5, 4.0, 0.0, 7.0]).unwrap();
        let mut t = Tape::new();
        let i = t.constant(Tensor::identity(3));
        let av = t.constant(a.clone());
        let y = t.matmul(i, av).unwrap();
        assert_eq!(t.tensor(y), a);
    }

    #[test]
    fn shape_errors_name_op_and_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(vec![2, 3]));
        let b = t.constant(Tensor::zeros(vec![2, 3]));
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
        let c = t.constant(Tensor::zeros(vec![4]));
        let err = t.add(a, c).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[4]"), "{err}");
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::vector(vec![1.0, 0.0]));
        assert!(matches!(t.log(a), Err(Error::Domain { op: "log", .. })));
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![2, 3], vec![1.0; 6]).unwrap());
        let s = t.sum_all(x).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn grad_of_mean_is_uniform() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![3.0, -1.0, 2.0, 8.0]));
        let m = t.mean(x, 0).unwrap();
        t.backward(m).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[0.25; 4]);
    }

    #[test]
    fn cross_entropy_grad_is_softmax_minus_onehot() {
        let mut t = Tape::new();
        let logits = t.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let p = t.softmax(logits).unwrap();
        let lp = t.log(p).unwrap();
        let onehot = t.constant(Tensor::vector(vec![1.0, 0.0, 0.0]));
        let picked = t.mul(lp, onehot).unwrap();
        let s = t.sum(picked, 0).unwrap();
        let loss = t.scale(s, -1.0);
        t.backward(loss).unwrap();
        let expect = [-0.9099694268296196, 0.24472847105479764, 0.6652409557748219];
        for (g, e) in t.grad(logits).unwrap().iter().zip(expect) {
            assert_abs_diff_eq!(*g, e, epsilon = 1e-5);
        }
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn fan_out_accumulates() {
        // y = sum(x * x + x) -> dy/dx = 2x + 1
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, -3.0]));
        let sq = t.mul(x, x).unwrap();
        let z = t.add(sq, x).unwrap();
        let y = t.sum(z, 0).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[3.0, -5.0]);
    }

    #[test]
    fn broadcast_add_over_leading_axes() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = t.leaf(Tensor::vector(vec![10.0, 20.0]));
        let y = t.add(x, b).unwrap();
        assert_eq!(t.value(y), &[11.0, 22.0, 13.0, 24.0]);
        let s = t.sum_all(y).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(b).unwrap(), &[2.0, 2.0]);
        // Broadcast on the left operand as well.
        let y2 = t.sub(b, x).unwrap();
        assert_eq!(t.value(y2), &[9.0, 18.0, 7.0, 16.0]);
    }

    #[test]
    fn concat_and_gather() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap());
        let b = t.constant(Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let c = t.concat(&[a, b], 1).unwrap();
        assert_eq!(t.shape(c), &[2, 3]);
        assert_eq!(t.value(c), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let g = t.embedding_gather(c, &[1, 1, 0]).unwrap();
        assert_eq!(t.value(g), &[2.0, 5.0, 6.0, 2.0, 5.0, 6.0, 1.0, 3.0, 4.0]);
        assert!(t.embedding_gather(c, &[2]).is_err());
    }

    #[test]
    fn layer_norm_rows_are_standardised() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::matrix(2, 4, vec![1.0, 2.0, 3.0, 4.0, -5.0, 0.0, 5.0, 10.0]).unwrap());
        let y = t.layer_norm(x).unwrap();
        for row in t.value(y).chunks(4) {
            let mu: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 4.0;
            assert_abs_diff_eq!(mu, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(var, 1.0, epsilon = 1e-4);
        }
    }

    #[test]
    fn constants_receive_no_grad() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0]));
        let c = t.constant(Tensor::vector(vec![2.0]));
        let y = t.mul(x, c).unwrap();
        let s = t.sum(y, 0).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[2.0]);
        assert!(t.grad(c).is_none());
    }
}
