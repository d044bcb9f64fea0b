//! Reverse-mode tape.
//!
//! A [`Tape`] records one forward pass. Leaves are either constants or
//! parameters bound from a [`ParamStore`]; [`Tape::backward`] walks the
//! nodes in reverse id order and returns the gradient of a scalar root with
//! respect to every tracked parameter. A tape supports a single backward
//! pass; build a fresh tape for the next step.

use std::collections::BTreeMap;
use std::rc::Rc;

use super::{ParamStore, Tensor};
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Gradients keyed by parameter name.
pub type Grads = BTreeMap<String, Tensor>;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    MatMul(Var, Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    Sum(Var),
    Mean(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Gather(Var, Rc<[usize]>),
    ScatterAdd(Var, Rc<[usize]>),
    ScatterMean(Var, Rc<[usize]>, Rc<[f64]>),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
    param: Option<String>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Elementwise pairing of two operands: equal shapes, or one side holding a
/// single value broadcast over the other.
#[derive(Clone, Copy)]
enum Pairing {
    Equal,
    LhsScalar,
    RhsScalar,
}

fn pairing(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Pairing> {
    if a.shape() == b.shape() {
        Ok(Pairing::Equal)
    } else if a.is_scalar_like() {
        Ok(Pairing::LhsScalar)
    } else if b.is_scalar_like() {
        Ok(Pairing::RhsScalar)
    } else {
        Err(Error::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

fn zip_with(a: &Tensor, b: &Tensor, p: Pairing, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (shape, data) = match p {
        Pairing::Equal => (
            a.shape().to_vec(),
            a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
        ),
        Pairing::LhsScalar => {
            let x = a.item();
            (b.shape().to_vec(), b.data().iter().map(|&y| f(x, y)).collect())
        }
        Pairing::RhsScalar => {
            let y = b.item();
            (a.shape().to_vec(), a.data().iter().map(|&x| f(x, y)).collect())
        }
    };
    Tensor::new(shape, data).expect("shape preserved")
}

/// Reduce a broadcast gradient back onto an operand's shape.
fn reduce_to(g: Tensor, target: &Tensor) -> Tensor {
    if g.shape() == target.shape() {
        g
    } else {
        Tensor::new(target.shape().to_vec(), vec![g.sum()]).expect("scalar-like operand")
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
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

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool, what: &str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(what.to_string()));
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
            param: None,
        });
        Ok(Var(id))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(Op::Leaf, t, false, "constant leaf")
    }

    pub fn scalar(&mut self, v: f64) -> Result<Var> {
        self.constant(Tensor::scalar(v))
    }

    /// Bind parameter `name` as a tracked leaf.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let t = store
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?
            .clone();
        let v = self.push(Op::Leaf, t, true, name)?;
        self.nodes[v.0].param = Some(name.to_string());
        Ok(v)
    }

    /// Bind parameter `name` as an untracked constant.
    pub fn frozen(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let t = store
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?
            .clone();
        self.push(Op::Leaf, t, false, name)
    }

    fn binary(
        &mut self,
        opname: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let p = pairing(opname, ta, tb)?;
        let out = zip_with(ta, tb, p, f);
        let ng = self.needs(a) || self.needs(b);
        self.push(op, out, ng, opname)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Multiply by a fixed constant.
    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).scale(s);
        let ng = self.needs(a);
        self.push(Op::Scale(a, s), out, ng, "scale")
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    /// `x[r, c] + bias[c]` for `x: [rows, cols]`, `bias: [cols]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (r, c) = tx.dims2("add_bias")?;
        if tb.shape() != [c] {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: tx.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(c) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let out = Tensor::new(vec![r, c], data)?;
        let ng = self.needs(x) || self.needs(bias);
        self.push(Op::AddBias(x, bias), out, ng, "add_bias")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape_err = || Error::Shape {
            op: "matmul",
            lhs: ta.shape().to_vec(),
            rhs: tb.shape().to_vec(),
        };
        let (n, k) = ta.dims2("matmul").map_err(|_| shape_err())?;
        let (k2, m) = tb.dims2("matmul").map_err(|_| shape_err())?;
        if k != k2 {
            return Err(shape_err());
        }
        let out = Tensor::new(vec![n, m], matmul_raw(ta.data(), tb.data(), n, k, m))?;
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a, b), out, ng, "matmul")
    }

    /// Concatenate rank-2 tensors along columns.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Invalid("concat of zero tensors".into()));
        }
        let (rows, _) = self.value(parts[0]).dims2("concat")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            let (r, c) = t.dims2("concat")?;
            if r != rows {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Op::Concat(parts.to_vec()), out, ng, "concat")
    }

    /// Columns `start..end` of a rank-2 tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims2("slice_cols")?;
        if start >= end || end > c {
            return Err(Error::Invalid(format!(
                "slice_cols {start}..{end} out of range for shape {:?}",
                t.shape()
            )));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(r * w);
        for row in t.data().chunks(c) {
            data.extend_from_slice(&row[start..end]);
        }
        let out = Tensor::new(vec![r, w], data)?;
        let ng = self.needs(a);
        self.push(Op::SliceCols(a, start), out, ng, "slice_cols")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push(Op::Sum(a), out, ng, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.numel() == 0 {
            return Err(Error::Invalid("mean of empty tensor".into()));
        }
        let out = Tensor::scalar(t.sum() / t.numel() as f64);
        let ng = self.needs(a);
        self.push(Op::Mean(a), out, ng, "mean")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        let ng = self.needs(a);
        self.push(Op::Tanh(a), out, ng, "tanh")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        let ng = self.needs(a);
        self.push(Op::Sigmoid(a), out, ng, "sigmoid")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(0.0));
        let ng = self.needs(a);
        self.push(Op::Relu(a), out, ng, "relu")
    }

    /// Rows `index[m]` of `a: [rows, cols]`, giving `[index.len(), cols]`.
    pub fn gather_rows(&mut self, a: Var, index: Rc<[usize]>) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims2("gather_rows")?;
        if let Some(&bad) = index.iter().find(|&&i| i >= r) {
            return Err(Error::Invalid(format!(
                "gather_rows index {bad} out of range for {r} rows"
            )));
        }
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index.iter() {
            data.extend_from_slice(&t.data()[i * c..(i + 1) * c]);
        }
        let out = Tensor::new(vec![index.len(), c], data)?;
        let ng = self.needs(a);
        self.push(Op::Gather(a, index), out, ng, "gather_rows")
    }

    /// Segment sum: row `m` of `a` is added into output row `index[m]`.
    pub fn scatter_add_rows(&mut self, a: Var, index: Rc<[usize]>, rows: usize) -> Result<Var> {
        let out = self.scatter_raw("scatter_add_rows", a, &index, rows, None)?;
        let ng = self.needs(a);
        self.push(Op::ScatterAdd(a, index), out, ng, "scatter_add_rows")
    }

    /// Segment mean over rows sharing an output index; empty segments are zero.
    pub fn scatter_mean_rows(&mut self, a: Var, index: Rc<[usize]>, rows: usize) -> Result<Var> {
        let mut counts = vec![0usize; rows];
        for &i in index.iter() {
            if i < rows {
                counts[i] += 1;
            }
        }
        let inv: Rc<[f64]> = counts
            .iter()
            .map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 })
            .collect();
        let out = self.scatter_raw("scatter_mean_rows", a, &index, rows, Some(&inv))?;
        let ng = self.needs(a);
        self.push(Op::ScatterMean(a, index, inv), out, ng, "scatter_mean_rows")
    }

    fn scatter_raw(
        &self,
        op: &'static str,
        a: Var,
        index: &[usize],
        rows: usize,
        inv: Option<&[f64]>,
    ) -> Result<Tensor> {
        let t = self.value(a);
        let (m, c) = t.dims2(op)?;
        if m != index.len() {
            return Err(Error::Shape {
                op,
                lhs: t.shape().to_vec(),
                rhs: vec![index.len()],
            });
        }
        let mut data = vec![0.0; rows * c];
        for (row, &dst) in t.data().chunks(c).zip(index) {
            if dst >= rows {
                return Err(Error::Invalid(format!(
                    "{op} index {dst} out of range for {rows} rows"
                )));
            }
            let w = inv.map_or(1.0, |s| s[dst]);
            for (o, v) in data[dst * c..(dst + 1) * c].iter_mut().zip(row) {
                *o += w * v;
            }
        }
        Tensor::new(vec![rows, c], data)
    }

    /// Mean squared error between two equally shaped tensors.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::Shape {
                op: "mse",
                lhs: self.shape(pred).to_vec(),
                rhs: self.shape(target).to_vec(),
            });
        }
        let d = self.sub(pred, target)?;
        let sq = self.square(d)?;
        self.mean(sq)
    }

    /// Gradients of scalar `root` with respect to every tracked parameter.
    ///
    /// Parameters bound but not reachable from `root` receive zero gradients.
    pub fn backward(&mut self, root: Var) -> Result<Grads> {
        let mut grads = Grads::new();
        self.backward_into(root, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Tape::backward`] but adds into an existing gradient map.
    pub fn backward_into(&mut self, root: Var, out: &mut Grads) -> Result<()> {
        if self.consumed {
            return Err(Error::Backward(
                "tape already differentiated; record a new forward pass".into(),
            ));
        }
        let root_shape = self.value(root).shape().to_vec();
        if root_shape.iter().product::<usize>() != 1 || root_shape.len() > 1 {
            return Err(Error::Backward(format!(
                "root must be scalar, got shape {root_shape:?}"
            )));
        }
        self.consumed = true;

        let mut g: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        g[root.0] = Some(Tensor::filled(&root_shape, 1.0));

        for id in (0..=root.0).rev() {
            let Some(gout) = g[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            if let Some(name) = &node.param {
                match out.get_mut(name) {
                    Some(acc) => acc.add_assign(&gout),
                    None => {
                        out.insert(name.clone(), gout.clone());
                    }
                }
            }
            self.propagate(&node.op, &node.value, gout, &mut g);
        }

        for node in &self.nodes {
            if let Some(name) = &node.param {
                out.entry(name.clone())
                    .or_insert_with(|| Tensor::zeros(node.value.shape()));
            }
        }
        Ok(())
    }

    fn propagate(&self, op: &Op, y: &Tensor, gout: Tensor, g: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let mut send = |v: Var, t: Tensor| {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut g[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let val = |v: Var| &nodes[v.0].value;

        match op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let gb = reduce_to(gout.scale(sign), val(*b));
                send(*b, gb);
                send(*a, reduce_to(gout, val(*a)));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let p = pairing("mul", ta, tb).expect("checked in forward");
                let ga = zip_with(&gout, tb, pair_for_grad(p, false), |g, y| g * y);
                let gb = zip_with(&gout, ta, pair_for_grad(p, true), |g, x| g * x);
                send(*a, reduce_to(ga, ta));
                send(*b, reduce_to(gb, tb));
            }
            Op::Div(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let p = pairing("div", ta, tb).expect("checked in forward");
                let ga = zip_with(&gout, tb, pair_for_grad(p, false), |g, y| g / y);
                // d(a/b)/db = -(a/b)/b = -y/b
                let gy = zip_with(&gout, y, Pairing::Equal, |g, q| -g * q);
                let gb = zip_with(&gy, tb, pair_for_grad(p, false), |g, b| g / b);
                send(*a, reduce_to(ga, ta));
                send(*b, reduce_to(gb, tb));
            }
            Op::Scale(a, s) => send(*a, gout.scale(*s)),
            Op::AddBias(x, b) => {
                let c = val(*b).numel();
                let mut gb = vec![0.0; c];
                for row in gout.data().chunks(c) {
                    for (acc, v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                send(*b, Tensor::vector(gb));
                send(*x, gout);
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (n, k) = (ta.shape()[0], ta.shape()[1]);
                let m = tb.shape()[1];
                if nodes[a.0].needs_grad {
                    let bt = transpose_raw(tb.data(), k, m);
                    let ga = matmul_raw(gout.data(), &bt, n, m, k);
                    send(*a, Tensor::new(vec![n, k], ga).expect("shape"));
                }
                if nodes[b.0].needs_grad {
                    let at = transpose_raw(ta.data(), n, k);
                    let gb = matmul_raw(&at, gout.data(), k, n, m);
                    send(*b, Tensor::new(vec![k, m], gb).expect("shape"));
                }
            }
            Op::Concat(parts) => {
                let (rows, total) = (gout.shape()[0], gout.shape()[1]);
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).shape()[1];
                    if nodes[p.0].needs_grad {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(
                                &gout.data()[r * total + offset..r * total + offset + w],
                            );
                        }
                        send(p, Tensor::new(vec![rows, w], d).expect("shape"));
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let (r, c) = (val(*a).shape()[0], val(*a).shape()[1]);
                let w = gout.shape()[1];
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    d[i * c + start..i * c + start + w]
                        .copy_from_slice(&gout.data()[i * w..(i + 1) * w]);
                }
                send(*a, Tensor::new(vec![r, c], d).expect("shape"));
            }
            Op::Sum(a) => {
                let t = val(*a);
                send(*a, Tensor::filled(t.shape(), gout.item()));
            }
            Op::Mean(a) => {
                let t = val(*a);
                send(*a, Tensor::filled(t.shape(), gout.item() / t.numel() as f64));
            }
            Op::Tanh(a) => send(*a, zip_with(&gout, y, Pairing::Equal, |g, t| g * (1.0 - t * t))),
            Op::Sigmoid(a) => {
                send(*a, zip_with(&gout, y, Pairing::Equal, |g, s| g * s * (1.0 - s)))
            }
            Op::Relu(a) => send(
                *a,
                zip_with(&gout, val(*a), Pairing::Equal, |g, x| if x > 0.0 { g } else { 0.0 }),
            ),
            Op::Gather(a, index) => {
                let (r, c) = (val(*a).shape()[0], val(*a).shape()[1]);
                let mut d = vec![0.0; r * c];
                for (row, &src) in gout.data().chunks(c).zip(index.iter()) {
                    for (o, v) in d[src * c..(src + 1) * c].iter_mut().zip(row) {
                        *o += v;
                    }
                }
                send(*a, Tensor::new(vec![r, c], d).expect("shape"));
            }
            Op::ScatterAdd(a, index) | Op::ScatterMean(a, index, _) => {
                let inv = match op {
                    Op::ScatterMean(_, _, inv) => Some(inv),
                    _ => None,
                };
                let c = gout.shape()[1];
                let mut d = Vec::with_capacity(index.len() * c);
                for &dst in index.iter() {
                    let w = inv.map_or(1.0, |s| s[dst]);
                    d.extend(gout.data()[dst * c..(dst + 1) * c].iter().map(|v| w * v));
                }
                send(*a, Tensor::new(vec![index.len(), c], d).expect("shape"));
            }
        }
    }
}

/// Pairing between the upstream gradient (output-shaped) and an operand.
/// `other_is_lhs` selects which operand the gradient is multiplied with.
fn pair_for_grad(p: Pairing, other_is_lhs: bool) -> Pairing {
    match (p, other_is_lhs) {
        (Pairing::Equal, _) => Pairing::Equal,
        (Pairing::LhsScalar, true) | (Pairing::RhsScalar, false) => Pairing::RhsScalar,
        (Pairing::LhsScalar, false) | (Pairing::RhsScalar, true) => Pairing::Equal,
    }
}
