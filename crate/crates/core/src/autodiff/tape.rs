//! Single-use reverse-mode tape over [`Tensor`] values.
//!
//! Operations are recorded in topological order during the forward pass;
//! [`Tape::backward`] consumes the tape and returns one adjoint per node.
//! Values are available while the tape is being built, so data-dependent
//! control flow (active sets, clip sides) can be resolved before the
//! corresponding nodes are pushed.

use super::tensor::Tensor;
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf { param: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MatMul(Var, Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Neg(Var),
    Scale(Var, f64),
    AddConst(Var),
    /// max(x, bound) with exact pass-through above the bound.
    ClipLo(Var, Tensor),
    /// min(x, bound) with exact pass-through below the bound.
    ClipHi(Var, Tensor),
    Sum(Var),
    /// Column means of a rank-2 input: `[r, c] -> [c]`.
    MeanRows(Var),
    Transpose(Var),
    Reshape(Var, Vec<usize>),
    /// Contiguous rank-1 slice `[start, start + len)`.
    Slice(Var, usize, usize),
    /// Rank-1 concatenation.
    Concat(Var, Var),
    /// Column-wise concatenation of two rank-2 tensors with equal row counts.
    ConcatCols(Var, Var),
    /// Single entry of a rank-1 tensor as a scalar.
    Index(Var, usize),
    /// Tensor scaled by a scalar node.
    MulScalar(Var, Var),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Grads {
    adjoints: Vec<Option<Tensor>>,
}

impl Grads {
    /// Adjoint of `v`, or `None` when the output did not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.adjoints[v.0].as_ref()
    }

    /// Adjoint of `v`, zero-filled when the output did not depend on it.
    pub fn get_or_zero(&self, v: Var, shape: &[usize]) -> Tensor {
        self.adjoints[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(shape))
    }
}

/// Recording tape. Build nodes with the op methods, then call
/// [`Tape::backward`] once on a scalar output.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf: no gradient is reported for it unless requested.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf { param: false }, value)
    }

    /// Parameter leaf; [`Grads::get`] is the point of registering one.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf { param: true }, value)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.leaf(Tensor::scalar(v))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn binary_elementwise(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let value = self.value(a).zip_map(self.value(b), f);
        self.push(op, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary_elementwise(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary_elementwise(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary_elementwise(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary_elementwise(a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), value)
    }

    /// max(x, 0); the gradient at exactly zero is zero.
    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(Op::Relu(a), value)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), value)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        self.push(Op::Ln(a), value)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::sqrt);
        self.push(Op::Sqrt(a), value)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| -x);
        self.push(Op::Neg(a), value)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| c * x);
        self.push(Op::Scale(a, c), value)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        self.push(Op::AddConst(a), value)
    }

    /// Coordinate-wise lower clip against a constant bound. Entries at or
    /// above the bound pass through bit-identically.
    pub fn clip_lo(&mut self, a: Var, bound: Tensor) -> Var {
        let value = self
            .value(a)
            .zip_map(&bound, |x, b| if x >= b { x } else { b });
        self.push(Op::ClipLo(a, bound), value)
    }

    /// Coordinate-wise upper clip against a constant bound.
    pub fn clip_hi(&mut self, a: Var, bound: Tensor) -> Var {
        let value = self
            .value(a)
            .zip_map(&bound, |x, b| if x <= b { x } else { b });
        self.push(Op::ClipHi(a, bound), value)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(Op::Sum(a), value)
    }

    /// Column means of a rank-2 tensor: `[r, c] -> [c]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        assert_eq!(t.shape().len(), 2, "mean_rows needs rank 2");
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let mut out = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += t.data()[i * c + j];
            }
        }
        for v in &mut out {
            *v /= r as f64;
        }
        self.push(Op::MeanRows(a), Tensor::from_vec(out))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(Op::Transpose(a), value)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        let t = self.value(a);
        assert_eq!(
            t.len(),
            shape.iter().product::<usize>(),
            "reshape length mismatch"
        );
        let prev = t.shape().to_vec();
        let value = Tensor::new(shape, t.data().to_vec()).expect("checked above");
        self.push(Op::Reshape(a, prev), value)
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        assert_eq!(t.shape().len(), 1, "slice needs rank 1");
        assert!(start + len <= t.len(), "slice out of range");
        let value = Tensor::from_vec(t.data()[start..start + len].to_vec());
        self.push(Op::Slice(a, start, len), value)
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape().len(), 1, "concat needs rank 1");
        assert_eq!(tb.shape().len(), 1, "concat needs rank 1");
        let mut data = ta.data().to_vec();
        data.extend_from_slice(tb.data());
        self.push(Op::Concat(a, b), Tensor::from_vec(data))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape().len(), 2, "concat_cols needs rank 2");
        assert_eq!(tb.shape().len(), 2, "concat_cols needs rank 2");
        assert_eq!(ta.shape()[0], tb.shape()[0], "concat_cols row mismatch");
        let r = ta.shape()[0];
        let (ca, cb) = (ta.shape()[1], tb.shape()[1]);
        let mut data = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            data.extend_from_slice(&ta.data()[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&tb.data()[i * cb..(i + 1) * cb]);
        }
        let value = Tensor::matrix(r, ca + cb, data).expect("sized above");
        self.push(Op::ConcatCols(a, b), value)
    }

    pub fn index(&mut self, a: Var, i: usize) -> Var {
        let t = self.value(a);
        assert!(i < t.len(), "index out of range");
        let value = Tensor::scalar(t.data()[i]);
        self.push(Op::Index(a, i), value)
    }

    /// Elementwise product of `a` with a one-entry scalar node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        assert!(self.value(s).is_scalar(), "mul_scalar wants a scalar node");
        let sv = self.value(s).item();
        let value = self.value(a).map(|x| x * sv);
        self.push(Op::MulScalar(a, s), value)
    }

    /// Reverse sweep from the scalar node `out`. Consumes the tape: adjoints
    /// are single-use by construction.
    pub fn backward(self, out: Var) -> Result<Grads> {
        if !self.nodes[out.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                self.nodes[out.0].value.shape()
            )));
        }
        let n = self.nodes.len();
        let mut adjoints: Vec<Option<Tensor>> = vec![None; n];
        adjoints[out.0] = Some(Tensor::scalar(1.0));

        for idx in (0..n).rev() {
            let Some(g) = adjoints[idx].take() else {
                continue;
            };
            if !g.all_finite() {
                return Err(Error::Numeric {
                    node: idx,
                    msg: "non-finite adjoint".into(),
                });
            }
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf { param } => {
                    // Adjoints are guaranteed for parameter leaves only;
                    // plain constants drop theirs.
                    if *param {
                        adjoints[idx] = Some(g);
                    }
                    continue;
                }
                Op::Add(a, b) => {
                    accumulate(&mut adjoints, *a, g.clone());
                    accumulate(&mut adjoints, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adjoints, *a, g.clone());
                    accumulate(&mut adjoints, *b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value_of(*b), |gv, bv| gv * bv);
                    let db = g.zip_map(self.value_of(*a), |gv, av| gv * av);
                    accumulate(&mut adjoints, *a, da);
                    accumulate(&mut adjoints, *b, db);
                }
                Op::Div(a, b) => {
                    let bv = self.value_of(*b);
                    let da = g.zip_map(bv, |gv, b| gv / b);
                    let av = self.value_of(*a);
                    let mut db = g.zip_map(av, |gv, a| gv * a);
                    db = db.zip_map(bv, |x, b| -x / (b * b));
                    accumulate(&mut adjoints, *a, da);
                    accumulate(&mut adjoints, *b, db);
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul(&self.value_of(*b).transpose());
                    let db = self.value_of(*a).transpose().matmul(&g);
                    accumulate(&mut adjoints, *a, da);
                    accumulate(&mut adjoints, *b, db);
                }
                Op::Tanh(a) => {
                    let da = g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y));
                    accumulate(&mut adjoints, *a, da);
                }
                Op::Relu(a) => {
                    let da = g.zip_map(self.value_of(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                    accumulate(&mut adjoints, *a, da);
                }
                Op::Exp(a) => {
                    let da = g.zip_map(&node.value, |gv, y| gv * y);
                    accumulate(&mut adjoints, *a, da);
                }
                Op::Ln(a) => {
                    let da = g.zip_map(self.value_of(*a), |gv, x| gv / x);
                    accumulate(&mut adjoints, *a, da);
                }
                Op::Sqrt(a) => {
                    let da = g.zip_map(&node.value, |gv, y| gv / (2.0 * y));
                    accumulate(&mut adjoints, *a, da);
                }
                Op::Neg(a) => {
                    accumulate(&mut adjoints, *a, g.map(|x| -x));
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    accumulate(&mut adjoints, *a, g.map(|x| c * x));
                }
                Op::AddConst(a) => {
                    accumulate(&mut adjoints, *a, g);
                }
                Op::ClipLo(a, bound) => {
                    let xv = self.value_of(*a);
                    let mut da = g.zip_map(xv, |gv, _| gv);
                    for (i, d) in da.data_mut().iter_mut().enumerate() {
                        if xv.data()[i] <= bound.data()[i] {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut adjoints, *a, da);
                }
                Op::ClipHi(a, bound) => {
                    let xv = self.value_of(*a);
                    let mut da = g.zip_map(xv, |gv, _| gv);
                    for (i, d) in da.data_mut().iter_mut().enumerate() {
                        if xv.data()[i] >= bound.data()[i] {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut adjoints, *a, da);
                }
                Op::Sum(a) => {
                    let gv = g.item();
                    let shape = self.value_of(*a).shape().to_vec();
                    let mut da = Tensor::zeros(&shape);
                    da.data_mut().fill(gv);
                    accumulate(&mut adjoints, *a, da);
                }
                Op::MeanRows(a) => {
                    let shape = self.value_of(*a).shape().to_vec();
                    let (r, c) = (shape[0], shape[1]);
                    let mut da = Tensor::zeros(&shape);
                    for i in 0..r {
                        for j in 0..c {
                            da.data_mut()[i * c + j] = g.data()[j] / r as f64;
                        }
                    }
                    accumulate(&mut adjoints, *a, da);
                }
                Op::Transpose(a) => {
                    accumulate(&mut adjoints, *a, g.transpose());
                }
                Op::Reshape(a, prev) => {
                    let da = Tensor::new(prev.clone(), g.data().to_vec()).expect("same length");
                    accumulate(&mut adjoints, *a, da);
                }
                Op::Slice(a, start, len) => {
                    let shape = self.value_of(*a).shape().to_vec();
                    let mut da = Tensor::zeros(&shape);
                    da.data_mut()[*start..start + len].copy_from_slice(g.data());
                    accumulate(&mut adjoints, *a, da);
                }
                Op::Concat(a, b) => {
                    let na = self.value_of(*a).len();
                    let da = Tensor::from_vec(g.data()[..na].to_vec());
                    let db = Tensor::from_vec(g.data()[na..].to_vec());
                    accumulate(&mut adjoints, *a, da);
                    accumulate(&mut adjoints, *b, db);
                }
                Op::ConcatCols(a, b) => {
                    let sa = self.value_of(*a).shape().to_vec();
                    let sb = self.value_of(*b).shape().to_vec();
                    let (r, ca, cb) = (sa[0], sa[1], sb[1]);
                    let mut da = Tensor::zeros(&sa);
                    let mut db = Tensor::zeros(&sb);
                    for i in 0..r {
                        let row = &g.data()[i * (ca + cb)..(i + 1) * (ca + cb)];
                        da.data_mut()[i * ca..(i + 1) * ca].copy_from_slice(&row[..ca]);
                        db.data_mut()[i * cb..(i + 1) * cb].copy_from_slice(&row[ca..]);
                    }
                    accumulate(&mut adjoints, *a, da);
                    accumulate(&mut adjoints, *b, db);
                }
                Op::Index(a, i) => {
                    let shape = self.value_of(*a).shape().to_vec();
                    let mut da = Tensor::zeros(&shape);
                    da.data_mut()[*i] = g.item();
                    accumulate(&mut adjoints, *a, da);
                }
                Op::MulScalar(a, s) => {
                    let sv = self.value_of(*s).item();
                    let da = g.map(|x| x * sv);
                    let ds = Tensor::scalar(
                        g.data()
                            .iter()
                            .zip(self.value_of(*a).data())
                            .map(|(&gv, &av)| gv * av)
                            .sum(),
                    );
                    accumulate(&mut adjoints, *a, da);
                    accumulate(&mut adjoints, *s, ds);
                }
            }
        }
        Ok(Grads { adjoints })
    }

    fn value_of(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }
}

fn accumulate(adjoints: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut adjoints[v.0] {
        Some(acc) => {
            let sum = acc.zip_map(&g, |a, b| a + b);
            *acc = sum;
        }
        slot @ None => *slot = Some(g),
    }
}
