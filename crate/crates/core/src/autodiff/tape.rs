//! Define-by-run tape. Every op appends a node whose inputs already exist on
//! the tape, so node order is a topological order and backward is a single
//! reverse sweep.

use crate::error::{Error, Result};

use super::tensor::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The operation catalog.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Leaf,
    /// `[m×n] · [n] → [m]`
    MatVec,
    Add,
    Sub,
    /// Elementwise product.
    Mul,
    /// Vector times a one-element tensor.
    MulScalar,
    /// Multiply by a constant.
    Scale(f64),
    Concat,
    Slice {
        start: usize,
        len: usize,
    },
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Softmax,
    LogSoftmax,
    /// Sum of all entries to a one-element tensor.
    Sum,
    /// Elementwise `(a - b)^2`.
    SqDiff,
    /// Forward is one-hot(argmax); backward is the identity.
    StraightThrough,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatVec => "matvec",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::MulScalar => "mul_scalar",
            Op::Scale(_) => "scale",
            Op::Concat => "concat",
            Op::Slice { .. } => "slice",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Softmax => "softmax",
            Op::LogSoftmax => "log_softmax",
            Op::Sum => "sum",
            Op::SqDiff => "sq_diff",
            Op::StraightThrough => "straight_through",
        }
    }
}

struct Node<T> {
    op: Op,
    inputs: Vec<usize>,
    value: Tensor<T>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn log_sum_exp<T: Real>(x: &[T]) -> T {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    m + x.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}

fn shapes_of<T: Real>(inputs: &[&Tensor<T>]) -> String {
    inputs
        .iter()
        .map(|t| format!("{:?}", t.shape()))
        .collect::<Vec<_>>()
        .join(", ")
}

fn arity(op: &Op, n: usize) -> bool {
    match op {
        Op::Leaf => n == 0,
        Op::Concat => n >= 1,
        Op::MatVec | Op::Add | Op::Sub | Op::Mul | Op::MulScalar | Op::SqDiff => n == 2,
        _ => n == 1,
    }
}

/// Evaluates `op` on input values. Shared by recording and replay.
fn evaluate<T: Real>(op: &Op, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let name = op.name();
    let mismatch = || Error::shape(name, shapes_of(inputs));
    if !arity(op, inputs.len()) {
        return Err(Error::shape(
            name,
            format!("wrong number of inputs ({}): {}", inputs.len(), shapes_of(inputs)),
        ));
    }
    let vector_only = |t: &Tensor<T>| if t.is_vector() { Ok(()) } else { Err(mismatch()) };
    let out = match op {
        Op::Leaf => unreachable!("leaves are not evaluated"),
        Op::MatVec => {
            let (w, x) = (inputs[0], inputs[1]);
            if w.shape().len() != 2 || !x.is_vector() || w.shape()[1] != x.len() {
                return Err(mismatch());
            }
            let cols = w.shape()[1];
            let out = w
                .data()
                .chunks_exact(cols)
                .map(|row| row.iter().zip(x.data()).map(|(&a, &b)| a * b).sum())
                .collect();
            Tensor::vector(out)
        }
        Op::Add | Op::Sub | Op::Mul | Op::SqDiff => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() != b.shape() {
                return Err(mismatch());
            }
            let f: fn(T, T) -> T = match op {
                Op::Add => |x, y| x + y,
                Op::Sub => |x, y| x - y,
                Op::Mul => |x, y| x * y,
                _ => |x, y| (x - y) * (x - y),
            };
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(a.shape().to_vec(), data)?
        }
        Op::MulScalar => {
            let (x, s) = (inputs[0], inputs[1]);
            if !s.is_scalar() {
                return Err(mismatch());
            }
            let s = s.item();
            x.map(|v| v * s)
        }
        Op::Scale(c) => {
            let c = T::of(*c);
            inputs[0].map(|v| v * c)
        }
        Op::Concat => {
            let mut out = Vec::with_capacity(inputs.iter().map(|t| t.len()).sum());
            for t in inputs {
                vector_only(t)?;
                out.extend_from_slice(t.data());
            }
            Tensor::vector(out)
        }
        Op::Slice { start, len } => {
            let x = inputs[0];
            vector_only(x)?;
            if *len == 0 || start + len > x.len() {
                return Err(Error::shape(
                    name,
                    format!("[{start}..{}) of {:?}", start + len, x.shape()),
                ));
            }
            Tensor::vector(x.data()[*start..start + len].to_vec())
        }
        Op::Sigmoid => inputs[0].map(sigmoid),
        Op::Tanh => inputs[0].map(|v| v.tanh()),
        Op::Exp => inputs[0].map(|v| v.exp()),
        Op::Log => inputs[0].map(|v| v.ln()),
        Op::Softmax => {
            let x = inputs[0];
            vector_only(x)?;
            let lse = log_sum_exp(x.data());
            x.map(|v| (v - lse).exp())
        }
        Op::LogSoftmax => {
            let x = inputs[0];
            vector_only(x)?;
            let lse = log_sum_exp(x.data());
            x.map(|v| v - lse)
        }
        Op::Sum => Tensor::scalar(inputs[0].data().iter().copied().sum()),
        Op::StraightThrough => {
            let x = inputs[0];
            vector_only(x)?;
            let k = argmax(x.data());
            let mut out = vec![T::zero(); x.len()];
            out[k] = T::one();
            Tensor::vector(out)
        }
    };
    if !out.all_finite() {
        return Err(Error::NonFinite { op: name });
    }
    Ok(out)
}

/// Index of the first maximal entry.
pub fn argmax<T: PartialOrd + Copy>(x: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate().skip(1) {
        if *v > x[best] {
            best = i;
        }
    }
    best
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf: a parameter or a constant.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            value,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant_vec(&mut self, data: &[f64]) -> Var {
        self.leaf(Tensor::vector(data.iter().map(|&x| T::of(x)).collect()))
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.leaf(Tensor::scalar(T::of(x)))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn op(&self, v: Var) -> &Op {
        &self.nodes[v.0].op
    }

    /// Applies a catalogued op to existing nodes and records the result.
    pub fn apply(&mut self, op: Op, inputs: &[Var]) -> Result<Var> {
        if op == Op::Leaf {
            return Err(Error::shape("leaf", "leaves are created with Tape::leaf"));
        }
        let value = {
            let values: Vec<&Tensor<T>> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            evaluate(&op, &values)?
        };
        self.nodes.push(Node {
            op,
            inputs: inputs.iter().map(|v| v.0).collect(),
            value,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        self.apply(Op::MatVec, &[w, x])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Mul, &[a, b])
    }
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        self.apply(Op::MulScalar, &[x, s])
    }
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.apply(Op::Scale(c), &[x])
    }
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(Op::Concat, parts)
    }
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.apply(Op::Slice { start, len }, &[x])
    }
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Sigmoid, &[x])
    }
    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Tanh, &[x])
    }
    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Exp, &[x])
    }
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Log, &[x])
    }
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Softmax, &[x])
    }
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::LogSoftmax, &[x])
    }
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Sum, &[x])
    }
    pub fn sq_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::SqDiff, &[a, b])
    }
    pub fn straight_through(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::StraightThrough, &[x])
    }

    /// `affine(w, x, b) = w·x + b`
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let wx = self.matvec(w, x)?;
        self.add(wx, b)
    }

    /// Rebuilds the tape from its leaves by re-evaluating every recorded op.
    pub fn replay(&self) -> Result<Tape<T>> {
        let mut out = Tape {
            nodes: Vec::with_capacity(self.nodes.len()),
        };
        for node in &self.nodes {
            match node.op {
                Op::Leaf => {
                    out.leaf(node.value.clone());
                }
                _ => {
                    let inputs: Vec<Var> = node.inputs.iter().map(|&i| Var(i)).collect();
                    out.apply(node.op.clone(), &inputs)?;
                }
            }
        }
        Ok(out)
    }

    /// Reverse sweep from a scalar `loss`. Nodes not reachable from `loss`
    /// keep a zero gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let input = |k: usize| &self.nodes[node.inputs[k]].value;
        let y = node.value.data();
        // Accumulates `f(i)` into the gradient of input `k`.
        let acc = |grads: &mut [Option<Vec<T>>], k: usize, f: &dyn Fn(usize) -> T| {
            let id = node.inputs[k];
            let n = self.nodes[id].value.len();
            let slot = grads[id].get_or_insert_with(|| vec![T::zero(); n]);
            for (i, s) in slot.iter_mut().enumerate() {
                *s = *s + f(i);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatVec => {
                let (w, x) = (input(0), input(1));
                let cols = w.shape()[1];
                acc(grads, 0, &|i| g[i / cols] * x.data()[i % cols]);
                let wd = w.data();
                let id = node.inputs[1];
                let slot = grads[id].get_or_insert_with(|| vec![T::zero(); cols]);
                for (r, &gr) in g.iter().enumerate() {
                    if gr == T::zero() {
                        continue;
                    }
                    let row = &wd[r * cols..(r + 1) * cols];
                    for (s, &wv) in slot.iter_mut().zip(row) {
                        *s = *s + wv * gr;
                    }
                }
            }
            Op::Add => {
                acc(grads, 0, &|i| g[i]);
                acc(grads, 1, &|i| g[i]);
            }
            Op::Sub => {
                acc(grads, 0, &|i| g[i]);
                acc(grads, 1, &|i| -g[i]);
            }
            Op::Mul => {
                let (a, b) = (input(0).data(), input(1).data());
                acc(grads, 0, &|i| g[i] * b[i]);
                acc(grads, 1, &|i| g[i] * a[i]);
            }
            Op::MulScalar => {
                let (x, s) = (input(0).data(), input(1).item());
                acc(grads, 0, &|i| g[i] * s);
                let ds: T = g.iter().zip(x).map(|(&gi, &xi)| gi * xi).sum();
                acc(grads, 1, &|_| ds);
            }
            Op::Scale(c) => {
                let c = T::of(*c);
                acc(grads, 0, &|i| g[i] * c);
            }
            Op::Concat => {
                let mut offset = 0;
                for k in 0..node.inputs.len() {
                    let n = input(k).len();
                    let o = offset;
                    acc(grads, k, &|i| g[o + i]);
                    offset += n;
                }
            }
            Op::Slice { start, len } => {
                let (start, len) = (*start, *len);
                acc(grads, 0, &|i| {
                    if i >= start && i < start + len {
                        g[i - start]
                    } else {
                        T::zero()
                    }
                });
            }
            Op::Sigmoid => acc(grads, 0, &|i| g[i] * y[i] * (T::one() - y[i])),
            Op::Tanh => acc(grads, 0, &|i| g[i] * (T::one() - y[i] * y[i])),
            Op::Exp => acc(grads, 0, &|i| g[i] * y[i]),
            Op::Log => {
                let x = input(0).data();
                acc(grads, 0, &|i| g[i] / x[i]);
            }
            Op::Softmax => {
                let dot: T = g.iter().zip(y).map(|(&a, &b)| a * b).sum();
                acc(grads, 0, &|i| y[i] * (g[i] - dot));
            }
            Op::LogSoftmax => {
                let total: T = g.iter().copied().sum();
                acc(grads, 0, &|i| g[i] - y[i].exp() * total);
            }
            Op::Sum => acc(grads, 0, &|_| g[0]),
            Op::SqDiff => {
                let (a, b) = (input(0).data(), input(1).data());
                let two = T::of(2.0);
                acc(grads, 0, &|i| g[i] * two * (a[i] - b[i]));
                acc(grads, 1, &|i| -g[i] * two * (a[i] - b[i]));
            }
            Op::StraightThrough => acc(grads, 0, &|i| g[i]),
        }
    }
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `v`; zeros if `v` was not reached.
    pub fn get(&self, v: Var) -> Tensor<T> {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn reached(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}
