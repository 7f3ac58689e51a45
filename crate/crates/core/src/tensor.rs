//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! Every operation records its parents and a backward rule, forming a graph
//! that lives exactly as long as the tensors referencing it. Calling
//! [`Tensor::backward`] on a scalar walks that graph once in reverse
//! topological order and *adds* the resulting gradients into every node that
//! requires one. Graphs are per forward pass: build, backward, drop.
//!
//! Tensors are reference counted and therefore confined to one thread. Model
//! parameters are stored as plain arrays elsewhere and bound into fresh leaf
//! tensors per pass, so independent passes can run on different threads.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Receives `(upstream grad, parents, output values, which parents need a grad)`
/// and returns one optional gradient per parent.
type BackwardFn = Box<dyn Fn(&[f64], &[Tensor], &[f64], &[bool]) -> Vec<Option<Vec<f64>>>>;

struct GraphOp {
    tag: &'static str,
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    op: Option<GraphOp>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    fn derivative_from_output(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Splits `shape` around `axis` into (outer, dim, inner) extents.
fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tensor {
    fn from_node(node: Node) -> Self {
        Tensor(Rc::new(node))
    }

    fn leaf(shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> Result<Self> {
        if values.len() != numel(&shape) {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {} values, got {}",
                numel(&shape),
                values.len()
            )));
        }
        Ok(Self::from_node(Node {
            shape,
            values,
            grad: RefCell::new(None),
            requires_grad,
            op: None,
        }))
    }

    /// A constant leaf: gradients are never computed for it.
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        Self::leaf(shape, values, false)
    }

    /// A leaf that collects gradients during [`Tensor::backward`].
    pub fn param(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        Self::leaf(shape, values, true)
    }

    pub fn vector(values: Vec<f64>) -> Self {
        let n = values.len();
        Self::leaf(vec![n], values, false).expect("length matches")
    }

    pub fn matrix(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged matrix rows"));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn scalar(value: f64) -> Self {
        Self::leaf(vec![1], vec![value], false).expect("length matches")
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::leaf(shape.to_vec(), vec![0.0; numel(shape)], false).expect("length matches")
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::leaf(shape.to_vec(), vec![1.0; numel(shape)], false).expect("length matches")
    }

    pub fn identity(n: usize) -> Self {
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            v[i * n + i] = 1.0;
        }
        Self::leaf(vec![n, n], v, false).expect("length matches")
    }

    /// Records an operation result. The node tracks gradients when any parent does.
    fn from_op(
        tag: &'static str,
        shape: Vec<usize>,
        values: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Self {
        debug_assert_eq!(values.len(), numel(&shape));
        let requires_grad = parents.iter().any(Tensor::requires_grad);
        Self::from_node(Node {
            shape,
            values,
            grad: RefCell::new(None),
            requires_grad,
            op: Some(GraphOp {
                tag,
                parents,
                backward,
            }),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.0.values
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.values.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.values.len()
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    pub fn op_tag(&self) -> Option<&'static str> {
        self.0.op.as_ref().map(|op| op.tag)
    }

    pub fn parent_count(&self) -> usize {
        self.0.op.as_ref().map_or(0, |op| op.parents.len())
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::invalid(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.0.values[0])
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// A constant copy cut off from the graph.
    pub fn detach(&self) -> Tensor {
        Self::leaf(self.shape().to_vec(), self.to_vec(), false).expect("length matches")
    }

    /// Row `i` of a 2-D tensor as a plain vector.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = *self.shape().last().unwrap_or(&1);
        &self.values()[i * cols..(i + 1) * cols]
    }

    fn key(&self) -> *const Node {
        Rc::as_ptr(&self.0)
    }

    // ----- operations -------------------------------------------------------

    /// Matrix product. `a` may be a vector `[k]`, treated as a single row.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k, vector_lhs) = match self.shape() {
            [k] => (1, *k, true),
            [m, k] => (*m, *k, false),
            _ => return Err(self.shape_err("matmul", other)),
        };
        let n = match other.shape() {
            [k2, n] if *k2 == k => *n,
            _ => return Err(self.shape_err("matmul", other)),
        };
        let out = matmul_raw(self.values(), other.values(), m, k, n);
        let shape = if vector_lhs { vec![n] } else { vec![m, n] };
        Ok(Tensor::from_op(
            "matmul",
            shape,
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g, parents, _, needs| {
                let a = parents[0].values();
                let b = parents[1].values();
                let ga = needs[0].then(|| {
                    // g[m×n] · bᵀ[n×k]
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            ga[i * k + p] = grow
                                .iter()
                                .zip(&b[p * n..(p + 1) * n])
                                .map(|(x, y)| x * y)
                                .sum();
                        }
                    }
                    ga
                });
                let gb = needs[1].then(|| {
                    // aᵀ[k×m] · g[m×n]
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let aip = a[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            let grow = &g[i * n..(i + 1) * n];
                            let dst = &mut gb[p * n..(p + 1) * n];
                            for (d, gv) in dst.iter_mut().zip(grow) {
                                *d += aip * gv;
                            }
                        }
                    }
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    pub fn elementwise(&self, other: &Tensor, op: BinaryOp) -> Result<Tensor> {
        if self.shape() != other.shape() {
            let name = match op {
                BinaryOp::Add => "add",
                BinaryOp::Sub => "sub",
                BinaryOp::Mul => "mul",
            };
            return Err(self.shape_err(name, other));
        }
        let a = self.values();
        let b = other.values();
        let out: Vec<f64> = match op {
            BinaryOp::Add => a.iter().zip(b).map(|(x, y)| x + y).collect(),
            BinaryOp::Sub => a.iter().zip(b).map(|(x, y)| x - y).collect(),
            BinaryOp::Mul => a.iter().zip(b).map(|(x, y)| x * y).collect(),
        };
        let tag = match op {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
        };
        Ok(Tensor::from_op(
            tag,
            self.shape().to_vec(),
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g, parents, _, needs| match op {
                BinaryOp::Add => vec![
                    needs[0].then(|| g.to_vec()),
                    needs[1].then(|| g.to_vec()),
                ],
                BinaryOp::Sub => vec![
                    needs[0].then(|| g.to_vec()),
                    needs[1].then(|| g.iter().map(|v| -v).collect()),
                ],
                BinaryOp::Mul => {
                    let a = parents[0].values();
                    let b = parents[1].values();
                    vec![
                        needs[0].then(|| g.iter().zip(b).map(|(g, b)| g * b).collect()),
                        needs[1].then(|| g.iter().zip(a).map(|(g, a)| g * a).collect()),
                    ]
                }
            }),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, BinaryOp::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, BinaryOp::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, BinaryOp::Mul)
    }

    /// `self (op) c` for every element.
    pub fn scalar_op(&self, c: f64, op: BinaryOp) -> Tensor {
        let out: Vec<f64> = match op {
            BinaryOp::Add => self.values().iter().map(|x| x + c).collect(),
            BinaryOp::Sub => self.values().iter().map(|x| x - c).collect(),
            BinaryOp::Mul => self.values().iter().map(|x| x * c).collect(),
        };
        Tensor::from_op(
            "scalar",
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, _, _, _| {
                let ga = match op {
                    BinaryOp::Add | BinaryOp::Sub => g.to_vec(),
                    BinaryOp::Mul => g.iter().map(|v| v * c).collect(),
                };
                vec![Some(ga)]
            }),
        )
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.scalar_op(c, BinaryOp::Mul)
    }

    /// `1 - self`.
    pub fn one_minus(&self) -> Tensor {
        self.scale(-1.0).scalar_op(1.0, BinaryOp::Add)
    }

    /// Adds a vector `[n]` to every row of a `[.., n]` tensor.
    pub fn add_row_vector(&self, bias: &Tensor) -> Result<Tensor> {
        let n = *self.shape().last().unwrap_or(&0);
        if bias.shape() != [n] {
            return Err(self.shape_err("add_row_vector", bias));
        }
        let b = bias.values();
        let out: Vec<f64> = self
            .values()
            .chunks(n.max(1))
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        Ok(Tensor::from_op(
            "add_row_vector",
            self.shape().to_vec(),
            out,
            vec![self.clone(), bias.clone()],
            Box::new(move |g, _, _, needs| {
                let gb = needs[1].then(|| {
                    let mut gb = vec![0.0; n];
                    for row in g.chunks(n.max(1)) {
                        for (d, v) in gb.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    gb
                });
                vec![needs[0].then(|| g.to_vec()), gb]
            }),
        ))
    }

    pub fn activation(&self, kind: Activation) -> Tensor {
        if kind == Activation::Identity {
            return self.clone();
        }
        let out: Vec<f64> = self.values().iter().map(|&x| kind.apply(x)).collect();
        let tag = match kind {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => unreachable!(),
        };
        Tensor::from_op(
            tag,
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, parents, y, _| {
                let x = parents[0].values();
                let ga = g
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(g, (&x, &y))| g * kind.derivative_from_output(x, y))
                    .collect();
                vec![Some(ga)]
            }),
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        self.activation(Activation::Sigmoid)
    }

    pub fn tanh(&self) -> Tensor {
        self.activation(Activation::Tanh)
    }

    pub fn relu(&self) -> Tensor {
        self.activation(Activation::Relu)
    }

    /// Softmax over the last axis, stabilized by subtracting each row's max.
    pub fn softmax(&self) -> Result<Tensor> {
        let n = self.last_dim("softmax")?;
        let out: Vec<f64> = self
            .values()
            .chunks(n)
            .flat_map(|row| softmax_row(row).into_iter())
            .collect();
        Ok(Tensor::from_op(
            "softmax",
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, _, y, _| {
                let mut ga = vec![0.0; y.len()];
                for ((gr, yr), dst) in g.chunks(n).zip(y.chunks(n)).zip(ga.chunks_mut(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((d, gv), yv) in dst.iter_mut().zip(gr).zip(yr) {
                        *d = yv * (gv - dot);
                    }
                }
                vec![Some(ga)]
            }),
        ))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self) -> Result<Tensor> {
        let n = self.last_dim("log_softmax")?;
        let out: Vec<f64> = self
            .values()
            .chunks(n)
            .flat_map(|row| {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                row.iter().map(move |v| v - lse)
            })
            .collect();
        Ok(Tensor::from_op(
            "log_softmax",
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, _, y, _| {
                let mut ga = vec![0.0; y.len()];
                for ((gr, yr), dst) in g.chunks(n).zip(y.chunks(n)).zip(ga.chunks_mut(n)) {
                    let total: f64 = gr.iter().sum();
                    for ((d, gv), yv) in dst.iter_mut().zip(gr).zip(yr) {
                        *d = gv - yv.exp() * total;
                    }
                }
                vec![Some(ga)]
            }),
        ))
    }

    /// Concatenates two tensors along `axis`.
    pub fn concat(&self, other: &Tensor, axis: usize) -> Result<Tensor> {
        Tensor::cat(&[self.clone(), other.clone()], axis)
    }

    /// Concatenates any number of tensors along `axis`. Empty tensors of rank 1
    /// (shape `[0]`) are accepted as identities.
    pub fn cat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let parts: Vec<Tensor> = if parts.len() > 1 {
            parts
                .iter()
                .filter(|t| !(t.shape() == [0]))
                .cloned()
                .collect()
        } else {
            parts.to_vec()
        };
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("cat of zero tensors"))?;
        if parts.len() == 1 {
            return Ok(first.clone());
        }
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::invalid(format!("axis {axis} out of range for rank {rank}")));
        }
        for p in &parts[1..] {
            let compatible = p.rank() == rank
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(first.shape_err("concat", p));
            }
        }
        let (outer, _, inner) = axis_extents(first.shape(), axis);
        let dims: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = dims.iter().sum();
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &d) in parts.iter().zip(&dims) {
                out.extend_from_slice(&p.values()[o * d * inner..(o + 1) * d * inner]);
            }
        }
        Ok(Tensor::from_op(
            "concat",
            shape,
            out,
            parts,
            Box::new(move |g, parents, _, needs| {
                let mut grads: Vec<Option<Vec<f64>>> = needs
                    .iter()
                    .zip(&dims)
                    .map(|(&need, &d)| need.then(|| Vec::with_capacity(outer * d * inner)))
                    .collect();
                let mut offset = 0;
                for _ in 0..outer {
                    for (slot, &d) in grads.iter_mut().zip(&dims) {
                        let len = d * inner;
                        if let Some(buf) = slot {
                            buf.extend_from_slice(&g[offset..offset + len]);
                        }
                        offset += len;
                    }
                }
                debug_assert_eq!(grads.len(), parents.len());
                grads
            }),
        ))
    }

    /// The sub-tensor `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        if axis >= self.rank() || start + len > self.shape()[axis] {
            return Err(Error::invalid(format!(
                "narrow({axis}, {start}, {len}) on shape {:?}",
                self.shape()
            )));
        }
        let (outer, dim, inner) = axis_extents(self.shape(), axis);
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let src = self.values();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let total = src.len();
        Ok(Tensor::from_op(
            "narrow",
            shape,
            out,
            vec![self.clone()],
            Box::new(move |g, _, _, _| {
                let mut ga = vec![0.0; total];
                for o in 0..outer {
                    let base = (o * dim + start) * inner;
                    ga[base..base + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(ga)]
            }),
        ))
    }

    /// Splits along `axis` into consecutive pieces of the given sizes.
    pub fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Tensor>> {
        if axis >= self.rank() || sizes.iter().sum::<usize>() != self.shape()[axis] {
            return Err(Error::invalid(format!(
                "split sizes {sizes:?} do not cover axis {axis} of {:?}",
                self.shape()
            )));
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&len| {
                let piece = self.narrow(axis, start, len);
                start += len;
                piece
            })
            .collect()
    }

    /// Gathers rows of a `[rows×cols]` matrix. Backward scatters additively.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let (rows, cols) = match self.shape() {
            [r, c] => (*r, *c),
            _ => return Err(Error::invalid("gather_rows needs a matrix")),
        };
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(Error::OutOfRange {
                    index: i,
                    size: rows,
                });
            }
            out.extend_from_slice(&self.values()[i * cols..(i + 1) * cols]);
        }
        let idx = indices.to_vec();
        Ok(Tensor::from_op(
            "gather_rows",
            vec![indices.len(), cols],
            out,
            vec![self.clone()],
            Box::new(move |g, _, _, _| {
                let mut ga = vec![0.0; rows * cols];
                for (k, &i) in idx.iter().enumerate() {
                    for (d, v) in ga[i * cols..(i + 1) * cols]
                        .iter_mut()
                        .zip(&g[k * cols..(k + 1) * cols])
                    {
                        *d += v;
                    }
                }
                vec![Some(ga)]
            }),
        ))
    }

    /// Picks one column per row of a `[rows×cols]` matrix, giving `[rows]`.
    pub fn pick_per_row(&self, columns: &[usize]) -> Result<Tensor> {
        let (rows, cols) = match self.shape() {
            [r, c] => (*r, *c),
            _ => return Err(Error::invalid("pick_per_row needs a matrix")),
        };
        if columns.len() != rows {
            return Err(Error::Shape {
                op: "pick_per_row",
                left: self.shape().to_vec(),
                right: vec![columns.len()],
            });
        }
        if let Some(&bad) = columns.iter().find(|&&c| c >= cols) {
            return Err(Error::OutOfRange {
                index: bad,
                size: cols,
            });
        }
        let out = columns
            .iter()
            .enumerate()
            .map(|(r, &c)| self.values()[r * cols + c])
            .collect();
        let cols_idx = columns.to_vec();
        Ok(Tensor::from_op(
            "pick_per_row",
            vec![rows],
            out,
            vec![self.clone()],
            Box::new(move |g, _, _, _| {
                let mut ga = vec![0.0; rows * cols];
                for (r, &c) in cols_idx.iter().enumerate() {
                    ga[r * cols + c] = g[r];
                }
                vec![Some(ga)]
            }),
        ))
    }

    /// Single element at flat index `i`, as a scalar tensor.
    pub fn element(&self, i: usize) -> Result<Tensor> {
        if i >= self.numel() {
            return Err(Error::OutOfRange {
                index: i,
                size: self.numel(),
            });
        }
        let total = self.numel();
        Ok(Tensor::from_op(
            "element",
            vec![1],
            vec![self.values()[i]],
            vec![self.clone()],
            Box::new(move |g, _, _, _| {
                let mut ga = vec![0.0; total];
                ga[i] = g[0];
                vec![Some(ga)]
            }),
        ))
    }

    pub fn sum(&self) -> Tensor {
        let total = self.numel();
        Tensor::from_op(
            "sum",
            vec![1],
            vec![self.values().iter().sum()],
            vec![self.clone()],
            Box::new(move |g, _, _, _| vec![Some(vec![g[0]; total])]),
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn sum_squares(&self) -> Tensor {
        Tensor::from_op(
            "sum_squares",
            vec![1],
            vec![self.values().iter().map(|v| v * v).sum()],
            vec![self.clone()],
            Box::new(|g, parents, _, _| {
                vec![Some(parents[0].values().iter().map(|v| 2.0 * v * g[0]).collect())]
            }),
        )
    }

    /// Same values under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(self.shape_err("reshape", &Tensor::zeros(shape)));
        }
        Ok(Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|g, _, _, _| vec![Some(g.to_vec())]),
        ))
    }

    /// Scales each row (last axis) to unit L2 norm. Zero rows pass through.
    pub fn l2_normalize_rows(&self) -> Result<Tensor> {
        let n = self.last_dim("l2_normalize_rows")?;
        let norms: Vec<f64> = self
            .values()
            .chunks(n)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let out: Vec<f64> = self
            .values()
            .chunks(n)
            .zip(&norms)
            .flat_map(|(r, &nm)| r.iter().map(move |v| if nm > 0.0 { v / nm } else { *v }))
            .collect();
        Ok(Tensor::from_op(
            "l2_normalize_rows",
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, _, y, _| {
                let mut ga = vec![0.0; y.len()];
                for (((gr, yr), dst), &nm) in g
                    .chunks(n)
                    .zip(y.chunks(n))
                    .zip(ga.chunks_mut(n))
                    .zip(&norms)
                {
                    if nm == 0.0 {
                        dst.copy_from_slice(gr);
                        continue;
                    }
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((d, gv), yv) in dst.iter_mut().zip(gr).zip(yr) {
                        *d = (gv - yv * dot) / nm;
                    }
                }
                vec![Some(ga)]
            }),
        ))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-rate)` so inference is
    /// the identity.
    pub fn dropout<R: Rng + ?Sized>(&self, rate: f64, training: bool, rng: &mut R) -> Result<Tensor> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(self.clone());
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.numel())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let mask = Tensor::new(self.shape().to_vec(), mask)?;
        self.mul(&mask)
    }

    // ----- backward ---------------------------------------------------------

    /// Back-propagates from a one-element root, adding `∂root/∂node` into the
    /// gradient buffer of every reachable node that requires a gradient.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topological_order();
        let mut grads: HashMap<*const Node, Vec<f64>> = HashMap::with_capacity(order.len());
        grads.insert(self.key(), vec![1.0]);
        for node in order.iter().rev() {
            let Some(g) = grads.get(&node.key()).cloned() else {
                continue;
            };
            if let Some(op) = &node.0.op {
                let needs: Vec<bool> = op.parents.iter().map(Tensor::requires_grad).collect();
                let parent_grads = (op.backward)(&g, &op.parents, node.values(), &needs);
                for ((parent, pg), need) in op.parents.iter().zip(parent_grads).zip(needs) {
                    if !need {
                        continue;
                    }
                    let Some(pg) = pg else { continue };
                    match grads.get_mut(&parent.key()) {
                        Some(acc) => {
                            for (a, v) in acc.iter_mut().zip(&pg) {
                                *a += v;
                            }
                        }
                        None => {
                            grads.insert(parent.key(), pg);
                        }
                    }
                }
            }
        }
        for node in &order {
            if let Some(g) = grads.remove(&node.key()) {
                let mut slot = node.0.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(&g) {
                            *a += v;
                        }
                    }
                    None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    /// Nodes requiring gradients, parents before children.
    fn topological_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        // (node, children expanded?)
        let mut stack = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.key()) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(op) = &node.0.op {
                for p in &op.parents {
                    if p.requires_grad() && !visited.contains(&p.key()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }

    // ----- helpers ----------------------------------------------------------

    fn shape_err(&self, op: &'static str, other: &Tensor) -> Error {
        Error::Shape {
            op,
            left: self.shape().to_vec(),
            right: other.shape().to_vec(),
        }
    }

    fn last_dim(&self, op: &str) -> Result<usize> {
        match self.shape().last() {
            Some(&n) if n >= 1 => Ok(n),
            _ => Err(Error::invalid(format!(
                "{op} needs a non-empty last axis, got {:?}",
                self.shape()
            ))),
        }
    }

    /// True when both handles refer to the same graph node.
    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("values", &self.values())
            .field("op", &self.op_tag())
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let dst = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (d, bv) in dst.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *d += aip * bv;
            }
        }
    }
    out
}

pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
