//! Define-by-run computation record.
//!
//! Every op on a [`Var`] appends a node holding its output value and the ids of
//! its inputs. [`Tape::backward`] replays the nodes in reverse, accumulating
//! adjoints, and hands back the gradients of every parameter leaf.
//!
//! Shapes are never broadcast implicitly. The binary elementwise ops accept a
//! `1 x 1` operand on either side; [`Var::add_row`] is the explicit bias add.
//! A shape mismatch is a programming error and panics with both shapes.

use std::cell::{Cell, RefCell};
use std::ops;

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul_at_into, matmul_bt_into, matmul_into, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(usize, usize),
    RowMatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    AddRow(usize, usize),
    ConcatCols(usize, usize),
    SliceCols(usize, usize),
    GatherRows(usize, Vec<usize>),
    Reshape(usize),
    Neg(usize),
    Sigmoid(usize),
    Tanh(usize),
    Softplus(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
    SumRows(usize),
    Softmax(usize),
    LogSoftmax(usize),
    LogSumExp(usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::RowMatMul(..) => "row_matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::AddRow(..) => "add_row",
            Op::ConcatCols(..) => "concat",
            Op::SliceCols(..) => "slice",
            Op::GatherRows(..) => "gather_rows",
            Op::Reshape(..) => "reshape",
            Op::Neg(..) => "neg",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Softplus(..) => "softplus",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Square(..) => "square",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumRows(..) => "sum_rows",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::LogSumExp(..) => "logsumexp",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// A single forward pass. Not `Sync`; build one per sequence.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    param_nodes: RefCell<Vec<Option<usize>>>,
    non_finite: Cell<Option<(usize, &'static str)>>,
}

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        if self.non_finite.get().is_none() && !value.is_finite() {
            self.non_finite.set(Some((id, op.name())));
        }
        nodes.push(Node { value, op });
        Var { tape: self, id }
    }

    /// A constant input. Its gradient is available through [`Gradients::of`].
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&self, value: f64) -> Var<'_> {
        self.leaf(Tensor::scalar(value))
    }

    /// Brings a parameter onto the tape; repeated calls reuse the same node.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        {
            let cache = self.param_nodes.borrow();
            if let Some(Some(node)) = cache.get(id.index()) {
                return Var {
                    tape: self,
                    id: *node,
                };
            }
        }
        let var = self.push(store.value(id).clone(), Op::Param(id));
        let mut cache = self.param_nodes.borrow_mut();
        if cache.len() <= id.index() {
            cache.resize(id.index() + 1, None);
        }
        cache[id.index()] = Some(var.id);
        var
    }

    /// First op that produced a NaN or infinity, if any.
    pub fn check_finite(&self) -> Result<()> {
        match self.non_finite.get() {
            Some((op_id, op)) => Err(Error::NonFinite { op_id, op }),
            None => Ok(()),
        }
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        assert!(std::ptr::eq(loss.tape, self), "loss belongs to another tape");
        let nodes = self.nodes.borrow();
        let loss_shape = nodes[loss.id].value.shape();
        if loss_shape != [1, 1] {
            return Err(Error::InvalidArgument(format!(
                "backward requires a scalar loss, got shape {loss_shape:?}"
            )));
        }
        self.check_finite()?;

        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            backprop_node(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }

        let mut params = Vec::new();
        for (id, node) in nodes.iter().enumerate().take(loss.id + 1) {
            if let Op::Param(pid) = node.op {
                let g = grads[id]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(node.value.rows(), node.value.cols()));
                params.push((pid, g));
            }
        }
        params.sort_by_key(|(pid, _)| pid.index());
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }
}

/// Result of a reverse sweep.
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Tensor)>,
}

impl Gradients {
    /// Gradient with respect to any node on the tape (zero-shaped `None` if disconnected).
    pub fn of(&self, var: Var<'_>) -> Option<&Tensor> {
        self.nodes.get(var.id).and_then(Option::as_ref)
    }

    /// Parameter gradients in parameter-id order.
    pub fn params(&self) -> &[(ParamId, Tensor)] {
        &self.params
    }

    /// Adds these gradients into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (pid, g) in &self.params {
            store.grad_mut(*pid).add_assign(g);
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, shape: [usize; 2], f: impl FnOnce(&mut Tensor)) {
    let slot = grads[id].get_or_insert_with(|| Tensor::zeros(shape[0], shape[1]));
    f(slot);
}

/// Sums an elementwise-shaped adjoint down to a `1 x 1` operand when that operand was broadcast.
fn reduce_to(shape: [usize; 2], g: Tensor) -> Tensor {
    if shape == g.shape() {
        g
    } else {
        Tensor::scalar(g.data().iter().sum())
    }
}

fn backprop_node(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let node = &nodes[id];
    let out = &node.value;
    let val = |i: usize| &nodes[i].value;
    let shape = |i: usize| nodes[i].value.shape();
    match &node.op {
        Op::Leaf | Op::Param(_) => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (n, k, m) = (av.rows(), av.cols(), bv.cols());
            accumulate(grads, *a, shape(*a), |ga| {
                matmul_bt_into(g.data(), bv.data(), ga.data_mut(), n, m, k)
            });
            accumulate(grads, *b, shape(*b), |gb| {
                matmul_at_into(av.data(), g.data(), gb.data_mut(), n, k, m)
            });
        }
        Op::RowMatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (n, d, m) = (av.rows(), av.cols(), bv.cols());
            accumulate(grads, *a, shape(*a), |ga| {
                for i in 0..n {
                    let block = &bv.data()[i * d * m..(i + 1) * d * m];
                    matmul_bt_into(
                        g.row_slice(i),
                        block,
                        ga.row_slice_mut(i),
                        1,
                        m,
                        d,
                    );
                }
            });
            accumulate(grads, *b, shape(*b), |gb| {
                for i in 0..n {
                    let block = &mut gb.data_mut()[i * d * m..(i + 1) * d * m];
                    matmul_at_into(av.row_slice(i), g.row_slice(i), block, 1, d, m);
                }
            });
        }
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            let ga = reduce_to(shape(*a), g.clone());
            accumulate(grads, *a, shape(*a), |t| t.add_assign(&ga));
            let gb = reduce_to(shape(*b), g.map(|v| sign * v));
            accumulate(grads, *b, shape(*b), |t| t.add_assign(&gb));
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let ga = reduce_to(shape(*a), zip_broadcast(g, bv, |g, b| g * b));
            let gb = reduce_to(shape(*b), zip_broadcast(g, av, |g, a| g * a));
            accumulate(grads, *a, shape(*a), |t| t.add_assign(&ga));
            accumulate(grads, *b, shape(*b), |t| t.add_assign(&gb));
        }
        Op::Div(a, b) => {
            let bv = val(*b);
            let ga = reduce_to(shape(*a), zip_broadcast(g, bv, |g, b| g / b));
            // d(a/b)/db = -out / b
            let gout = zip_broadcast(g, out, |g, o| g * o);
            let gb = reduce_to(shape(*b), zip_broadcast(&gout, bv, |go, b| -go / b));
            accumulate(grads, *a, shape(*a), |t| t.add_assign(&ga));
            accumulate(grads, *b, shape(*b), |t| t.add_assign(&gb));
        }
        Op::Scale(a, c) => {
            let c = *c;
            accumulate(grads, *a, shape(*a), |t| {
                for (x, gv) in t.data_mut().iter_mut().zip(g.data()) {
                    *x += c * gv;
                }
            });
        }
        Op::AddScalar(a) | Op::Reshape(a) => {
            accumulate(grads, *a, shape(*a), |t| {
                for (x, gv) in t.data_mut().iter_mut().zip(g.data()) {
                    *x += gv;
                }
            });
        }
        Op::Neg(a) => {
            accumulate(grads, *a, shape(*a), |t| {
                for (x, gv) in t.data_mut().iter_mut().zip(g.data()) {
                    *x -= gv;
                }
            });
        }
        Op::AddRow(a, row) => {
            accumulate(grads, *a, shape(*a), |t| t.add_assign(g));
            accumulate(grads, *row, shape(*row), |t| {
                for r in 0..g.rows() {
                    for (x, gv) in t.data_mut().iter_mut().zip(g.row_slice(r)) {
                        *x += gv;
                    }
                }
            });
        }
        Op::ConcatCols(a, b) => {
            let ca = val(*a).cols();
            accumulate(grads, *a, shape(*a), |t| {
                for r in 0..g.rows() {
                    for (x, gv) in t.row_slice_mut(r).iter_mut().zip(&g.row_slice(r)[..ca]) {
                        *x += gv;
                    }
                }
            });
            accumulate(grads, *b, shape(*b), |t| {
                for r in 0..g.rows() {
                    for (x, gv) in t.row_slice_mut(r).iter_mut().zip(&g.row_slice(r)[ca..]) {
                        *x += gv;
                    }
                }
            });
        }
        Op::SliceCols(a, start) => {
            let start = *start;
            let width = g.cols();
            accumulate(grads, *a, shape(*a), |t| {
                for r in 0..g.rows() {
                    let dst = &mut t.row_slice_mut(r)[start..start + width];
                    for (x, gv) in dst.iter_mut().zip(g.row_slice(r)) {
                        *x += gv;
                    }
                }
            });
        }
        Op::GatherRows(a, idx) => {
            accumulate(grads, *a, shape(*a), |t| {
                for (r, &src) in idx.iter().enumerate() {
                    for (x, gv) in t.row_slice_mut(src).iter_mut().zip(g.row_slice(r)) {
                        *x += gv;
                    }
                }
            });
        }
        Op::Sigmoid(a) => unary_back(grads, *a, shape(*a), g, out, |_, y| y * (1.0 - y), val(*a)),
        Op::Tanh(a) => unary_back(grads, *a, shape(*a), g, out, |_, y| 1.0 - y * y, val(*a)),
        Op::Softplus(a) => unary_back(grads, *a, shape(*a), g, out, |x, _| sigmoid(x), val(*a)),
        Op::Exp(a) => unary_back(grads, *a, shape(*a), g, out, |_, y| y, val(*a)),
        Op::Log(a) => unary_back(grads, *a, shape(*a), g, out, |x, _| 1.0 / x, val(*a)),
        Op::Square(a) => unary_back(grads, *a, shape(*a), g, out, |x, _| 2.0 * x, val(*a)),
        Op::Sum(a) => {
            let gv = g.item();
            accumulate(grads, *a, shape(*a), |t| t.data_mut().iter_mut().for_each(|x| *x += gv));
        }
        Op::Mean(a) => {
            let n = val(*a).len() as f64;
            let gv = g.item() / n;
            accumulate(grads, *a, shape(*a), |t| t.data_mut().iter_mut().for_each(|x| *x += gv));
        }
        Op::SumRows(a) => {
            accumulate(grads, *a, shape(*a), |t| {
                for r in 0..t.rows() {
                    let gv = g.get(r, 0);
                    t.row_slice_mut(r).iter_mut().for_each(|x| *x += gv);
                }
            });
        }
        Op::Softmax(a) => {
            accumulate(grads, *a, shape(*a), |t| {
                for r in 0..out.rows() {
                    let y = out.row_slice(r);
                    let gy = g.row_slice(r);
                    let dot: f64 = y.iter().zip(gy).map(|(y, g)| y * g).sum();
                    for ((x, yv), gv) in t.row_slice_mut(r).iter_mut().zip(y).zip(gy) {
                        *x += yv * (gv - dot);
                    }
                }
            });
        }
        Op::LogSoftmax(a) => {
            accumulate(grads, *a, shape(*a), |t| {
                for r in 0..out.rows() {
                    let y = out.row_slice(r);
                    let gy = g.row_slice(r);
                    let total: f64 = gy.iter().sum();
                    for ((x, yv), gv) in t.row_slice_mut(r).iter_mut().zip(y).zip(gy) {
                        *x += gv - yv.exp() * total;
                    }
                }
            });
        }
        Op::LogSumExp(a) => {
            let av = val(*a);
            accumulate(grads, *a, shape(*a), |t| {
                for r in 0..av.rows() {
                    let lse = out.get(r, 0);
                    let gv = g.get(r, 0);
                    for (x, xv) in t.row_slice_mut(r).iter_mut().zip(av.row_slice(r)) {
                        *x += gv * (xv - lse).exp();
                    }
                }
            });
        }
    }
}

fn unary_back(
    grads: &mut [Option<Tensor>],
    a: usize,
    shape: [usize; 2],
    g: &Tensor,
    out: &Tensor,
    deriv: impl Fn(f64, f64) -> f64,
    input: &Tensor,
) {
    accumulate(grads, a, shape, |t| {
        for (((x, gv), xv), yv) in t
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(input.data())
            .zip(out.data())
        {
            *x += gv * deriv(*xv, *yv);
        }
    });
}

fn zip_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    match (a.shape(), b.shape()) {
        (sa, sb) if sa == sb => Tensor::new(
            a.rows(),
            a.cols(),
            a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect(),
        ),
        (_, [1, 1]) => {
            let y = b.item();
            a.map(|x| f(x, y))
        }
        ([1, 1], _) => {
            let x = a.item();
            b.map(|y| f(x, y))
        }
        (sa, sb) => unreachable!("shapes checked at construction: {sa:?} vs {sb:?}"),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn row_logsumexp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> [usize; 2] {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    /// Value of a scalar var.
    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    fn same_tape(&self, other: &Var<'_>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let value = self.with_value(|v| v.map(&f));
        self.tape.push(value, op)
    }

    fn binary(self, other: Var<'t>, op: Op, f: impl Fn(f64, f64) -> f64) -> Var<'t> {
        self.same_tape(&other);
        let (sa, sb) = (self.shape(), other.shape());
        assert!(
            sa == sb || sa == [1, 1] || sb == [1, 1],
            "shape mismatch in {}: {sa:?} vs {sb:?}",
            op.name()
        );
        let value = {
            let nodes = self.tape.nodes.borrow();
            zip_broadcast(&nodes[self.id].value, &nodes[other.id].value, f)
        };
        self.tape.push(value, op)
    }

    /// `(n x k) * (k x m)`.
    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(&other);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            assert_eq!(
                a.cols(),
                b.rows(),
                "shape mismatch in matmul: {:?} vs {:?}",
                a.shape(),
                b.shape()
            );
            a.matmul(b)
        };
        self.tape.push(value, Op::MatMul(self.id, other.id))
    }

    /// Row `i` of `self` (`n x d`) times block `i` of `blocks` (`n*d x m`): an `n x m` result.
    pub fn row_matmul(self, blocks: Var<'t>) -> Var<'t> {
        self.same_tape(&blocks);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[blocks.id].value);
            let (n, d, m) = (a.rows(), a.cols(), b.cols());
            assert_eq!(
                b.rows(),
                n * d,
                "shape mismatch in row_matmul: {:?} vs {:?}",
                a.shape(),
                b.shape()
            );
            let mut out = vec![0.0; n * m];
            for i in 0..n {
                matmul_into(
                    a.row_slice(i),
                    &b.data()[i * d * m..(i + 1) * d * m],
                    &mut out[i * m..(i + 1) * m],
                    1,
                    d,
                    m,
                );
            }
            Tensor::new(n, m, out)
        };
        self.tape.push(value, Op::RowMatMul(self.id, blocks.id))
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn div(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, Op::Div(self.id, other.id), |a, b| a / b)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |v| v * c)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |v| v + c)
    }

    /// Adds a `1 x m` row to every row of an `n x m` tensor.
    pub fn add_row(self, row: Var<'t>) -> Var<'t> {
        self.same_tape(&row);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, r) = (&nodes[self.id].value, &nodes[row.id].value);
            assert!(
                r.rows() == 1 && r.cols() == a.cols(),
                "shape mismatch in add_row: {:?} vs {:?}",
                a.shape(),
                r.shape()
            );
            let mut out = a.clone();
            for i in 0..out.rows() {
                for (x, b) in out.row_slice_mut(i).iter_mut().zip(r.data()) {
                    *x += b;
                }
            }
            out
        };
        self.tape.push(value, Op::AddRow(self.id, row.id))
    }

    /// Column-wise concatenation `[self | other]`.
    pub fn concat(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(&other);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            assert_eq!(
                a.rows(),
                b.rows(),
                "shape mismatch in concat: {:?} vs {:?}",
                a.shape(),
                b.shape()
            );
            let cols = a.cols() + b.cols();
            let mut out = Vec::with_capacity(a.rows() * cols);
            for r in 0..a.rows() {
                out.extend_from_slice(a.row_slice(r));
                out.extend_from_slice(b.row_slice(r));
            }
            Tensor::new(a.rows(), cols, out)
        };
        self.tape.push(value, Op::ConcatCols(self.id, other.id))
    }

    /// Columns `start..end`.
    pub fn slice(self, start: usize, end: usize) -> Var<'t> {
        let value = self.with_value(|a| {
            assert!(
                start < end && end <= a.cols(),
                "slice {start}..{end} out of range for shape {:?}",
                a.shape()
            );
            let mut out = Vec::with_capacity(a.rows() * (end - start));
            for r in 0..a.rows() {
                out.extend_from_slice(&a.row_slice(r)[start..end]);
            }
            Tensor::new(a.rows(), end - start, out)
        });
        self.tape.push(value, Op::SliceCols(self.id, start))
    }

    pub fn gather_rows(self, idx: &[usize]) -> Var<'t> {
        let value = self.with_value(|a| {
            let mut out = Vec::with_capacity(idx.len() * a.cols());
            for &i in idx {
                assert!(i < a.rows(), "gather index {i} out of range for shape {:?}", a.shape());
                out.extend_from_slice(a.row_slice(i));
            }
            Tensor::new(idx.len(), a.cols(), out)
        });
        self.tape.push(value, Op::GatherRows(self.id, idx.to_vec()))
    }

    pub fn reshape(self, rows: usize, cols: usize) -> Var<'t> {
        let value = self.with_value(|a| {
            assert_eq!(
                a.len(),
                rows * cols,
                "cannot reshape {:?} to [{rows}, {cols}]",
                a.shape()
            );
            Tensor::new(rows, cols, a.data().to_vec())
        });
        self.tape.push(value, Op::Reshape(self.id))
    }

    pub fn neg(self) -> Var<'t> {
        self.unary(Op::Neg(self.id), |v| -v)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), f64::tanh)
    }

    /// `ln(1 + e^x)`, computed without overflow.
    pub fn softplus(self) -> Var<'t> {
        self.unary(Op::Softplus(self.id), softplus)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn log(self) -> Var<'t> {
        self.unary(Op::Log(self.id), f64::ln)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Op::Square(self.id), |v| v * v)
    }

    pub fn sum(self) -> Var<'t> {
        let value = self.with_value(|a| Tensor::scalar(a.data().iter().sum()));
        self.tape.push(value, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let value = self.with_value(|a| Tensor::scalar(a.data().iter().sum::<f64>() / a.len() as f64));
        self.tape.push(value, Op::Mean(self.id))
    }

    /// Per-row sums as an `n x 1` column.
    pub fn sum_rows(self) -> Var<'t> {
        let value = self.with_value(|a| {
            Tensor::column((0..a.rows()).map(|r| a.row_slice(r).iter().sum()).collect())
        });
        self.tape.push(value, Op::SumRows(self.id))
    }

    /// Row-wise softmax.
    pub fn softmax(self) -> Var<'t> {
        let value = self.with_value(|a| {
            let mut out = a.clone();
            for r in 0..a.rows() {
                let lse = row_logsumexp(a.row_slice(r));
                out.row_slice_mut(r).iter_mut().for_each(|v| *v = (*v - lse).exp());
            }
            out
        });
        self.tape.push(value, Op::Softmax(self.id))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(self) -> Var<'t> {
        let value = self.with_value(|a| {
            let mut out = a.clone();
            for r in 0..a.rows() {
                let lse = row_logsumexp(a.row_slice(r));
                out.row_slice_mut(r).iter_mut().for_each(|v| *v -= lse);
            }
            out
        });
        self.tape.push(value, Op::LogSoftmax(self.id))
    }

    /// Row-wise log-sum-exp as an `n x 1` column.
    pub fn logsumexp(self) -> Var<'t> {
        let value = self.with_value(|a| {
            Tensor::column((0..a.rows()).map(|r| row_logsumexp(a.row_slice(r))).collect())
        });
        self.tape.push(value, Op::LogSumExp(self.id))
    }
}

impl<'t> ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        Var::add(self, rhs)
    }
}

impl<'t> ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        Var::sub(self, rhs)
    }
}

impl<'t> ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        Var::mul(self, rhs)
    }
}

impl<'t> ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        Var::neg(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = x * x;
        let g = tape.backward(y).unwrap();
        assert_eq!(y.item(), 9.0);
        assert_eq!(g.of(x).unwrap().item(), 6.0);
    }

    #[test]
    fn softmax_of_equal_scores_is_uniform() {
        let tape = Tape::new();
        let p = tape.leaf(Tensor::row(vec![2.0; 4])).softmax().value();
        for v in p.data() {
            assert_relative_eq!(*v, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn softplus_and_logsumexp_identities() {
        let tape = Tape::new();
        assert_relative_eq!(tape.constant(0.0).softplus().item(), 2f64.ln(), epsilon = 1e-15);
        let lse = tape.leaf(Tensor::row(vec![5.0, 5.0])).logsumexp().item();
        assert_relative_eq!(lse, 5.0 + 2f64.ln(), epsilon = 1e-14);
        let big = tape.leaf(Tensor::row(vec![1e4, -1e4, 1e4 - 1.0])).logsumexp().item();
        assert!(big.is_finite());
        assert_relative_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
    }

    #[test]
    fn disconnected_param_has_zero_gradient() {
        let mut store = ParamStore::new();
        let used = store.add("used", Tensor::scalar(2.0));
        let unused = store.add("unused", Tensor::row(vec![1.0, 2.0]));
        let tape = Tape::new();
        let x = tape.param(&store, used);
        let _ = tape.param(&store, unused);
        let g = tape.backward(x.square()).unwrap();
        assert_eq!(g.params()[0].1.item(), 4.0);
        assert_eq!(g.params()[1].1.data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![1.0, 2.0]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn non_finite_output_is_trapped() {
        let tape = Tape::new();
        let x = tape.constant(0.0);
        let y = x.log();
        match tape.backward(y.sum()) {
            Err(Error::NonFinite { op_id, op }) => {
                assert_eq!(op_id, y.id());
                assert_eq!(op, "log");
            }
            other => panic!("expected non-finite error, got {:?}", other.err()),
        }
    }

    #[test]
    #[should_panic(expected = "shape mismatch in add: [1, 2] vs [2, 1]")]
    fn shape_mismatch_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::row(vec![1.0, 2.0]));
        let b = tape.leaf(Tensor::column(vec![1.0, 2.0]));
        let _ = a + b;
    }

    #[test]
    fn param_nodes_are_shared() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::scalar(1.5));
        let tape = Tape::new();
        let a = tape.param(&store, p);
        let b = tape.param(&store, p);
        assert_eq!(a.id(), b.id());
        let g = tape.backward(a * b).unwrap();
        assert_eq!(g.params()[0].1.item(), 3.0);
    }
}
