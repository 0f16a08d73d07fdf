//! Dynamic tape: every operation on a [`Var`] appends a node holding its
//! forward value, and [`Tape::backward`] walks the nodes in reverse.
//!
//! Shape mismatches are programming errors in a fixed model graph and panic
//! with the offending shapes; [`Tape::backward`] reports a non-scalar output
//! as an error.

use std::cell::RefCell;
use std::ops;

use crate::array::{gemm, Array};
use crate::AdError;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    MatMul(usize, usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols(usize, usize),
    SliceRows(usize, usize),
    Sum(usize),
    Mean(usize),
    SumRows(usize),
    SumCols(usize),
    Exp(usize),
    Log(usize),
    Sigmoid(usize),
    Tanh(usize),
    Softplus(usize),
    Square(usize),
    NormalCdf(usize),
    Broadcast(usize),
    LogSumExpGroups(usize, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::MatMul(..) => "matmul",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumRows(..) => "sum_rows",
            Op::SumCols(..) => "sum_cols",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Softplus(..) => "softplus",
            Op::Square(..) => "square",
            Op::NormalCdf(..) => "normal_cdf",
            Op::Broadcast(..) => "broadcast",
            Op::LogSumExpGroups(..) => "logsumexp_groups",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Array,
    needs_grad: bool,
}

/// Records one forward pass. Single-threaded; build one tape per thread.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}", self.id)
    }
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` when nothing flowed into it.
    pub fn get(&self, v: Var<'_>) -> Option<&Array> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to `v`, zeros when it does not influence the
    /// output.
    pub fn wrt(&self, v: Var<'_>) -> Array {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.id];
                Array::zeros(r, c)
            }
        }
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

    /// Differentiable leaf.
    pub fn var(&self, value: Array) -> Var<'_> {
        self.push(Op::Leaf, value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Array) -> Var<'_> {
        self.push(Op::Leaf, value, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Array::scalar(value))
    }

    fn push(&self, op: Op, value: Array, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    fn unary(&self, a: usize, op: Op, f: impl Fn(&Array) -> Array) -> Var<'_> {
        let value = f(&self.nodes.borrow()[a].value);
        let ng = self.needs(&[a]);
        self.push(op, value, ng)
    }

    fn binary(&self, a: usize, b: usize, op: Op, f: impl Fn(&Array, &Array) -> Array) -> Var<'_> {
        let value = {
            let nodes = self.nodes.borrow();
            f(&nodes[a].value, &nodes[b].value)
        };
        let ng = self.needs(&[a, b]);
        self.push(op, value, ng)
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients, AdError> {
        let nodes = self.nodes.borrow();
        let out = &nodes[output.id];
        if out.value.len() != 1 {
            return Err(AdError::NonScalarOutput(out.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Array>> = vec![None; output.id + 1];
        grads[output.id] = Some(Array::from_matrix(1, 1, vec![1.0]));

        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            propagate(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let shapes = nodes.iter().map(|n| n.value.dims()).collect();
        grads.resize(nodes.len(), None);
        Ok(Gradients { grads, shapes })
    }
}

fn slot<'g>(nodes: &[Node], grads: &'g mut [Option<Array>], id: usize) -> Option<&'g mut Array> {
    if !nodes[id].needs_grad {
        return None;
    }
    let (r, c) = nodes[id].value.dims();
    Some(grads[id].get_or_insert_with(|| Array::zeros(r, c)))
}

fn accum(nodes: &[Node], grads: &mut [Option<Array>], id: usize, f: impl FnOnce(&mut [f64])) {
    if let Some(s) = slot(nodes, grads, id) {
        f(s.data_mut());
    }
}

fn propagate(nodes: &[Node], id: usize, g: &Array, grads: &mut [Option<Array>]) {
    let node = &nodes[id];
    let out = &node.value;
    let gd = g.data();
    match node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accum(nodes, grads, a, |s| add_into(s, gd));
            accum(nodes, grads, b, |s| add_into(s, gd));
        }
        Op::Sub(a, b) => {
            accum(nodes, grads, a, |s| add_into(s, gd));
            accum(nodes, grads, b, |s| {
                s.iter_mut().zip(gd).for_each(|(x, g)| *x -= g)
            });
        }
        Op::Mul(a, b) => {
            let (av, bv) = (nodes[a].value.data(), nodes[b].value.data());
            accum(nodes, grads, a, |s| {
                for i in 0..s.len() {
                    s[i] += gd[i] * bv[i];
                }
            });
            accum(nodes, grads, b, |s| {
                for i in 0..s.len() {
                    s[i] += gd[i] * av[i];
                }
            });
        }
        Op::Scale(a, c) => accum(nodes, grads, a, |s| {
            s.iter_mut().zip(gd).for_each(|(x, g)| *x += c * g)
        }),
        Op::Offset(a) => accum(nodes, grads, a, |s| add_into(s, gd)),
        Op::MatMul(a, b) => {
            let (m, k) = nodes[a].value.dims();
            let n = nodes[b].value.cols();
            let (av, bv) = (nodes[a].value.data(), nodes[b].value.data());
            // dA = G · Bᵀ  (m x n)·(n x k)
            accum(nodes, grads, a, |s| gemm(m, n, k, gd, n, 1, bv, 1, n, s, 1.0));
            // dB = Aᵀ · G  (k x m)·(m x n)
            accum(nodes, grads, b, |s| gemm(k, m, n, av, 1, k, gd, n, 1, s, 1.0));
        }
        Op::ConcatCols(ref parts) => {
            let rows = out.rows();
            let total = out.cols();
            let mut offset = 0;
            for &p in parts {
                let w = nodes[p].value.cols();
                accum(nodes, grads, p, |s| {
                    for r in 0..rows {
                        let src = &gd[r * total + offset..r * total + offset + w];
                        add_into(&mut s[r * w..(r + 1) * w], src);
                    }
                });
                offset += w;
            }
        }
        Op::ConcatRows(ref parts) => {
            let cols = out.cols();
            let mut offset = 0;
            for &p in parts {
                let n = nodes[p].value.rows() * cols;
                accum(nodes, grads, p, |s| add_into(s, &gd[offset..offset + n]));
                offset += n;
            }
        }
        Op::SliceCols(a, start) => {
            let (rows, w) = out.dims();
            let src_cols = nodes[a].value.cols();
            accum(nodes, grads, a, |s| {
                for r in 0..rows {
                    let dst = &mut s[r * src_cols + start..r * src_cols + start + w];
                    add_into(dst, &gd[r * w..(r + 1) * w]);
                }
            });
        }
        Op::SliceRows(a, start) => {
            let cols = out.cols();
            let n = gd.len();
            accum(nodes, grads, a, |s| {
                add_into(&mut s[start * cols..start * cols + n], gd)
            });
        }
        Op::Sum(a) => {
            let g0 = gd[0];
            accum(nodes, grads, a, |s| s.iter_mut().for_each(|x| *x += g0));
        }
        Op::Mean(a) => {
            let g0 = gd[0] / nodes[a].value.len() as f64;
            accum(nodes, grads, a, |s| s.iter_mut().for_each(|x| *x += g0));
        }
        Op::SumRows(a) => {
            let cols = out.cols();
            accum(nodes, grads, a, |s| {
                for row in s.chunks_mut(cols) {
                    add_into(row, gd);
                }
            });
        }
        Op::SumCols(a) => {
            let cols = nodes[a].value.cols();
            accum(nodes, grads, a, |s| {
                for (row, g) in s.chunks_mut(cols).zip(gd) {
                    row.iter_mut().for_each(|x| *x += g);
                }
            });
        }
        Op::Exp(a) => elementwise(nodes, grads, a, gd, |_, y| y, out.data()),
        Op::Log(a) => elementwise(nodes, grads, a, gd, |x, _| 1.0 / x, out.data()),
        Op::Sigmoid(a) => elementwise(nodes, grads, a, gd, |_, y| y * (1.0 - y), out.data()),
        Op::Tanh(a) => elementwise(nodes, grads, a, gd, |_, y| 1.0 - y * y, out.data()),
        Op::Softplus(a) => elementwise(nodes, grads, a, gd, |x, _| sigmoid(x), out.data()),
        Op::Square(a) => elementwise(nodes, grads, a, gd, |x, _| 2.0 * x, out.data()),
        Op::NormalCdf(a) => elementwise(
            nodes,
            grads,
            a,
            gd,
            |x, _| INV_SQRT_2PI * (-0.5 * x * x).exp(),
            out.data(),
        ),
        Op::Broadcast(a) => {
            let (sr, sc) = nodes[a].value.dims();
            let (rows, cols) = out.dims();
            accum(nodes, grads, a, |s| {
                for r in 0..rows {
                    for c in 0..cols {
                        let si = (if sr == 1 { 0 } else { r }) * sc + if sc == 1 { 0 } else { c };
                        s[si] += gd[r * cols + c];
                    }
                }
            });
        }
        Op::LogSumExpGroups(a, group) => {
            let av = nodes[a].value.data();
            let od = out.data();
            accum(nodes, grads, a, |s| {
                for (j, x) in s.iter_mut().enumerate() {
                    let o = j / group;
                    *x += gd[o] * (av[j] - od[o]).exp();
                }
            });
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn elementwise(
    nodes: &[Node],
    grads: &mut [Option<Array>],
    a: usize,
    gd: &[f64],
    deriv: impl Fn(f64, f64) -> f64,
    out: &[f64],
) {
    let av = nodes[a].value.data();
    accum(nodes, grads, a, |s| {
        for i in 0..s.len() {
            s[i] += gd[i] * deriv(av[i], out[i]);
        }
    });
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

fn same_shape(op: &str, a: &Array, b: &Array) {
    assert!(
        a.dims() == b.dims(),
        "{op}: shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Array {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Array) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn item(&self) -> f64 {
        self.with_value(|a| a.data()[0])
    }

    pub fn dims(&self) -> (usize, usize) {
        self.with_value(|a| a.dims())
    }

    pub fn op_name(&self) -> &'static str {
        self.tape.nodes.borrow()[self.id].op.name()
    }

    fn check_same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars belong to different tapes"
        );
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        self.check_same_tape(&other);
        self.tape.binary(self.id, other.id, Op::Add(self.id, other.id), |a, b| {
            same_shape("add", a, b);
            a.zip_map(b, |x, y| x + y)
        })
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        self.check_same_tape(&other);
        self.tape.binary(self.id, other.id, Op::Sub(self.id, other.id), |a, b| {
            same_shape("sub", a, b);
            a.zip_map(b, |x, y| x - y)
        })
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        self.check_same_tape(&other);
        self.tape.binary(self.id, other.id, Op::Mul(self.id, other.id), |a, b| {
            same_shape("mul", a, b);
            a.zip_map(b, |x, y| x * y)
        })
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.tape.unary(self.id, Op::Scale(self.id, c), |a| a.scale(c))
    }

    /// `self + c` elementwise.
    pub fn offset(self, c: f64) -> Var<'t> {
        self.tape.unary(self.id, Op::Offset(self.id), |a| a.map(|x| x + c))
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        self.check_same_tape(&other);
        self.tape
            .binary(self.id, other.id, Op::MatMul(self.id, other.id), |a, b| {
                a.matmul(b).unwrap_or_else(|e| panic!("{e}"))
            })
    }

    /// Embedding lookup with one-hot semantics: each row of `self` selects
    /// (or, for fractional rows, mixes) rows of `table`. Gradients flow to
    /// both the selector and the table.
    pub fn gather_rows(self, table: Var<'t>) -> Var<'t> {
        self.matmul(table)
    }

    pub fn concat_cols(parts: &[Var<'t>]) -> Var<'t> {
        let tape = parts[0].tape;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let value = {
            let nodes = tape.nodes.borrow();
            let rows = nodes[ids[0]].value.rows();
            let total: usize = ids.iter().map(|&i| nodes[i].value.cols()).sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for &i in &ids {
                    let v = &nodes[i].value;
                    assert_eq!(v.rows(), rows, "concat_cols: row mismatch");
                    let c = v.cols();
                    data.extend_from_slice(&v.data()[r * c..(r + 1) * c]);
                }
            }
            Array::from_matrix(rows, total, data)
        };
        let ng = tape.needs(&ids);
        tape.push(Op::ConcatCols(ids), value, ng)
    }

    pub fn concat_rows(parts: &[Var<'t>]) -> Var<'t> {
        let tape = parts[0].tape;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let value = {
            let nodes = tape.nodes.borrow();
            let cols = nodes[ids[0]].value.cols();
            let rows: usize = ids.iter().map(|&i| nodes[i].value.rows()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for &i in &ids {
                let v = &nodes[i].value;
                assert_eq!(v.cols(), cols, "concat_rows: column mismatch");
                data.extend_from_slice(v.data());
            }
            Array::from_matrix(rows, cols, data)
        };
        let ng = tape.needs(&ids);
        tape.push(Op::ConcatRows(ids), value, ng)
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Var<'t> {
        self.tape.unary(self.id, Op::SliceCols(self.id, start), |a| {
            assert!(start <= end && end <= a.cols(), "slice_cols out of range");
            a.slice_cols(start, end)
        })
    }

    pub fn slice_rows(self, start: usize, end: usize) -> Var<'t> {
        self.tape.unary(self.id, Op::SliceRows(self.id, start), |a| {
            assert!(start <= end && end <= a.rows(), "slice_rows out of range");
            a.slice_rows(start, end)
        })
    }

    pub fn sum(self) -> Var<'t> {
        self.tape
            .unary(self.id, Op::Sum(self.id), |a| Array::scalar(a.sum()))
    }

    pub fn mean(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Mean(self.id), |a| {
            Array::scalar(a.sum() / a.len() as f64)
        })
    }

    /// Sum over rows, giving `1 x cols`.
    pub fn sum_rows(self) -> Var<'t> {
        self.tape.unary(self.id, Op::SumRows(self.id), |a| {
            let (r, c) = a.dims();
            let mut out = vec![0.0; c];
            for i in 0..r {
                add_into(&mut out, &a.data()[i * c..(i + 1) * c]);
            }
            Array::from_matrix(1, c, out)
        })
    }

    /// Sum over columns, giving `rows x 1`.
    pub fn sum_cols(self) -> Var<'t> {
        self.tape.unary(self.id, Op::SumCols(self.id), |a| {
            let c = a.cols();
            let out: Vec<f64> = a.data().chunks(c.max(1)).map(|r| r.iter().sum()).collect();
            Array::from_matrix(a.rows(), 1, out)
        })
    }

    pub fn exp(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Exp(self.id), |a| a.map(f64::exp))
    }

    pub fn log(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Log(self.id), |a| a.map(f64::ln))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Sigmoid(self.id), |a| a.map(sigmoid))
    }

    pub fn tanh(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Tanh(self.id), |a| a.map(f64::tanh))
    }

    pub fn softplus(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Softplus(self.id), |a| a.map(softplus))
    }

    pub fn square(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Square(self.id), |a| a.map(|x| x * x))
    }

    /// Standard normal CDF, elementwise.
    pub fn normal_cdf(self) -> Var<'t> {
        self.tape.unary(self.id, Op::NormalCdf(self.id), |a| a.map(normal_cdf))
    }

    /// Broadcast a `1 x c`, `r x 1` or `1 x 1` array to `rows x cols`.
    pub fn broadcast(self, rows: usize, cols: usize) -> Var<'t> {
        self.tape.unary(self.id, Op::Broadcast(self.id), |a| {
            let (sr, sc) = a.dims();
            assert!(
                (sr == 1 || sr == rows) && (sc == 1 || sc == cols),
                "broadcast {sr}x{sc} to {rows}x{cols}"
            );
            let mut out = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for c in 0..cols {
                    let si = (if sr == 1 { 0 } else { r }) * sc + if sc == 1 { 0 } else { c };
                    out.push(a.data()[si]);
                }
            }
            Array::from_matrix(rows, cols, out)
        })
    }

    /// Log-sum-exp over consecutive column groups of width `group`:
    /// `rows x (g*group)` becomes `rows x g`.
    pub fn logsumexp_groups(self, group: usize) -> Var<'t> {
        self.tape
            .unary(self.id, Op::LogSumExpGroups(self.id, group), |a| {
                assert!(group > 0 && a.cols() % group == 0, "logsumexp group width");
                let out: Vec<f64> = a
                    .data()
                    .chunks(group)
                    .map(|g| {
                        let m = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        if m == f64::NEG_INFINITY {
                            m
                        } else {
                            m + g.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
                        }
                    })
                    .collect();
                Array::from_matrix(a.rows(), a.cols() / group, out)
            })
    }
}

impl<'t> ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self::Output {
        Var::add(self, rhs)
    }
}

impl<'t> ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self::Output {
        Var::sub(self, rhs)
    }
}

impl<'t> ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self::Output {
        Var::mul(self, rhs)
    }
}

impl<'t> ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self::Output {
        self.scale(-1.0)
    }
}
