//! Eagerly evaluated computation tape with reverse-mode differentiation.
//!
//! Every operation computes its value immediately and appends a node to the
//! tape. [`Tape::grad`] walks the tape backwards and expresses each local
//! adjoint with ordinary tape operations, so gradients are themselves tape
//! values and can be differentiated again. This is what makes the
//! double-reverse Jacobian-vector product and the gradient of the alignment
//! penalty (which differentiates through `JᵀJv` products) possible.
//!
//! Most operations work on rank-2 tensors laid out as `rows × features`.
//! Shape violations inside the engine are programming errors and panic; the
//! public entry points in [`crate::autodiff`] validate user input first.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numerics::{gemm, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Maps every output element to one source element, or to zero.
///
/// Gathering with a map is linear; its adjoint is the matching scatter-add.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexMap {
    pub src_dims: Vec<usize>,
    pub out_dims: Vec<usize>,
    /// `index[i]` is the flat source position for output `i`, or
    /// [`IndexMap::ZERO`] for a structural zero (e.g. padding).
    pub index: Vec<u32>,
}

impl IndexMap {
    pub const ZERO: u32 = u32::MAX;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Clone)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    MulConst(Var, Rc<Tensor>),
    Tanh(Var),
    Sigmoid(Var),
    Ln(Var),
    Recip(Var),
    Sqrt(Var),
    Clamp { a: Var, lo: f64, hi: f64 },
    Sum(Var, Axis),
    Broadcast(Var, Axis),
    Gather(Var, Rc<IndexMap>),
    Scatter(Var, Rc<IndexMap>),
    Reshape(Var),
}

impl Op {
    fn inputs(&self) -> [Option<Var>; 2] {
        use Op::*;
        match *self {
            Leaf => [None, None],
            MatMul { a, b, .. } | Add(a, b) | Sub(a, b) | Mul(a, b) => [Some(a), Some(b)],
            Scale(a, _)
            | Offset(a)
            | MulConst(a, _)
            | Tanh(a)
            | Sigmoid(a)
            | Ln(a)
            | Recip(a)
            | Sqrt(a)
            | Clamp { a, .. }
            | Sum(a, _)
            | Broadcast(a, _)
            | Gather(a, _)
            | Scatter(a, _)
            | Reshape(a) => [Some(a), None],
        }
    }
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
}

/// Dependency flags and adjoints for the tape slice a gradient touches.
struct Window {
    lo: usize,
    depends: Vec<bool>,
    adjoint: Vec<Option<Var>>,
}

impl Window {
    fn needs(&self, v: Var) -> bool {
        v.0 >= self.lo && self.depends.get(v.0 - self.lo).copied().unwrap_or(false)
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
        });
        Var(nodes.len() - 1)
    }

    /// Records an input. Whether it is differentiated is decided by the
    /// `wrt` list of [`Tape::grad`].
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn dims(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.dims().to_vec()
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).map(f);
        self.push(out, op)
    }

    fn binary(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op, name: &str) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = va
            .zip_with(&vb, f)
            .unwrap_or_else(|_| panic!("{name}: {:?} vs {:?}", va.dims(), vb.dims()));
        self.push(out, op)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) · op(b)` with optional transposition of either operand.
    pub fn matmul_t(&self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert!(va.rank() == 2 && vb.rank() == 2, "matmul needs matrices");
        let inner_a = if ta { va.rows() } else { va.cols() };
        let inner_b = if tb { vb.cols() } else { vb.rows() };
        assert_eq!(
            inner_a,
            inner_b,
            "matmul {:?}{} x {:?}{}",
            va.dims(),
            if ta { "ᵀ" } else { "" },
            vb.dims(),
            if tb { "ᵀ" } else { "" }
        );
        let out = gemm(&va, ta, &vb, tb);
        self.push(out, Op::MatMul { a, b, ta, tb })
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b), "sub")
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    pub fn scale(&self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    /// Adds a constant to every element.
    pub fn offset(&self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::Offset(a))
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(&self, a: Var, c: Rc<Tensor>) -> Var {
        let out = self
            .value(a)
            .hadamard(&c)
            .unwrap_or_else(|_| panic!("mul_const shape mismatch"));
        self.push(out, Op::MulConst(a, c))
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn ln(&self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn recip(&self, a: Var) -> Var {
        self.unary(a, f64::recip, Op::Recip(a))
    }

    pub fn sqrt(&self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    /// Clamps to `[lo, hi]`; the derivative is zero where clamping is active.
    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp { a, lo, hi })
    }

    pub fn sum_axis(&self, a: Var, axis: Axis) -> Var {
        let va = self.value(a);
        let (r, c) = (va.rows(), va.cols());
        let out = match axis {
            Axis::Rows => {
                let mut s = vec![0.0; c];
                for i in 0..r {
                    for (acc, x) in s.iter_mut().zip(va.row_slice(i)) {
                        *acc += x;
                    }
                }
                Tensor::matrix(1, c, s)
            }
            Axis::Cols => Tensor::matrix(r, 1, (0..r).map(|i| va.row_slice(i).iter().sum()).collect()),
        }
        .expect("shape");
        self.push(out, Op::Sum(a, axis))
    }

    /// Sum of all entries as a `1 × 1` tensor.
    pub fn sum(&self, a: Var) -> Var {
        let s = self.sum_axis(a, Axis::Rows);
        self.sum_axis(s, Axis::Cols)
    }

    /// Repeats a `1 × c` tensor `n` times along rows, or an `r × 1` tensor
    /// `n` times along columns.
    pub fn broadcast(&self, a: Var, axis: Axis, n: usize) -> Var {
        let va = self.value(a);
        let (r, c) = (va.rows(), va.cols());
        let out = match axis {
            Axis::Rows => {
                assert_eq!(r, 1, "row broadcast needs a single row");
                Tensor::matrix(n, c, va.data().repeat(n))
            }
            Axis::Cols => {
                assert_eq!(c, 1, "column broadcast needs a single column");
                let mut d = Vec::with_capacity(r * n);
                for &x in va.data() {
                    d.extend(std::iter::repeat_n(x, n));
                }
                Tensor::matrix(r, n, d)
            }
        }
        .expect("shape");
        self.push(out, Op::Broadcast(a, axis))
    }

    /// Broadcasts a `1 × 1` tensor to `dims`.
    pub fn expand_scalar(&self, a: Var, rows: usize, cols: usize) -> Var {
        let r = self.broadcast(a, Axis::Rows, rows);
        self.broadcast(r, Axis::Cols, cols)
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&self, a: Var, row: Var) -> Var {
        let rows = self.dims(a)[0];
        let b = self.broadcast(row, Axis::Rows, rows);
        self.add(a, b)
    }

    pub fn gather(&self, a: Var, map: Rc<IndexMap>) -> Var {
        let va = self.value(a);
        assert_eq!(va.dims(), map.src_dims.as_slice(), "gather source shape");
        let src = va.data();
        let data = map
            .index
            .iter()
            .map(|&i| if i == IndexMap::ZERO { 0.0 } else { src[i as usize] })
            .collect();
        let out = Tensor::new(map.out_dims.clone(), data).expect("gather map shape");
        self.push(out, Op::Gather(a, map))
    }

    /// Adjoint of [`Tape::gather`]: accumulates `a` (shaped like the map
    /// output) into a tensor shaped like the map source.
    pub fn scatter(&self, a: Var, map: Rc<IndexMap>) -> Var {
        let va = self.value(a);
        assert_eq!(va.dims(), map.out_dims.as_slice(), "scatter input shape");
        let mut out = Tensor::zeros(&map.src_dims);
        let dst = out.data_mut();
        for (&i, &x) in map.index.iter().zip(va.data()) {
            if i != IndexMap::ZERO {
                dst[i as usize] += x;
            }
        }
        self.push(out, Op::Scatter(a, map))
    }

    pub fn reshape(&self, a: Var, dims: Vec<usize>) -> Var {
        let out = (*self.value(a)).clone().reshape(dims).expect("reshape size");
        self.push(out, Op::Reshape(a))
    }

    pub fn square(&self, a: Var) -> Var {
        self.mul(a, a)
    }

    /// Scalar dot product `Σ a∘b` as a `1 × 1` tensor.
    pub fn dot(&self, a: Var, b: Var) -> Var {
        let p = self.mul(a, b);
        self.sum(p)
    }

    /// Reverse-mode derivative: returns `Σ_o (∂o/∂x)ᵀ seed_o` for every `x`
    /// in `wrt`. The results are tape values and may be differentiated
    /// further.
    pub fn grad(&self, outputs: &[Var], seeds: &[Var], wrt: &[Var]) -> Result<Vec<Var>> {
        if outputs.len() != seeds.len() {
            return Err(Error::Dimension("one seed per output required".into()));
        }
        let Some(lo) = wrt.iter().map(|v| v.0).min() else {
            return Ok(Vec::new());
        };
        // Only nodes in [min(wrt), max(output or wrt)] can lie on a path.
        let out_hi = outputs.iter().map(|v| v.0).max();
        let hi = out_hi.into_iter().chain(wrt.iter().map(|v| v.0)).max().expect("wrt non-empty");
        let mut win = Window {
            lo,
            depends: vec![false; hi - lo + 1],
            adjoint: vec![None; hi - lo + 1],
        };
        for w in wrt {
            win.depends[w.0 - lo] = true;
        }
        {
            let nodes = self.nodes.borrow();
            for i in lo..=hi {
                if !win.depends[i - lo] {
                    win.depends[i - lo] = nodes[i].op.inputs().iter().flatten().any(|&v| win.needs(v));
                }
            }
        }

        for (&o, &s) in outputs.iter().zip(seeds) {
            let (od, sd) = (self.dims(o), self.dims(s));
            if od != sd {
                return Err(Error::Dimension(format!(
                    "seed {sd:?} does not match output {od:?}"
                )));
            }
            self.accumulate(&mut win, o, s);
        }

        if let Some(top) = out_hi {
            for i in (lo..=top).rev() {
                if !win.depends[i - lo] {
                    continue;
                }
                let Some(g) = win.adjoint[i - lo] else { continue };
                let op = self.nodes.borrow()[i].op.clone();
                self.backprop(Var(i), &op, g, &mut win);
            }
        }

        Ok(wrt
            .iter()
            .map(|&w| match win.adjoint[w.0 - lo] {
                Some(a) => a,
                None => self.leaf(Tensor::zeros(&self.dims(w))),
            })
            .collect())
    }

    fn accumulate(&self, win: &mut Window, target: Var, contrib: Var) {
        if target.0 < win.lo {
            return;
        }
        let slot = &mut win.adjoint[target.0 - win.lo];
        *slot = Some(match *slot {
            Some(prev) => self.add(prev, contrib),
            None => contrib,
        });
    }

    fn backprop(&self, out: Var, op: &Op, g: Var, win: &mut Window) {
        let adj = win;
        let push = |adj: &mut Window, v: Var, c: Var| self.accumulate(adj, v, c);
        match *op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                if adj.needs(a) {
                    let ga = if ta {
                        self.matmul_t(b, tb, g, true)
                    } else {
                        self.matmul_t(g, false, b, !tb)
                    };
                    push(adj, a, ga);
                }
                if adj.needs(b) {
                    let gb = if tb {
                        self.matmul_t(g, true, a, ta)
                    } else {
                        self.matmul_t(a, !ta, g, false)
                    };
                    push(adj, b, gb);
                }
            }
            Op::Add(a, b) => {
                if adj.needs(a) {
                    push(adj, a, g);
                }
                if adj.needs(b) {
                    push(adj, b, g);
                }
            }
            Op::Sub(a, b) => {
                if adj.needs(a) {
                    push(adj, a, g);
                }
                if adj.needs(b) {
                    let nb = self.scale(g, -1.0);
                    push(adj, b, nb);
                }
            }
            Op::Mul(a, b) => {
                if adj.needs(a) {
                    let ga = self.mul(g, b);
                    push(adj, a, ga);
                }
                if adj.needs(b) {
                    let gb = self.mul(g, a);
                    push(adj, b, gb);
                }
            }
            Op::Scale(a, s) => {
                let ga = self.scale(g, s);
                push(adj, a, ga);
            }
            Op::Offset(a) => push(adj, a, g),
            Op::MulConst(a, ref c) => {
                let ga = self.mul_const(g, Rc::clone(c));
                push(adj, a, ga);
            }
            Op::Tanh(a) => {
                // (1 − y²) g
                let y2 = self.square(out);
                let gy2 = self.mul(g, y2);
                let ga = self.sub(g, gy2);
                push(adj, a, ga);
            }
            Op::Sigmoid(a) => {
                // y (1 − y) g
                let y2 = self.square(out);
                let d = self.sub(out, y2);
                let ga = self.mul(g, d);
                push(adj, a, ga);
            }
            Op::Ln(a) => {
                let r = self.recip(a);
                let ga = self.mul(g, r);
                push(adj, a, ga);
            }
            Op::Recip(a) => {
                let y2 = self.square(out);
                let gy = self.mul(g, y2);
                let ga = self.scale(gy, -1.0);
                push(adj, a, ga);
            }
            Op::Sqrt(a) => {
                let r = self.recip(out);
                let gr = self.mul(g, r);
                let ga = self.scale(gr, 0.5);
                push(adj, a, ga);
            }
            Op::Clamp { a, lo, hi } => {
                let mask = self.value(a).map(|x| if x > lo && x < hi { 1.0 } else { 0.0 });
                let ga = self.mul_const(g, Rc::new(mask));
                push(adj, a, ga);
            }
            Op::Sum(a, axis) => {
                let d = self.dims(a);
                let n = match axis {
                    Axis::Rows => d[0],
                    Axis::Cols => d[1],
                };
                let ga = self.broadcast(g, axis, n);
                push(adj, a, ga);
            }
            Op::Broadcast(a, axis) => {
                let ga = self.sum_axis(g, axis);
                push(adj, a, ga);
            }
            Op::Gather(a, ref map) => {
                let ga = self.scatter(g, Rc::clone(map));
                push(adj, a, ga);
            }
            Op::Scatter(a, ref map) => {
                let ga = self.gather(g, Rc::clone(map));
                push(adj, a, ga);
            }
            Op::Reshape(a) => {
                let ga = self.reshape(g, self.dims(a));
                push(adj, a, ga);
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
