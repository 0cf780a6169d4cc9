//! Reverse-mode automatic differentiation over dense 64-bit matrices.
//!
//! The engine is a classic Wengert tape: every operation appends its output
//! as a node and records how to push gradients back to its inputs. A
//! [`Tensor`] is a cheap handle `(tape, node id)`; cloning it clones the
//! handle, not the data. Calling [`Tensor::backward`] on a scalar seeds its
//! gradient with 1 and sweeps the tape in reverse.
//!
//! Design points that matter downstream:
//!
//! * **Frozen leaves.** A leaf created with `requires_grad = false` never
//!   accumulates gradient — its buffer stays exactly zero — but its *value*
//!   still participates in the forward pass and gradients still flow
//!   *through* ops that consume it. This is the mechanism behind the
//!   alternating freeze steps of adversarial training.
//! * **Non-finite poisoning.** Every op scans its outputs (and, during the
//!   backward sweep, the gradients it wrote) for NaN/∞. The first offender
//!   poisons the tape with the producing op's name; `backward` then fails
//!   with that diagnostic instead of silently propagating garbage.
//! * **Determinism.** All reductions run in fixed index order, so identical
//!   inputs give bit-identical values and gradients.
//! * **Shapes.** Everything is a 2-D row-major matrix; scalars are `1×1`.
//!   Shape mismatches are programming errors and panic with the op name.
//!
//! Parameter storage, Adam, Glorot initialisation and checkpoint I/O live in
//! [`params`]; the finite-difference oracle used to validate every backward
//! rule lives in [`gradcheck`].

pub mod gradcheck;
pub mod params;

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use rand::Rng;
use thiserror::Error;

/// Where a non-finite value first appeared.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Forward,
    Backward,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Forward => write!(f, "the forward pass"),
            Phase::Backward => write!(f, "the backward pass"),
        }
    }
}

/// Numeric failure of a tape computation.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum AutodiffError {
    #[error("non-finite value produced by `{op}` during {phase}")]
    NonFinite { op: &'static str, phase: Phase },
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    requires_grad: bool,
}

enum OpKind {
    Matmul { a: usize, b: usize },
    Transpose { x: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    AddRow { m: usize, v: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, c: f64 },
    ScaleRows { m: usize, v: usize },
    ScaleCols { m: usize, v: usize },
    ConcatRows { parts: Vec<usize> },
    ConcatCols { parts: Vec<usize> },
    GatherRows { x: usize, idx: Rc<Vec<usize>> },
    ScatterSum { x: usize, idx: Rc<Vec<usize>> },
    SegmentSoftmax { x: usize, seg: Rc<Vec<usize>> },
    LeakyRelu { x: usize, slope: f64 },
    ClampMin { x: usize, min: f64 },
    Elu { x: usize },
    Sigmoid { x: usize },
    Log { x: usize },
    Exp { x: usize },
    Dropout { x: usize, mask: Rc<Vec<f64>> },
    L2NormalizeRows { x: usize, eps: f64 },
    RowSum { x: usize },
    Mean { x: usize },
    Sum { x: usize },
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::Matmul { .. } => "matmul",
            OpKind::Transpose { .. } => "transpose",
            OpKind::Add { .. } => "add",
            OpKind::Sub { .. } => "sub",
            OpKind::AddRow { .. } => "add_row",
            OpKind::Mul { .. } => "mul",
            OpKind::Scale { .. } => "scale",
            OpKind::ScaleRows { .. } => "scale_rows",
            OpKind::ScaleCols { .. } => "scale_cols",
            OpKind::ConcatRows { .. } => "concat_rows",
            OpKind::ConcatCols { .. } => "concat_cols",
            OpKind::GatherRows { .. } => "gather_rows",
            OpKind::ScatterSum { .. } => "scatter_sum",
            OpKind::SegmentSoftmax { .. } => "segment_softmax",
            OpKind::LeakyRelu { .. } => "leaky_relu",
            OpKind::ClampMin { .. } => "clamp_min",
            OpKind::Elu { .. } => "elu",
            OpKind::Sigmoid { .. } => "sigmoid",
            OpKind::Log { .. } => "log",
            OpKind::Exp { .. } => "exp",
            OpKind::Dropout { .. } => "dropout",
            OpKind::L2NormalizeRows { .. } => "l2_normalize_rows",
            OpKind::RowSum { .. } => "row_sum",
            OpKind::Mean { .. } => "mean",
            OpKind::Sum { .. } => "sum",
        }
    }
}

struct Op {
    kind: OpKind,
    out: usize,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
    ops: Vec<Op>,
    grads: Vec<Vec<f64>>,
    poison: Option<(&'static str, Phase)>,
}

/// A recording tape. Single-threaded by construction (`Rc` handles).
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

/// A handle to one tape node.
#[derive(Clone)]
pub struct Tensor {
    tape: Tape,
    id: usize,
    rows: usize,
    cols: usize,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    fn push_node(&self, rows: usize, cols: usize, value: Vec<f64>, requires_grad: bool) -> Tensor {
        assert_eq!(value.len(), rows * cols, "value length must match shape");
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            rows,
            cols,
            value,
            requires_grad,
        });
        Tensor {
            tape: self.clone(),
            id,
            rows,
            cols,
        }
    }

    /// A leaf that never receives gradient.
    pub fn constant(&self, rows: usize, cols: usize, value: Vec<f64>) -> Tensor {
        self.push_node(rows, cols, value, false)
    }

    /// A `1×1` constant.
    pub fn scalar(&self, v: f64) -> Tensor {
        self.constant(1, 1, vec![v])
    }

    /// A leaf; gradient accumulates only when `requires_grad` is set.
    pub fn leaf(&self, rows: usize, cols: usize, value: Vec<f64>, requires_grad: bool) -> Tensor {
        self.push_node(rows, cols, value, requires_grad)
    }

    /// First non-finite producer, if any op poisoned the tape.
    pub fn poisoned(&self) -> Option<(&'static str, Phase)> {
        self.inner.borrow().poison
    }

    /// Errors when the forward pass has produced a non-finite value.
    pub fn check_finite(&self) -> Result<(), AutodiffError> {
        match self.poisoned() {
            Some((op, phase)) => Err(AutodiffError::NonFinite { op, phase }),
            None => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn record(&self, kind: OpKind, rows: usize, cols: usize, value: Vec<f64>) -> Tensor {
        let requires_grad = {
            let inner = self.inner.borrow();
            let mut any = false;
            for_each_input(&kind, |id| any |= inner.nodes[id].requires_grad);
            any
        };
        let name = kind.name();
        let out = self.push_node(rows, cols, value, requires_grad);
        let mut inner = self.inner.borrow_mut();
        if inner.poison.is_none()
            && inner.nodes[out.id].value.iter().any(|v| !v.is_finite())
        {
            inner.poison = Some((name, Phase::Forward));
        }
        inner.ops.push(Op { kind, out: out.id });
        out
    }
}

fn for_each_input(kind: &OpKind, mut f: impl FnMut(usize)) {
    match kind {
        OpKind::Matmul { a, b }
        | OpKind::Add { a, b }
        | OpKind::Sub { a, b }
        | OpKind::Mul { a, b } => {
            f(*a);
            f(*b);
        }
        OpKind::AddRow { m, v } | OpKind::ScaleRows { m, v } | OpKind::ScaleCols { m, v } => {
            f(*m);
            f(*v);
        }
        OpKind::ConcatRows { parts } | OpKind::ConcatCols { parts } => {
            for p in parts {
                f(*p);
            }
        }
        OpKind::Transpose { x }
        | OpKind::Scale { x, .. }
        | OpKind::GatherRows { x, .. }
        | OpKind::ScatterSum { x, .. }
        | OpKind::SegmentSoftmax { x, .. }
        | OpKind::LeakyRelu { x, .. }
        | OpKind::ClampMin { x, .. }
        | OpKind::Elu { x }
        | OpKind::Sigmoid { x }
        | OpKind::Log { x }
        | OpKind::Exp { x }
        | OpKind::Dropout { x, .. }
        | OpKind::L2NormalizeRows { x, .. }
        | OpKind::RowSum { x }
        | OpKind::Mean { x }
        | OpKind::Sum { x } => f(*x),
    }
}

impl Tensor {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Tape node id; two tensors with equal ids are the same node.
    pub fn id(&self) -> usize {
        self.id
    }

    /// A copy of the node's value.
    pub fn value(&self) -> Vec<f64> {
        self.tape.inner.borrow().nodes[self.id].value.clone()
    }

    /// The value of a `1×1` tensor.
    pub fn item(&self) -> f64 {
        assert_eq!((self.rows, self.cols), (1, 1), "item() needs a scalar");
        self.tape.inner.borrow().nodes[self.id].value[0]
    }

    /// A copy of the gradient accumulated by the last `backward`.
    pub fn grad(&self) -> Vec<f64> {
        let inner = self.tape.inner.borrow();
        inner
            .grads
            .get(self.id)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.rows * self.cols])
    }

    fn same_tape(&self, other: &Tensor, op: &str) {
        assert!(
            Rc::ptr_eq(&self.tape.inner, &other.tape.inner),
            "{op}: tensors come from different tapes"
        );
    }

    fn unary(&self, kind: OpKind, rows: usize, cols: usize, value: Vec<f64>) -> Tensor {
        self.tape.record(kind, rows, cols, value)
    }

    fn read<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        let inner = self.tape.inner.borrow();
        f(&inner.nodes[self.id].value)
    }

    fn read2<R>(&self, other: &Tensor, f: impl FnOnce(&[f64], &[f64]) -> R) -> R {
        let inner = self.tape.inner.borrow();
        f(
            &inner.nodes[self.id].value,
            &inner.nodes[other.id].value,
        )
    }

    // -- ops ---------------------------------------------------------------

    /// Matrix product `self · rhs`.
    pub fn matmul(&self, rhs: &Tensor) -> Tensor {
        self.same_tape(rhs, "matmul");
        assert_eq!(
            self.cols, rhs.rows,
            "matmul: inner dimensions differ ({}x{} · {}x{})",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let (m, k, n) = (self.rows, self.cols, rhs.cols);
        let value = self.read2(rhs, |a, b| matmul_raw(a, b, m, k, n));
        self.unary(
            OpKind::Matmul {
                a: self.id,
                b: rhs.id,
            },
            m,
            n,
            value,
        )
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows, self.cols);
        let value = self.read(|x| {
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = x[i * c + j];
                }
            }
            out
        });
        self.unary(OpKind::Transpose { x: self.id }, c, r, value)
    }

    pub fn add(&self, rhs: &Tensor) -> Tensor {
        self.same_tape(rhs, "add");
        assert_eq!(self.shape(), rhs.shape(), "add: shapes differ");
        let value = self.read2(rhs, |a, b| a.iter().zip(b).map(|(x, y)| x + y).collect());
        self.unary(
            OpKind::Add {
                a: self.id,
                b: rhs.id,
            },
            self.rows,
            self.cols,
            value,
        )
    }

    pub fn sub(&self, rhs: &Tensor) -> Tensor {
        self.same_tape(rhs, "sub");
        assert_eq!(self.shape(), rhs.shape(), "sub: shapes differ");
        let value = self.read2(rhs, |a, b| a.iter().zip(b).map(|(x, y)| x - y).collect());
        self.unary(
            OpKind::Sub {
                a: self.id,
                b: rhs.id,
            },
            self.rows,
            self.cols,
            value,
        )
    }

    /// Adds a `1×cols` row vector to every row.
    pub fn add_row(&self, row: &Tensor) -> Tensor {
        self.same_tape(row, "add_row");
        assert_eq!(
            (row.rows, row.cols),
            (1, self.cols),
            "add_row: need a 1x{} row vector",
            self.cols
        );
        let c = self.cols;
        let value = self.read2(row, |m, v| {
            m.iter().enumerate().map(|(i, x)| x + v[i % c]).collect()
        });
        self.unary(
            OpKind::AddRow {
                m: self.id,
                v: row.id,
            },
            self.rows,
            self.cols,
            value,
        )
    }

    /// Elementwise product.
    pub fn mul(&self, rhs: &Tensor) -> Tensor {
        self.same_tape(rhs, "mul");
        assert_eq!(self.shape(), rhs.shape(), "mul: shapes differ");
        let value = self.read2(rhs, |a, b| a.iter().zip(b).map(|(x, y)| x * y).collect());
        self.unary(
            OpKind::Mul {
                a: self.id,
                b: rhs.id,
            },
            self.rows,
            self.cols,
            value,
        )
    }

    /// Multiplication by a compile-time constant.
    pub fn scale(&self, c: f64) -> Tensor {
        let value = self.read(|x| x.iter().map(|v| v * c).collect());
        self.unary(
            OpKind::Scale { x: self.id, c },
            self.rows,
            self.cols,
            value,
        )
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    /// Scales row `i` by `v[i]` (`v` is `rows×1`).
    pub fn scale_rows(&self, v: &Tensor) -> Tensor {
        self.same_tape(v, "scale_rows");
        assert_eq!(
            (v.rows, v.cols),
            (self.rows, 1),
            "scale_rows: need a {}x1 column vector",
            self.rows
        );
        let c = self.cols;
        let value = self.read2(v, |m, s| {
            m.iter().enumerate().map(|(i, x)| x * s[i / c]).collect()
        });
        self.unary(
            OpKind::ScaleRows {
                m: self.id,
                v: v.id,
            },
            self.rows,
            self.cols,
            value,
        )
    }

    /// Scales column `j` by `v[j]` (`v` is `1×cols`).
    pub fn scale_cols(&self, v: &Tensor) -> Tensor {
        self.same_tape(v, "scale_cols");
        assert_eq!(
            (v.rows, v.cols),
            (1, self.cols),
            "scale_cols: need a 1x{} row vector",
            self.cols
        );
        let c = self.cols;
        let value = self.read2(v, |m, s| {
            m.iter().enumerate().map(|(i, x)| x * s[i % c]).collect()
        });
        self.unary(
            OpKind::ScaleCols {
                m: self.id,
                v: v.id,
            },
            self.rows,
            self.cols,
            value,
        )
    }

    /// Vertical stacking; all parts must share a column count.
    pub fn concat_rows(parts: &[&Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat_rows: nothing to concatenate");
        let cols = parts[0].cols;
        let tape = parts[0].tape.clone();
        let mut rows = 0;
        let mut value = Vec::new();
        for p in parts {
            parts[0].same_tape(p, "concat_rows");
            assert_eq!(p.cols, cols, "concat_rows: column counts differ");
            rows += p.rows;
            p.read(|x| value.extend_from_slice(x));
        }
        tape.record(
            OpKind::ConcatRows {
                parts: parts.iter().map(|p| p.id).collect(),
            },
            rows,
            cols,
            value,
        )
    }

    /// Horizontal stacking; all parts must share a row count.
    pub fn concat_cols(parts: &[&Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat_cols: nothing to concatenate");
        let rows = parts[0].rows;
        let tape = parts[0].tape.clone();
        let cols: usize = parts
            .iter()
            .map(|p| {
                parts[0].same_tape(p, "concat_cols");
                assert_eq!(p.rows, rows, "concat_cols: row counts differ");
                p.cols
            })
            .sum();
        let mut value = vec![0.0; rows * cols];
        let mut col_off = 0;
        for p in parts {
            p.read(|x| {
                for i in 0..rows {
                    value[i * cols + col_off..i * cols + col_off + p.cols]
                        .copy_from_slice(&x[i * p.cols..(i + 1) * p.cols]);
                }
            });
            col_off += p.cols;
        }
        tape.record(
            OpKind::ConcatCols {
                parts: parts.iter().map(|p| p.id).collect(),
            },
            rows,
            cols,
            value,
        )
    }

    /// Row `e` of the output is row `idx[e]` of `self`.
    pub fn gather_rows(&self, idx: &[usize]) -> Tensor {
        for &i in idx {
            assert!(i < self.rows, "gather_rows: index {i} out of {} rows", self.rows);
        }
        let c = self.cols;
        let value = self.read(|x| {
            let mut out = Vec::with_capacity(idx.len() * c);
            for &i in idx {
                out.extend_from_slice(&x[i * c..(i + 1) * c]);
            }
            out
        });
        self.unary(
            OpKind::GatherRows {
                x: self.id,
                idx: Rc::new(idx.to_vec()),
            },
            idx.len(),
            c,
            value,
        )
    }

    /// Row `i` of the `n×cols` output is the sum of rows `e` with `idx[e] == i`.
    pub fn scatter_sum(&self, idx: &[usize], n: usize) -> Tensor {
        assert_eq!(idx.len(), self.rows, "scatter_sum: one index per row");
        for &i in idx {
            assert!(i < n, "scatter_sum: index {i} out of {n} output rows");
        }
        let c = self.cols;
        let value = self.read(|x| {
            let mut out = vec![0.0; n * c];
            for (e, &i) in idx.iter().enumerate() {
                for j in 0..c {
                    out[i * c + j] += x[e * c + j];
                }
            }
            out
        });
        self.unary(
            OpKind::ScatterSum {
                x: self.id,
                idx: Rc::new(idx.to_vec()),
            },
            n,
            c,
            value,
        )
    }

    /// Softmax within runs of equal segment ids over an `E×1` score vector.
    ///
    /// `seg` must be non-decreasing (sort edges by destination first); each
    /// run is normalised independently with the usual max-subtraction for
    /// stability. Ids may skip values — an absent segment simply has no rows.
    pub fn segment_softmax(&self, seg: &[usize]) -> Tensor {
        assert_eq!(self.cols, 1, "segment_softmax: scores must be Ex1");
        assert_eq!(seg.len(), self.rows, "segment_softmax: one id per score");
        assert!(
            seg.windows(2).all(|w| w[0] <= w[1]),
            "segment_softmax: segment ids must be non-decreasing"
        );
        let value = self.read(|x| segment_softmax_raw(x, seg));
        self.unary(
            OpKind::SegmentSoftmax {
                x: self.id,
                seg: Rc::new(seg.to_vec()),
            },
            self.rows,
            1,
            value,
        )
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        let value = self.read(|x| {
            x.iter()
                .map(|&v| if v > 0.0 { v } else { slope * v })
                .collect()
        });
        self.unary(
            OpKind::LeakyRelu { x: self.id, slope },
            self.rows,
            self.cols,
            value,
        )
    }

    /// Elementwise `max(x, min)`; the gradient is zero on the clamped side.
    pub fn clamp_min(&self, min: f64) -> Tensor {
        let value = self.read(|x| x.iter().map(|&v| v.max(min)).collect());
        self.unary(
            OpKind::ClampMin { x: self.id, min },
            self.rows,
            self.cols,
            value,
        )
    }

    pub fn relu(&self) -> Tensor {
        self.leaky_relu(0.0)
    }

    pub fn elu(&self) -> Tensor {
        let value = self.read(|x| {
            x.iter()
                .map(|&v| if v > 0.0 { v } else { v.exp() - 1.0 })
                .collect()
        });
        self.unary(OpKind::Elu { x: self.id }, self.rows, self.cols, value)
    }

    pub fn sigmoid(&self) -> Tensor {
        let value = self.read(|x| x.iter().map(|&v| sigmoid(v)).collect());
        self.unary(OpKind::Sigmoid { x: self.id }, self.rows, self.cols, value)
    }

    pub fn log(&self) -> Tensor {
        let value = self.read(|x| x.iter().map(|&v| v.ln()).collect());
        self.unary(OpKind::Log { x: self.id }, self.rows, self.cols, value)
    }

    pub fn exp(&self) -> Tensor {
        let value = self.read(|x| x.iter().map(|&v| v.exp()).collect());
        self.unary(OpKind::Exp { x: self.id }, self.rows, self.cols, value)
    }

    /// Inverted dropout: keeps each element with probability `1 − rate`,
    /// scaling survivors by `1/(1 − rate)` so the expectation is unchanged.
    /// With `train = false` (or `rate == 0`) this is the identity.
    pub fn dropout(&self, rate: f64, rng: &mut impl Rng, train: bool) -> Tensor {
        assert!((0.0..1.0).contains(&rate), "dropout: rate must be in [0, 1)");
        if !train || rate == 0.0 {
            return self.clone();
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.rows * self.cols)
            .map(|_| {
                if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let value = self.read(|x| x.iter().zip(&mask).map(|(v, m)| v * m).collect());
        self.unary(
            OpKind::Dropout {
                x: self.id,
                mask: Rc::new(mask),
            },
            self.rows,
            self.cols,
            value,
        )
    }

    /// Normalises each row to unit Euclidean length; rows with norm below
    /// `eps` are divided by `eps` instead of their norm.
    pub fn l2_normalize_rows(&self, eps: f64) -> Tensor {
        assert!(eps > 0.0, "l2_normalize_rows: eps must be positive");
        let c = self.cols;
        let value = self.read(|x| {
            let mut out = vec![0.0; x.len()];
            for i in 0..self.rows {
                let row = &x[i * c..(i + 1) * c];
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(eps);
                for j in 0..c {
                    out[i * c + j] = row[j] / n;
                }
            }
            out
        });
        self.unary(
            OpKind::L2NormalizeRows { x: self.id, eps },
            self.rows,
            self.cols,
            value,
        )
    }

    /// Sums each row: `n×d` → `n×1`.
    pub fn row_sum(&self) -> Tensor {
        let c = self.cols;
        let value = self.read(|x| {
            (0..self.rows)
                .map(|i| x[i * c..(i + 1) * c].iter().sum())
                .collect()
        });
        self.unary(OpKind::RowSum { x: self.id }, self.rows, 1, value)
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&self) -> Tensor {
        let n = (self.rows * self.cols) as f64;
        let value = self.read(|x| vec![x.iter().sum::<f64>() / n]);
        self.unary(OpKind::Mean { x: self.id }, 1, 1, value)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self) -> Tensor {
        let value = self.read(|x| vec![x.iter().sum::<f64>()]);
        self.unary(OpKind::Sum { x: self.id }, 1, 1, value)
    }

    // -- backward ----------------------------------------------------------

    /// Runs the reverse sweep from this scalar, accumulating gradients into
    /// every node with `requires_grad`.
    pub fn backward(&self) -> Result<(), AutodiffError> {
        assert_eq!(
            (self.rows, self.cols),
            (1, 1),
            "backward: output must be a scalar, got {}x{}",
            self.rows,
            self.cols
        );
        let inner = &mut *self.tape.inner.borrow_mut();
        if let Some((op, phase)) = inner.poison {
            return Err(AutodiffError::NonFinite { op, phase });
        }
        let TapeInner {
            nodes,
            ops,
            grads,
            poison,
        } = inner;
        grads.clear();
        grads.extend(nodes.iter().map(|n| vec![0.0; n.rows * n.cols]));
        grads[self.id][0] = 1.0;

        for op in ops.iter().rev() {
            if !nodes[op.out].requires_grad {
                continue;
            }
            let g = std::mem::take(&mut grads[op.out]);
            backward_op(&op.kind, op.out, &g, nodes, grads);
            grads[op.out] = g;
            // Scan the gradients this op just wrote for non-finite values.
            let mut bad = false;
            for_each_input(&op.kind, |id| {
                bad |= nodes[id].requires_grad && grads[id].iter().any(|v| !v.is_finite());
            });
            if bad {
                *poison = Some((op.kind.name(), Phase::Backward));
                return Err(AutodiffError::NonFinite {
                    op: op.kind.name(),
                    phase: Phase::Backward,
                });
            }
        }
        Ok(())
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for l in 0..k {
            let av = a[i * k + l];
            if av == 0.0 {
                continue;
            }
            let (brow, orow) = (&b[l * n..(l + 1) * n], &mut out[i * n..(i + 1) * n]);
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

fn segment_softmax_raw(x: &[f64], seg: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let mut start = 0;
    while start < x.len() {
        let mut end = start + 1;
        while end < x.len() && seg[end] == seg[start] {
            end += 1;
        }
        let m = x[start..end].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for e in start..end {
            out[e] = (x[e] - m).exp();
            z += out[e];
        }
        for e in start..end {
            out[e] /= z;
        }
        start = end;
    }
    out
}

/// Pushes the output gradient `g` of one op back to its inputs.
///
/// Accumulation into a node is skipped when it does not require gradient;
/// frozen leaves therefore keep an exactly-zero buffer.
fn backward_op(kind: &OpKind, out: usize, g: &[f64], nodes: &[Node], grads: &mut [Vec<f64>]) {
    // Helper: accumulate `f(slot_index)` over a target's gradient buffer.
    macro_rules! acc {
        ($id:expr, $body:expr) => {
            if nodes[$id].requires_grad {
                let dst = &mut grads[$id];
                #[allow(clippy::redundant_closure_call)]
                ($body)(dst);
            }
        };
    }
    match kind {
        OpKind::Matmul { a, b } => {
            let (m, k) = (nodes[*a].rows, nodes[*a].cols);
            let n = nodes[*b].cols;
            acc!(*a, |dst: &mut Vec<f64>| {
                // dA += G · Bᵀ
                let bv = &nodes[*b].value;
                for i in 0..m {
                    for l in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g[i * n + j] * bv[l * n + j];
                        }
                        dst[i * k + l] += s;
                    }
                }
            });
            acc!(*b, |dst: &mut Vec<f64>| {
                // dB += Aᵀ · G, accumulated row by row so every stream
                // stays contiguous even when A is tall (per-edge layers).
                let av = &nodes[*a].value;
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for l in 0..k {
                        let a_il = av[i * k + l];
                        if a_il == 0.0 {
                            continue;
                        }
                        let drow = &mut dst[l * n..(l + 1) * n];
                        for j in 0..n {
                            drow[j] += a_il * grow[j];
                        }
                    }
                }
            });
        }
        OpKind::Transpose { x } => {
            let (r, c) = (nodes[*x].rows, nodes[*x].cols);
            acc!(*x, |dst: &mut Vec<f64>| {
                for i in 0..r {
                    for j in 0..c {
                        dst[i * c + j] += g[j * r + i];
                    }
                }
            });
        }
        OpKind::Add { a, b } => {
            acc!(*a, |dst: &mut Vec<f64>| {
                for (d, gv) in dst.iter_mut().zip(g) {
                    *d += gv;
                }
            });
            acc!(*b, |dst: &mut Vec<f64>| {
                for (d, gv) in dst.iter_mut().zip(g) {
                    *d += gv;
                }
            });
        }
        OpKind::Sub { a, b } => {
            acc!(*a, |dst: &mut Vec<f64>| {
                for (d, gv) in dst.iter_mut().zip(g) {
                    *d += gv;
                }
            });
            acc!(*b, |dst: &mut Vec<f64>| {
                for (d, gv) in dst.iter_mut().zip(g) {
                    *d -= gv;
                }
            });
        }
        OpKind::AddRow { m, v } => {
            let c = nodes[*v].cols;
            acc!(*m, |dst: &mut Vec<f64>| {
                for (d, gv) in dst.iter_mut().zip(g) {
                    *d += gv;
                }
            });
            acc!(*v, |dst: &mut Vec<f64>| {
                for (i, gv) in g.iter().enumerate() {
                    dst[i % c] += gv;
                }
            });
        }
        OpKind::Mul { a, b } => {
            acc!(*a, |dst: &mut Vec<f64>| {
                let bv = &nodes[*b].value;
                for i in 0..dst.len() {
                    dst[i] += g[i] * bv[i];
                }
            });
            acc!(*b, |dst: &mut Vec<f64>| {
                let av = &nodes[*a].value;
                for i in 0..dst.len() {
                    dst[i] += g[i] * av[i];
                }
            });
        }
        OpKind::Scale { x, c } => {
            acc!(*x, |dst: &mut Vec<f64>| {
                for (d, gv) in dst.iter_mut().zip(g) {
                    *d += c * gv;
                }
            });
        }
        OpKind::ScaleRows { m, v } => {
            let c = nodes[*m].cols;
            acc!(*m, |dst: &mut Vec<f64>| {
                let sv = &nodes[*v].value;
                for i in 0..dst.len() {
                    dst[i] += g[i] * sv[i / c];
                }
            });
            acc!(*v, |dst: &mut Vec<f64>| {
                let mv = &nodes[*m].value;
                for i in 0..mv.len() {
                    dst[i / c] += g[i] * mv[i];
                }
            });
        }
        OpKind::ScaleCols { m, v } => {
            let c = nodes[*m].cols;
            acc!(*m, |dst: &mut Vec<f64>| {
                let sv = &nodes[*v].value;
                for i in 0..dst.len() {
                    dst[i] += g[i] * sv[i % c];
                }
            });
            acc!(*v, |dst: &mut Vec<f64>| {
                let mv = &nodes[*m].value;
                for i in 0..mv.len() {
                    dst[i % c] += g[i] * mv[i];
                }
            });
        }
        OpKind::ConcatRows { parts } => {
            let mut off = 0;
            for p in parts {
                let len = nodes[*p].rows * nodes[*p].cols;
                acc!(*p, |dst: &mut Vec<f64>| {
                    for i in 0..len {
                        dst[i] += g[off + i];
                    }
                });
                off += len;
            }
        }
        OpKind::ConcatCols { parts } => {
            let rows = nodes[out].rows;
            let cols = nodes[out].cols;
            let mut col_off = 0;
            for p in parts {
                let pc = nodes[*p].cols;
                acc!(*p, |dst: &mut Vec<f64>| {
                    for i in 0..rows {
                        for j in 0..pc {
                            dst[i * pc + j] += g[i * cols + col_off + j];
                        }
                    }
                });
                col_off += pc;
            }
        }
        OpKind::GatherRows { x, idx } => {
            let c = nodes[*x].cols;
            acc!(*x, |dst: &mut Vec<f64>| {
                for (e, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        dst[i * c + j] += g[e * c + j];
                    }
                }
            });
        }
        OpKind::ScatterSum { x, idx, .. } => {
            let c = nodes[*x].cols;
            acc!(*x, |dst: &mut Vec<f64>| {
                for (e, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        dst[e * c + j] += g[i * c + j];
                    }
                }
            });
        }
        OpKind::SegmentSoftmax { x, seg } => {
            let y = &nodes[out].value;
            acc!(*x, |dst: &mut Vec<f64>| {
                let mut start = 0;
                while start < y.len() {
                    let mut end = start + 1;
                    while end < y.len() && seg[end] == seg[start] {
                        end += 1;
                    }
                    let dot: f64 = (start..end).map(|e| g[e] * y[e]).sum();
                    for e in start..end {
                        dst[e] += y[e] * (g[e] - dot);
                    }
                    start = end;
                }
            });
        }
        OpKind::LeakyRelu { x, slope } => {
            acc!(*x, |dst: &mut Vec<f64>| {
                let xv = &nodes[*x].value;
                for i in 0..dst.len() {
                    dst[i] += g[i] * if xv[i] > 0.0 { 1.0 } else { *slope };
                }
            });
        }
        OpKind::ClampMin { x, min } => {
            acc!(*x, |dst: &mut Vec<f64>| {
                let xv = &nodes[*x].value;
                for i in 0..dst.len() {
                    if xv[i] > *min {
                        dst[i] += g[i];
                    }
                }
            });
        }
        OpKind::Elu { x } => {
            acc!(*x, |dst: &mut Vec<f64>| {
                let xv = &nodes[*x].value;
                let yv = &nodes[out].value;
                for i in 0..dst.len() {
                    // For x ≤ 0, d/dx (eˣ − 1) = eˣ = y + 1.
                    dst[i] += g[i] * if xv[i] > 0.0 { 1.0 } else { yv[i] + 1.0 };
                }
            });
        }
        OpKind::Sigmoid { x } => {
            acc!(*x, |dst: &mut Vec<f64>| {
                let yv = &nodes[out].value;
                for i in 0..dst.len() {
                    dst[i] += g[i] * yv[i] * (1.0 - yv[i]);
                }
            });
        }
        OpKind::Log { x } => {
            acc!(*x, |dst: &mut Vec<f64>| {
                let xv = &nodes[*x].value;
                for i in 0..dst.len() {
                    dst[i] += g[i] / xv[i];
                }
            });
        }
        OpKind::Exp { x } => {
            acc!(*x, |dst: &mut Vec<f64>| {
                let yv = &nodes[out].value;
                for i in 0..dst.len() {
                    dst[i] += g[i] * yv[i];
                }
            });
        }
        OpKind::Dropout { x, mask } => {
            acc!(*x, |dst: &mut Vec<f64>| {
                for i in 0..dst.len() {
                    dst[i] += g[i] * mask[i];
                }
            });
        }
        OpKind::L2NormalizeRows { x, eps } => {
            let c = nodes[*x].cols;
            acc!(*x, |dst: &mut Vec<f64>| {
                let xv = &nodes[*x].value;
                let yv = &nodes[out].value;
                for i in 0..nodes[*x].rows {
                    let row = &xv[i * c..(i + 1) * c];
                    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let n = norm.max(*eps);
                    if norm > *eps {
                        let dot: f64 =
                            (0..c).map(|j| g[i * c + j] * yv[i * c + j]).sum();
                        for j in 0..c {
                            dst[i * c + j] += (g[i * c + j] - yv[i * c + j] * dot) / n;
                        }
                    } else {
                        // Below the floor the map is linear: y = x / eps.
                        for j in 0..c {
                            dst[i * c + j] += g[i * c + j] / n;
                        }
                    }
                }
            });
        }
        OpKind::RowSum { x } => {
            let c = nodes[*x].cols;
            acc!(*x, |dst: &mut Vec<f64>| {
                for i in 0..dst.len() {
                    dst[i] += g[i / c];
                }
            });
        }
        OpKind::Mean { x } => {
            let n = (nodes[*x].rows * nodes[*x].cols) as f64;
            acc!(*x, |dst: &mut Vec<f64>| {
                for d in dst.iter_mut() {
                    *d += g[0] / n;
                }
            });
        }
        OpKind::Sum { x } => {
            acc!(*x, |dst: &mut Vec<f64>| {
                for d in dst.iter_mut() {
                    *d += g[0];
                }
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!(
            (a - b).abs() <= tol,
            "expected {b} within {tol}, got {a} (diff {})",
            (a - b).abs()
        );
    }

    #[test]
    fn product_rule_matches_hand_gradients() {
        // d/dx sum(x ⊙ y) = y, d/dy = x.
        let tape = Tape::new();
        let x = tape.leaf(1, 2, vec![2.0, 3.0], true);
        let y = tape.leaf(1, 2, vec![5.0, 7.0], true);
        let z = x.mul(&y).sum();
        assert_eq!(z.item(), 31.0);
        z.backward().unwrap();
        assert_eq!(x.grad(), vec![5.0, 7.0]);
        assert_eq!(y.grad(), vec![2.0, 3.0]);
    }

    #[test]
    fn matmul_gradients_match_hand_computation() {
        // f = sum(A·B). dA = 1·Bᵀ (row sums of B per column), dB = Aᵀ·1.
        let tape = Tape::new();
        let a = tape.leaf(2, 2, vec![1.0, 2.0, 3.0, 4.0], true);
        let b = tape.leaf(2, 2, vec![5.0, 6.0, 7.0, 8.0], true);
        let f = a.matmul(&b).sum();
        assert_eq!(f.item(), 1.0 * 5.0 + 2.0 * 7.0 + 6.0 + 16.0 + 15.0 + 28.0 + 18.0 + 32.0);
        f.backward().unwrap();
        assert_eq!(a.grad(), vec![11.0, 15.0, 11.0, 15.0]);
        assert_eq!(b.grad(), vec![4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn segment_softmax_uniform_scores_give_uniform_weights() {
        let tape = Tape::new();
        let s = tape.leaf(5, 1, vec![0.0; 5], true);
        let a = s.segment_softmax(&[0, 0, 0, 2, 2]);
        let v = a.value();
        assert_eq!(&v[..3], &[1.0 / 3.0; 3]);
        assert_eq!(&v[3..], &[0.5; 2]);
    }

    #[test]
    fn segment_softmax_rows_sum_to_one_per_segment() {
        let tape = Tape::new();
        let s = tape.leaf(6, 1, vec![1.5, -0.25, 3.0, 0.0, 10.0, 9.5], true);
        let a = s.segment_softmax(&[0, 0, 1, 1, 1, 3]);
        let v = a.value();
        assert_close(v[0] + v[1], 1.0, 1e-15);
        assert_close(v[2] + v[3] + v[4], 1.0, 1e-15);
        assert_close(v[5], 1.0, 1e-15);
    }

    #[test]
    fn sigmoid_gradient_at_zero_is_a_quarter() {
        let tape = Tape::new();
        let x = tape.leaf(1, 1, vec![0.0], true);
        x.sigmoid().sum().backward().unwrap();
        assert_eq!(x.grad(), vec![0.25]);
    }

    #[test]
    fn l2_normalize_maps_a_3_4_row_to_the_unit_circle() {
        let tape = Tape::new();
        let x = tape.leaf(1, 2, vec![3.0, 4.0], true);
        let y = x.l2_normalize_rows(1e-12);
        assert_eq!(y.value(), vec![0.6, 0.8]);
        // A zero row is floored by eps instead of dividing by zero.
        let z = tape.leaf(1, 2, vec![0.0, 0.0], true);
        assert_eq!(z.l2_normalize_rows(1e-12).value(), vec![0.0, 0.0]);
    }

    #[test]
    fn gather_then_scatter_restores_row_sums() {
        let tape = Tape::new();
        let x = tape.leaf(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], true);
        let gathered = x.gather_rows(&[2, 0, 2]);
        assert_eq!(gathered.value(), vec![5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let back = gathered.scatter_sum(&[2, 0, 2], 3);
        assert_eq!(back.value(), vec![1.0, 2.0, 0.0, 0.0, 10.0, 12.0]);
        back.sum().backward().unwrap();
        // Row 2 was gathered twice, row 1 never.
        assert_eq!(x.grad(), vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn dropout_in_eval_mode_is_the_identity() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = tape.leaf(2, 2, vec![1.0, 2.0, 3.0, 4.0], true);
        let y = x.dropout(0.5, &mut rng, false);
        assert_eq!(y.id(), x.id());
    }

    #[test]
    fn dropout_masks_and_rescales_in_train_mode() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = tape.leaf(1, 1000, vec![1.0; 1000], true);
        let y = x.dropout(0.25, &mut rng, true);
        let v = y.value();
        // Every surviving entry is rescaled by exactly 1/(1-rate).
        assert!(v.iter().all(|&e| e == 0.0 || (e - 4.0 / 3.0).abs() < 1e-15));
        let kept = v.iter().filter(|&&e| e != 0.0).count();
        // Binomial(1000, 0.75): mean 750, sd ≈ 13.7; allow 4σ.
        assert!((695..=805).contains(&kept), "kept {kept} of 1000");
    }

    #[test]
    fn frozen_leaves_receive_exactly_zero_gradient() {
        let tape = Tape::new();
        let w = tape.leaf(1, 2, vec![1.0, 2.0], false);
        let x = tape.leaf(1, 2, vec![3.0, 4.0], true);
        // Gradient flows through w's value into x, but w itself stays zero.
        w.mul(&x).sum().backward().unwrap();
        assert_eq!(w.grad(), vec![0.0, 0.0]);
        assert_eq!(x.grad(), vec![1.0, 2.0]);
    }

    #[test]
    fn non_finite_forward_values_poison_the_tape_with_the_op_name() {
        let tape = Tape::new();
        let x = tape.leaf(1, 1, vec![-1.0], true);
        let y = x.log();
        assert!(y.value()[0].is_nan());
        assert_eq!(tape.poisoned(), Some(("log", Phase::Forward)));
        let err = y.sum().backward().unwrap_err();
        assert_eq!(
            err,
            AutodiffError::NonFinite {
                op: "log",
                phase: Phase::Forward
            }
        );
    }

    #[test]
    fn overflowing_gradients_poison_during_backward() {
        let tape = Tape::new();
        // log(subnormal) is finite, but its gradient 1/x overflows to ∞.
        let x = tape.leaf(1, 1, vec![5e-324], true);
        let y = x.log();
        assert!(y.value()[0].is_finite());
        assert_eq!(tape.poisoned(), None);
        let err = y.sum().backward().unwrap_err();
        assert_eq!(
            err,
            AutodiffError::NonFinite {
                op: "log",
                phase: Phase::Backward
            }
        );
    }

    #[test]
    #[should_panic(expected = "backward: output must be a scalar")]
    fn backward_on_a_non_scalar_panics() {
        let tape = Tape::new();
        let x = tape.leaf(1, 2, vec![1.0, 2.0], true);
        let _ = x.mul(&x).backward();
    }

    #[test]
    #[should_panic(expected = "matmul: inner dimensions differ")]
    fn shape_mismatch_panics_with_the_op_name() {
        let tape = Tape::new();
        let a = tape.leaf(2, 3, vec![0.0; 6], true);
        let b = tape.leaf(2, 3, vec![0.0; 6], true);
        let _ = a.matmul(&b);
    }

    #[test]
    fn concat_split_gradients_land_in_the_right_blocks() {
        let tape = Tape::new();
        let a = tape.leaf(2, 1, vec![1.0, 2.0], true);
        let b = tape.leaf(2, 2, vec![3.0, 4.0, 5.0, 6.0], true);
        let c = Tensor::concat_cols(&[&a, &b]);
        assert_eq!(c.value(), vec![1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        // Weight the columns to make the split distinguishable.
        let w = tape.constant(3, 1, vec![1.0, 10.0, 100.0]);
        c.matmul(&w).sum().backward().unwrap();
        assert_eq!(a.grad(), vec![1.0, 1.0]);
        assert_eq!(b.grad(), vec![10.0, 100.0, 10.0, 100.0]);

        let tape2 = Tape::new();
        let p = tape2.leaf(1, 2, vec![1.0, 2.0], true);
        let q = tape2.leaf(2, 2, vec![3.0, 4.0, 5.0, 6.0], true);
        let r = Tensor::concat_rows(&[&p, &q]);
        assert_eq!(r.value(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        r.row_sum().mul(&tape2.constant(3, 1, vec![1.0, 10.0, 100.0])).sum().backward().unwrap();
        assert_eq!(p.grad(), vec![1.0, 1.0]);
        assert_eq!(q.grad(), vec![10.0, 10.0, 100.0, 100.0]);
    }

    #[test]
    fn values_and_gradients_are_bitwise_deterministic() {
        let run = || {
            let tape = Tape::new();
            let x = tape.leaf(3, 3, (0..9).map(|i| (i as f64) * 0.37 - 1.1).collect(), true);
            let y = x
                .matmul(&x)
                .elu()
                .l2_normalize_rows(1e-12)
                .sigmoid()
                .mean();
            y.backward().unwrap();
            (y.item().to_bits(), x.grad().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        };
        assert_eq!(run(), run());
    }
}
