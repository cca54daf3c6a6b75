//! Reverse-mode automatic differentiation over scalar expression tapes.
//!
//! A [`Tape`] is an append-only arena of expression nodes with eagerly
//! computed forward values; [`Tape::backward`] runs one reverse sweep and
//! returns the partial derivatives of a chosen output with respect to every
//! parameter leaf. The op set is exactly what the loss terms need; softmin,
//! softmax, and cosine similarity are built as composites with max-shift
//! stabilization (shift constants carry no gradient, which leaves both the
//! value and the derivative exact).
//!
//! Subgradient conventions: `max0` has derivative 0 at the kink; `min_pair`
//! routes the gradient to its first operand on ties.

use thiserror::Error;

pub use crate::model::sigmoid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TapeError {
    #[error("log of non-positive value {0}")]
    LogDomain(f64),
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(u32);

#[derive(Debug, Clone, Copy)]
enum Op {
    Const,
    Param(u32),
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Neg(u32),
    Exp(u32),
    Ln(u32),
    Sqrt(u32),
    Square(u32),
    Sigmoid(u32),
    Max0(u32),
    MinPair(u32, u32),
    /// Operands stored as `args[start..start+len]`.
    Sum {
        start: u32,
        len: u32,
    },
}

#[derive(Debug, Clone, Copy)]
struct Node {
    value: f64,
    op: Op,
}

/// Partial derivatives indexed by parameter slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    partials: Vec<f64>,
}

impl Gradient {
    pub fn get(&self, slot: usize) -> f64 {
        self.partials[slot]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.partials
    }

    pub fn len(&self) -> usize {
        self.partials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partials.is_empty()
    }
}

/// Append-only scalar expression tape; operands always precede consumers.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    args: Vec<u32>,
    n_params: usize,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn value(&self, x: VarId) -> f64 {
        self.nodes[x.0 as usize].value
    }

    fn push(&mut self, value: f64, op: Op) -> VarId {
        let id = VarId(self.nodes.len() as u32);
        self.nodes.push(Node { value, op });
        id
    }

    /// New parameter leaf; slots are assigned in creation order.
    pub fn param(&mut self, value: f64) -> VarId {
        let slot = self.n_params as u32;
        self.n_params += 1;
        self.push(value, Op::Param(slot))
    }

    pub fn constant(&mut self, value: f64) -> VarId {
        self.push(value, Op::Const)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        self.push(self.value(a) + self.value(b), Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> VarId {
        self.push(self.value(a) - self.value(b), Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        self.push(self.value(a) * self.value(b), Op::Mul(a.0, b.0))
    }

    pub fn div(&mut self, a: VarId, b: VarId) -> VarId {
        self.push(self.value(a) / self.value(b), Op::Div(a.0, b.0))
    }

    pub fn neg(&mut self, a: VarId) -> VarId {
        self.push(-self.value(a), Op::Neg(a.0))
    }

    pub fn exp(&mut self, a: VarId) -> VarId {
        self.push(self.value(a).exp(), Op::Exp(a.0))
    }

    /// Natural log; errors on non-positive operands.
    pub fn ln(&mut self, a: VarId) -> Result<VarId, TapeError> {
        let v = self.value(a);
        if v <= 0.0 {
            return Err(TapeError::LogDomain(v));
        }
        Ok(self.push(v.ln(), Op::Ln(a.0)))
    }

    /// Internal log for composites whose operand is positive by construction.
    fn ln_positive(&mut self, a: VarId) -> VarId {
        let v = self.value(a);
        debug_assert!(v > 0.0, "ln_positive got {v}");
        self.push(v.ln(), Op::Ln(a.0))
    }

    pub fn sqrt(&mut self, a: VarId) -> VarId {
        self.push(self.value(a).sqrt(), Op::Sqrt(a.0))
    }

    pub fn square(&mut self, a: VarId) -> VarId {
        let v = self.value(a);
        self.push(v * v, Op::Square(a.0))
    }

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        self.push(sigmoid(self.value(a)), Op::Sigmoid(a.0))
    }

    /// `max(0, x)`; derivative at the kink is 0.
    pub fn max0(&mut self, a: VarId) -> VarId {
        self.push(self.value(a).max(0.0), Op::Max0(a.0))
    }

    /// Pairwise minimum; gradient goes to the first operand on ties.
    pub fn min_pair(&mut self, a: VarId, b: VarId) -> VarId {
        let v = self.value(a).min(self.value(b));
        self.push(v, Op::MinPair(a.0, b.0))
    }

    /// Left-to-right sum; the empty sum is the constant 0.
    pub fn sum(&mut self, xs: &[VarId]) -> VarId {
        if xs.is_empty() {
            return self.constant(0.0);
        }
        let start = self.args.len() as u32;
        let mut total = 0.0;
        for &x in xs {
            self.args.push(x.0);
            total += self.value(x);
        }
        self.push(
            total,
            Op::Sum {
                start,
                len: xs.len() as u32,
            },
        )
    }

    /// `softmin(xs; tau) = -tau * log sum exp(-x_i / tau)`, stabilized by
    /// shifting with the running minimum. A single element returns exactly
    /// itself.
    pub fn softmin(&mut self, xs: &[VarId], tau: f64) -> VarId {
        assert!(!xs.is_empty(), "softmin of empty input");
        assert!(tau > 0.0, "softmin temperature must be positive");
        let m = xs.iter().map(|&x| self.value(x)).fold(f64::INFINITY, f64::min);
        let shift = self.constant(m);
        let inv_tau = self.constant(1.0 / tau);
        let exps: Vec<VarId> = xs
            .iter()
            .map(|&x| {
                let z = self.sub(shift, x);
                let scaled = self.mul(z, inv_tau);
                self.exp(scaled)
            })
            .collect();
        let total = self.sum(&exps);
        let log_total = self.ln_positive(total);
        let tau_node = self.constant(tau);
        let scaled_log = self.mul(tau_node, log_total);
        self.sub(shift, scaled_log)
    }

    /// `softmax_i = exp(-x_i/tau) / sum_j exp(-x_j/tau)`; outputs are
    /// nonnegative and sum to 1.
    pub fn softmax(&mut self, xs: &[VarId], tau: f64) -> Vec<VarId> {
        assert!(!xs.is_empty(), "softmax of empty input");
        assert!(tau > 0.0, "softmax temperature must be positive");
        let m = xs.iter().map(|&x| self.value(x)).fold(f64::INFINITY, f64::min);
        let shift = self.constant(m);
        let inv_tau = self.constant(1.0 / tau);
        let exps: Vec<VarId> = xs
            .iter()
            .map(|&x| {
                let z = self.sub(shift, x);
                let scaled = self.mul(z, inv_tau);
                self.exp(scaled)
            })
            .collect();
        let total = self.sum(&exps);
        exps.into_iter().map(|e| self.div(e, total)).collect()
    }

    /// Cosine similarity of two equal-length vectors. An all-zero vector
    /// yields the constant 0 with zero gradient.
    pub fn cosine_similarity(&mut self, a: &[VarId], b: &[VarId]) -> VarId {
        assert_eq!(a.len(), b.len(), "cosine of mismatched lengths");
        assert!(!a.is_empty(), "cosine of empty vectors");
        let prods: Vec<VarId> = a.iter().zip(b).map(|(&x, &y)| self.mul(x, y)).collect();
        let dot = self.sum(&prods);
        let sq_a: Vec<VarId> = a.iter().map(|&x| self.square(x)).collect();
        let sq_b: Vec<VarId> = b.iter().map(|&y| self.square(y)).collect();
        let norm_a = self.sum(&sq_a);
        let norm_b = self.sum(&sq_b);
        if self.value(norm_a) == 0.0 || self.value(norm_b) == 0.0 {
            return self.constant(0.0);
        }
        let ra = self.sqrt(norm_a);
        let rb = self.sqrt(norm_b);
        let denom = self.mul(ra, rb);
        self.div(dot, denom)
    }

    /// Reverse sweep from `output`; returns the partials for every parameter.
    pub fn backward(&self, output: VarId) -> Gradient {
        let mut adjoint = vec![0.0f64; self.nodes.len()];
        adjoint[output.0 as usize] = 1.0;
        let mut partials = vec![0.0f64; self.n_params];

        for i in (0..self.nodes.len()).rev() {
            let a = adjoint[i];
            if a == 0.0 {
                continue;
            }
            let node = self.nodes[i];
            match node.op {
                Op::Const => {}
                Op::Param(slot) => partials[slot as usize] += a,
                Op::Add(x, y) => {
                    adjoint[x as usize] += a;
                    adjoint[y as usize] += a;
                }
                Op::Sub(x, y) => {
                    adjoint[x as usize] += a;
                    adjoint[y as usize] -= a;
                }
                Op::Mul(x, y) => {
                    adjoint[x as usize] += a * self.nodes[y as usize].value;
                    adjoint[y as usize] += a * self.nodes[x as usize].value;
                }
                Op::Div(x, y) => {
                    let yv = self.nodes[y as usize].value;
                    adjoint[x as usize] += a / yv;
                    adjoint[y as usize] -= a * node.value / yv;
                }
                Op::Neg(x) => adjoint[x as usize] -= a,
                Op::Exp(x) => adjoint[x as usize] += a * node.value,
                Op::Ln(x) => adjoint[x as usize] += a / self.nodes[x as usize].value,
                Op::Sqrt(x) => adjoint[x as usize] += a / (2.0 * node.value),
                Op::Square(x) => adjoint[x as usize] += a * 2.0 * self.nodes[x as usize].value,
                Op::Sigmoid(x) => {
                    let s = node.value;
                    adjoint[x as usize] += a * s * (1.0 - s);
                }
                Op::Max0(x) => {
                    if self.nodes[x as usize].value > 0.0 {
                        adjoint[x as usize] += a;
                    }
                }
                Op::MinPair(x, y) => {
                    if self.nodes[x as usize].value <= self.nodes[y as usize].value {
                        adjoint[x as usize] += a;
                    } else {
                        adjoint[y as usize] += a;
                    }
                }
                Op::Sum { start, len } => {
                    for k in start..start + len {
                        adjoint[self.args[k as usize] as usize] += a;
                    }
                }
            }
        }
        Gradient { partials }
    }
}

/// Central-finite-difference validation of the reverse sweep.
///
/// `build` constructs the expression from parameter handles; the result is
/// the maximum over parameters of `|g_ad - g_fd| / max(1, |g_fd|)`.
pub fn gradient_check<F>(build: F, x: &[f64], h: f64) -> f64
where
    F: Fn(&mut Tape, &[VarId]) -> VarId,
{
    let eval = |xs: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<VarId> = xs.iter().map(|&v| tape.param(v)).collect();
        let out = build(&mut tape, &vars);
        tape.value(out)
    };

    let mut tape = Tape::new();
    let vars: Vec<VarId> = x.iter().map(|&v| tape.param(v)).collect();
    let out = build(&mut tape, &vars);
    let grad = tape.backward(out);

    let mut max_rel = 0.0f64;
    let mut xs = x.to_vec();
    for i in 0..x.len() {
        let orig = xs[i];
        xs[i] = orig + h;
        let up = eval(&xs);
        xs[i] = orig - h;
        let down = eval(&xs);
        xs[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let rel = (grad.get(i) - fd).abs() / fd.abs().max(1.0);
        max_rel = max_rel.max(rel);
    }
    max_rel
}
