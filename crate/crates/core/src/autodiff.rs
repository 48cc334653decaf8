//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every elementary operation performed on [`Var`]s as a
//! node holding its operands and local partial derivatives. A reverse sweep
//! over the tape then accumulates adjoints, giving a vector-Jacobian product
//! for roughly the cost of one evaluation.
//!
//! The tape is generic over the scalar type its values and partials are
//! stored in. Instantiating it with `Var<'o, f64>` from an outer tape makes
//! the inner reverse sweep itself a recorded computation, which is how
//! [`vjp_grad`] obtains exact Hessians of `γᵀf(x)` (reverse over reverse).
//!
//! Constants never reach the tape: operations with a constant operand fold
//! trivial cases (`x·0`, `x·1`, `x+0`) and otherwise store the constant
//! alongside the node so that [`Recording::replay`] can re-evaluate it.

use std::cell::RefCell;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::scalar::{sin_cos_f64, Scalar};

const NONE: u32 = u32::MAX;

#[derive(Debug, Error, PartialEq)]
pub enum AdError {
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite output at index {0}")]
    NonFinite(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Input,
    Add,
    Sub,
    Mul,
    Div,
    /// `x + c`
    AddC,
    /// `x - c`
    SubC,
    /// `c - x`
    CSub,
    /// `x · c`
    MulC,
    /// `x / c`
    DivC,
    /// `c / x`
    CDiv,
    Neg,
    Sin,
    Cos,
    Sqrt,
}

impl Op {
    fn is_binary(self) -> bool {
        matches!(self, Op::Add | Op::Sub | Op::Mul | Op::Div)
    }
}

/// One recorded operation. For ops with a constant operand the constant is
/// kept in `partials[1]`.
#[derive(Clone, Copy, Debug)]
pub struct Node<T> {
    pub op: Op,
    pub args: [u32; 2],
    pub partials: [T; 2],
}

pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self::with_capacity(0)
    }

    pub fn with_capacity(cap: usize) -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(cap)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers an independent variable.
    pub fn input(&self, value: T) -> Var<'_, T> {
        let index = self.push(Op::Input, [NONE, NONE], [T::zero(), T::zero()]);
        Var {
            tape: Some(self),
            index,
            value,
        }
    }

    fn push(&self, op: Op, args: [u32; 2], partials: [T; 2]) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let i = nodes.len();
        assert!(i < NONE as usize, "tape overflow");
        nodes.push(Node { op, args, partials });
        i as u32
    }

    /// Reverse sweep. `seeds` are initial adjoints of (node, value) pairs;
    /// the returned vector holds the adjoint of every node.
    pub fn adjoints(&self, seeds: impl IntoIterator<Item = (u32, T)>) -> Vec<T> {
        let nodes = self.nodes.borrow();
        let mut adj = vec![T::zero(); nodes.len()];
        for (i, s) in seeds {
            adj[i as usize] += s;
        }
        reverse_sweep(&nodes, &mut adj);
        adj
    }

    pub fn into_nodes(self) -> Vec<Node<T>> {
        self.nodes.into_inner()
    }
}

fn reverse_sweep<T: Scalar>(nodes: &[Node<T>], adj: &mut [T]) {
    for i in (0..nodes.len()).rev() {
        let a = adj[i];
        if a.is_zero_constant() {
            continue;
        }
        let node = &nodes[i];
        if node.args[0] != NONE {
            let p = node.args[0] as usize;
            adj[p] += node.partials[0] * a;
        }
        if node.op.is_binary() {
            let p = node.args[1] as usize;
            adj[p] += node.partials[1] * a;
        }
    }
}

/// A scalar tracked on a tape, or a constant when `tape` is `None`.
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    tape: Option<&'t Tape<T>>,
    index: u32,
    value: T,
}

impl<T: std::fmt::Debug> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.tape {
            Some(_) => write!(f, "Var#{}({:?})", self.index, self.value),
            None => write!(f, "Const({:?})", self.value),
        }
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn constant(value: T) -> Self {
        Self {
            tape: None,
            index: NONE,
            value,
        }
    }

    /// The underlying (possibly itself taped) value.
    pub fn inner(&self) -> T {
        self.value
    }

    /// Tape index, `None` for constants.
    pub fn index(&self) -> Option<u32> {
        self.tape.map(|_| self.index)
    }

    fn unary(self, op: Op, value: T, partial: T) -> Self {
        let tape = self.tape.expect("unary on constant");
        let index = tape.push(op, [self.index, NONE], [partial, T::zero()]);
        Self {
            tape: Some(tape),
            index,
            value,
        }
    }

    fn with_const(self, op: Op, value: T, partial: T, c: T) -> Self {
        let tape = self.tape.expect("with_const on constant");
        let index = tape.push(op, [self.index, NONE], [partial, c]);
        Self {
            tape: Some(tape),
            index,
            value,
        }
    }

    fn binary(self, rhs: Self, op: Op, value: T, pa: T, pb: T) -> Self {
        let tape = self.tape.expect("binary on constant");
        debug_assert!(std::ptr::eq(tape, rhs.tape.unwrap()), "mixed tapes");
        let index = tape.push(op, [self.index, rhs.index], [pa, pb]);
        Self {
            tape: Some(tape),
            index,
            value,
        }
    }

    fn is_const_eq(&self, v: f64) -> bool {
        self.tape.is_none() && self.value.constant_value() == Some(v)
    }
}

impl<'t, T: Scalar> Add for Var<'t, T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        match (self.tape, rhs.tape) {
            (None, None) => Self::constant(self.value + rhs.value),
            (Some(_), None) => {
                if rhs.value.is_zero_constant() {
                    self
                } else {
                    self.with_const(Op::AddC, self.value + rhs.value, T::one(), rhs.value)
                }
            }
            (None, Some(_)) => rhs + self,
            (Some(_), Some(_)) => {
                self.binary(rhs, Op::Add, self.value + rhs.value, T::one(), T::one())
            }
        }
    }
}

impl<'t, T: Scalar> Sub for Var<'t, T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        match (self.tape, rhs.tape) {
            (None, None) => Self::constant(self.value - rhs.value),
            (Some(_), None) => {
                if rhs.value.is_zero_constant() {
                    self
                } else {
                    self.with_const(Op::SubC, self.value - rhs.value, T::one(), rhs.value)
                }
            }
            (None, Some(_)) => {
                if self.value.is_zero_constant() {
                    -rhs
                } else {
                    rhs.with_const(Op::CSub, self.value - rhs.value, -T::one(), self.value)
                }
            }
            (Some(_), Some(_)) => {
                self.binary(rhs, Op::Sub, self.value - rhs.value, T::one(), -T::one())
            }
        }
    }
}

impl<'t, T: Scalar> Mul for Var<'t, T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        match (self.tape, rhs.tape) {
            (None, None) => Self::constant(self.value * rhs.value),
            (Some(_), None) => {
                if rhs.value.is_zero_constant() {
                    Self::constant(T::zero())
                } else if rhs.is_const_eq(1.0) {
                    self
                } else {
                    self.with_const(Op::MulC, self.value * rhs.value, rhs.value, rhs.value)
                }
            }
            (None, Some(_)) => rhs * self,
            (Some(_), Some(_)) => {
                self.binary(rhs, Op::Mul, self.value * rhs.value, rhs.value, self.value)
            }
        }
    }
}

impl<'t, T: Scalar> Div for Var<'t, T> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        match (self.tape, rhs.tape) {
            (None, None) => Self::constant(self.value / rhs.value),
            (Some(_), None) => {
                if rhs.is_const_eq(1.0) {
                    self
                } else {
                    let inv = T::one() / rhs.value;
                    self.with_const(Op::DivC, self.value / rhs.value, inv, rhs.value)
                }
            }
            (None, Some(_)) => {
                if self.value.is_zero_constant() {
                    Self::constant(T::zero())
                } else {
                    let q = self.value / rhs.value;
                    rhs.with_const(Op::CDiv, q, -q / rhs.value, self.value)
                }
            }
            (Some(_), Some(_)) => {
                let q = self.value / rhs.value;
                let inv = T::one() / rhs.value;
                self.binary(rhs, Op::Div, q, inv, -q * inv)
            }
        }
    }
}

impl<'t, T: Scalar> Neg for Var<'t, T> {
    type Output = Self;
    fn neg(self) -> Self {
        match self.tape {
            None => Self::constant(-self.value),
            Some(_) => self.unary(Op::Neg, -self.value, -T::one()),
        }
    }
}

impl<'t, T: Scalar> AddAssign for Var<'t, T> {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<'t, T: Scalar> SubAssign for Var<'t, T> {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl<'t, T: Scalar> MulAssign for Var<'t, T> {
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl<'t, T: Scalar> Scalar for Var<'t, T> {
    fn from_f64(v: f64) -> Self {
        Self::constant(T::from_f64(v))
    }

    fn value(&self) -> f64 {
        self.value.value()
    }

    fn sin(self) -> Self {
        match self.tape {
            None => Self::constant(self.value.sin()),
            Some(_) => {
                let (s, c) = self.value.sin_cos();
                self.unary(Op::Sin, s, c)
            }
        }
    }

    fn cos(self) -> Self {
        match self.tape {
            None => Self::constant(self.value.cos()),
            Some(_) => {
                let (s, c) = self.value.sin_cos();
                self.unary(Op::Cos, c, -s)
            }
        }
    }

    fn sqrt(self) -> Self {
        match self.tape {
            None => Self::constant(self.value.sqrt()),
            Some(_) => {
                let r = self.value.sqrt();
                self.unary(Op::Sqrt, r, T::from_f64(0.5) / r)
            }
        }
    }

    fn constant_value(&self) -> Option<f64> {
        match self.tape {
            None => self.value.constant_value(),
            Some(_) => None,
        }
    }

    fn sin_cos(self) -> (Self, Self) {
        (self.sin(), self.cos())
    }
}

/// Output slot of a recording: a tape node or a value that does not depend
/// on the inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Output {
    Node(u32),
    Const(f64),
}

/// A finished first-order tape with its input and output markers.
#[derive(Clone, Debug)]
pub struct Recording {
    nodes: Vec<Node<f64>>,
    inputs: Vec<u32>,
    outputs: Vec<Output>,
    values: Vec<f64>,
}

/// A function `Rⁿ → Rᵐ` written once over [`Scalar`], so it can be evaluated
/// on plain numbers or on (nested) tape variables.
pub trait VectorFn {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn eval<S: Scalar>(&self, x: &[S]) -> Vec<S>;
}

impl<F: VectorFn + ?Sized> VectorFn for &F {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }
    fn eval<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        (**self).eval(x)
    }
}

fn check_dim(expected: usize, got: usize) -> Result<(), AdError> {
    if expected == got {
        Ok(())
    } else {
        Err(AdError::DimensionMismatch { expected, got })
    }
}

impl Recording {
    /// Records `f` at `x`. The closure receives the taped inputs and returns
    /// the outputs; the returned recording replays `f(x)` exactly.
    pub fn record<F>(x: &[f64], f: F) -> Result<Self, AdError>
    where
        F: for<'t> FnOnce(&[Var<'t, f64>]) -> Vec<Var<'t, f64>>,
    {
        let tape = Tape::with_capacity(64 * x.len().max(1));
        let vars: Vec<_> = x.iter().map(|&v| tape.input(v)).collect();
        let inputs = vars.iter().map(|v| v.index).collect();
        let ys = f(&vars);
        let mut outputs = Vec::with_capacity(ys.len());
        let mut values = Vec::with_capacity(ys.len());
        for (i, y) in ys.iter().enumerate() {
            if !y.value.is_finite() {
                return Err(AdError::NonFinite(i));
            }
            values.push(y.value);
            outputs.push(match y.index() {
                Some(ix) => Output::Node(ix),
                None => Output::Const(y.value),
            });
        }
        drop(ys);
        drop(vars);
        Ok(Self {
            nodes: tape.into_nodes(),
            inputs,
            outputs,
            values,
        })
    }

    /// Records a [`VectorFn`] at `x`.
    pub fn of<F: VectorFn>(f: &F, x: &[f64]) -> Result<Self, AdError> {
        check_dim(f.input_dim(), x.len())?;
        Self::record(x, |v| f.eval(v))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.len()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.len()
    }

    /// Output values at the recording point.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nodes(&self) -> &[Node<f64>] {
        &self.nodes
    }

    /// Re-evaluates the recorded operations at new inputs.
    pub fn replay(&self, x: &[f64]) -> Result<Vec<f64>, AdError> {
        let vals = self.forward_values(x)?;
        Ok(self
            .outputs
            .iter()
            .map(|o| match *o {
                Output::Node(i) => vals[i as usize],
                Output::Const(c) => c,
            })
            .collect())
    }

    fn forward_values(&self, x: &[f64]) -> Result<Vec<f64>, AdError> {
        check_dim(self.inputs.len(), x.len())?;
        let mut vals = vec![0.0; self.nodes.len()];
        let mut next_input = 0;
        for (i, node) in self.nodes.iter().enumerate() {
            let a = |k: usize| vals[node.args[k] as usize];
            let c = node.partials[1];
            vals[i] = match node.op {
                Op::Input => {
                    let v = x[next_input];
                    next_input += 1;
                    v
                }
                Op::Add => a(0) + a(1),
                Op::Sub => a(0) - a(1),
                Op::Mul => a(0) * a(1),
                Op::Div => a(0) / a(1),
                Op::AddC => a(0) + c,
                Op::SubC => a(0) - c,
                Op::CSub => c - a(0),
                Op::MulC => a(0) * c,
                Op::DivC => a(0) / c,
                Op::CDiv => c / a(0),
                Op::Neg => -a(0),
                Op::Sin => sin_cos_f64(a(0)).0,
                Op::Cos => sin_cos_f64(a(0)).1,
                Op::Sqrt => a(0).sqrt(),
            };
        }
        Ok(vals)
    }

    /// Same tape structure linearized at new inputs, without re-running the
    /// recorded function. Only valid when `f` has no value-dependent control
    /// flow between the two points.
    pub fn relinearized(&self, x: &[f64]) -> Result<Self, AdError> {
        let vals = self.forward_values(x)?;
        let mut nodes = self.nodes.clone();
        for node in nodes.iter_mut() {
            let a = |k: usize| vals[node.args[k] as usize];
            let c = node.partials[1];
            node.partials = match node.op {
                Op::Input => [0.0, 0.0],
                Op::Add => [1.0, 1.0],
                Op::Sub => [1.0, -1.0],
                Op::Mul => [a(1), a(0)],
                Op::Div => {
                    let inv = 1.0 / a(1);
                    [inv, -(a(0) / a(1)) * inv]
                }
                Op::AddC | Op::SubC => [1.0, c],
                Op::CSub => [-1.0, c],
                Op::MulC => [c, c],
                Op::DivC => [1.0 / c, c],
                Op::CDiv => {
                    let q = c / a(0);
                    [-q / a(0), c]
                }
                Op::Neg => [-1.0, 0.0],
                Op::Sin => [sin_cos_f64(a(0)).1, 0.0],
                Op::Cos => [-sin_cos_f64(a(0)).0, 0.0],
                Op::Sqrt => [0.5 / a(0).sqrt(), 0.0],
            };
        }
        let values = self
            .outputs
            .iter()
            .map(|o| match *o {
                Output::Node(i) => vals[i as usize],
                Output::Const(c) => c,
            })
            .collect();
        Ok(Self {
            nodes,
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
            values,
        })
    }

    /// `γᵀ ∂g/∂x` by one reverse sweep.
    pub fn vjp(&self, gamma: &[f64]) -> Result<Vec<f64>, AdError> {
        let mut adj = Vec::new();
        self.vjp_with(gamma, &mut adj)
    }

    /// As [`Recording::vjp`], reusing `adj` as the adjoint buffer.
    pub fn vjp_with(&self, gamma: &[f64], adj: &mut Vec<f64>) -> Result<Vec<f64>, AdError> {
        check_dim(self.outputs.len(), gamma.len())?;
        adj.clear();
        adj.resize(self.nodes.len(), 0.0);
        for (o, &g) in self.outputs.iter().zip(gamma) {
            if let Output::Node(i) = *o {
                adj[i as usize] += g;
            }
        }
        reverse_sweep(&self.nodes, adj);
        Ok(self.inputs.iter().map(|&i| adj[i as usize]).collect())
    }

    /// Full Jacobian, one reverse sweep per output.
    pub fn jacobian(&self) -> DMatrix<f64> {
        let (m, n) = (self.output_dim(), self.input_dim());
        let mut jac = DMatrix::zeros(m, n);
        let mut adj = Vec::with_capacity(self.nodes.len());
        let mut seed = vec![0.0; m];
        for r in 0..m {
            if matches!(self.outputs[r], Output::Const(_)) {
                continue;
            }
            seed[r] = 1.0;
            let row = self.vjp_with(&seed, &mut adj).expect("dims");
            seed[r] = 0.0;
            for (c, v) in row.into_iter().enumerate() {
                jac[(r, c)] = v;
            }
        }
        jac
    }
}

/// Records `f` at `x`; returns outputs and the tape.
pub fn record<F: VectorFn>(f: &F, x: &[f64]) -> Result<(Vec<f64>, Recording), AdError> {
    let rec = Recording::of(f, x)?;
    Ok((rec.values.clone(), rec))
}

pub fn vjp(tape: &Recording, gamma: &[f64]) -> Result<Vec<f64>, AdError> {
    tape.vjp(gamma)
}

/// `∂f/∂x` at `x` (m×n).
pub fn jacobian<F: VectorFn>(f: &F, x: &[f64]) -> Result<DMatrix<f64>, AdError> {
    Ok(Recording::of(f, x)?.jacobian())
}

/// Hessian of `x ↦ γᵀ f(x)` with `γ` held constant, symmetrized.
pub fn vjp_grad<F: VectorFn>(f: &F, x: &[f64], gamma: &[f64]) -> Result<DMatrix<f64>, AdError> {
    let n = x.len();
    let mut h = vjp_grad_rows(f, x, gamma, 0..n)?;
    symmetrize(&mut h);
    Ok(h)
}

/// Selected rows of the Hessian of `γᵀ f`, as a `rows.len() × n` matrix.
///
/// The inner tape records `f` with values living on an outer tape; its
/// reverse sweep (seeded with constant `γ`) leaves the gradient as outer
/// variables, and one outer sweep per requested row differentiates it again.
pub fn vjp_grad_rows<F: VectorFn>(
    f: &F,
    x: &[f64],
    gamma: &[f64],
    rows: std::ops::Range<usize>,
) -> Result<DMatrix<f64>, AdError> {
    check_dim(f.input_dim(), x.len())?;
    check_dim(f.output_dim(), gamma.len())?;
    let n = x.len();
    let outer: Tape<f64> = Tape::with_capacity(256 * n.max(1));
    let xo: Vec<Var<f64>> = x.iter().map(|&v| outer.input(v)).collect();
    let inner: Tape<Var<f64>> = Tape::with_capacity(64 * n.max(1));
    let xi: Vec<Var<Var<f64>>> = xo.iter().map(|&v| inner.input(v)).collect();
    let ys = f.eval(&xi);
    check_dim(gamma.len(), ys.len())?;
    let seeds: Vec<(u32, Var<f64>)> = ys
        .iter()
        .zip(gamma)
        .filter_map(|(y, &g)| y.index().map(|i| (i, Var::constant(g))))
        .collect();
    drop(ys);
    let adj = inner.adjoints(seeds);
    let grad: Vec<Option<u32>> = xi.iter().map(|v| adj[v.index as usize].index()).collect();
    let cols: Vec<u32> = xo.iter().map(|v| v.index).collect();
    drop(adj);
    drop(xi);
    drop(xo);
    drop(inner);

    let nodes = outer.into_nodes();
    let mut h = DMatrix::zeros(rows.len(), n);
    let mut buf = vec![0.0; nodes.len()];
    for (out_row, r) in rows.enumerate() {
        let Some(seed) = grad[r] else {
            continue;
        };
        buf.iter_mut().for_each(|v| *v = 0.0);
        buf[seed as usize] = 1.0;
        reverse_sweep(&nodes, &mut buf);
        for (c, &xv) in cols.iter().enumerate() {
            h[(out_row, c)] = buf[xv as usize];
        }
    }
    Ok(h)
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Product;
    impl VectorFn for Product {
        fn input_dim(&self) -> usize {
            2
        }
        fn output_dim(&self) -> usize {
            1
        }
        fn eval<S: Scalar>(&self, x: &[S]) -> Vec<S> {
            vec![x[0] * x[1]]
        }
    }

    struct SquareTimes;
    impl VectorFn for SquareTimes {
        fn input_dim(&self) -> usize {
            2
        }
        fn output_dim(&self) -> usize {
            1
        }
        fn eval<S: Scalar>(&self, x: &[S]) -> Vec<S> {
            vec![x[0] * x[0] * x[1]]
        }
    }

    struct Linear(DMatrix<f64>);
    impl VectorFn for Linear {
        fn input_dim(&self) -> usize {
            self.0.ncols()
        }
        fn output_dim(&self) -> usize {
            self.0.nrows()
        }
        fn eval<S: Scalar>(&self, x: &[S]) -> Vec<S> {
            (0..self.0.nrows())
                .map(|r| {
                    let mut acc = S::zero();
                    for (c, &xc) in x.iter().enumerate() {
                        acc += S::from_f64(self.0[(r, c)]) * xc;
                    }
                    acc
                })
                .collect()
        }
    }

    struct Elementary;
    impl VectorFn for Elementary {
        fn input_dim(&self) -> usize {
            3
        }
        fn output_dim(&self) -> usize {
            4
        }
        fn eval<S: Scalar>(&self, x: &[S]) -> Vec<S> {
            let c = S::from_f64(1.5);
            vec![
                (x[0] * x[1]).sin() / (x[2] * x[2] + c).sqrt(),
                c / x[0] - x[1] / c + (c - x[2]).cos(),
                -(x[0] - c) * (x[1] + c) / x[2],
                x[0] * c + c * x[1] - x[2],
            ]
        }
    }

    fn central_jac<F: VectorFn>(f: &F, x: &[f64]) -> DMatrix<f64> {
        let h = 1e-6;
        let mut jac = DMatrix::zeros(f.output_dim(), x.len());
        for j in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            let (fp, fm) = (f.eval(&xp), f.eval(&xm));
            for r in 0..fp.len() {
                jac[(r, j)] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        jac
    }

    #[test]
    fn identity_is_passthrough() {
        let rec = Recording::record(&[1.0, 2.0, 3.0], |x| x.to_vec()).unwrap();
        assert_eq!(rec.len(), 3);
        assert!(rec.nodes().iter().all(|n| n.op == Op::Input));
        assert_eq!(rec.values(), &[1.0, 2.0, 3.0]);
        assert_eq!(rec.jacobian(), DMatrix::identity(3, 3));
    }

    #[test]
    fn product_value_and_gradient() {
        let (y, rec) = record(&Product, &[2.0, 3.0]).unwrap();
        assert_eq!(y, vec![6.0]);
        assert_eq!(rec.vjp(&[1.0]).unwrap(), vec![3.0, 2.0]);
    }

    #[test]
    fn sin_at_zero() {
        let rec = Recording::record(&[0.0], |x| vec![x[0].sin()]).unwrap();
        assert_eq!(rec.vjp(&[1.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn linear_map_gives_transpose() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 0.5, 4.0, 3.0, 0.0]);
        let f = Linear(a.clone());
        let rec = Recording::of(&f, &[0.3, -0.7]).unwrap();
        let g = [1.0, 2.0, -1.0];
        let v = rec.vjp(&g).unwrap();
        let expect = a.transpose() * nalgebra::DVector::from_row_slice(&g);
        assert!((nalgebra::DVector::from_vec(v) - expect).amax() < 1e-15);
        assert_eq!(rec.jacobian(), a);
        let h = vjp_grad(&f, &[0.3, -0.7], &g).unwrap();
        assert_eq!(h, DMatrix::zeros(2, 2));
    }

    #[test]
    fn hessian_of_square_times() {
        let h = vjp_grad(&SquareTimes, &[1.0, 2.0], &[1.0]).unwrap();
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 0.0]));
    }

    #[test]
    fn elementary_ops_match_finite_differences() {
        let x = [0.7, -1.2, 0.4];
        let rec = Recording::of(&Elementary, &x).unwrap();
        let jac = rec.jacobian();
        let fd = central_jac(&Elementary, &x);
        assert!((jac - fd).amax() < 1e-7);
    }

    #[test]
    fn hessian_matches_finite_difference_of_gradient() {
        let x = [0.7, -1.2, 0.4];
        let gamma = [0.3, -1.0, 0.8, 2.0];
        let h = vjp_grad(&Elementary, &x, &gamma).unwrap();
        let step = 1e-6;
        for j in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += step;
            xm[j] -= step;
            let gp = Recording::of(&Elementary, &xp).unwrap().vjp(&gamma).unwrap();
            let gm = Recording::of(&Elementary, &xm).unwrap().vjp(&gamma).unwrap();
            for i in 0..3 {
                let fd = (gp[i] - gm[i]) / (2.0 * step);
                assert!((h[(i, j)] - fd).abs() < 1e-6 * (1.0 + fd.abs()), "{i},{j}");
            }
        }
    }

    #[test]
    fn replay_and_relinearize() {
        let x = [0.7, -1.2, 0.4];
        let rec = Recording::of(&Elementary, &x).unwrap();
        assert_eq!(rec.replay(&x).unwrap(), Elementary.eval(&x));
        let x2 = [0.9, -0.3, 1.1];
        assert_eq!(rec.replay(&x2).unwrap(), Elementary.eval(&x2));
        let moved = rec.relinearized(&x2).unwrap();
        let fresh = Recording::of(&Elementary, &x2).unwrap();
        assert!((moved.jacobian() - fresh.jacobian()).amax() < 1e-15);
    }

    #[test]
    fn constant_outputs_and_folding() {
        let rec = Recording::record(&[2.0], |x| {
            let zero = Var::constant(0.0);
            let one = Var::constant(1.0);
            vec![x[0] * zero, x[0] * one + zero, Var::constant(5.0)]
        })
        .unwrap();
        // only the input node is recorded
        assert_eq!(rec.len(), 1);
        assert_eq!(rec.values(), &[0.0, 2.0, 5.0]);
        assert_eq!(rec.vjp(&[1.0, 1.0, 1.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn dimension_errors() {
        let rec = Recording::of(&Product, &[1.0, 2.0]).unwrap();
        assert_eq!(
            rec.vjp(&[1.0, 2.0]),
            Err(AdError::DimensionMismatch {
                expected: 1,
                got: 2
            })
        );
        assert!(Recording::of(&Product, &[1.0]).is_err());
        assert_eq!(
            Recording::record(&[0.0], |x| vec![Var::constant(1.0) / x[0]]).unwrap_err(),
            AdError::NonFinite(0)
        );
    }
}
