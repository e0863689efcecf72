//! Closed-form expression trees over chart coordinates.
//!
//! Metric components, transition maps and analytic test fields are stored as
//! [`Expr`] trees. Trees support exact symbolic differentiation, plain `f64`
//! evaluation and evaluation in truncated Taylor arithmetic ([`Jet`]), which
//! is how higher covariant derivatives of curvature are obtained without
//! finite differences.
//!
//! Constructors fold constants and drop neutral elements so that repeated
//! differentiation does not blow up on the simple metrics used here.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use crate::jet::Jet;

#[derive(Debug)]
enum Node {
    Const(f64),
    Var(usize),
    Add(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Neg(Expr),
    Powi(Expr, i32),
    Sqrt(Expr),
    Sin(Expr),
    Cos(Expr),
    Exp(Expr),
}

/// Shared, immutable expression tree.
#[derive(Clone, Debug)]
pub struct Expr(Arc<Node>);

impl Expr {
    fn wrap(node: Node) -> Self {
        Expr(Arc::new(node))
    }

    pub fn constant(value: f64) -> Self {
        Self::wrap(Node::Const(value))
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn one() -> Self {
        Self::constant(1.0)
    }

    /// Coordinate function `x_index`.
    pub fn var(index: usize) -> Self {
        Self::wrap(Node::Var(index))
    }

    pub fn as_const(&self) -> Option<f64> {
        match *self.0 {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    fn is_one(&self) -> bool {
        self.as_const() == Some(1.0)
    }

    pub fn powi(&self, exponent: i32) -> Self {
        match (exponent, &*self.0) {
            (0, _) => Self::one(),
            (1, _) => self.clone(),
            (_, Node::Const(c)) => Self::constant(c.powi(exponent)),
            (_, Node::Powi(base, inner)) => base.powi(inner * exponent),
            _ => Self::wrap(Node::Powi(self.clone(), exponent)),
        }
    }

    pub fn sqrt(&self) -> Self {
        match *self.0 {
            Node::Const(c) => Self::constant(c.sqrt()),
            _ => Self::wrap(Node::Sqrt(self.clone())),
        }
    }

    pub fn sin(&self) -> Self {
        match *self.0 {
            Node::Const(c) => Self::constant(c.sin()),
            _ => Self::wrap(Node::Sin(self.clone())),
        }
    }

    pub fn cos(&self) -> Self {
        match *self.0 {
            Node::Const(c) => Self::constant(c.cos()),
            _ => Self::wrap(Node::Cos(self.clone())),
        }
    }

    pub fn exp(&self) -> Self {
        match *self.0 {
            Node::Const(c) => Self::constant(c.exp()),
            _ => Self::wrap(Node::Exp(self.clone())),
        }
    }

    /// Exact partial derivative with respect to coordinate `var`.
    pub fn diff(&self, var: usize) -> Self {
        match &*self.0 {
            Node::Const(_) => Self::zero(),
            Node::Var(i) => {
                if *i == var {
                    Self::one()
                } else {
                    Self::zero()
                }
            }
            Node::Add(a, b) => a.diff(var) + b.diff(var),
            Node::Mul(a, b) => &a.diff(var) * b + a * &b.diff(var),
            Node::Div(a, b) => {
                (&a.diff(var) * b - a * &b.diff(var)) / b.powi(2)
            }
            Node::Neg(a) => -a.diff(var),
            Node::Powi(a, k) => {
                Self::constant(f64::from(*k)) * a.powi(k - 1) * a.diff(var)
            }
            Node::Sqrt(a) => a.diff(var) / (Self::constant(2.0) * self.clone()),
            Node::Sin(a) => a.cos() * a.diff(var),
            Node::Cos(a) => -(a.sin() * a.diff(var)),
            Node::Exp(a) => self.clone() * a.diff(var),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match &*self.0 {
            Node::Const(c) => *c,
            Node::Var(i) => x[*i],
            Node::Add(a, b) => a.eval(x) + b.eval(x),
            Node::Mul(a, b) => a.eval(x) * b.eval(x),
            Node::Div(a, b) => a.eval(x) / b.eval(x),
            Node::Neg(a) => -a.eval(x),
            Node::Powi(a, k) => a.eval(x).powi(*k),
            Node::Sqrt(a) => a.eval(x).sqrt(),
            Node::Sin(a) => a.eval(x).sin(),
            Node::Cos(a) => a.eval(x).cos(),
            Node::Exp(a) => a.eval(x).exp(),
        }
    }

    /// Evaluates the tree in Taylor arithmetic; `vars[i]` is the jet of `x_i`.
    pub fn eval_jet(&self, vars: &[Jet]) -> Jet {
        let template = &vars[0];
        match &*self.0 {
            Node::Const(c) => template.constant_like(*c),
            Node::Var(i) => vars[*i].clone(),
            Node::Add(a, b) => &a.eval_jet(vars) + &b.eval_jet(vars),
            Node::Mul(a, b) => &a.eval_jet(vars) * &b.eval_jet(vars),
            Node::Div(a, b) => &a.eval_jet(vars) / &b.eval_jet(vars),
            Node::Neg(a) => -&a.eval_jet(vars),
            Node::Powi(a, k) => a.eval_jet(vars).powf(f64::from(*k)),
            Node::Sqrt(a) => a.eval_jet(vars).powf(0.5),
            Node::Sin(a) => a.eval_jet(vars).sin(),
            Node::Cos(a) => a.eval_jet(vars).cos(),
            Node::Exp(a) => a.eval_jet(vars).exp(),
        }
    }

    /// Number of nodes in the tree, shared subtrees counted repeatedly.
    pub fn size(&self) -> usize {
        match &*self.0 {
            Node::Const(_) | Node::Var(_) => 1,
            Node::Add(a, b) | Node::Mul(a, b) | Node::Div(a, b) => 1 + a.size() + b.size(),
            Node::Neg(a) | Node::Powi(a, _) | Node::Sqrt(a) | Node::Sin(a) | Node::Cos(a) | Node::Exp(a) => {
                1 + a.size()
            }
        }
    }
}

fn add(a: &Expr, b: &Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::constant(x + y),
        (Some(x), _) if x == 0.0 => b.clone(),
        (_, Some(y)) if y == 0.0 => a.clone(),
        _ => Expr::wrap(Node::Add(a.clone(), b.clone())),
    }
}

fn mul(a: &Expr, b: &Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::constant(x * y),
        (Some(x), _) | (_, Some(x)) if x == 0.0 => Expr::zero(),
        _ if a.is_one() => b.clone(),
        _ if b.is_one() => a.clone(),
        (Some(x), _) if x == -1.0 => -b.clone(),
        (_, Some(y)) if y == -1.0 => -a.clone(),
        _ => Expr::wrap(Node::Mul(a.clone(), b.clone())),
    }
}

fn div(a: &Expr, b: &Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::constant(x / y),
        (Some(x), _) if x == 0.0 => Expr::zero(),
        _ if b.is_one() => a.clone(),
        _ => Expr::wrap(Node::Div(a.clone(), b.clone())),
    }
}

fn neg(a: &Expr) -> Expr {
    match &*a.0 {
        Node::Const(c) => Expr::constant(-c),
        Node::Neg(inner) => inner.clone(),
        _ => Expr::wrap(Node::Neg(a.clone())),
    }
}

macro_rules! binary_ops {
    ($trait:ident, $method:ident, $func:expr) => {
        impl $trait<Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                $func(&self, &rhs)
            }
        }
        impl $trait<&Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                $func(&self, rhs)
            }
        }
        impl $trait<Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                $func(self, &rhs)
            }
        }
        impl $trait<&Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                $func(self, rhs)
            }
        }
        impl $trait<f64> for Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                $func(&self, &Expr::constant(rhs))
            }
        }
        impl $trait<Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                $func(&Expr::constant(self), &rhs)
            }
        }
        impl $trait<&Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                $func(&Expr::constant(self), rhs)
            }
        }
        impl $trait<f64> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                $func(self, &Expr::constant(rhs))
            }
        }
    };
}

binary_ops!(Add, add, add);
binary_ops!(Mul, mul, mul);
binary_ops!(Div, div, div);
binary_ops!(Sub, sub, |a: &Expr, b: &Expr| add(a, &neg(b)));

/// Flattened program evaluating a batch of expressions at once. Subtrees that
/// are shared or structurally equal are evaluated once per call.
#[derive(Clone, Debug)]
pub struct Tape {
    ops: Vec<Op>,
    outputs: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Op {
    Const(u64),
    Var(usize),
    Add(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Powi(usize, i32),
    Sqrt(usize),
    Sin(usize),
    Cos(usize),
    Exp(usize),
}

struct TapeBuilder {
    ops: Vec<Op>,
    by_op: HashMap<Op, usize>,
    by_node: HashMap<*const Node, usize>,
}

impl TapeBuilder {
    fn push(&mut self, op: Op) -> usize {
        if let Some(&slot) = self.by_op.get(&op) {
            return slot;
        }
        self.ops.push(op);
        self.by_op.insert(op, self.ops.len() - 1);
        self.ops.len() - 1
    }

    fn visit(&mut self, e: &Expr) -> usize {
        let key = Arc::as_ptr(&e.0);
        if let Some(&slot) = self.by_node.get(&key) {
            return slot;
        }
        let op = match &*e.0 {
            Node::Const(c) => Op::Const(c.to_bits()),
            Node::Var(i) => Op::Var(*i),
            Node::Add(a, b) => Op::Add(self.visit(a), self.visit(b)),
            Node::Mul(a, b) => Op::Mul(self.visit(a), self.visit(b)),
            Node::Div(a, b) => Op::Div(self.visit(a), self.visit(b)),
            Node::Neg(a) => Op::Neg(self.visit(a)),
            Node::Powi(a, k) => Op::Powi(self.visit(a), *k),
            Node::Sqrt(a) => Op::Sqrt(self.visit(a)),
            Node::Sin(a) => Op::Sin(self.visit(a)),
            Node::Cos(a) => Op::Cos(self.visit(a)),
            Node::Exp(a) => Op::Exp(self.visit(a)),
        };
        let slot = self.push(op);
        self.by_node.insert(key, slot);
        slot
    }
}

impl Tape {
    pub fn compile(exprs: &[Expr]) -> Self {
        let mut b = TapeBuilder { ops: Vec::new(), by_op: HashMap::new(), by_node: HashMap::new() };
        let outputs = exprs.iter().map(|e| b.visit(e)).collect();
        Self { ops: b.ops, outputs }
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.outputs.len());
        self.eval_into(x, &mut out);
        out
    }

    /// Evaluates into `out`, replacing its contents.
    pub fn eval_into(&self, x: &[f64], out: &mut Vec<f64>) {
        thread_local! {
            static SLOTS: std::cell::RefCell<Vec<f64>> = const { std::cell::RefCell::new(Vec::new()) };
        }
        SLOTS.with(|slots| match slots.try_borrow_mut() {
            Ok(mut v) => self.eval_with(x, &mut v, out),
            Err(_) => self.eval_with(x, &mut Vec::new(), out),
        })
    }

    fn eval_with(&self, x: &[f64], v: &mut Vec<f64>, out: &mut Vec<f64>) {
        v.clear();
        v.reserve(self.ops.len());
        for op in &self.ops {
            let r = match *op {
                Op::Const(bits) => f64::from_bits(bits),
                Op::Var(i) => x[i],
                Op::Add(a, b) => v[a] + v[b],
                Op::Mul(a, b) => v[a] * v[b],
                Op::Div(a, b) => v[a] / v[b],
                Op::Neg(a) => -v[a],
                Op::Powi(a, k) => f64::powi(v[a], k),
                Op::Sqrt(a) => f64::sqrt(v[a]),
                Op::Sin(a) => f64::sin(v[a]),
                Op::Cos(a) => f64::cos(v[a]),
                Op::Exp(a) => f64::exp(v[a]),
            };
            v.push(r);
        }
        out.clear();
        out.extend(self.outputs.iter().map(|&k| v[k]));
    }
}

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        neg(&self)
    }
}

impl Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        neg(self)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &*self.0 {
            Node::Const(c) => write!(f, "{c}"),
            Node::Var(i) => write!(f, "x{i}"),
            Node::Add(a, b) => write!(f, "({a} + {b})"),
            Node::Mul(a, b) => write!(f, "{a}*{b}"),
            Node::Div(a, b) => write!(f, "({a})/({b})"),
            Node::Neg(a) => write!(f, "-({a})"),
            Node::Powi(a, k) => write!(f, "({a})^{k}"),
            Node::Sqrt(a) => write!(f, "sqrt({a})"),
            Node::Sin(a) => write!(f, "sin({a})"),
            Node::Cos(a) => write!(f, "cos({a})"),
            Node::Exp(a) => write!(f, "exp({a})"),
        }
    }
}

/// Symbolic inverse of a small square matrix by cofactor expansion.
pub fn inverse(m: &[Vec<Expr>]) -> Vec<Vec<Expr>> {
    let n = m.len();
    let det = determinant(m);
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    // adj(m)_ij = cofactor_ji
                    let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                    sign * determinant(&minor(m, j, i)) / &det
                })
                .collect()
        })
        .collect()
}

pub fn determinant(m: &[Vec<Expr>]) -> Expr {
    match m.len() {
        0 => Expr::one(),
        1 => m[0][0].clone(),
        2 => &m[0][0] * &m[1][1] - &m[0][1] * &m[1][0],
        n => (0..n).fold(Expr::zero(), |acc, j| {
            let term = &m[0][j] * determinant(&minor(m, 0, j));
            if j % 2 == 0 {
                acc + term
            } else {
                acc - term
            }
        }),
    }
}

fn minor(m: &[Vec<Expr>], row: usize, col: usize) -> Vec<Vec<Expr>> {
    m.iter()
        .enumerate()
        .filter(|(i, _)| *i != row)
        .map(|(_, r)| {
            r.iter()
                .enumerate()
                .filter(|(j, _)| *j != col)
                .map(|(_, e)| e.clone())
                .collect()
        })
        .collect()
}
