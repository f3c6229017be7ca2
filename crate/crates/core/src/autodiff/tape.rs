//! Reverse-mode differentiation over scalars.
//!
//! A [`Tape`] records every operation on tracked [`Var`]s as a node with at
//! most two parents and the local partials towards them. Constants carry no
//! node, so arithmetic on untracked values costs nothing on the tape.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Scalar;

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    a: u32,
    da: f64,
    b: u32,
    db: f64,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
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

    /// Drops all nodes but keeps the allocation. Needs `&mut` so no `Var`
    /// can outlive its node.
    pub fn reset(&mut self) {
        self.nodes.get_mut().clear();
    }

    /// A new independent input.
    pub fn leaf(&self, value: f64) -> Var<'_> {
        let index = self.push(Node { a: NONE, da: 0.0, b: NONE, db: 0.0 });
        Var { value, node: Some((self, index)) }
    }

    fn push(&self, node: Node) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len() as u32;
        assert!(index != NONE, "tape overflow");
        nodes.push(node);
        index
    }

    /// Adjoints of every node for the output `y` (seeded with 1).
    pub fn gradient(&self, y: Var<'_>) -> Gradients {
        self.backward(&[(y, 1.0)])
    }

    /// Reverse sweep starting from several outputs with given adjoint seeds.
    pub fn backward(&self, seeds: &[(Var<'_>, f64)]) -> Gradients {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; nodes.len()];
        for (v, s) in seeds {
            if let Some((tape, i)) = v.node {
                debug_assert!(std::ptr::eq(tape, self), "seed from a different tape");
                adj[i as usize] += s;
            }
        }
        for i in (0..nodes.len()).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            let n = nodes[i];
            if n.a != NONE {
                adj[n.a as usize] += g * n.da;
            }
            if n.b != NONE {
                adj[n.b as usize] += g * n.db;
            }
        }
        Gradients(adj)
    }
}

pub struct Gradients(Vec<f64>);

impl Gradients {
    /// Adjoint of `v`; zero for constants.
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        v.node.map_or(0.0, |(_, i)| self.0[i as usize])
    }
}

/// A scalar that may be tracked on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    value: f64,
    node: Option<(&'t Tape, u32)>,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node {
            Some((_, i)) => write!(f, "Var({} @{i})", self.value),
            None => write!(f, "Var({})", self.value),
        }
    }
}

impl<'t> Var<'t> {
    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    fn unary(self, value: f64, d: f64) -> Self {
        match self.node {
            None => Var { value, node: None },
            Some((tape, i)) => {
                let index = tape.push(Node { a: i, da: d, b: NONE, db: 0.0 });
                Var { value, node: Some((tape, index)) }
            }
        }
    }

    fn binary(self, other: Self, value: f64, da: f64, db: f64) -> Self {
        match (self.node, other.node) {
            (None, None) => Var { value, node: None },
            (Some(_), None) => self.unary(value, da),
            (None, Some(_)) => other.unary(value, db),
            (Some((tape, i)), Some((other_tape, j))) => {
                debug_assert!(std::ptr::eq(tape, other_tape), "mixing tapes");
                let index = tape.push(Node { a: i, da, b: j, db });
                Var { value, node: Some((tape, index)) }
            }
        }
    }
}

impl Add for Var<'_> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.value + rhs.value, 1.0, 1.0)
    }
}

impl Sub for Var<'_> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.value - rhs.value, 1.0, -1.0)
    }
}

impl Mul for Var<'_> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.value * rhs.value, rhs.value, self.value)
    }
}

impl Div for Var<'_> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let q = self.value / rhs.value;
        self.binary(rhs, q, 1.0 / rhs.value, -q / rhs.value)
    }
}

impl Neg for Var<'_> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.value, -1.0)
    }
}

impl Scalar for Var<'_> {
    fn constant(v: f64) -> Self {
        Var { value: v, node: None }
    }

    fn value(self) -> f64 {
        self.value
    }

    fn exp(self) -> Self {
        let e = self.value.exp();
        self.unary(e, e)
    }

    fn ln(self) -> Self {
        self.unary(self.value.ln(), 1.0 / self.value)
    }

    fn sqrt(self) -> Self {
        let r = self.value.sqrt();
        self.unary(r, 0.5 / r)
    }

    fn abs(self) -> Self {
        let d = if self.value < 0.0 { -1.0 } else { 1.0 };
        self.unary(self.value.abs(), d)
    }

    fn sigmoid(self) -> Self {
        let s = Scalar::sigmoid(self.value);
        self.unary(s, s * (1.0 - s))
    }

    fn softplus(self) -> Self {
        self.unary(Scalar::softplus(self.value), Scalar::sigmoid(self.value))
    }

    fn tanh(self) -> Self {
        let t = self.value.tanh();
        self.unary(t, 1.0 - t * t)
    }

    fn relu(self) -> Self {
        if self.value > 0.0 {
            self.unary(self.value, 1.0)
        } else {
            self.unary(0.0, 0.0)
        }
    }

    fn powi(self, n: i32) -> Self {
        let d = if n == 0 { 0.0 } else { n as f64 * self.value.powi(n - 1) };
        self.unary(self.value.powi(n), d)
    }

    fn custom(self, value: f64, derivative: f64) -> Self {
        self.unary(value, derivative)
    }

    fn custom2(self, other: Self, value: f64, da: f64, db: f64) -> Self {
        self.binary(other, value, da, db)
    }

    fn straight_through(hard: f64, soft: Self) -> Self {
        soft.unary(hard, 1.0)
    }
}
