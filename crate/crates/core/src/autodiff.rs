//! Scalar reverse-mode automatic differentiation.
//!
//! Numerical code in this crate is written once, generically over [`Scalar`],
//! and instantiated either with plain `f64` (evaluation) or with [`Var`]
//! (recording onto a [`Tape`] for gradients). A `Var` that was never attached to
//! a tape is a constant: operations between constants are evaluated eagerly and
//! never touch the tape, so frozen inputs cost nothing at backward time.

use std::cell::RefCell;
use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic needed by the differentiable pipeline.
pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn constant(value: f64) -> Self;
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;

    fn square(self) -> Self {
        self * self
    }

    /// `c - self`
    fn rsub(self, c: f64) -> Self {
        -self + c
    }

    /// `c / self`
    fn recip_scaled(self, c: f64) -> Self {
        Self::constant(c) / self
    }
}

impl Scalar for f64 {
    fn constant(value: f64) -> Self {
        value
    }
    fn value(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
}

const NO_PARENT: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
}

/// Wengert list of recorded operations.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(n)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every recorded node, keeping the allocation.
    pub fn clear(&mut self) {
        self.nodes.get_mut().clear();
    }

    /// Registers an independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let index = self.push(Node {
            parents: [NO_PARENT; 2],
            partials: [0.0; 2],
        });
        Var {
            tape: Some(self),
            index,
            value,
        }
    }

    fn push(&self, node: Node) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        assert!(index < NO_PARENT as usize, "tape overflow");
        nodes.push(node);
        index as u32
    }

    /// Adjoints of every recorded node with respect to `output`.
    pub fn gradient(&self, output: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        let mut adjoints = vec![0.0; nodes.len()];
        if output.tape.is_none() {
            return Gradients { adjoints };
        }
        adjoints[output.index as usize] = 1.0;
        for i in (0..=output.index as usize).rev() {
            let adj = adjoints[i];
            if adj == 0.0 {
                continue;
            }
            let node = nodes[i];
            for k in 0..2 {
                let p = node.parents[k];
                if p != NO_PARENT {
                    adjoints[p as usize] += adj * node.partials[k];
                }
            }
        }
        Gradients { adjoints }
    }
}

pub struct Gradients {
    adjoints: Vec<f64>,
}

impl Gradients {
    /// Derivative with respect to `v`; zero for constants.
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        match v.tape {
            Some(_) => self.adjoints[v.index as usize],
            None => 0.0,
        }
    }
}

/// A scalar that may be recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    index: u32,
    value: f64,
}

impl Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.tape {
            Some(_) => write!(f, "Var(#{} = {})", self.index, self.value),
            None => write!(f, "Const({})", self.value),
        }
    }
}

impl<'t> Var<'t> {
    pub fn is_constant(&self) -> bool {
        self.tape.is_none()
    }

    fn unary(self, value: f64, partial: f64) -> Self {
        match self.tape {
            None => Var::constant(value),
            Some(tape) => Var {
                tape: Some(tape),
                index: tape.push(Node {
                    parents: [self.index, NO_PARENT],
                    partials: [partial, 0.0],
                }),
                value,
            },
        }
    }

    fn binary(self, other: Self, value: f64, da: f64, db: f64) -> Self {
        match (self.tape, other.tape) {
            (None, None) => Var::constant(value),
            (Some(_), None) => self.unary(value, da),
            (None, Some(_)) => other.unary(value, db),
            (Some(tape), Some(_)) => Var {
                tape: Some(tape),
                index: tape.push(Node {
                    parents: [self.index, other.index],
                    partials: [da, db],
                }),
                value,
            },
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

impl Add<f64> for Var<'_> {
    type Output = Self;
    fn add(self, rhs: f64) -> Self {
        self.unary(self.value + rhs, 1.0)
    }
}

impl Sub<f64> for Var<'_> {
    type Output = Self;
    fn sub(self, rhs: f64) -> Self {
        self.unary(self.value - rhs, 1.0)
    }
}

impl Mul<f64> for Var<'_> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.unary(self.value * rhs, rhs)
    }
}

impl Div<f64> for Var<'_> {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        self.unary(self.value / rhs, 1.0 / rhs)
    }
}

impl Scalar for Var<'_> {
    fn constant(value: f64) -> Self {
        Var {
            tape: None,
            index: NO_PARENT,
            value,
        }
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

    fn abs(self) -> Self {
        let s = if self.value > 0.0 {
            1.0
        } else if self.value < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.unary(self.value.abs(), s)
    }

    fn sqrt(self) -> Self {
        let r = self.value.sqrt();
        self.unary(r, 0.5 / r)
    }

    fn sin(self) -> Self {
        self.unary(self.value.sin(), self.value.cos())
    }

    fn cos(self) -> Self {
        self.unary(self.value.cos(), -self.value.sin())
    }

    fn square(self) -> Self {
        self.unary(self.value * self.value, 2.0 * self.value)
    }

    fn rsub(self, c: f64) -> Self {
        self.unary(c - self.value, -1.0)
    }

    fn recip_scaled(self, c: f64) -> Self {
        let q = c / self.value;
        self.unary(q, -q / self.value)
    }
}

/// Sum in a fixed pairwise order, independent of how the caller was scheduled.
pub fn pairwise_sum<T: Scalar>(xs: &[T]) -> T {
    const BLOCK: usize = 8;
    match xs.len() {
        0 => T::constant(0.0),
        n if n <= BLOCK => {
            let mut acc = xs[0];
            for &x in &xs[1..] {
                acc = acc + x;
            }
            acc
        }
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}
