//! Scalar evaluation tape for reverse-mode differentiation.
//!
//! A [`Tape`] is recorded by evaluating a function on [`Var`] inputs. Each node
//! stores its operation code, up to two parent indices and the local partial
//! derivatives with respect to those parents. Nodes are appended in evaluation
//! order, so parents always precede children and a single reverse pass yields
//! the full gradient.
//!
//! The value type `T` is either `f64` (plain gradients) or [`Dual`](super::Dual)
//! (forward-over-reverse: the tangent parts of the adjoints are Hessian-vector
//! products).

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Real;

const NO_PARENT: u32 = u32::MAX;

/// Operation recorded for a tape node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Input,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Ln,
    Sqrt,
    Recip,
    Square,
    AddConst(f64),
    MulConst(f64),
    /// `c - x`
    ConstSub(f64),
    /// `c / x`
    ConstDiv(f64),
    /// `x / c`
    DivConst(f64),
}

#[derive(Debug, Clone, Copy)]
struct Node<T> {
    op: Op,
    parents: [u32; 2],
    partials: [T; 2],
    value: T,
}

/// A tape under recording. Single writer; seal it with [`Tape::seal`].
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    n_inputs: RefCell<usize>,
}

/// Handle to a value on a tape, or a free-standing constant.
#[derive(Debug, Clone, Copy)]
pub struct Var<'t, T> {
    tape: Option<&'t Tape<T>>,
    index: u32,
    value: T,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            n_inputs: RefCell::new(0),
        }
    }

    /// Registers the inputs. Must be called before any other node is recorded.
    pub fn inputs(&self, values: &[T]) -> Vec<Var<'_, T>> {
        let mut nodes = self.nodes.borrow_mut();
        assert!(nodes.is_empty(), "inputs must be registered first");
        *self.n_inputs.borrow_mut() = values.len();
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                nodes.push(Node {
                    op: Op::Input,
                    parents: [NO_PARENT; 2],
                    partials: [T::from_f64(0.0); 2],
                    value: v,
                });
                Var {
                    tape: Some(self),
                    index: i as u32,
                    value: v,
                }
            })
            .collect()
    }

    fn push(&self, op: Op, parents: [u32; 2], partials: [T; 2], value: T) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len() as u32;
        nodes.push(Node {
            op,
            parents,
            partials,
            value,
        });
        Var {
            tape: Some(self),
            index,
            value,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Finishes recording with `output` as the single scalar result.
    ///
    /// A constant output (no dependence on the inputs) is recorded as a
    /// detached node so the gradient comes out as zeros.
    pub fn seal(self, output: Output<T>) -> SealedTape<T> {
        let output_index = match output.index {
            Some(index) => index,
            None => {
                let mut nodes = self.nodes.borrow_mut();
                nodes.push(Node {
                    op: Op::AddConst(output.value.value()),
                    parents: [NO_PARENT; 2],
                    partials: [T::from_f64(0.0); 2],
                    value: output.value,
                });
                (nodes.len() - 1) as u32
            }
        };
        SealedTape {
            nodes: self.nodes.into_inner(),
            n_inputs: self.n_inputs.into_inner(),
            output: output_index,
        }
    }
}

/// Tape-independent handle to the recorded result, see [`Var::output`].
#[derive(Debug, Clone, Copy)]
pub struct Output<T> {
    index: Option<u32>,
    value: T,
}

/// A finished tape. Read-only: gradients and replays use private workspaces,
/// so a sealed tape can be shared across threads.
#[derive(Debug, Clone)]
pub struct SealedTape<T> {
    nodes: Vec<Node<T>>,
    n_inputs: usize,
    output: u32,
}

impl<T: Real> SealedTape<T> {
    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn output_value(&self) -> T {
        self.nodes[self.output as usize].value
    }

    /// Adjoints of the output with respect to every input, in one reverse sweep.
    pub fn gradient(&self) -> Vec<T> {
        let zero = T::from_f64(0.0);
        let mut adjoint = vec![zero; self.output as usize + 1];
        adjoint[self.output as usize] = T::from_f64(1.0);
        for i in (self.n_inputs..=self.output as usize).rev() {
            let a = adjoint[i];
            let node = &self.nodes[i];
            for k in 0..2 {
                let p = node.parents[k];
                if p != NO_PARENT {
                    adjoint[p as usize] = adjoint[p as usize] + node.partials[k] * a;
                }
            }
        }
        adjoint.truncate(self.n_inputs.min(adjoint.len()));
        adjoint.resize(self.n_inputs, zero);
        adjoint
    }

    /// Checks that every node's parents precede it.
    pub fn is_topologically_ordered(&self) -> bool {
        self.nodes.iter().enumerate().all(|(i, n)| {
            n.parents
                .iter()
                .all(|&p| p == NO_PARENT || (p as usize) < i)
        })
    }
}

impl SealedTape<f64> {
    /// Re-evaluates the recorded operations at new input values.
    pub fn replay(&self, inputs: &[f64]) -> f64 {
        assert_eq!(inputs.len(), self.n_inputs);
        let mut values = vec![0.0; self.output as usize + 1];
        values[..self.n_inputs].copy_from_slice(inputs);
        for i in self.n_inputs..=self.output as usize {
            let node = &self.nodes[i];
            let a = |k: usize| values[node.parents[k] as usize];
            values[i] = match node.op {
                Op::Input => unreachable!("inputs are registered first"),
                Op::Add => a(0) + a(1),
                Op::Sub => a(0) - a(1),
                Op::Mul => a(0) * a(1),
                Op::Div => a(0) / a(1),
                Op::Neg => -a(0),
                Op::Exp => a(0).exp(),
                Op::Ln => a(0).ln(),
                Op::Sqrt => a(0).sqrt(),
                Op::Recip => 1.0 / a(0),
                Op::Square => a(0) * a(0),
                Op::AddConst(c) if node.parents[0] == NO_PARENT => c,
                Op::AddConst(c) => a(0) + c,
                Op::MulConst(c) => a(0) * c,
                Op::ConstSub(c) => c - a(0),
                Op::ConstDiv(c) => c / a(0),
                Op::DivConst(c) => a(0) / c,
            };
        }
        values[self.output as usize]
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn constant(value: T) -> Self {
        Self {
            tape: None,
            index: NO_PARENT,
            value,
        }
    }

    pub fn val(&self) -> T {
        self.value
    }

    pub fn is_constant(&self) -> bool {
        self.tape.is_none()
    }

    /// Releases the borrow of the tape so it can be sealed.
    pub fn output(&self) -> Output<T> {
        Output {
            index: self.tape.map(|_| self.index),
            value: self.value,
        }
    }

    fn unary(self, op: Op, value: T, partial: T) -> Self {
        match self.tape {
            None => Var::constant(value),
            Some(tape) => tape.push(
                op,
                [self.index, NO_PARENT],
                [partial, T::from_f64(0.0)],
                value,
            ),
        }
    }

    fn binary(self, rhs: Self, op: Op, value: T, partials: [T; 2]) -> Self {
        match self.tape.or(rhs.tape) {
            None => Var::constant(value),
            Some(tape) => {
                if self.tape.is_some() && rhs.tape.is_some() {
                    tape.push(op, [self.index, rhs.index], partials, value)
                } else {
                    // Fold the constant operand into the opcode.
                    let (var, c, p) = if self.tape.is_some() {
                        (self, rhs.value.value(), partials[0])
                    } else {
                        (rhs, self.value.value(), partials[1])
                    };
                    let folded = match (op, self.tape.is_some()) {
                        (Op::Add, _) => Op::AddConst(c),
                        (Op::Sub, true) => Op::AddConst(-c),
                        (Op::Sub, false) => Op::ConstSub(c),
                        (Op::Mul, _) => Op::MulConst(c),
                        (Op::Div, true) => Op::DivConst(c),
                        (Op::Div, false) => Op::ConstDiv(c),
                        _ => unreachable!("only arithmetic binary ops are folded"),
                    };
                    tape.push(folded, [var.index, NO_PARENT], [p, T::from_f64(0.0)], value)
                }
            }
        }
    }
}

impl<'t, T: Real> Add for Var<'t, T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let one = T::from_f64(1.0);
        self.binary(rhs, Op::Add, self.value + rhs.value, [one, one])
    }
}

impl<'t, T: Real> Sub for Var<'t, T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let one = T::from_f64(1.0);
        self.binary(rhs, Op::Sub, self.value - rhs.value, [one, -one])
    }
}

impl<'t, T: Real> Mul for Var<'t, T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, Op::Mul, self.value * rhs.value, [rhs.value, self.value])
    }
}

impl<'t, T: Real> Div for Var<'t, T> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let inv = rhs.value.recip();
        let q = self.value / rhs.value;
        self.binary(rhs, Op::Div, q, [inv, -q * inv])
    }
}

impl<'t, T: Real> Neg for Var<'t, T> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(Op::Neg, -self.value, -T::from_f64(1.0))
    }
}

impl<'t, T: Real> Real for Var<'t, T> {
    fn from_f64(c: f64) -> Self {
        Var::constant(T::from_f64(c))
    }

    fn value(&self) -> f64 {
        self.value.value()
    }

    fn exp(self) -> Self {
        let e = self.value.exp();
        self.unary(Op::Exp, e, e)
    }

    fn ln(self) -> Self {
        self.unary(Op::Ln, self.value.ln(), self.value.recip())
    }

    fn sqrt(self) -> Self {
        let r = self.value.sqrt();
        self.unary(Op::Sqrt, r, T::from_f64(0.5) / r)
    }

    fn recip(self) -> Self {
        let r = self.value.recip();
        self.unary(Op::Recip, r, -(r * r))
    }

    fn square(self) -> Self {
        self.unary(
            Op::Square,
            self.value * self.value,
            T::from_f64(2.0) * self.value,
        )
    }
}
