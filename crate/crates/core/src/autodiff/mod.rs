//! Reverse-mode automatic differentiation.
//!
//! Model code is written once against the [`Real`] trait and evaluated either
//! on plain `f64`, on [`Dual`] numbers, or on tape variables ([`Var`]).
//! [`gradient`] records one tape and sweeps it backwards; [`hessian_block`]
//! records a tape over dual numbers once per block column (forward-over-reverse).

mod dual;
mod tape;

use std::ops::{Add, Div, Mul, Neg, Sub};

use nalgebra::DMatrix;

pub use dual::Dual;
pub use tape::{Op, Output, SealedTape, Tape, Var};

use crate::error::{Error, Result};

/// Scalar arithmetic shared by `f64`, [`Dual`] and tape variables.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(c: f64) -> Self;
    fn value(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn recip(self) -> Self;
    fn square(self) -> Self;
}

impl Real for f64 {
    fn from_f64(c: f64) -> Self {
        c
    }
    fn value(&self) -> f64 {
        *self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn recip(self) -> Self {
        1.0 / self
    }
    fn square(self) -> Self {
        self * self
    }
}

/// A scalar function of a vector, generic over the arithmetic.
pub trait ScalarFn {
    fn eval<S: Real>(&self, x: &[S]) -> S;
}

/// Records `f` at `x` on a fresh tape.
pub fn record<F: ScalarFn>(f: &F, x: &[f64]) -> SealedTape<f64> {
    let tape = Tape::new();
    let out = {
        let inputs = tape.inputs(x);
        f.eval(&inputs).output()
    };
    tape.seal(out)
}

/// Value and gradient of `f` at `x`.
pub fn gradient<F: ScalarFn>(f: &F, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let tape = record(f, x);
    let value = tape.output_value();
    if !value.is_finite() {
        return Err(Error::NonFiniteValue);
    }
    let grad = tape.gradient();
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteValue);
    }
    Ok((value, grad))
}

/// Symmetric matrix of second partials of `f` over the coordinates in `block`.
///
/// One dual-number tape is recorded per block column with the tangent seeded
/// on that coordinate; the reverse sweep of that tape returns a Hessian column.
/// The result is symmetrized as `(H + Hᵀ) / 2`.
pub fn hessian_block<F: ScalarFn>(f: &F, x: &[f64], block: &[usize]) -> Result<DMatrix<f64>> {
    let m = block.len();
    if let Some(&bad) = block.iter().find(|&&b| b >= x.len()) {
        return Err(Error::DimensionMismatch(format!(
            "block index {bad} out of range for {} inputs",
            x.len()
        )));
    }
    let mut h = DMatrix::zeros(m, m);
    for (col, &seed) in block.iter().enumerate() {
        let duals: Vec<Dual> = x
            .iter()
            .enumerate()
            .map(|(i, &v)| Dual::new(v, if i == seed { 1.0 } else { 0.0 }))
            .collect();
        let tape = Tape::<Dual>::new();
        let out = {
            let inputs = tape.inputs(&duals);
            f.eval(&inputs).output()
        };
        let sealed = tape.seal(out);
        if !sealed.output_value().value.is_finite() {
            return Err(Error::NonFiniteValue);
        }
        let adj = sealed.gradient();
        for (row, &b) in block.iter().enumerate() {
            let v = adj[b].tangent;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue);
            }
            h[(row, col)] = v;
        }
    }
    let ht = h.transpose();
    Ok((h + ht) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct Square;
    impl ScalarFn for Square {
        fn eval<S: Real>(&self, x: &[S]) -> S {
            x[0].square()
        }
    }

    struct LogPlus;
    impl ScalarFn for LogPlus {
        fn eval<S: Real>(&self, x: &[S]) -> S {
            x[0].ln() + x[1]
        }
    }

    struct Cross;
    impl ScalarFn for Cross {
        fn eval<S: Real>(&self, x: &[S]) -> S {
            x[0].square() + x[0] * x[1]
        }
    }

    struct Quad(Vec<Vec<f64>>);
    impl ScalarFn for Quad {
        fn eval<S: Real>(&self, x: &[S]) -> S {
            let mut acc = S::from_f64(0.0);
            for i in 0..x.len() {
                for j in 0..x.len() {
                    acc = acc + x[i] * x[j] * S::from_f64(0.5 * self.0[i][j]);
                }
            }
            acc
        }
    }

    struct Mixed;
    impl ScalarFn for Mixed {
        fn eval<S: Real>(&self, x: &[S]) -> S {
            (x[0] * x[1]).exp() / (S::from_f64(1.0) + x[2].square()).sqrt() - x[1].recip()
                + S::from_f64(3.0) * x[2]
                - (S::from_f64(2.0) - x[0])
        }
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(gradient(&Square, &[3.0]).unwrap().1, vec![6.0]);
        assert_eq!(gradient(&LogPlus, &[2.0, 5.0]).unwrap().1, vec![0.5, 1.0]);
    }

    #[test]
    fn nan_is_flagged() {
        assert!(matches!(gradient(&LogPlus, &[-1.0, 0.0]), Err(Error::NonFiniteValue)));
    }

    #[test]
    fn hessian_examples() {
        let h = hessian_block(&Cross, &[0.7, -1.3], &[0, 1]).unwrap();
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 0.0]));
        let a = vec![vec![2.0, 0.5, -1.0], vec![0.1, 3.0, 0.0], vec![-1.0, 0.4, 1.0]];
        let h = hessian_block(&Quad(a.clone()), &[0.3, 0.2, 0.1], &[0, 1, 2]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((h[(i, j)] - 0.5 * (a[i][j] + a[j][i])).abs() < 1e-15);
            }
        }
        assert!(hessian_block(&Cross, &[0.0, 0.0], &[2]).is_err());
    }

    #[test]
    fn hessian_matches_differenced_gradient() {
        let x = [0.4, 1.3, -0.6];
        let h = hessian_block(&Mixed, &x, &[0, 1, 2]).unwrap();
        for j in 0..3 {
            let step = 1e-6;
            let mut up = x;
            let mut dn = x;
            up[j] += step;
            dn[j] -= step;
            let gu = gradient(&Mixed, &up).unwrap().1;
            let gd = gradient(&Mixed, &dn).unwrap().1;
            for i in 0..3 {
                let num = (gu[i] - gd[i]) / (2.0 * step);
                assert!((num - h[(i, j)]).abs() < 1e-5 * (1.0 + num.abs()));
            }
        }
        assert_eq!(h, h.transpose());
    }

    #[test]
    fn replay_is_bit_exact_and_ordered() {
        let x = [0.4, 1.3, -0.6];
        let tape = record(&Mixed, &x);
        assert!(tape.is_topologically_ordered());
        assert_eq!(tape.replay(&x).to_bits(), tape.output_value().to_bits());
        let y = [0.1, 0.9, 0.2];
        assert_eq!(tape.replay(&y), Mixed.eval(&y));
    }

    #[test]
    fn sealed_tape_is_shareable_across_threads() {
        let tape = record(&Mixed, &[0.4, 1.3, -0.6]);
        let want = tape.gradient();
        std::thread::scope(|s| {
            for _ in 0..4 {
                s.spawn(|| assert_eq!(tape.gradient(), want));
            }
        });
    }

    struct Prim(u8);
    impl ScalarFn for Prim {
        fn eval<S: Real>(&self, x: &[S]) -> S {
            match self.0 {
                0 => x[0] + x[1],
                1 => x[0] * x[1],
                2 => x[0].exp(),
                3 => x[0].ln(),
                4 => x[0].square(),
                _ => x[0].recip(),
            }
        }
    }

    fn closed_form(op: u8, a: f64, b: f64) -> [f64; 2] {
        match op {
            0 => [1.0, 1.0],
            1 => [b, a],
            2 => [a.exp(), 0.0],
            3 => [1.0 / a, 0.0],
            4 => [2.0 * a, 0.0],
            _ => [-1.0 / (a * a), 0.0],
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn primitives_match_closed_forms(op in 0u8..6, a in 0.05f64..4.0, b in -4.0f64..4.0) {
            let (_, g) = gradient(&Prim(op), &[a, b]).unwrap();
            let want = closed_form(op, a, b);
            for i in 0..2 {
                prop_assert!((g[i] - want[i]).abs() <= 1e-14 * want[i].abs().max(1e-300));
            }
            let h = hessian_block(&Prim(op), &[a, b], &[0]).unwrap()[(0, 0)];
            let want2 = match op { 2 => a.exp(), 3 => -1.0 / (a * a), 4 => 2.0, 5 => 2.0 / (a * a * a), _ => 0.0 };
            prop_assert!((h - want2).abs() <= 1e-13 * want2.abs().max(1e-300));
        }

        #[test]
        fn gradient_of_sum_is_sum_of_gradients(xs in proptest::collection::vec(-2.0f64..2.0, 1..6)) {
            struct Sum;
            impl ScalarFn for Sum {
                fn eval<S: Real>(&self, x: &[S]) -> S {
                    x.iter().fold(S::from_f64(0.0), |acc, &v| acc + (v * S::from_f64(0.7)).exp() + v.square())
                }
            }
            let (_, g) = gradient(&Sum, &xs).unwrap();
            for (i, &v) in xs.iter().enumerate() {
                prop_assert_eq!(g[i], 0.7 * (v * 0.7).exp() + 2.0 * v);
            }
        }
    }
}
