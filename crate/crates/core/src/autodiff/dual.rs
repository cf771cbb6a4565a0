//! Forward-mode dual numbers.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use super::Real;

/// A value paired with a directional derivative.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dual {
    pub value: f64,
    pub tangent: f64,
}

impl Dual {
    pub fn new(value: f64, tangent: f64) -> Self {
        Self { value, tangent }
    }

    pub fn constant(value: f64) -> Self {
        Self { value, tangent: 0.0 }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        Dual::new(self.value + rhs.value, self.tangent + rhs.tangent)
    }
}

impl AddAssign for Dual {
    fn add_assign(&mut self, rhs: Dual) {
        *self = *self + rhs;
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        Dual::new(self.value - rhs.value, self.tangent - rhs.tangent)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        Dual::new(
            self.value * rhs.value,
            self.tangent * rhs.value + self.value * rhs.tangent,
        )
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, rhs: Dual) -> Dual {
        let q = self.value / rhs.value;
        Dual::new(q, (self.tangent - q * rhs.tangent) / rhs.value)
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.value, -self.tangent)
    }
}

impl Real for Dual {
    fn from_f64(c: f64) -> Self {
        Dual::constant(c)
    }

    fn value(&self) -> f64 {
        self.value
    }

    fn exp(self) -> Self {
        let e = self.value.exp();
        Dual::new(e, e * self.tangent)
    }

    fn ln(self) -> Self {
        Dual::new(self.value.ln(), self.tangent / self.value)
    }

    fn sqrt(self) -> Self {
        let r = self.value.sqrt();
        Dual::new(r, 0.5 * self.tangent / r)
    }

    fn recip(self) -> Self {
        let r = 1.0 / self.value;
        Dual::new(r, -self.tangent * r * r)
    }

    fn square(self) -> Self {
        Dual::new(self.value * self.value, 2.0 * self.value * self.tangent)
    }
}
