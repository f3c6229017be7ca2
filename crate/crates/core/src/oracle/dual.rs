use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::autodiff::Scalar;

/// Forward-mode dual number: value and derivative along one direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Dual {
    fn chain(self, v: f64, dv: f64) -> Dual {
        Dual { v, d: self.d * dv }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual { v: self.v + o.v, d: self.d + o.d }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual { v: self.v - o.v, d: self.d - o.d }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual { v: self.v * o.v, d: self.d * o.v + self.v * o.d }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        Dual { v: self.v / o.v, d: (self.d * o.v - self.v * o.d) / (o.v * o.v) }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual { v: -self.v, d: -self.d }
    }
}

impl Scalar for Dual {
    fn constant(v: f64) -> Self {
        Dual { v, d: 0.0 }
    }

    fn value(self) -> f64 {
        self.v
    }

    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }

    fn ln(self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v)
    }

    fn sqrt(self) -> Self {
        let r = self.v.sqrt();
        self.chain(r, 0.5 / r)
    }

    fn abs(self) -> Self {
        self.chain(self.v.abs(), if self.v < 0.0 { -1.0 } else { 1.0 })
    }

    fn sigmoid(self) -> Self {
        let s = Scalar::sigmoid(self.v);
        self.chain(s, s * (1.0 - s))
    }

    fn softplus(self) -> Self {
        self.chain(Scalar::softplus(self.v), Scalar::sigmoid(self.v))
    }

    fn tanh(self) -> Self {
        let t = self.v.tanh();
        self.chain(t, 1.0 - t * t)
    }

    fn relu(self) -> Self {
        if self.v > 0.0 {
            self
        } else {
            Dual { v: 0.0, d: 0.0 }
        }
    }

    fn powi(self, n: i32) -> Self {
        self.chain(self.v.powi(n), n as f64 * self.v.powi(n - 1))
    }

    fn custom(self, value: f64, derivative: f64) -> Self {
        self.chain(value, derivative)
    }

    fn custom2(self, other: Self, value: f64, da: f64, db: f64) -> Self {
        Dual { v: value, d: self.d * da + other.d * db }
    }

    fn straight_through(hard: f64, soft: Self) -> Self {
        Dual { v: hard, d: soft.d }
    }
}
