//! Reverse-mode automatic differentiation, parameter storage, small dense
//! networks and first-order optimizers.

mod nn;
mod optim;
mod store;
mod tape;

use std::ops::{Add, Div, Mul, Neg, Sub};

pub use nn::{activate, bias_name, dense, init_network, mlp_forward, softmax, weight_name};
pub use optim::{Optimizer, OptimizerKind};
pub use store::{Checkpoint, ParameterStore, Tensor};
pub use tape::{Gradients, Tape, Var};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("parameter `{0}` already exists")]
    DuplicateParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Numeric type that evaluation code is generic over: plain `f64` for
/// forward-only passes, [`Var`] when derivatives are needed.
///
/// The `f64` implementation is the reference for values; `Var` computes the
/// same values bit-for-bit so forward results agree across both paths.
pub trait Scalar:
    Copy
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn sigmoid(self) -> Self;
    fn softplus(self) -> Self;
    fn tanh(self) -> Self;
    fn relu(self) -> Self;
    fn powi(self, n: i32) -> Self;
    /// Unary op whose value and derivative were computed elsewhere.
    fn custom(self, value: f64, derivative: f64) -> Self;
    /// Binary op whose value and partials were computed elsewhere.
    fn custom2(self, other: Self, value: f64, da: f64, db: f64) -> Self;
    /// Forward value `hard`, derivative taken from `soft`.
    fn straight_through(hard: f64, soft: Self) -> Self;
}

impl Scalar for f64 {
    fn constant(v: f64) -> Self {
        v
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

    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }

    fn abs(self) -> Self {
        f64::abs(self)
    }

    fn sigmoid(self) -> Self {
        if self >= 0.0 {
            1.0 / (1.0 + (-self).exp())
        } else {
            let e = self.exp();
            e / (1.0 + e)
        }
    }

    fn softplus(self) -> Self {
        if self > 0.0 {
            self + (-self).exp().ln_1p()
        } else {
            self.exp().ln_1p()
        }
    }

    fn tanh(self) -> Self {
        f64::tanh(self)
    }

    fn relu(self) -> Self {
        if self > 0.0 {
            self
        } else {
            0.0
        }
    }

    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }

    fn custom(self, value: f64, _: f64) -> Self {
        value
    }

    fn custom2(self, _: Self, value: f64, _: f64, _: f64) -> Self {
        value
    }

    fn straight_through(hard: f64, _: Self) -> Self {
        hard
    }
}

/// Inverse of softplus, for initializing positive parameters.
pub fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Inverse of the logistic sigmoid.
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
