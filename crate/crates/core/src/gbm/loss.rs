use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

/// Supplies per-row first and second derivatives of a loss with respect to
/// the prediction.
pub trait Objective: Sync {
    /// `(gradient, hessian)` at the given target and prediction.
    fn grad_hess(&self, target: f64, prediction: f64) -> (f64, f64);

    fn name(&self) -> String;
}

/// Squared error whose under-forecast side is scaled by the loss multiplier.
///
/// With residual `e = y - ŷ`, the implied loss is `e²` for `e < 0` and
/// `λ·e²` for `e ≥ 0`. `λ > 1` pushes predictions up, `λ < 1` down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymmetricLoss<T = f64> {
    lambda: T,
}

impl<T: Scalar> AsymmetricLoss<T> {
    pub fn new(lambda: T) -> Result<Self> {
        if !(lambda > T::zero()) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("loss multiplier must be positive, got {lambda}")));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn loss(&self, residual: T) -> T {
        if residual < T::zero() {
            residual * residual
        } else {
            self.lambda * residual * residual
        }
    }

    pub fn gradient(&self, residual: T) -> T {
        let two = T::of(2.0);
        if residual < T::zero() {
            -two * residual
        } else {
            -two * self.lambda * residual
        }
    }

    pub fn hessian(&self, residual: T) -> T {
        let two = T::of(2.0);
        if residual < T::zero() {
            two
        } else {
            two * self.lambda
        }
    }
}

impl Objective for AsymmetricLoss<f64> {
    fn grad_hess(&self, target: f64, prediction: f64) -> (f64, f64) {
        let e = target - prediction;
        (self.gradient(e), self.hessian(e))
    }

    fn name(&self) -> String {
        format!("asymmetric_l2(lambda={})", self.lambda)
    }
}

/// Gradient of the asymmetric loss at residual `e`.
pub fn loss_gradient<T: Scalar>(e: T, lambda: T) -> Result<T> {
    Ok(AsymmetricLoss::new(lambda)?.gradient(e))
}

/// Hessian of the asymmetric loss at residual `e`.
pub fn loss_hessian<T: Scalar>(e: T, lambda: T) -> Result<T> {
    Ok(AsymmetricLoss::new(lambda)?.hessian(e))
}
