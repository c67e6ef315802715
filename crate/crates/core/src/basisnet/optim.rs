use serde::{Deserialize, Serialize};

use crate::Scalar;

/// In-place parameter update from a gradient.
pub trait Optimizer<T> {
    fn step(&mut self, params: &mut [T], grad: &[T]);
}

/// Plain stochastic gradient descent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd<T> {
    pub lr: T,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: T) -> Self {
        Self { lr }
    }
}

impl<T: Scalar> Optimizer<T> for Sgd<T> {
    fn step(&mut self, params: &mut [T], grad: &[T]) {
        for (p, g) in params.iter_mut().zip(grad) {
            *p -= self.lr * *g;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LookaheadConfig {
    /// Inner steps between synchronizations.
    pub k: usize,
    /// Slow-weight step size in (0, 1].
    pub alpha: f64,
}

impl Default for LookaheadConfig {
    fn default() -> Self {
        Self { k: 5, alpha: 0.5 }
    }
}

/// Runs an inner optimizer on fast weights and every `k` steps moves the
/// slow weights toward them, then restarts the fast weights from the slow ones.
#[derive(Debug, Clone)]
pub struct Lookahead<T, O> {
    inner: O,
    k: usize,
    alpha: T,
    slow: Option<Vec<T>>,
    steps: usize,
}

impl<T: Scalar, O: Optimizer<T>> Lookahead<T, O> {
    pub fn new(inner: O, k: usize, alpha: T) -> Self {
        assert!(k >= 1, "lookahead period must be at least 1");
        Self {
            inner,
            k,
            alpha,
            slow: None,
            steps: 0,
        }
    }

    pub fn slow_weights(&self) -> Option<&[T]> {
        self.slow.as_deref()
    }
}

impl<T: Scalar, O: Optimizer<T>> Optimizer<T> for Lookahead<T, O> {
    fn step(&mut self, params: &mut [T], grad: &[T]) {
        let slow = self.slow.get_or_insert_with(|| params.to_vec());
        self.inner.step(params, grad);
        self.steps += 1;
        if self.steps % self.k != 0 {
            return;
        }
        if self.alpha == T::one() {
            slow.copy_from_slice(params);
            return;
        }
        for (s, p) in slow.iter_mut().zip(params.iter_mut()) {
            *s += self.alpha * (*p - *s);
            *p = *s;
        }
    }
}
