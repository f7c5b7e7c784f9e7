use std::rc::Rc;

use crate::graph::{GradStore, Graph, Op, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Graph<T> {
    /// Mean over all entries of `|d| / (beta + |d|)` with `d = x - target`.
    pub fn robust_loss(&mut self, x: Var, target: Rc<Vec<T>>, beta: T) -> Var {
        let xv = self.data(x);
        assert_eq!(xv.len(), target.len(), "robust_loss shape mismatch");
        let total = xv.iter().zip(target.iter()).fold(T::zero(), |acc, (p, t)| {
            let d = (*p - *t).abs();
            acc + d / (beta + d)
        });
        let loss = total / T::from_f64(xv.len() as f64);
        self.push(Tensor::scalar(loss), Op::RobustLoss { x, target, beta })
    }
}

pub(crate) fn robust_loss_backward<T: Scalar>(
    g: &Graph<T>,
    x: Var,
    target: &[T],
    beta: T,
    grad: &[T],
    grads: &mut GradStore<T>,
) {
    let xv = g.data(x);
    let scale = grad[0] / T::from_f64(xv.len() as f64);
    if let Some(gx) = grads.slot(g, x) {
        for ((acc, p), t) in gx.iter_mut().zip(xv).zip(target) {
            let d = *p - *t;
            if d == T::zero() {
                continue;
            }
            let denom = beta + d.abs();
            *acc = *acc + scale * d.signum() * beta / (denom * denom);
        }
    }
}
