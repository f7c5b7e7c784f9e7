use std::rc::Rc;

use crate::graph::{GradStore, Graph, Op, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn gelu<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * x * (T::one() + (x * T::from_f64(INV_SQRT_2)).erf())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    let cdf = half * (T::one() + (x * T::from_f64(INV_SQRT_2)).erf());
    let pdf = T::from_f64(INV_SQRT_2PI) * (-(x * x) * half).exp();
    cdf + x * pdf
}

impl<T: Scalar> Graph<T> {
    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "elementwise shape mismatch");
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    fn unary(&self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let t = self.value(x);
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| f(*v)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.binary(a, b, |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.binary(a, b, |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.binary(a, b, |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.unary(x, |v| v * c);
        self.push(out, Op::Scale(x, c))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.unary(x, |v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(x))
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.unary(x, gelu);
        self.push(out, Op::Gelu(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self
            .value(x)
            .data()
            .iter()
            .fold(T::zero(), |acc, v| acc + *v);
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// `sum_i weights[i] * x[i]`; handy for projecting an output onto a fixed
    /// random direction in gradient checks.
    pub fn weighted_sum(&mut self, x: Var, weights: Rc<Vec<T>>) -> Var {
        let t = self.value(x);
        assert_eq!(t.len(), weights.len(), "weighted_sum length mismatch");
        let s = t
            .data()
            .iter()
            .zip(weights.iter())
            .fold(T::zero(), |acc, (v, w)| acc + *v * *w);
        self.push(Tensor::scalar(s), Op::WeightedSum(x, weights))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let s = self.sum(x);
        self.scale(s, T::one() / T::from_f64(n as f64))
    }
}

pub(crate) fn relu_backward<T: Scalar>(g: &Graph<T>, x: Var, grad: &[T], grads: &mut GradStore<T>) {
    let xv = g.data(x);
    if let Some(gx) = grads.slot(g, x) {
        for ((a, d), v) in gx.iter_mut().zip(grad).zip(xv) {
            if *v > T::zero() {
                *a = *a + *d;
            }
        }
    }
}

pub(crate) fn gelu_backward<T: Scalar>(g: &Graph<T>, x: Var, grad: &[T], grads: &mut GradStore<T>) {
    let xv = g.data(x);
    if let Some(gx) = grads.slot(g, x) {
        for ((a, d), v) in gx.iter_mut().zip(grad).zip(xv) {
            *a = *a + *d * gelu_grad(*v);
        }
    }
}
