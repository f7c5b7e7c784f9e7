use crate::graph::{GradStore, Graph, Op, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl<T: Scalar> Graph<T> {
    /// Layer normalization over the trailing dimension with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().unwrap();
        assert_eq!(self.value(gamma).len(), c, "layer_norm gamma width mismatch");
        assert_eq!(self.value(beta).len(), c, "layer_norm beta width mismatch");
        let (xv, gv, bv) = (self.data(x), self.data(gamma), self.data(beta));
        let eps = T::from_f64(LAYER_NORM_EPS);
        let inv_c = T::one() / T::from_f64(c as f64);
        let mut out = Vec::with_capacity(xv.len());
        let mut stats = Vec::with_capacity(xv.len() / c);
        for row in xv.chunks_exact(c) {
            let mean = row.iter().fold(T::zero(), |a, v| a + *v) * inv_c;
            let var = row
                .iter()
                .fold(T::zero(), |a, v| a + (*v - mean) * (*v - mean))
                * inv_c;
            let rstd = T::one() / (var + eps).sqrt();
            for ((v, gm), bt) in row.iter().zip(gv).zip(bv) {
                out.push((*v - mean) * rstd * *gm + *bt);
            }
            stats.push((mean, rstd));
        }
        self.push(
            Tensor::new(shape, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                stats,
            },
        )
    }
}

pub(crate) fn layer_norm_backward<T: Scalar>(
    g: &Graph<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    stats: &[(T, T)],
    grad: &[T],
    grads: &mut GradStore<T>,
) {
    let xv = g.data(x);
    let gv = g.data(gamma);
    let c = gv.len();
    let inv_c = T::one() / T::from_f64(c as f64);
    if let Some(gg) = grads.slot(g, gamma) {
        for ((row, dy), (mean, rstd)) in xv.chunks_exact(c).zip(grad.chunks_exact(c)).zip(stats) {
            for ((acc, v), d) in gg.iter_mut().zip(row).zip(dy) {
                *acc = *acc + *d * (*v - *mean) * *rstd;
            }
        }
    }
    if let Some(gb) = grads.slot(g, beta) {
        for dy in grad.chunks_exact(c) {
            for (acc, d) in gb.iter_mut().zip(dy) {
                *acc = *acc + *d;
            }
        }
    }
    if let Some(gx) = grads.slot(g, x) {
        let mut dxhat = vec![T::zero(); c];
        for (((row, dy), out), (mean, rstd)) in xv
            .chunks_exact(c)
            .zip(grad.chunks_exact(c))
            .zip(gx.chunks_exact_mut(c))
            .zip(stats)
        {
            let mut sum_d = T::zero();
            let mut sum_dx = T::zero();
            for i in 0..c {
                dxhat[i] = dy[i] * gv[i];
                let xhat = (row[i] - *mean) * *rstd;
                sum_d = sum_d + dxhat[i];
                sum_dx = sum_dx + dxhat[i] * xhat;
            }
            let mean_d = sum_d * inv_c;
            let mean_dx = sum_dx * inv_c;
            for i in 0..c {
                let xhat = (row[i] - *mean) * *rstd;
                out[i] = out[i] + *rstd * (dxhat[i] - mean_d - xhat * mean_dx);
            }
        }
    }
}
