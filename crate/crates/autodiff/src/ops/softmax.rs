use crate::graph::{AttentionMask, GradStore, Graph, Op, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Graph<T> {
    /// Row softmax over the trailing dimension, with an optional additive mask
    /// applied before normalization.
    pub fn softmax(&mut self, x: Var, mask: Option<&AttentionMask<T>>) -> Var {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().unwrap();
        let xv = self.data(x);
        let mut out = xv.to_vec();
        if let Some(m) = mask {
            assert_eq!(m.tokens, n, "mask token count mismatch");
            assert_eq!(m.values.len(), m.windows * n * n, "mask size mismatch");
            let block = n * n;
            for (bi, logits) in out.chunks_exact_mut(block).enumerate() {
                let win = (bi / m.heads) % m.windows;
                for (v, mv) in logits.iter_mut().zip(&m.values[win * block..(win + 1) * block]) {
                    *v = *v + *mv;
                }
            }
        }
        for row in out.chunks_exact_mut(n) {
            let max = row.iter().fold(T::neg_infinity(), |a, v| a.max(*v));
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total = total + *v;
            }
            let inv = T::one() / total;
            for v in row.iter_mut() {
                *v = *v * inv;
            }
        }
        self.push(Tensor::new(shape, out), Op::Softmax(x))
    }
}

pub(crate) fn softmax_backward<T: Scalar>(
    g: &Graph<T>,
    node: usize,
    x: Var,
    grad: &[T],
    grads: &mut GradStore<T>,
) {
    let y = g.nodes[node].value.data();
    let n = *g.shape(x).last().unwrap();
    if let Some(gx) = grads.slot(g, x) {
        for ((yr, dr), gr) in y.chunks_exact(n).zip(grad.chunks_exact(n)).zip(gx.chunks_exact_mut(n)) {
            let dot = yr.iter().zip(dr).fold(T::zero(), |a, (p, d)| a + *p * *d);
            for i in 0..n {
                gr[i] = gr[i] + yr[i] * (dr[i] - dot);
            }
        }
    }
}
