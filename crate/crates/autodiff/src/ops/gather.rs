use std::rc::Rc;

use crate::graph::{GradStore, Graph, Op, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Graph<T> {
    /// `out[i] = x[index[i]]` reshaped to `shape`. Covers every pure
    /// rearrangement (window partition, shuffles, padding, crops); the reverse
    /// pass scatter-adds, so repeated indices are fine.
    pub fn gather(&mut self, x: Var, index: Rc<Vec<u32>>, shape: Vec<usize>) -> Var {
        assert_eq!(
            shape.iter().product::<usize>(),
            index.len(),
            "gather index length does not match output shape"
        );
        let xv = self.data(x);
        let data = index
            .iter()
            .map(|&i| {
                *xv.get(i as usize)
                    .expect("gather index out of bounds")
            })
            .collect();
        self.push(Tensor::new(shape, data), Op::Gather { x, index })
    }

    /// Concatenate along the trailing (channel) dimension.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let lead = self.shape(parts[0]);
        let lead = lead[..lead.len() - 1].to_vec();
        let rows: usize = lead.iter().product();
        let widths: Vec<usize> = parts
            .iter()
            .map(|p| {
                let s = self.shape(*p);
                assert_eq!(&s[..s.len() - 1], lead.as_slice(), "concat leading dims differ");
                *s.last().unwrap()
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &wd) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(*p)[r * wd..(r + 1) * wd]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        self.push(Tensor::new(shape, out), Op::Concat(parts.to_vec()))
    }
}

pub(crate) fn concat_backward<T: Scalar>(
    g: &Graph<T>,
    parts: &[Var],
    grad: &[T],
    grads: &mut GradStore<T>,
) {
    let widths: Vec<usize> = parts.iter().map(|p| *g.shape(*p).last().unwrap()).collect();
    let total: usize = widths.iter().sum();
    let rows = grad.len() / total;
    let mut offset = 0;
    for (p, &wd) in parts.iter().zip(&widths) {
        if let Some(gp) = grads.slot(g, *p) {
            for r in 0..rows {
                let src = &grad[r * total + offset..r * total + offset + wd];
                for (a, b) in gp[r * wd..(r + 1) * wd].iter_mut().zip(src) {
                    *a = *a + *b;
                }
            }
        }
        offset += wd;
    }
}
