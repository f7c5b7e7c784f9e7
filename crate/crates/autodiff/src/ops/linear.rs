use crate::graph::{GradStore, Graph, Op, Var};
use crate::scalar::{matmul_into, Scalar};
use crate::tensor::Tensor;

impl<T: Scalar> Graph<T> {
    /// `y = x W + b` over the trailing dimension. `w` is `[in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w);
        assert_eq!(ws.len(), 2, "linear weight must be 2-D");
        let (k, n) = (ws[0], ws[1]);
        assert_eq!(*xs.last().unwrap(), k, "linear input width mismatch");
        let m = xs.iter().product::<usize>() / k;
        let mut out = vec![T::zero(); m * n];
        if let Some(b) = b {
            let bv = self.data(b);
            assert_eq!(bv.len(), n, "linear bias length mismatch");
            for row in out.chunks_exact_mut(n) {
                row.copy_from_slice(bv);
            }
        }
        matmul_into(m, k, n, self.data(x), self.data(w), &mut out, b.is_some());
        let mut shape = xs;
        *shape.last_mut().unwrap() = n;
        self.push(Tensor::new(shape, out), Op::Linear { x, w, b })
    }

    /// Batched product `alpha * a[i] * b[i]` (or `b[i]^T` when `trans_b`).
    ///
    /// `a` is `[batch, m, k]`; `b` is `[batch, k, n]` or `[batch, n, k]`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool, alpha: T) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(sa.len() == 3 && sb.len() == 3, "bmm operands must be 3-D");
        assert_eq!(sa[0], sb[0], "bmm batch mismatch");
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        assert_eq!(k, kb, "bmm inner dimension mismatch");
        let mut out = vec![T::zero(); batch * m * n];
        let (av, bv) = (self.data(a), self.data(b));
        let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
        for i in 0..batch {
            T::gemm(
                m,
                k,
                n,
                alpha,
                &av[i * m * k..(i + 1) * m * k],
                k as isize,
                1,
                &bv[i * k * n..(i + 1) * k * n],
                rsb,
                csb,
                T::zero(),
                &mut out[i * m * n..(i + 1) * m * n],
                n as isize,
                1,
            );
        }
        self.push(
            Tensor::new(vec![batch, m, n], out),
            Op::Bmm {
                a,
                b,
                trans_b,
                alpha,
            },
        )
    }
}

pub(crate) fn linear_backward<T: Scalar>(
    g: &Graph<T>,
    x: Var,
    w: Var,
    b: Option<Var>,
    grad: &[T],
    grads: &mut GradStore<T>,
) {
    let ws = g.shape(w);
    let (k, n) = (ws[0], ws[1]);
    let m = grad.len() / n;
    if let Some(gx) = grads.slot(g, x) {
        // dx = dy W^T
        T::gemm(
            m,
            n,
            k,
            T::one(),
            grad,
            n as isize,
            1,
            g.data(w),
            1,
            n as isize,
            T::one(),
            gx,
            k as isize,
            1,
        );
    }
    if let Some(gw) = grads.slot(g, w) {
        // dW = x^T dy
        T::gemm(
            k,
            m,
            n,
            T::one(),
            g.data(x),
            1,
            k as isize,
            grad,
            n as isize,
            1,
            T::one(),
            gw,
            n as isize,
            1,
        );
    }
    if let Some(b) = b {
        if let Some(gb) = grads.slot(g, b) {
            for row in grad.chunks_exact(n) {
                for (acc, d) in gb.iter_mut().zip(row) {
                    *acc = *acc + *d;
                }
            }
        }
    }
}

pub(crate) fn bmm_backward<T: Scalar>(
    g: &Graph<T>,
    a: Var,
    b: Var,
    trans_b: bool,
    alpha: T,
    grad: &[T],
    grads: &mut GradStore<T>,
) {
    let sa = g.shape(a);
    let (batch, m, k) = (sa[0], sa[1], sa[2]);
    let n = grad.len() / (batch * m);
    let (av, bv) = (g.data(a), g.data(b));
    if let Some(ga) = grads.slot(g, a) {
        // dA = alpha dC B^T  (B stored k x n)   or   alpha dC B  (B stored n x k)
        let (rsb, csb) = if trans_b { (k as isize, 1) } else { (1, n as isize) };
        for i in 0..batch {
            T::gemm(
                m,
                n,
                k,
                alpha,
                &grad[i * m * n..(i + 1) * m * n],
                n as isize,
                1,
                &bv[i * k * n..(i + 1) * k * n],
                rsb,
                csb,
                T::one(),
                &mut ga[i * m * k..(i + 1) * m * k],
                k as isize,
                1,
            );
        }
    }
    if let Some(gb) = grads.slot(g, b) {
        for i in 0..batch {
            let ai = &av[i * m * k..(i + 1) * m * k];
            let gi = &grad[i * m * n..(i + 1) * m * n];
            let out = &mut gb[i * k * n..(i + 1) * k * n];
            if trans_b {
                // B stored n x k: dB = alpha dC^T A
                T::gemm(
                    n,
                    m,
                    k,
                    alpha,
                    gi,
                    1,
                    n as isize,
                    ai,
                    k as isize,
                    1,
                    T::one(),
                    out,
                    k as isize,
                    1,
                );
            } else {
                // dB = alpha A^T dC
                T::gemm(
                    k,
                    m,
                    n,
                    alpha,
                    ai,
                    1,
                    k as isize,
                    gi,
                    n as isize,
                    1,
                    T::one(),
                    out,
                    n as isize,
                    1,
                );
            }
        }
    }
}
