use crate::graph::{GradStore, Graph, Op, Var};
use crate::scalar::{matmul_into, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
struct ConvGeom {
    batch: usize,
    h: usize,
    w: usize,
    cin: usize,
    ho: usize,
    wo: usize,
    kernel: usize,
    pad: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.batch * self.ho * self.wo
    }

    fn cols(&self) -> usize {
        self.kernel * self.kernel * self.cin
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.pad == 0
    }
}

/// Unfold NHWC input into `[rows, k*k*cin]` patches, zero outside the image.
fn im2col<T: Scalar>(x: &[T], g: ConvGeom) -> Vec<T> {
    let cols = g.cols();
    let mut col = vec![T::zero(); g.rows() * cols];
    for b in 0..g.batch {
        for yo in 0..g.ho {
            for xo in 0..g.wo {
                let row = ((b * g.ho + yo) * g.wo + xo) * cols;
                for ky in 0..g.kernel {
                    let yi = (yo + ky) as isize - g.pad as isize;
                    if yi < 0 || yi >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kernel {
                        let xi = (xo + kx) as isize - g.pad as isize;
                        if xi < 0 || xi >= g.w as isize {
                            continue;
                        }
                        let src = ((b * g.h + yi as usize) * g.w + xi as usize) * g.cin;
                        let dst = row + (ky * g.kernel + kx) * g.cin;
                        col[dst..dst + g.cin].copy_from_slice(&x[src..src + g.cin]);
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-add patch gradients back onto the input.
fn col2im_add<T: Scalar>(col: &[T], g: ConvGeom, dx: &mut [T]) {
    let cols = g.cols();
    for b in 0..g.batch {
        for yo in 0..g.ho {
            for xo in 0..g.wo {
                let row = ((b * g.ho + yo) * g.wo + xo) * cols;
                for ky in 0..g.kernel {
                    let yi = (yo + ky) as isize - g.pad as isize;
                    if yi < 0 || yi >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kernel {
                        let xi = (xo + kx) as isize - g.pad as isize;
                        if xi < 0 || xi >= g.w as isize {
                            continue;
                        }
                        let dst = ((b * g.h + yi as usize) * g.w + xi as usize) * g.cin;
                        let src = row + (ky * g.kernel + kx) * g.cin;
                        for (d, s) in dx[dst..dst + g.cin].iter_mut().zip(&col[src..src + g.cin]) {
                            *d = *d + *s;
                        }
                    }
                }
            }
        }
    }
}

fn geometry(xs: &[usize], ws: &[usize], kernel: usize, pad: usize) -> (ConvGeom, usize) {
    assert_eq!(xs.len(), 4, "conv2d input must be NHWC");
    assert_eq!(ws.len(), 2, "conv2d weight must be [k*k*cin, cout]");
    let (batch, h, w, cin) = (xs[0], xs[1], xs[2], xs[3]);
    assert_eq!(ws[0], kernel * kernel * cin, "conv2d weight/input channel mismatch");
    assert!(
        h + 2 * pad >= kernel && w + 2 * pad >= kernel,
        "conv2d input smaller than kernel"
    );
    let geom = ConvGeom {
        batch,
        h,
        w,
        cin,
        ho: h + 2 * pad + 1 - kernel,
        wo: w + 2 * pad + 1 - kernel,
        kernel,
        pad,
    };
    (geom, ws[1])
}

impl<T: Scalar> Graph<T> {
    /// Stride-1 zero-padded 2-D convolution in NHWC layout.
    ///
    /// `w` is laid out `[ky, kx, cin]` x `cout`, flattened to `[k*k*cin, cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, kernel: usize, pad: usize) -> Var {
        let (geom, cout) = geometry(self.shape(x), self.shape(w), kernel, pad);
        let mut out = vec![T::zero(); geom.rows() * cout];
        if let Some(b) = b {
            let bv = self.data(b);
            assert_eq!(bv.len(), cout, "conv2d bias length mismatch");
            for row in out.chunks_exact_mut(cout) {
                row.copy_from_slice(bv);
            }
        }
        if geom.is_pointwise() {
            matmul_into(geom.rows(), geom.cols(), cout, self.data(x), self.data(w), &mut out, b.is_some());
        } else {
            let col = im2col(self.data(x), geom);
            matmul_into(geom.rows(), geom.cols(), cout, &col, self.data(w), &mut out, b.is_some());
        }
        self.push(
            Tensor::new(vec![geom.batch, geom.ho, geom.wo, cout], out),
            Op::Conv2d {
                x,
                w,
                b,
                kernel,
                pad,
            },
        )
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Scalar>(
    g: &Graph<T>,
    x: Var,
    w: Var,
    b: Option<Var>,
    kernel: usize,
    pad: usize,
    grad: &[T],
    grads: &mut GradStore<T>,
) {
    let (geom, cout) = geometry(g.shape(x), g.shape(w), kernel, pad);
    let (m, k) = (geom.rows(), geom.cols());
    let x_needs = grads.slot(g, x).is_some();
    let w_needs = grads.slot(g, w).is_some();
    let col_owned;
    let col: &[T] = if geom.is_pointwise() {
        g.data(x)
    } else if w_needs {
        col_owned = im2col(g.data(x), geom);
        &col_owned
    } else {
        &[]
    };
    if w_needs {
        let gw = grads.slot(g, w).unwrap();
        T::gemm(k, m, cout, T::one(), col, 1, k as isize, grad, cout as isize, 1, T::one(), gw, cout as isize, 1);
    }
    if let Some(b) = b {
        if let Some(gb) = grads.slot(g, b) {
            for row in grad.chunks_exact(cout) {
                for (acc, d) in gb.iter_mut().zip(row) {
                    *acc = *acc + *d;
                }
            }
        }
    }
    if x_needs {
        let wv = g.data(w);
        let gx = grads.slot(g, x).unwrap();
        if geom.is_pointwise() {
            T::gemm(m, cout, k, T::one(), grad, cout as isize, 1, wv, 1, cout as isize, T::one(), gx, k as isize, 1);
        } else {
            let mut dcol = vec![T::zero(); m * k];
            T::gemm(m, cout, k, T::one(), grad, cout as isize, 1, wv, 1, cout as isize, T::zero(), &mut dcol, k as isize, 1);
            col2im_add(&dcol, geom, gx);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], shape: [usize; 4], w: &[f64], cout: usize, k: usize, pad: usize) -> Vec<f64> {
        let [b, h, wd, cin] = shape;
        let (ho, wo) = (h + 2 * pad + 1 - k, wd + 2 * pad + 1 - k);
        let mut out = vec![0.0; b * ho * wo * cout];
        for bi in 0..b {
            for yo in 0..ho {
                for xo in 0..wo {
                    for co in 0..cout {
                        let mut acc = 0.0;
                        for ky in 0..k {
                            for kx in 0..k {
                                let yi = yo as isize + ky as isize - pad as isize;
                                let xi = xo as isize + kx as isize - pad as isize;
                                if yi < 0 || xi < 0 || yi >= h as isize || xi >= wd as isize {
                                    continue;
                                }
                                for ci in 0..cin {
                                    let xv = x[((bi * h + yi as usize) * wd + xi as usize) * cin + ci];
                                    let wv = w[((ky * k + kx) * cin + ci) * cout + co];
                                    acc += xv * wv;
                                }
                            }
                        }
                        out[((bi * ho + yo) * wo + xo) * cout + co] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loops() {
        let shape = [2, 5, 4, 3];
        let x: Vec<f64> = (0..120).map(|i| ((i * 37 % 17) as f64 - 8.0) / 7.0).collect();
        let w: Vec<f64> = (0..9 * 3 * 2).map(|i| ((i * 13 % 11) as f64 - 5.0) / 5.0).collect();
        let mut g = Graph::<f64>::new();
        let xv = g.constant(Tensor::new(shape.to_vec(), x.clone()));
        let wv = g.constant(Tensor::new(vec![27, 2], w.clone()));
        let y = g.conv2d(xv, wv, None, 3, 1);
        let expect = naive_conv(&x, shape, &w, 2, 3, 1);
        assert_eq!(g.shape(y), &[2, 5, 4, 2]);
        for (a, b) in g.value(y).data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
