//! Reference implementations shared by the integration tests. Everything
//! here is written directly from the definitions, with plain loops and no
//! index maps from the library.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use xrds::nn::ParamStore;
use xrds_autodiff::{Scalar, Tensor};

/// Overwrites every parameter with `N(0, std)`-ish uniform noise so no
/// residual tail stays at zero.
pub fn randomize<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, std: f64) {
    let a = std * 3f64.sqrt();
    for t in store.tensors_mut() {
        for v in t.data_mut() {
            *v = T::from_f64(rng.gen_range(-a..a));
        }
    }
}

pub fn random_tensor<T: Scalar>(rng: &mut ChaCha8Rng, shape: Vec<usize>, amp: f64) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| T::from_f64(rng.gen_range(-amp..amp))).collect())
}

/// Mirror padding index without edge repetition.
pub fn mirror(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let p = 2 * (n - 1);
    let m = i % p;
    if m < n {
        m
    } else {
        p - m
    }
}

/// Window geometry written out by hand: the image is mirror-padded to
/// `hp x wp`, rolled so that padded row `(r + shift) % hp` lands on row `r`,
/// and cut into `window x window` tiles.
#[derive(Clone, Copy, Debug)]
pub struct Geometry {
    pub h: usize,
    pub w: usize,
    pub hp: usize,
    pub wp: usize,
    pub window: usize,
    pub shift: usize,
}

impl Geometry {
    pub fn new(h: usize, w: usize, window: usize, shift: usize) -> Self {
        let up = |n: usize| n.div_ceil(window) * window;
        Self {
            h,
            w,
            hp: up(h),
            wp: up(w),
            window,
            shift,
        }
    }

    /// Rolled-grid cells of the tile that contains rolled cell `(ry, rx)`.
    pub fn tile_cells(&self, ry: usize, rx: usize) -> Vec<(usize, usize)> {
        let (y0, x0) = (ry / self.window * self.window, rx / self.window * self.window);
        let mut v = Vec::new();
        for dy in 0..self.window {
            for dx in 0..self.window {
                v.push((y0 + dy, x0 + dx));
            }
        }
        v
    }

    /// Image pixel shown at rolled cell `(ry, rx)`.
    pub fn source(&self, ry: usize, rx: usize) -> (usize, usize) {
        let py = (ry + self.shift) % self.hp;
        let px = (rx + self.shift) % self.wp;
        (mirror(py, self.h), mirror(px, self.w))
    }

    /// Rolled cell holding image pixel `(y, x)`.
    pub fn rolled(&self, y: usize, x: usize) -> (usize, usize) {
        ((y + self.hp - self.shift) % self.hp, (x + self.wp - self.shift) % self.wp)
    }

    /// Region id of a rolled cell: which axes were wrapped around by the roll.
    /// Cells may only attend to cells with the same id.
    pub fn region(&self, ry: usize, rx: usize) -> (bool, bool) {
        if self.shift == 0 {
            return (false, false);
        }
        (ry + self.shift >= self.hp, rx + self.shift >= self.wp)
    }
}

/// `x [h*w*cin] (row-major, channels last) -> [h*w*cout]` with `weight[cin][cout]`.
fn affine(x: &[f64], cin: usize, weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let cout = bias.len();
    let mut out = Vec::with_capacity(x.len() / cin * cout);
    for row in x.chunks_exact(cin) {
        for o in 0..cout {
            let mut acc = bias[o];
            for (i, xi) in row.iter().enumerate() {
                acc += xi * weight[i * cout + o];
            }
            out.push(acc);
        }
    }
    out
}

/// Dense per-window attention for a single image `x [h, w, dim]` with
/// keys/values from `src [h, w, cs]`. Each projection is
/// `(weight [cin x width], bias [width], cin, column offset)` so packed
/// weights can be sliced. `pos_bias` is a `[(2w - 1)^2, heads]` table added
/// to the logits by relative offset within the window.
pub fn window_attention_oracle(
    x: &[f64],
    src: &[f64],
    dim: usize,
    heads: usize,
    geo: Geometry,
    q_w: (&[f64], &[f64], usize, usize),
    k_w: (&[f64], &[f64], usize, usize),
    v_w: (&[f64], &[f64], usize, usize),
    proj: (&[f64], &[f64]),
    pos_bias: Option<&[f64]>,
) -> Vec<f64> {
    let project = |input: &[f64], p: (&[f64], &[f64], usize, usize)| -> Vec<f64> {
        let (wt, b, cin, off) = p;
        let width = b.len();
        let full = affine(input, cin, wt, b);
        full.chunks_exact(width).flat_map(|r| r[off..off + dim].to_vec()).collect()
    };
    let q = project(x, q_w);
    let k = project(src, k_w);
    let v = project(src, v_w);
    let d = dim / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let mut merged = vec![0.0; geo.h * geo.w * dim];
    for y in 0..geo.h {
        for xx in 0..geo.w {
            let (ry, rx) = geo.rolled(y, xx);
            let me = geo.region(ry, rx);
            let cells = geo.tile_cells(ry, rx);
            let key_cells: Vec<(usize, usize)> =
                cells.into_iter().filter(|&(cy, cx)| geo.region(cy, cx) == me).collect();
            let keys: Vec<usize> = key_cells
                .iter()
                .map(|&(cy, cx)| {
                    let (sy, sx) = geo.source(cy, cx);
                    sy * geo.w + sx
                })
                .collect();
            let qi = (y * geo.w + xx) * dim;
            for hd in 0..heads {
                let logits: Vec<f64> = keys
                    .iter()
                    .zip(&key_cells)
                    .map(|(&kp, &(cy, cx))| {
                        let dot = (0..d).map(|j| q[qi + hd * d + j] * k[kp * dim + hd * d + j]).sum::<f64>();
                        let bias = pos_bias.map_or(0.0, |table| {
                            let span = 2 * geo.window - 1;
                            let dy = ry % geo.window + geo.window - 1 - cy % geo.window;
                            let dx = rx % geo.window + geo.window - 1 - cx % geo.window;
                            table[(dy * span + dx) * heads + hd]
                        });
                        dot * scale + bias
                    })
                    .collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for j in 0..d {
                    merged[qi + hd * d + j] = keys.iter().zip(&e).map(|(&kp, ei)| ei / z * v[kp * dim + hd * d + j]).sum();
                }
            }
        }
    }
    affine(&merged, dim, proj.0, proj.1)
}
