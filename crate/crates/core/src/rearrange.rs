//! Lossless spatial rearrangements: space-to-depth (deshuffle), depth-to-space
//! (pixel shuffle) and window partitioning with cyclic shift.
//!
//! Each rearrangement is described once as an NHWC gather index so that the
//! [`FeatureMap`] helpers and the differentiable graph ops share one definition.
//!
//! Channel convention for a factor `f`: deshuffled channel `c*f*f + dy*f + dx`
//! at `(y, x)` holds input channel `c` at `(y*f + dy, x*f + dx)`.

use std::rc::Rc;

use xrds_autodiff::{Graph, Scalar, Tensor, Var};

use crate::error::{Result, XrdsError};
use crate::feature_map::FeatureMap;

/// Additive logit used for forbidden token pairs.
pub const MASK_NEG: f64 = -1e9;

fn nhwc(b: usize, h: usize, w: usize, c: usize, y: usize, x: usize, ch: usize) -> u32 {
    debug_assert!(y < h && x < w && ch < c);
    (((b * h + y) * w + x) * c + ch) as u32
}

/// Gather index for deshuffle of an NHWC `[b, h, w, c]` tensor by `f`.
pub fn deshuffle_index(b: usize, h: usize, w: usize, c: usize, f: usize) -> Vec<u32> {
    let (ho, wo, co) = (h / f, w / f, c * f * f);
    let mut idx = Vec::with_capacity(b * ho * wo * co);
    for bi in 0..b {
        for y in 0..ho {
            for x in 0..wo {
                for ch in 0..c {
                    for dy in 0..f {
                        for dx in 0..f {
                            idx.push(nhwc(bi, h, w, c, y * f + dy, x * f + dx, ch));
                        }
                    }
                }
            }
        }
    }
    idx
}

/// Gather index for pixel shuffle of an NHWC `[b, h, w, c*f*f]` tensor by `f`.
pub fn pixel_shuffle_index(b: usize, h: usize, w: usize, c_in: usize, f: usize) -> Vec<u32> {
    let c = c_in / (f * f);
    let (ho, wo) = (h * f, w * f);
    let mut idx = Vec::with_capacity(b * ho * wo * c);
    for bi in 0..b {
        for y in 0..ho {
            for x in 0..wo {
                for ch in 0..c {
                    let src_c = ch * f * f + (y % f) * f + (x % f);
                    idx.push(nhwc(bi, h, w, c_in, y / f, x / f, src_c));
                }
            }
        }
    }
    idx
}

fn apply_index(map: &FeatureMap, index: &[u32], out: (usize, usize, usize)) -> FeatureMap {
    let src = map.to_nhwc::<f32>();
    let data: Vec<f32> = index.iter().map(|&i| src.data()[i as usize]).collect();
    let t = Tensor::new(vec![1, out.1, out.2, out.0], data);
    FeatureMap::from_nhwc(&t, 0).expect("shape computed above")
}

/// Space-to-depth by factor `f`: `C x H x W -> C*f*f x H/f x W/f`.
pub fn deshuffle(map: &FeatureMap, f: usize) -> Result<FeatureMap> {
    let (c, h, w) = map.dims();
    if f == 0 || h % f != 0 || w % f != 0 {
        return Err(XrdsError::Dimension(format!("{h}x{w} not divisible by deshuffle factor {f}")));
    }
    Ok(apply_index(map, &deshuffle_index(1, h, w, c, f), (c * f * f, h / f, w / f)))
}

/// Depth-to-space by factor `f`: `C*f*f x H x W -> C x H*f x W*f`.
pub fn pixel_shuffle(map: &FeatureMap, f: usize) -> Result<FeatureMap> {
    let (c, h, w) = map.dims();
    if f == 0 || c % (f * f) != 0 {
        return Err(XrdsError::Dimension(format!("{c} channels not divisible by {f}^2")));
    }
    Ok(apply_index(map, &pixel_shuffle_index(1, h, w, c, f), (c / (f * f), h * f, w * f)))
}

pub fn deshuffle_var<T: Scalar>(g: &mut Graph<T>, x: Var, f: usize) -> Result<Var> {
    if f == 1 {
        return Ok(x);
    }
    let s = g.shape(x).to_vec();
    let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
    if h % f != 0 || w % f != 0 {
        return Err(XrdsError::Dimension(format!("{h}x{w} not divisible by deshuffle factor {f}")));
    }
    let idx = Rc::new(deshuffle_index(b, h, w, c, f));
    Ok(g.gather(x, idx, vec![b, h / f, w / f, c * f * f]))
}

pub fn pixel_shuffle_var<T: Scalar>(g: &mut Graph<T>, x: Var, f: usize) -> Result<Var> {
    if f == 1 {
        return Ok(x);
    }
    let s = g.shape(x).to_vec();
    let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
    if c % (f * f) != 0 {
        return Err(XrdsError::Dimension(format!("{c} channels not divisible by {f}^2")));
    }
    let idx = Rc::new(pixel_shuffle_index(b, h, w, c, f));
    Ok(g.gather(x, idx, vec![b, h * f, w * f, c / (f * f)]))
}

/// Mirror index into `0..n` without repeating the edge sample.
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Window layout of an `h x w` grid: reflect padding to the next multiple of
/// `window`, cyclic shift by `shift`, then row-major windows of row-major tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowGrid {
    pub height: usize,
    pub width: usize,
    pub padded_height: usize,
    pub padded_width: usize,
    pub window: usize,
    pub shift: usize,
}

impl WindowGrid {
    pub fn new(height: usize, width: usize, window: usize, shift: usize) -> Result<Self> {
        if window == 0 || height == 0 || width == 0 {
            return Err(XrdsError::Dimension("window and grid must be non-empty".into()));
        }
        if shift >= window {
            return Err(XrdsError::Config(format!("shift {shift} must be below window {window}")));
        }
        let round = |n: usize| n.div_ceil(window) * window;
        Ok(Self {
            height,
            width,
            padded_height: round(height),
            padded_width: round(width),
            window,
            shift,
        })
    }

    pub fn windows_y(&self) -> usize {
        self.padded_height / self.window
    }

    pub fn windows_x(&self) -> usize {
        self.padded_width / self.window
    }

    pub fn num_windows(&self) -> usize {
        self.windows_y() * self.windows_x()
    }

    pub fn tokens(&self) -> usize {
        self.window * self.window
    }

    /// Position in the padded grid of token `t` of window `win`.
    pub fn padded_position(&self, win: usize, t: usize) -> (usize, usize) {
        let (wy, wx) = (win / self.windows_x(), win % self.windows_x());
        let (ty, tx) = (t / self.window, t % self.window);
        let sy = wy * self.window + ty;
        let sx = wx * self.window + tx;
        ((sy + self.shift) % self.padded_height, (sx + self.shift) % self.padded_width)
    }

    /// Source pixel in the unpadded image of token `t` of window `win`.
    pub fn source_pixel(&self, win: usize, t: usize) -> (usize, usize) {
        let (py, px) = self.padded_position(win, t);
        (reflect(py as isize, self.height), reflect(px as isize, self.width))
    }

    /// `(window, token)` holding unpadded pixel `(y, x)`.
    pub fn slot_of(&self, y: usize, x: usize) -> (usize, usize) {
        let sy = (y + self.padded_height - self.shift) % self.padded_height;
        let sx = (x + self.padded_width - self.shift) % self.padded_width;
        let win = (sy / self.window) * self.windows_x() + sx / self.window;
        (win, (sy % self.window) * self.window + sx % self.window)
    }

    /// `[b, h, w, c] -> [b * windows, tokens, c]`.
    pub fn partition_index(&self, b: usize, c: usize) -> Vec<u32> {
        let (nw, n) = (self.num_windows(), self.tokens());
        let mut idx = Vec::with_capacity(b * nw * n * c);
        for bi in 0..b {
            for win in 0..nw {
                for t in 0..n {
                    let (y, x) = self.source_pixel(win, t);
                    for ch in 0..c {
                        idx.push(nhwc(bi, self.height, self.width, c, y, x, ch));
                    }
                }
            }
        }
        idx
    }

    /// `[b * windows, tokens, c] -> [b, h, w, c]`, dropping padded tokens.
    pub fn reverse_index(&self, b: usize, c: usize) -> Vec<u32> {
        let (nw, n) = (self.num_windows(), self.tokens());
        let mut idx = Vec::with_capacity(b * self.height * self.width * c);
        for bi in 0..b {
            for y in 0..self.height {
                for x in 0..self.width {
                    let (win, t) = self.slot_of(y, x);
                    let base = ((bi * nw + win) * n + t) * c;
                    for ch in 0..c {
                        idx.push((base + ch) as u32);
                    }
                }
            }
        }
        idx
    }

    /// Shifted-window mask `[windows, tokens, tokens]`: 0 for pairs drawn from
    /// the same region of the padded grid, [`MASK_NEG`] for pairs that were only
    /// brought together by the cyclic wrap. `None` when unshifted.
    pub fn mask<T: Scalar>(&self) -> Option<Vec<T>> {
        if self.shift == 0 {
            return None;
        }
        let region = |p: usize, len: usize| -> usize {
            if p < len - self.window {
                0
            } else if p < len - self.shift {
                1
            } else {
                2
            }
        };
        let (nw, n) = (self.num_windows(), self.tokens());
        let mut out = Vec::with_capacity(nw * n * n);
        for win in 0..nw {
            let ids: Vec<usize> = (0..n)
                .map(|t| {
                    let (wy, wx) = (win / self.windows_x(), win % self.windows_x());
                    let sy = wy * self.window + t / self.window;
                    let sx = wx * self.window + t % self.window;
                    region(sy, self.padded_height) * 3 + region(sx, self.padded_width)
                })
                .collect();
            for i in 0..n {
                for j in 0..n {
                    out.push(if ids[i] == ids[j] { T::zero() } else { T::from_f64(MASK_NEG) });
                }
            }
        }
        Some(out)
    }
}

/// Windows cut from a single feature map: `windows[w][t * c + ch]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Windows {
    pub grid: WindowGrid,
    pub channels: usize,
    pub windows: Vec<Vec<f32>>,
}

/// Partitions `map` into `window x window` token windows (no shift), reflect
/// padding when the grid is not a window multiple.
pub fn window_partition(map: &FeatureMap, window: usize) -> Result<Windows> {
    window_partition_shifted(map, window, 0)
}

pub fn window_partition_shifted(map: &FeatureMap, window: usize, shift: usize) -> Result<Windows> {
    let (c, h, w) = map.dims();
    let grid = WindowGrid::new(h, w, window, shift)?;
    let src = map.to_nhwc::<f32>();
    let idx = grid.partition_index(1, c);
    let per = grid.tokens() * c;
    let windows = idx
        .chunks_exact(per)
        .map(|chunk| chunk.iter().map(|&i| src.data()[i as usize]).collect())
        .collect();
    Ok(Windows {
        grid,
        channels: c,
        windows,
    })
}

/// Inverse of [`window_partition`]: reassembles and crops to the original size.
pub fn window_reverse(windows: &Windows) -> Result<FeatureMap> {
    let g = windows.grid;
    let c = windows.channels;
    let flat: Vec<f32> = windows.windows.iter().flatten().copied().collect();
    if flat.len() != g.num_windows() * g.tokens() * c {
        return Err(XrdsError::Dimension("window payload does not match its grid".into()));
    }
    let data = g.reverse_index(1, c).iter().map(|&i| flat[i as usize]).collect();
    FeatureMap::from_nhwc(&Tensor::new(vec![1, g.height, g.width, c], data), 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deshuffle_two_by_two() {
        let m = FeatureMap::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let d = deshuffle(&m, 2).unwrap();
        assert_eq!(d.dims(), (4, 1, 1));
        assert_eq!(d.values(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(pixel_shuffle(&d, 2).unwrap(), m);
    }

    #[test]
    fn deshuffle_channel_convention() {
        let m = FeatureMap::from_fn(2, 4, 6, |c, y, x| (c * 100 + y * 10 + x) as f32);
        let d = deshuffle(&m, 2).unwrap();
        for c in 0..2 {
            for y in 0..2 {
                for x in 0..3 {
                    for dy in 0..2 {
                        for dx in 0..2 {
                            assert_eq!(d.get(c * 4 + dy * 2 + dx, y, x), m.get(c, y * 2 + dy, x * 2 + dx));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn factor_one_is_identity() {
        let m = FeatureMap::from_fn(3, 5, 7, |c, y, x| (c + y * x) as f32);
        assert_eq!(deshuffle(&m, 1).unwrap(), m);
        assert_eq!(pixel_shuffle(&m, 1).unwrap(), m);
    }

    #[test]
    fn deshuffle_rejects_indivisible() {
        let m = FeatureMap::zeros(1, 6, 4);
        assert!(deshuffle(&m, 4).is_err());
    }

    #[test]
    fn partition_four_by_four() {
        let m = FeatureMap::from_fn(1, 4, 4, |_, y, x| (y * 4 + x) as f32);
        let w = window_partition(&m, 2).unwrap();
        assert_eq!(w.windows.len(), 4);
        assert_eq!(w.windows[0], vec![0.0, 1.0, 4.0, 5.0]);
        assert_eq!(w.windows[3], vec![10.0, 11.0, 14.0, 15.0]);
        assert_eq!(window_reverse(&w).unwrap(), m);
    }

    #[test]
    fn partition_pads_five_by_five() {
        let m = FeatureMap::from_fn(2, 5, 5, |c, y, x| (c * 25 + y * 5 + x) as f32);
        let w = window_partition(&m, 4).unwrap();
        assert_eq!((w.grid.padded_height, w.grid.padded_width), (8, 8));
        assert_eq!((w.grid.height, w.grid.width), (5, 5));
        assert_eq!(w.windows.len(), 4);
        assert_eq!(window_reverse(&w).unwrap(), m);
    }

    #[test]
    fn reflect_index() {
        let got: Vec<usize> = (-3..9).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1, 2]);
        assert_eq!(reflect(5, 1), 0);
    }

    #[test]
    fn unshifted_grid_has_no_mask() {
        assert!(WindowGrid::new(8, 8, 4, 0).unwrap().mask::<f32>().is_none());
    }
}
