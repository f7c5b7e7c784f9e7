use xrds_autodiff::{Scalar, Tensor};

use crate::error::{Result, XrdsError};

/// Dense `channels x height x width` grid of `f32` values (CHW order).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(XrdsError::Dimension(format!(
                "feature map dims must be positive, got {channels}x{height}x{width}"
            )));
        }
        if values.len() != channels * height * width {
            return Err(XrdsError::Dimension(format!(
                "{} values for a {channels}x{height}x{width} map",
                values.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        assert!(channels > 0 && height > 0 && width > 0);
        Self {
            channels,
            height,
            width,
            values: vec![value; channels * height * width],
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut values = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    values.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            values,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.values[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let i = self.index(c, y, x);
        self.values[i] = v;
    }

    /// Channel plane `c` as a `height * width` slice.
    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.values[c * n..(c + 1) * n]
    }

    /// First non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.values.iter().position(|v| !v.is_finite())
    }

    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<Self> {
        if y0 + height > self.height || x0 + width > self.width || height == 0 || width == 0 {
            return Err(XrdsError::Dimension(format!(
                "crop {height}x{width} at ({y0}, {x0}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        Ok(Self::from_fn(self.channels, height, width, |c, y, x| {
            self.get(c, y0 + y, x0 + x)
        }))
    }

    /// Channels `start..start + count` as a new map.
    pub fn select_channels(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.channels || count == 0 {
            return Err(XrdsError::Dimension(format!(
                "channels {start}..{} out of {}",
                start + count,
                self.channels
            )));
        }
        let n = self.height * self.width;
        Self::new(
            count,
            self.height,
            self.width,
            self.values[start * n..(start + count) * n].to_vec(),
        )
    }

    /// Stack maps of identical dims along the channel axis.
    pub fn stack_channels(parts: &[&FeatureMap]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| XrdsError::Dimension("no maps to stack".into()))?;
        let mut values = Vec::new();
        let mut channels = 0;
        for p in parts {
            if p.height != first.height || p.width != first.width {
                return Err(XrdsError::Dimension("stacked maps differ in size".into()));
            }
            values.extend_from_slice(&p.values);
            channels += p.channels;
        }
        Self::new(channels, first.height, first.width, values)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|v| f(*v)).collect(),
        }
    }

    /// Single-image NHWC tensor `[1, H, W, C]`.
    pub fn to_nhwc<T: Scalar>(&self) -> Tensor<T> {
        Self::batch_to_nhwc(std::slice::from_ref(self))
    }

    /// Stack same-sized maps into an NHWC batch tensor.
    pub fn batch_to_nhwc<T: Scalar>(maps: &[FeatureMap]) -> Tensor<T> {
        let first = &maps[0];
        let (c, h, w) = first.dims();
        let mut data = Vec::with_capacity(maps.len() * c * h * w);
        for m in maps {
            assert_eq!(m.dims(), (c, h, w), "batch maps differ in shape");
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        data.push(T::from_f64(m.get(ch, y, x) as f64));
                    }
                }
            }
        }
        Tensor::new(vec![maps.len(), h, w, c], data)
    }

    /// Image `b` of an NHWC batch tensor.
    pub fn from_nhwc<T: Scalar>(t: &Tensor<T>, b: usize) -> Result<Self> {
        let s = t.shape();
        if s.len() != 4 || b >= s[0] {
            return Err(XrdsError::Dimension(format!("cannot take image {b} of {s:?}")));
        }
        let (h, w, c) = (s[1], s[2], s[3]);
        let base = b * h * w * c;
        let d = t.data();
        Ok(Self::from_fn(c, h, w, |ch, y, x| {
            d[base + (y * w + x) * c + ch].as_f64() as f32
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nhwc_round_trip() {
        let m = FeatureMap::from_fn(3, 2, 4, |c, y, x| (c * 100 + y * 10 + x) as f32);
        let t = m.to_nhwc::<f32>();
        assert_eq!(t.shape(), &[1, 2, 4, 3]);
        assert_eq!(t.data()[..3], [0.0, 100.0, 200.0]);
        assert_eq!(FeatureMap::from_nhwc(&t, 0).unwrap(), m);
    }

    #[test]
    fn crop_and_select() {
        let m = FeatureMap::from_fn(2, 4, 4, |c, y, x| (c * 100 + y * 10 + x) as f32);
        let c = m.crop(1, 2, 2, 2).unwrap();
        assert_eq!(c.values(), &[12.0, 13.0, 22.0, 23.0, 112.0, 113.0, 122.0, 123.0]);
        assert!(m.crop(3, 3, 2, 2).is_err());
        assert_eq!(m.select_channels(1, 1).unwrap().get(0, 3, 3), 133.0);
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(FeatureMap::new(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(FeatureMap::new(0, 2, 2, vec![]).is_err());
    }
}
