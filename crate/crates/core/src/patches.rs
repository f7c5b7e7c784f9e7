use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xrds_autodiff::{Scalar, Tensor};

use crate::data_io::RenderingSample;
use crate::error::{Result, XrdsError};
use crate::feature_map::FeatureMap;

/// Aligned training crops. `hr` and `aux` are `p x p`; `lr` is `p/s x p/s`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchBatch {
    pub patch: usize,
    pub scale: usize,
    pub lr: Vec<FeatureMap>,
    pub aux: Vec<FeatureMap>,
    pub hr: Vec<FeatureMap>,
    /// Low-resolution crop origins `(y, x)`; the high-resolution origin is `scale` times this.
    pub origins: Vec<(usize, usize)>,
}

impl PatchBatch {
    pub fn len(&self) -> usize {
        self.lr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lr.is_empty()
    }

    /// Concatenates batches that share patch size and scale.
    pub fn extend(&mut self, other: PatchBatch) {
        assert_eq!((self.patch, self.scale), (other.patch, other.scale));
        self.lr.extend(other.lr);
        self.aux.extend(other.aux);
        self.hr.extend(other.hr);
        self.origins.extend(other.origins);
    }

    pub fn lr_tensor<T: Scalar>(&self) -> Tensor<T> {
        FeatureMap::batch_to_nhwc(&self.lr)
    }

    pub fn aux_tensor<T: Scalar>(&self) -> Tensor<T> {
        FeatureMap::batch_to_nhwc(&self.aux)
    }

    pub fn hr_tensor<T: Scalar>(&self) -> Tensor<T> {
        FeatureMap::batch_to_nhwc(&self.hr)
    }
}

/// Cuts `count` random aligned crops of high-resolution size `p` from `sample`.
///
/// Origins are uniform over every valid low-resolution position and fully
/// determined by `seed`.
pub fn extract_patches(sample: &RenderingSample, p: usize, count: usize, seed: u64) -> Result<PatchBatch> {
    let s = sample.scale;
    if p == 0 || !p.is_multiple_of(s) {
        return Err(XrdsError::Config(format!("patch size {p} is not a positive multiple of scale {s}")));
    }
    let hr = sample
        .hr_rgb
        .as_ref()
        .ok_or_else(|| XrdsError::Dimension("sample has no hr_rgb plane to crop".into()))?;
    let (h, w) = (sample.hr_height(), sample.hr_width());
    if h < p || w < p {
        return Err(XrdsError::Dimension(format!("image {h}x{w} is smaller than patch {p}")));
    }
    let lp = p / s;
    let (max_y, max_x) = (sample.lr_rgb.height() - lp, sample.lr_rgb.width() - lp);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch = PatchBatch {
        patch: p,
        scale: s,
        lr: Vec::with_capacity(count),
        aux: Vec::with_capacity(count),
        hr: Vec::with_capacity(count),
        origins: Vec::with_capacity(count),
    };
    for _ in 0..count {
        let oy = rng.gen_range(0..=max_y);
        let ox = rng.gen_range(0..=max_x);
        batch.lr.push(sample.lr_rgb.crop(oy, ox, lp, lp)?);
        batch.aux.push(sample.aux.crop(oy * s, ox * s, p, p)?);
        batch.hr.push(hr.crop(oy * s, ox * s, p, p)?);
        batch.origins.push((oy, ox));
    }
    Ok(batch)
}
