//! On-disk rendering bundles.
//!
//! A sample is a directory holding one raw little-endian `f32` file per plane
//! (CHW order) plus a `meta.json` sidecar:
//!
//! ```text
//! <sample>/meta.json
//! <sample>/lr_rgb.f32    3 x H/s x W/s
//! <sample>/aux.f32       6 x H x W   (albedo R,G,B then normal X,Y,Z)
//! <sample>/hr_rgb.f32    3 x H x W   (optional)
//! ```
//!
//! Normals are camera-space and stored exactly as rendered (not renormalized).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, XrdsError};
use crate::feature_map::FeatureMap;

pub const SCHEMA_VERSION: u32 = 1;
pub const META_FILE: &str = "meta.json";
pub const LR_PLANE: &str = "lr_rgb";
pub const AUX_PLANE: &str = "aux";
pub const HR_PLANE: &str = "hr_rgb";

pub const RGB_CHANNELS: [&str; 3] = ["R", "G", "B"];
pub const AUX_CHANNELS: [&str; 6] = [
    "albedo.R", "albedo.G", "albedo.B", "normal.X", "normal.Y", "normal.Z",
];

pub const SUPPORTED_SCALES: [usize; 4] = [1, 2, 4, 8];

/// One scene's rendering bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderingSample {
    pub lr_rgb: FeatureMap,
    pub aux: FeatureMap,
    pub hr_rgb: Option<FeatureMap>,
    pub spp_lr: u32,
    pub spp_aux: u32,
    pub scale: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SampleMeta {
    pub schema_version: u32,
    pub height: usize,
    pub width: usize,
    pub scale: usize,
    pub spp_lr: u32,
    pub spp_aux: u32,
    pub channels: BTreeMap<String, Vec<String>>,
}

pub fn check_scale(scale: usize) -> Result<()> {
    if SUPPORTED_SCALES.contains(&scale) {
        Ok(())
    } else {
        Err(XrdsError::Config(format!(
            "scale must be one of {SUPPORTED_SCALES:?}, got {scale}"
        )))
    }
}

fn check_finite(plane: &str, map: &FeatureMap) -> Result<()> {
    match map.first_non_finite() {
        Some(index) => Err(XrdsError::NonFinite {
            plane: plane.to_string(),
            index,
        }),
        None => Ok(()),
    }
}

fn check_range(plane: &str, values: &[f32], offset: usize, min: f32, max: f32) -> Result<()> {
    for (i, &v) in values.iter().enumerate() {
        if v < min || v > max {
            return Err(XrdsError::OutOfRange {
                plane: plane.to_string(),
                index: offset + i,
                value: v,
                min,
                max,
            });
        }
    }
    Ok(())
}

impl RenderingSample {
    /// Checks every bundle invariant: channel counts, scale-consistent dims,
    /// finiteness and the albedo/normal value ranges.
    pub fn validate(&self) -> Result<()> {
        check_scale(self.scale)?;
        if self.spp_lr == 0 || self.spp_aux == 0 {
            return Err(XrdsError::Config("spp values must be positive".into()));
        }
        if self.lr_rgb.channels() != 3 {
            return Err(XrdsError::Dimension(format!(
                "lr_rgb must have 3 channels, has {}",
                self.lr_rgb.channels()
            )));
        }
        if self.aux.channels() != 6 {
            return Err(XrdsError::Dimension(format!(
                "aux must have 6 channels, has {}",
                self.aux.channels()
            )));
        }
        let (s, lh, lw) = (self.scale, self.lr_rgb.height(), self.lr_rgb.width());
        if self.aux.height() != s * lh || self.aux.width() != s * lw {
            return Err(XrdsError::Dimension(format!(
                "aux is {}x{} but scale {s} x lr {lh}x{lw} requires {}x{}",
                self.aux.height(),
                self.aux.width(),
                s * lh,
                s * lw
            )));
        }
        if let Some(hr) = &self.hr_rgb {
            if hr.channels() != 3 || hr.height() != self.aux.height() || hr.width() != self.aux.width() {
                return Err(XrdsError::Dimension(format!(
                    "hr_rgb is {:?}, expected 3x{}x{}",
                    hr.dims(),
                    self.aux.height(),
                    self.aux.width()
                )));
            }
            check_finite(HR_PLANE, hr)?;
        }
        check_finite(LR_PLANE, &self.lr_rgb)?;
        check_finite(AUX_PLANE, &self.aux)?;
        let n = self.aux.height() * self.aux.width();
        let aux = self.aux.values();
        check_range(AUX_PLANE, &aux[..3 * n], 0, 0.0, 1.0)?;
        check_range(AUX_PLANE, &aux[3 * n..], 3 * n, -1.0, 1.0)?;
        Ok(())
    }

    pub fn hr_height(&self) -> usize {
        self.aux.height()
    }

    pub fn hr_width(&self) -> usize {
        self.aux.width()
    }

    pub fn albedo(&self) -> FeatureMap {
        self.aux.select_channels(0, 3).expect("aux has 6 channels")
    }

    pub fn normal(&self) -> FeatureMap {
        self.aux.select_channels(3, 3).expect("aux has 6 channels")
    }

    pub fn meta(&self) -> SampleMeta {
        let names = |c: &[&str]| c.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let mut channels = BTreeMap::new();
        channels.insert(LR_PLANE.to_string(), names(&RGB_CHANNELS));
        channels.insert(AUX_PLANE.to_string(), names(&AUX_CHANNELS));
        if self.hr_rgb.is_some() {
            channels.insert(HR_PLANE.to_string(), names(&RGB_CHANNELS));
        }
        SampleMeta {
            schema_version: SCHEMA_VERSION,
            height: self.hr_height(),
            width: self.hr_width(),
            scale: self.scale,
            spp_lr: self.spp_lr,
            spp_aux: self.spp_aux,
            channels,
        }
    }
}

/// Raw little-endian bytes of a map's values.
pub fn encode_plane(map: &FeatureMap) -> Vec<u8> {
    map.values().iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| XrdsError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| XrdsError::io(path, e))
}

/// Writes `sample` into directory `dir`, creating it if necessary.
pub fn save_sample(sample: &RenderingSample, dir: &Path) -> Result<()> {
    sample.validate()?;
    fs::create_dir_all(dir).map_err(|e| XrdsError::io(dir, e))?;
    write_atomic(&dir.join(format!("{LR_PLANE}.f32")), &encode_plane(&sample.lr_rgb))?;
    write_atomic(&dir.join(format!("{AUX_PLANE}.f32")), &encode_plane(&sample.aux))?;
    let hr_path = dir.join(format!("{HR_PLANE}.f32"));
    match &sample.hr_rgb {
        Some(hr) => write_atomic(&hr_path, &encode_plane(hr))?,
        None => {
            if hr_path.exists() {
                fs::remove_file(&hr_path).map_err(|e| XrdsError::io(&hr_path, e))?;
            }
        }
    }
    let meta = serde_json::to_vec_pretty(&sample.meta())?;
    // meta last: a directory is only loadable once every plane is in place
    write_atomic(&dir.join(META_FILE), &meta)
}

fn read_plane(dir: &Path, plane: &str, channels: usize, height: usize, width: usize) -> Result<FeatureMap> {
    let path = dir.join(format!("{plane}.f32"));
    let bytes = fs::read(&path).map_err(|e| XrdsError::io(&path, e))?;
    let expected = (channels * height * width * 4) as u64;
    if bytes.len() as u64 != expected {
        return Err(XrdsError::PayloadSize {
            plane: plane.to_string(),
            path,
            expected,
            found: bytes.len() as u64,
        });
    }
    let values = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    FeatureMap::new(channels, height, width, values)
}

pub fn read_meta(dir: &Path) -> Result<SampleMeta> {
    let path = dir.join(META_FILE);
    let text = fs::read(&path).map_err(|e| XrdsError::io(&path, e))?;
    let meta: SampleMeta = serde_json::from_slice(&text).map_err(|e| XrdsError::Metadata {
        path: path.clone(),
        message: e.to_string(),
    })?;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(XrdsError::Metadata {
            path,
            message: format!("unsupported schema_version {}", meta.schema_version),
        });
    }
    check_scale(meta.scale)?;
    if !meta.height.is_multiple_of(meta.scale) || !meta.width.is_multiple_of(meta.scale) {
        return Err(XrdsError::Metadata {
            path,
            message: format!("{}x{} not divisible by scale {}", meta.height, meta.width, meta.scale),
        });
    }
    for (plane, want) in [(LR_PLANE, 3), (AUX_PLANE, 6)] {
        let n = meta.channels.get(plane).map(Vec::len);
        if n != Some(want) {
            return Err(XrdsError::Metadata {
                path: path.clone(),
                message: format!("plane `{plane}` must list {want} channels"),
            });
        }
    }
    Ok(meta)
}

/// Loads and validates a sample directory written by [`save_sample`].
pub fn load_sample(dir: &Path) -> Result<RenderingSample> {
    let meta = read_meta(dir)?;
    let (h, w, s) = (meta.height, meta.width, meta.scale);
    let lr_rgb = read_plane(dir, LR_PLANE, 3, h / s, w / s)?;
    let aux = read_plane(dir, AUX_PLANE, 6, h, w)?;
    let hr_rgb = if meta.channels.contains_key(HR_PLANE) {
        Some(read_plane(dir, HR_PLANE, 3, h, w)?)
    } else {
        None
    };
    let sample = RenderingSample {
        lr_rgb,
        aux,
        hr_rgb,
        spp_lr: meta.spp_lr,
        spp_aux: meta.spp_aux,
        scale: s,
    };
    sample.validate()?;
    Ok(sample)
}

/// Location of a sample relative to its manifest.
pub fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
