//! Loss, image metrics, sRGB encoding and the bicubic baseline.
//!
//! PSNR is measured on clamped sRGB values with peak 1; RelMSE on scene-linear
//! radiance with normalizer `hr^2 + eps`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data_io::check_scale;
use crate::error::{Result, XrdsError};
use crate::feature_map::FeatureMap;

pub const ROBUST_BETA: f64 = 0.1;
pub const RELMSE_EPS: f64 = 0.01;

fn same_shape(a: &FeatureMap, b: &FeatureMap) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(XrdsError::Dimension(format!(
            "image shapes differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Mean of `|d| / (beta + |d|)` over every entry.
pub fn robust_loss(sr: &FeatureMap, hr: &FeatureMap, beta: f64) -> Result<f64> {
    same_shape(sr, hr)?;
    if !(beta > 0.0) {
        return Err(XrdsError::Config(format!("robust loss beta must be positive, got {beta}")));
    }
    let total: f64 = sr
        .values()
        .iter()
        .zip(hr.values())
        .map(|(&a, &b)| {
            let d = (a as f64 - b as f64).abs();
            d / (beta + d)
        })
        .sum();
    Ok(total / sr.values().len() as f64)
}

/// sRGB transfer function applied after clamping to `[0, 1]`.
pub fn srgb_encode(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.0031308 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

pub fn linear_to_srgb(x: &FeatureMap) -> FeatureMap {
    x.map(|v| srgb_encode(v as f64) as f32)
}

fn mse_srgb(sr: &FeatureMap, hr: &FeatureMap) -> f64 {
    let total: f64 = sr
        .values()
        .iter()
        .zip(hr.values())
        .map(|(&a, &b)| {
            let d = srgb_encode(a as f64) - srgb_encode(b as f64);
            d * d
        })
        .sum();
    total / sr.values().len() as f64
}

/// `10 log10(1 / mse)`; infinite when the MSE is zero.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// PSNR in dB between sRGB encodings; `+inf` for identical images.
pub fn psnr_srgb(sr: &FeatureMap, hr: &FeatureMap) -> Result<f64> {
    same_shape(sr, hr)?;
    Ok(psnr_from_mse(mse_srgb(sr, hr)))
}

/// Mean of `(max(sr, 0) - hr)^2 / (hr^2 + eps)`.
pub fn relmse(sr: &FeatureMap, hr: &FeatureMap, eps: f64) -> Result<f64> {
    same_shape(sr, hr)?;
    if !(eps > 0.0) {
        return Err(XrdsError::Config(format!("relmse eps must be positive, got {eps}")));
    }
    let total: f64 = sr
        .values()
        .iter()
        .zip(hr.values())
        .map(|(&a, &b)| {
            let (a, b) = ((a as f64).max(0.0), b as f64);
            (a - b) * (a - b) / (b * b + eps)
        })
        .sum();
    Ok(total / sr.values().len() as f64)
}

/// Mean of per-image PSNRs; an unbounded entry makes the mean undefined.
pub fn mean_psnr(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(XrdsError::EmptySplit("no images to average".into()));
    }
    if values.iter().any(|v| v.is_infinite()) {
        return Err(XrdsError::UnboundedPsnr(
            "an image is identical to its reference; mean PSNR undefined".into(),
        ));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Catmull-Rom weights (`a = -0.5`) for taps at offsets `-1, 0, 1, 2` from
/// the floor sample, given the fractional phase `t` in `[0, 1)`.
pub fn cubic_weights(t: f64) -> [f64; 4] {
    const A: f64 = -0.5;
    let k = |x: f64| {
        let x = x.abs();
        if x <= 1.0 {
            ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
        } else if x < 2.0 {
            ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
        } else {
            0.0
        }
    };
    [k(1.0 + t), k(t), k(1.0 - t), k(2.0 - t)]
}

/// Taps along one axis: `(source index, weight)` per output position.
fn axis_taps(n_in: usize, s: usize) -> Vec<[(usize, f64); 4]> {
    (0..n_in * s)
        .map(|o| {
            let src = (o as f64 + 0.5) / s as f64 - 0.5;
            let base = src.floor();
            let w = cubic_weights(src - base);
            let mut taps = [(0, 0.0); 4];
            for (j, tap) in taps.iter_mut().enumerate() {
                let i = (base as isize + j as isize - 1).clamp(0, n_in as isize - 1) as usize;
                *tap = (i, w[j]);
            }
            taps
        })
        .collect()
}

/// Separable Catmull-Rom upsampling with edge replication and pixel-centre
/// (align-corners false) sampling.
pub fn bicubic_upsample(lr: &FeatureMap, s: usize) -> Result<FeatureMap> {
    check_scale(s)?;
    if s == 1 {
        return Err(XrdsError::Config("bicubic upsampling needs scale 2, 4 or 8".into()));
    }
    let (c, h, w) = lr.dims();
    let ty = axis_taps(h, s);
    let tx = axis_taps(w, s);
    let mut rows = vec![0.0f64; c * h * w * s];
    for ch in 0..c {
        for y in 0..h {
            for (x, taps) in tx.iter().enumerate() {
                rows[(ch * h + y) * w * s + x] = taps.iter().map(|&(i, wt)| wt * lr.get(ch, y, i) as f64).sum();
            }
        }
    }
    Ok(FeatureMap::from_fn(c, h * s, w * s, |ch, y, x| {
        ty[y].iter().map(|&(i, wt)| wt * rows[(ch * h + i) * w * s + x]).sum::<f64>() as f32
    }))
}

/// Equal-cost sample count: `spp_lr / s^2 + spp_aux`.
pub fn spp_average(spp_lr: u32, spp_aux: u32, s: usize) -> f64 {
    spp_lr as f64 / (s * s) as f64 + spp_aux as f64
}

/// `f64` that serializes `+inf` as the string `"inf"`.
mod psnr_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            Repr::Text("inf".into()).serialize(s)
        } else {
            Repr::Num(*v).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("invalid PSNR `{t}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportContext {
    pub scale: usize,
    pub spp_lr: u32,
    pub spp_aux: u32,
    pub spp_avg: f64,
    pub checkpoint: String,
    pub split: String,
    pub relmse_eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub image: String,
    pub method: String,
    /// `"inf"` in JSON when the prediction equals the reference.
    #[serde(with = "psnr_serde")]
    pub psnr_db: f64,
    pub relmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub images: usize,
    /// Mean of per-image PSNR; absent when any image is unbounded.
    pub mean_psnr_db: Option<f64>,
    /// PSNR of the MSE pooled over all images.
    #[serde(with = "psnr_serde")]
    pub pooled_psnr_db: f64,
    pub mean_relmse: f64,
    pub unbounded_images: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub context: ReportContext,
    pub rows: Vec<ImageMetrics>,
    pub aggregates: Vec<Aggregate>,
}

/// Accumulates per-image rows, then summarizes each method in insertion order.
#[derive(Clone, Debug)]
pub struct ReportBuilder {
    context: ReportContext,
    rows: Vec<ImageMetrics>,
    sq_errors: Vec<(String, f64, usize)>,
}

impl ReportBuilder {
    pub fn new(context: ReportContext) -> Self {
        Self {
            context,
            rows: Vec::new(),
            sq_errors: Vec::new(),
        }
    }

    pub fn add(&mut self, image: &str, method: &str, sr: &FeatureMap, hr: &FeatureMap) -> Result<()> {
        same_shape(sr, hr)?;
        let mse = mse_srgb(sr, hr);
        self.rows.push(ImageMetrics {
            image: image.to_string(),
            method: method.to_string(),
            psnr_db: psnr_from_mse(mse),
            relmse: relmse(sr, hr, self.context.relmse_eps)?,
        });
        let n = sr.values().len();
        match self.sq_errors.iter_mut().find(|(m, _, _)| m == method) {
            Some(entry) => {
                entry.1 += mse * n as f64;
                entry.2 += n;
            }
            None => self.sq_errors.push((method.to_string(), mse * n as f64, n)),
        }
        Ok(())
    }

    pub fn finish(self) -> MetricsReport {
        let aggregates = self
            .sq_errors
            .iter()
            .map(|(method, sq, n)| {
                let rows: Vec<&ImageMetrics> = self.rows.iter().filter(|r| &r.method == method).collect();
                let psnrs: Vec<f64> = rows.iter().map(|r| r.psnr_db).collect();
                Aggregate {
                    method: method.clone(),
                    images: rows.len(),
                    mean_psnr_db: mean_psnr(&psnrs).ok(),
                    pooled_psnr_db: psnr_from_mse(sq / *n as f64),
                    mean_relmse: rows.iter().map(|r| r.relmse).sum::<f64>() / rows.len() as f64,
                    unbounded_images: psnrs.iter().filter(|v| v.is_infinite()).count(),
                }
            })
            .collect();
        MetricsReport {
            context: self.context,
            rows: self.rows,
            aggregates,
        }
    }
}

fn fmt_psnr(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.3}")
    }
}

impl MetricsReport {
    pub fn aggregate(&self, method: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.method == method)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Aligned plain-text table: per-image rows, then one mean row per method.
    pub fn to_table(&self) -> String {
        let c = &self.context;
        let spp = format!("{:.3}", c.spp_avg);
        let mut lines: Vec<[String; 5]> = vec![[
            "image".into(),
            "method".into(),
            "psnr_db".into(),
            "relmse".into(),
            "spp_avg".into(),
        ]];
        for r in &self.rows {
            lines.push([
                r.image.clone(),
                r.method.clone(),
                fmt_psnr(r.psnr_db),
                format!("{:.6}", r.relmse),
                spp.clone(),
            ]);
        }
        for a in &self.aggregates {
            lines.push([
                format!("mean ({} images)", a.images),
                a.method.clone(),
                a.mean_psnr_db.map_or_else(|| "inf".into(), |v| format!("{v:.3}")),
                format!("{:.6}", a.mean_relmse),
                spp.clone(),
            ]);
        }
        let widths: Vec<usize> = (0..5).map(|i| lines.iter().map(|l| l[i].len()).max().unwrap()).collect();
        let mut out = format!(
            "split={} scale={} spp_lr={} spp_aux={} spp_avg={} checkpoint={}\n",
            c.split, c.scale, c.spp_lr, c.spp_aux, spp, c.checkpoint
        );
        for (k, l) in lines.iter().enumerate() {
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (cell, w))| if i < 2 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
            if k == 0 {
                let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 8));
            }
        }
        out
    }
}
