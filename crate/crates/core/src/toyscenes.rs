//! Procedural stand-in for a path tracer.
//!
//! A scene is a textured, bumpy plane lit by one directional light. Albedo is
//! multi-octave value noise thresholded into hard-edged patches; normals come
//! from a sum of Gaussian bumps (camera space, `+z` towards the viewer);
//! radiance adds a Blinn-Phong highlight whose strength follows a hidden
//! field that no auxiliary buffer exposes. Monte Carlo noise is modelled as
//! luminance-dependent Gaussian noise with variance `~ 1/spp`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data_io::{check_scale, save_sample, RenderingSample};
use crate::error::{Result, XrdsError};
use crate::feature_map::FeatureMap;

/// Noise amplitude `k` of the radiance estimator.
pub const NOISE_K: f64 = 0.25;
/// Luminance floor inside the noise law.
pub const NOISE_EPS: f64 = 1e-4;
/// Aux buffers converge faster: their noise uses `AUX_NOISE_FACTOR * k`.
pub const AUX_NOISE_FACTOR: f64 = 0.1;
/// `spp_aux` at or above this renders noise-free (reference) aux buffers.
pub const AUX_REFERENCE_SPP: u32 = 4000;
/// Fraction of pixels turned into fireflies when enabled.
pub const FIREFLY_RATE: f64 = 1e-4;
pub const FIREFLY_GAIN: f32 = 10.0;
pub const MANIFEST_FILE: &str = "manifest.json";

const STREAM_ALBEDO: u64 = 11;
const STREAM_TINT: u64 = 12;
const STREAM_BUMPS: u64 = 13;
const STREAM_GLOSS: u64 = 14;
const STREAM_LR_NOISE: u64 = 1;
const STREAM_AUX_NOISE: u64 = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModel {
    #[default]
    GaussianShot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    /// Albedo texture octaves; 0 gives a constant albedo.
    pub octaves: usize,
    /// Gaussian bumps in the height field; 0 gives a flat surface.
    pub bumps: usize,
    /// Unit direction towards the light.
    pub light: [f64; 3],
    pub noise: NoiseModel,
    /// Inject rare 10x outliers into noisy renders.
    pub fireflies: bool,
}

impl Default for SceneSpec {
    fn default() -> Self {
        let l = [0.4f64, 0.5, 0.768];
        let n = (l[0] * l[0] + l[1] * l[1] + l[2] * l[2]).sqrt();
        Self {
            seed: 0,
            height: 128,
            width: 128,
            octaves: 5,
            bumps: 24,
            light: [l[0] / n, l[1] / n, l[2] / n],
            noise: NoiseModel::GaussianShot,
            fireflies: false,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(8) || !self.width.is_multiple_of(8) {
            return Err(XrdsError::Config(format!(
                "scene resolution {}x{} must be positive multiples of 8",
                self.height, self.width
            )));
        }
        let norm = self.light.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
            return Err(XrdsError::Config(format!("light direction must be a unit vector, |l| = {norm}")));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Value noise on a lattice with spacing `cell` pixels, smoothly interpolated, in `[0, 1]`.
struct ValueNoise {
    cell: f64,
    cols: usize,
    lattice: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, height: usize, width: usize, cell: f64) -> Self {
        let rows = (height as f64 / cell).ceil() as usize + 2;
        let cols = (width as f64 / cell).ceil() as usize + 2;
        let lattice = (0..rows * cols).map(|_| rng.gen::<f64>()).collect();
        Self { cell, cols, lattice }
    }

    fn at(&self, y: usize, x: usize) -> f64 {
        let fy = (y as f64 + 0.5) / self.cell;
        let fx = (x as f64 + 0.5) / self.cell;
        let (iy, ix) = (fy.floor() as usize, fx.floor() as usize);
        let (ty, tx) = (smoothstep(fy - iy as f64), smoothstep(fx - ix as f64));
        let v = |r: usize, c: usize| self.lattice[r * self.cols + c];
        let top = v(iy, ix) * (1.0 - tx) + v(iy, ix + 1) * tx;
        let bottom = v(iy + 1, ix) * (1.0 - tx) + v(iy + 1, ix + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

/// Octave noise; octave `o` uses cells of `max(H, W) / 4 / 2^o` pixels (at least 2).
fn fractal(rng: &mut ChaCha8Rng, h: usize, w: usize, octaves: usize) -> Vec<ValueNoise> {
    let base = (h.max(w) as f64 / 4.0).max(2.0);
    (0..octaves)
        .map(|o| ValueNoise::new(rng, h, w, (base / f64::powi(2.0, o as i32)).max(2.0)))
        .collect()
}

fn pastel(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let level: f64 = rng.gen_range(0.25..0.85);
    [0, 1, 2].map(|_| (level * (1.0 + 0.5 * (rng.gen::<f64>() - 0.5))).clamp(0.15, 0.9))
}

pub fn luminance(r: f64, g: f64, b: f64) -> f64 {
    0.2126 * r + 0.7152 * g + 0.0722 * b
}

struct Surface {
    albedo: Vec<[f64; 3]>,
    normal: Vec<[f64; 3]>,
    gloss: Vec<f64>,
}

fn surface(spec: &SceneSpec) -> Surface {
    let (h, w) = (spec.height, spec.width);

    let mut rng = rng_for(spec.seed, STREAM_ALBEDO);
    let octaves = fractal(&mut rng, h, w, spec.octaves);
    let mut rng = rng_for(spec.seed, STREAM_TINT);
    let (c0, c1) = (pastel(&mut rng), pastel(&mut rng));

    let mut rng = rng_for(spec.seed, STREAM_BUMPS);
    let bumps: Vec<(f64, f64, f64, f64)> = (0..spec.bumps)
        .map(|_| {
            let sigma = rng.gen_range(2.0..10.0);
            let amp = rng.gen_range(-1.0..1.0) * sigma * 0.9;
            (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64), sigma, amp)
        })
        .collect();

    let mut rng = rng_for(spec.seed, STREAM_GLOSS);
    let gloss_field = ValueNoise::new(&mut rng, h, w, (h.max(w) as f64 / 3.0).max(2.0));

    let mut albedo = Vec::with_capacity(h * w);
    let mut normal = Vec::with_capacity(h * w);
    let mut gloss = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let a = if octaves.is_empty() {
                c0
            } else {
                let (mut p, mut total, mut amp) = (0.0, 0.0, 1.0);
                for o in &octaves {
                    p += amp * o.at(y, x);
                    total += amp;
                    amp *= 0.6;
                }
                let m = (((p / total) - 0.5) * 10.0 + 0.5).clamp(0.0, 1.0);
                let fine = octaves.last().unwrap().at(y, x);
                let detail = 0.8 + 0.4 * (fine - 0.5);
                [0, 1, 2].map(|c| ((c0[c] * (1.0 - m) + c1[c] * m) * detail).clamp(0.0, 1.0))
            };
            albedo.push(a);

            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let (mut hy, mut hx) = (0.0, 0.0);
            for &(cy, cx, sigma, amp) in &bumps {
                let (dy, dx) = (py - cy, px - cx);
                let e = amp * (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp() / (sigma * sigma);
                hy -= e * dy;
                hx -= e * dx;
            }
            let len = (hx * hx + hy * hy + 1.0).sqrt();
            normal.push([-hx / len, -hy / len, 1.0 / len]);
            gloss.push(0.8 * gloss_field.at(y, x));
        }
    }
    Surface { albedo, normal, gloss }
}

/// Renders the converged image and the reference aux buffers
/// (albedo R,G,B then normal X,Y,Z).
pub fn render_clean(spec: &SceneSpec) -> Result<(FeatureMap, FeatureMap)> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let s = surface(spec);
    let l = spec.light;
    let half = {
        let v = [l[0], l[1], l[2] + 1.0];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        [v[0] / n, v[1] / n, v[2] / n]
    };
    let dot = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let radiance: Vec<[f64; 3]> = (0..h * w)
        .map(|i| {
            let n = &s.normal[i];
            let diffuse = 0.15 + 0.85 * dot(n, &l).max(0.0);
            let spec = s.gloss[i] * dot(n, &half).max(0.0).powi(24);
            [0, 1, 2].map(|c| s.albedo[i][c] * diffuse + spec)
        })
        .collect();
    let hr = FeatureMap::from_fn(3, h, w, |c, y, x| radiance[y * w + x][c] as f32);
    let aux = FeatureMap::from_fn(6, h, w, |c, y, x| {
        let i = y * w + x;
        if c < 3 {
            s.albedo[i][c] as f32
        } else {
            s.normal[i][c - 3] as f32
        }
    });
    Ok((hr, aux))
}

/// Box-averages `divisor x divisor` blocks.
pub fn box_downsample(map: &FeatureMap, divisor: usize) -> Result<FeatureMap> {
    let (c, h, w) = map.dims();
    if divisor == 0 || h % divisor != 0 || w % divisor != 0 {
        return Err(XrdsError::Dimension(format!("{h}x{w} not divisible by {divisor}")));
    }
    let area = (divisor * divisor) as f64;
    Ok(FeatureMap::from_fn(c, h / divisor, w / divisor, |ch, y, x| {
        let mut sum = 0.0f64;
        for dy in 0..divisor {
            for dx in 0..divisor {
                sum += map.get(ch, y * divisor + dy, x * divisor + dx) as f64;
            }
        }
        (sum / area) as f32
    }))
}

/// Adds zero-mean noise with per-pixel std `k * sqrt(max(L, eps)) / sqrt(spp)`
/// (L = luminance of the clean pixel) and clamps at zero.
fn add_radiance_noise(clean: &FeatureMap, spp: u32, fireflies: bool, rng: &mut ChaCha8Rng) -> FeatureMap {
    let (_, h, w) = clean.dims();
    let mut out = clean.clone();
    let inv = 1.0 / (spp as f64).sqrt();
    for y in 0..h {
        for x in 0..w {
            let px = [0, 1, 2].map(|c| clean.get(c, y, x) as f64);
            let std = NOISE_K * luminance(px[0], px[1], px[2]).max(NOISE_EPS).sqrt() * inv;
            for (c, v) in px.iter().enumerate() {
                let z: f64 = StandardNormal.sample(rng);
                out.set(c, y, x, (v + std * z).max(0.0) as f32);
            }
        }
    }
    if fireflies {
        for y in 0..h {
            for x in 0..w {
                if rng.gen::<f64>() < FIREFLY_RATE {
                    for c in 0..3 {
                        out.set(c, y, x, out.get(c, y, x) * FIREFLY_GAIN);
                    }
                }
            }
        }
    }
    out
}

/// Renders at `1/divisor` resolution with `spp` samples per pixel.
pub fn render_noisy(spec: &SceneSpec, spp: u32, divisor: usize, sample_seed: u64) -> Result<FeatureMap> {
    if spp == 0 {
        return Err(XrdsError::Config("spp must be at least 1".into()));
    }
    check_scale(divisor)?;
    let (hr, _) = render_clean(spec)?;
    let clean = box_downsample(&hr, divisor)?;
    Ok(add_radiance_noise(&clean, spp, spec.fireflies, &mut rng_for(sample_seed, STREAM_LR_NOISE)))
}

/// Aux buffers at `spp` samples: the radiance noise law scaled by
/// [`AUX_NOISE_FACTOR`], then clamped to the valid ranges. Reference
/// buffers are returned unchanged for `spp >= AUX_REFERENCE_SPP`.
pub fn noisy_aux(clean: &FeatureMap, spp: u32, sample_seed: u64) -> Result<FeatureMap> {
    if spp == 0 {
        return Err(XrdsError::Config("spp_aux must be at least 1".into()));
    }
    if spp >= AUX_REFERENCE_SPP {
        return Ok(clean.clone());
    }
    let mut rng = rng_for(sample_seed, STREAM_AUX_NOISE);
    let (_, h, w) = clean.dims();
    let mut out = clean.clone();
    let k = AUX_NOISE_FACTOR * NOISE_K / (spp as f64).sqrt();
    for y in 0..h {
        for x in 0..w {
            let a = [0, 1, 2].map(|c| clean.get(c, y, x) as f64);
            let std_albedo = k * luminance(a[0], a[1], a[2]).max(NOISE_EPS).sqrt();
            for c in 0..6 {
                let z: f64 = StandardNormal.sample(&mut rng);
                let v = clean.get(c, y, x) as f64;
                let noisy = if c < 3 {
                    (v + std_albedo * z).clamp(0.0, 1.0)
                } else {
                    (v + k * z).clamp(-1.0, 1.0)
                };
                out.set(c, y, x, noisy as f32);
            }
        }
    }
    Ok(out)
}

/// One scene's bundle: noisy LR rendering, aux at `spp_aux` and the clean target.
pub fn render_sample(spec: &SceneSpec, scale: usize, spp_lr: u32, spp_aux: u32) -> Result<RenderingSample> {
    check_scale(scale)?;
    if spp_lr == 0 {
        return Err(XrdsError::Config("spp_lr must be at least 1".into()));
    }
    let (hr, aux) = render_clean(spec)?;
    let lr = add_radiance_noise(
        &box_downsample(&hr, scale)?,
        spp_lr,
        spec.fireflies,
        &mut rng_for(spec.seed, STREAM_LR_NOISE),
    );
    let aux = noisy_aux(&aux, spp_aux, spec.seed)?;
    let sample = RenderingSample {
        lr_rgb: lr,
        aux,
        hr_rgb: Some(hr),
        spp_lr,
        spp_aux,
        scale,
    };
    sample.validate()?;
    Ok(sample)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = XrdsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(XrdsError::Config(format!("unknown split `{other}` (train, val, test)"))),
        }
    }
}

/// Split for scene `index` of `n`: the first 80% train, the next 10% val, the rest test.
pub fn split_for(index: usize, n: usize) -> Split {
    let train = n * 8 / 10;
    let val = n / 10;
    if index < train {
        Split::Train
    } else if index < train + val {
        Split::Val
    } else {
        Split::Test
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Sample directory relative to the manifest.
    pub path: String,
    pub split: Split,
    pub scale: usize,
    pub spp_lr: u32,
    pub spp_aux: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub path: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| XrdsError::io(path, e))?;
        let entries = serde_json::from_str(&text).map_err(|e| XrdsError::Metadata {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(Self {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn base_dir(&self) -> PathBuf {
        self.path.parent().map(Path::to_path_buf).unwrap_or_default()
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    pub fn sample_dir(&self, entry: &ManifestEntry) -> PathBuf {
        crate::data_io::resolve(&self.base_dir(), &entry.path)
    }
}

/// Renders `n_scenes` samples (scene `i` uses seed `seed ^ i`) into
/// `out_dir/scene_XXXX` and writes `out_dir/manifest.json`.
pub fn make_dataset(
    n_scenes: usize,
    template: &SceneSpec,
    out_dir: &Path,
    scale: usize,
    spp_lr: u32,
    spp_aux: u32,
    seed: u64,
) -> Result<Manifest> {
    if n_scenes == 0 {
        return Err(XrdsError::Config("n_scenes must be at least 1".into()));
    }
    check_scale(scale)?;
    if spp_lr == 0 || spp_aux == 0 {
        return Err(XrdsError::Config("spp_lr and spp_aux must be at least 1".into()));
    }
    template.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| XrdsError::io(out_dir, e))?;
    let mut entries = Vec::with_capacity(n_scenes);
    for i in 0..n_scenes {
        let spec = template.with_seed(seed ^ i as u64);
        let sample = render_sample(&spec, scale, spp_lr, spp_aux)?;
        let name = format!("scene_{i:04}");
        save_sample(&sample, &out_dir.join(&name))?;
        entries.push(ManifestEntry {
            path: name,
            split: split_for(i, n_scenes),
            scale,
            spp_lr,
            spp_aux,
        });
    }
    let path = out_dir.join(MANIFEST_FILE);
    let tmp = out_dir.join(format!("{MANIFEST_FILE}.tmp"));
    fs::write(&tmp, serde_json::to_string_pretty(&entries)?).map_err(|e| XrdsError::io(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| XrdsError::io(&path, e))?;
    Ok(Manifest { path, entries })
}
