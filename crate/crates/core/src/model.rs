//! Full network assembly, configuration profiles and checkpoints.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use xrds_autodiff::{Graph, Scalar, Tensor, Var};

use crate::attention::WindowConfig;
use crate::aux_branch::{AuxBranch, AUX_INPUT_CHANNELS};
use crate::data_io::check_scale;
use crate::error::{Result, XrdsError};
use crate::feature_map::FeatureMap;
use crate::nn::{Bound, Builder, Conv2d, Init, Linear, ParamStore};
use crate::rdst::Xdg;
use crate::rearrange::pixel_shuffle_var;

const RGB_CHANNELS: usize = 3;

/// Which auxiliary layers reach the network; masked layers are zeroed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuxMask {
    /// Both albedo and normal zeroed.
    None,
    NormalOnly,
    AlbedoOnly,
    #[default]
    Both,
}

impl AuxMask {
    pub const ALL: [AuxMask; 4] = [AuxMask::None, AuxMask::NormalOnly, AuxMask::AlbedoOnly, AuxMask::Both];

    pub fn keeps_albedo(self) -> bool {
        matches!(self, AuxMask::AlbedoOnly | AuxMask::Both)
    }

    pub fn keeps_normal(self) -> bool {
        matches!(self, AuxMask::NormalOnly | AuxMask::Both)
    }

    /// Per-channel keep factors in aux channel order.
    pub fn channel_gains(self) -> [f32; AUX_INPUT_CHANNELS] {
        let a = if self.keeps_albedo() { 1.0 } else { 0.0 };
        let n = if self.keeps_normal() { 1.0 } else { 0.0 };
        [a, a, a, n, n, n]
    }

    pub fn label(self) -> &'static str {
        match self {
            AuxMask::None => "none",
            AuxMask::NormalOnly => "normal-only",
            AuxMask::AlbedoOnly => "albedo-only",
            AuxMask::Both => "both",
        }
    }
}

impl std::str::FromStr for AuxMask {
    type Err = XrdsError;

    fn from_str(s: &str) -> Result<Self> {
        AuxMask::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| XrdsError::Config(format!("unknown aux mask `{s}` (none, normal-only, albedo-only, both)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub scale: usize,
    /// Number of XDG groups (N).
    pub groups: usize,
    /// RDST blocks per group (B).
    pub blocks: usize,
    /// Dense Swin layers per RDST (L).
    pub layers: usize,
    /// Low-resolution branch width (C).
    pub channels: usize,
    /// Auxiliary branch width (C_A).
    pub aux_channels: usize,
    /// Guidance width after projection (C_kv).
    pub guide_channels: usize,
    /// Channels emitted by each dense layer (G).
    pub growth: usize,
    /// Kernel size of the growth convolution.
    pub growth_kernel: usize,
    pub window: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    /// Relative position bias in every window attention layer.
    pub rel_pos_bias: bool,
    pub aux_mask: AuxMask,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl ModelConfig {
    /// Full-size network.
    pub fn paper() -> Self {
        Self {
            scale: 4,
            groups: 3,
            blocks: 5,
            layers: 4,
            channels: 64,
            aux_channels: 32,
            guide_channels: 64,
            growth: 32,
            growth_kernel: 3,
            window: 8,
            heads: 4,
            mlp_ratio: 2.0,
            rel_pos_bias: false,
            aux_mask: AuxMask::Both,
        }
    }

    /// Small network for CPU-scale experiments.
    pub fn desk() -> Self {
        Self {
            groups: 2,
            blocks: 2,
            layers: 2,
            channels: 32,
            aux_channels: 16,
            guide_channels: 32,
            growth: 16,
            // Lets cross attention address the guide at the query's own pixel.
            rel_pos_bias: true,
            ..Self::paper()
        }
    }

    /// Smallest meaningful network, used for gradient checks and overfitting.
    pub fn micro() -> Self {
        Self {
            scale: 2,
            groups: 1,
            blocks: 1,
            layers: 1,
            channels: 8,
            aux_channels: 8,
            guide_channels: 8,
            growth: 8,
            window: 4,
            heads: 2,
            ..Self::paper()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            "micro" => Ok(Self::micro()),
            other => Err(XrdsError::Config(format!("unknown model profile `{other}`"))),
        }
    }

    pub fn window_config(&self) -> WindowConfig {
        WindowConfig {
            window: self.window,
            heads: self.heads,
            shift: 0,
            mlp_ratio: self.mlp_ratio,
            rel_pos_bias: self.rel_pos_bias,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_scale(self.scale)?;
        let positive = [
            ("groups", self.groups),
            ("blocks", self.blocks),
            ("layers", self.layers),
            ("channels", self.channels),
            ("aux_channels", self.aux_channels),
            ("guide_channels", self.guide_channels),
            ("growth", self.growth),
            ("window", self.window),
            ("heads", self.heads),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(XrdsError::Config(format!("model.{name} must be positive")));
        }
        if self.growth_kernel.is_multiple_of(2) {
            return Err(XrdsError::Config("model.growth_kernel must be odd".into()));
        }
        if !(self.mlp_ratio.is_finite() && self.mlp_ratio > 0.0) {
            return Err(XrdsError::Config("model.mlp_ratio must be positive".into()));
        }
        for l in 0..self.layers {
            let dim = self.channels + l * self.growth;
            if !dim.is_multiple_of(self.heads) {
                return Err(XrdsError::Config(format!(
                    "dense layer {l} width {dim} not divisible by {} heads",
                    self.heads
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Head {
    /// `conv3x3(pixel_shuffle(linear(x)))` for `s > 1`.
    Shuffle { expand: Linear, conv: Conv2d },
    /// `conv3x3(x)` for `s = 1`.
    Direct { conv: Conv2d },
}

/// Network layout: parameter ids only, so it serves any scalar type.
#[derive(Clone, Debug)]
pub struct XrdsNet {
    pub shallow: Conv2d,
    pub aux: AuxBranch,
    pub groups: Vec<Xdg>,
    head: Head,
    scale: usize,
    aux_gains: [f32; AUX_INPUT_CHANNELS],
}

impl XrdsNet {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let s = cfg.scale;
        let wcfg = cfg.window_config();
        let shallow = Conv2d::new(b, "shallow", RGB_CHANNELS, cfg.channels, 3, Init::KaimingUniform);
        let aux = AuxBranch::new(b, "aux", cfg.groups, cfg.aux_channels, cfg.guide_channels, s);
        let groups = (0..cfg.groups)
            .map(|i| {
                Xdg::new(
                    b,
                    &format!("groups.{i}"),
                    cfg.channels,
                    cfg.guide_channels,
                    cfg.blocks,
                    cfg.layers,
                    cfg.growth,
                    cfg.growth_kernel,
                    wcfg,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let head = b.scope("head", |b| {
            if s > 1 {
                Head::Shuffle {
                    expand: Linear::new(b, "expand", cfg.channels, RGB_CHANNELS * s * s, Init::KaimingUniform),
                    conv: Conv2d::new(b, "conv", RGB_CHANNELS, RGB_CHANNELS, 3, Init::KaimingUniform),
                }
            } else {
                Head::Direct {
                    conv: Conv2d::new(b, "conv", cfg.channels, RGB_CHANNELS, 3, Init::KaimingUniform),
                }
            }
        });
        Ok(XrdsNet {
            shallow,
            aux,
            groups,
            head,
            scale: s,
            aux_gains: cfg.aux_mask.channel_gains(),
        })
    }

    /// `lr` is NHWC `[b, h, w, 3]`, `aux` is `[b, s*h, s*w, 6]`; returns `[b, s*h, s*w, 3]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, lr: Var, aux: Var) -> Result<Var> {
        let (ls, as_) = (g.shape(lr).to_vec(), g.shape(aux).to_vec());
        let s = self.scale;
        if ls.len() != 4 || ls[3] != RGB_CHANNELS {
            return Err(XrdsError::Dimension(format!("lr input must be [b, h, w, 3], got {ls:?}")));
        }
        if as_.len() != 4 || as_[3] != AUX_INPUT_CHANNELS {
            return Err(XrdsError::Dimension(format!("aux input must be [b, H, W, 6], got {as_:?}")));
        }
        if as_[0] != ls[0] || as_[1] != s * ls[1] || as_[2] != s * ls[2] {
            return Err(XrdsError::Dimension(format!(
                "aux must be {s}x the lr grid: expected {}x{}, got {}x{}",
                s * ls[1],
                s * ls[2],
                as_[1],
                as_[2]
            )));
        }
        let aux = self.mask_aux(g, aux);
        let guides = self.aux.forward(g, p, aux)?;
        let f0 = self.shallow.forward(g, p, lr);
        let mut f = f0;
        for (group, d) in self.groups.iter().zip(&guides) {
            f = group.forward(g, p, f, *d)?;
        }
        let fdf = g.add(f, f0);
        let out = match &self.head {
            Head::Shuffle { expand, conv } => {
                let e = expand.forward(g, p, fdf);
                let up = pixel_shuffle_var(g, e, s)?;
                conv.forward(g, p, up)
            }
            Head::Direct { conv } => conv.forward(g, p, fdf),
        };
        if !g.value(out).all_finite() {
            return Err(XrdsError::NonFiniteActivation("network output contains NaN or Inf".into()));
        }
        Ok(out)
    }

    fn mask_aux<T: Scalar>(&self, g: &mut Graph<T>, aux: Var) -> Var {
        if self.aux_gains.iter().all(|&k| k == 1.0) {
            return aux;
        }
        let shape = g.shape(aux).to_vec();
        let n: usize = shape.iter().product();
        let gains = (0..n)
            .map(|i| T::from_f64(self.aux_gains[i % AUX_INPUT_CHANNELS] as f64))
            .collect();
        let m = g.constant(Tensor::new(shape, gains));
        g.mul(aux, m)
    }
}

/// Configuration, layout and float32 parameters of a network.
#[derive(Clone, Debug)]
pub struct XrdsModel {
    pub config: ModelConfig,
    pub net: XrdsNet,
    pub params: ParamStore<f32>,
}

impl XrdsModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = XrdsNet::new(&mut Builder::new(&mut params, &mut rng), &config)?;
        Ok(Self { config, net, params })
    }

    pub fn scale(&self) -> usize {
        self.config.scale
    }

    /// Copies every tensor of `source` whose name and shape match; returns the count.
    pub fn copy_matching(&mut self, source: &XrdsModel) -> usize {
        let mut copied = 0;
        for (name, t) in source.params.iter() {
            if let Some(dst) = self.params.by_name_mut(name) {
                if dst.shape() == t.shape() {
                    dst.data_mut().copy_from_slice(t.data());
                    copied += 1;
                }
            }
        }
        copied
    }

    pub fn count_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Runs one inference on NHWC tensors without recording gradients.
    pub fn forward_tensors(&self, lr: Tensor<f32>, aux: Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let lr = g.constant(lr);
        let aux = g.constant(aux);
        let out = self.net.forward(&mut g, &p, lr, aux)?;
        Ok(g.value(out).clone())
    }

    /// Super-resolves one image: `lr` is `3 x h x w`, `aux` is `6 x s*h x s*w`.
    pub fn predict(&self, lr: &FeatureMap, aux: &FeatureMap) -> Result<FeatureMap> {
        let s = self.scale();
        if lr.channels() != RGB_CHANNELS || aux.channels() != AUX_INPUT_CHANNELS {
            return Err(XrdsError::Dimension(format!(
                "expected 3-channel lr and 6-channel aux, got {} and {}",
                lr.channels(),
                aux.channels()
            )));
        }
        if aux.height() != s * lr.height() || aux.width() != s * lr.width() {
            return Err(XrdsError::Dimension(format!(
                "aux must be {}x{} for a {}x{} lr image at scale {s}, got {}x{}",
                s * lr.height(),
                s * lr.width(),
                lr.height(),
                lr.width(),
                aux.height(),
                aux.width()
            )));
        }
        let out = self.forward_tensors(lr.to_nhwc(), aux.to_nhwc())?;
        FeatureMap::from_nhwc(&out, 0)
    }

    pub fn check_compatible(&self, expected: &ModelConfig) -> Result<()> {
        if self.config.scale != expected.scale {
            return Err(XrdsError::ConfigMismatch(format!(
                "checkpoint is for scale {}, requested scale {}",
                self.config.scale, expected.scale
            )));
        }
        if &self.config != expected {
            return Err(XrdsError::ConfigMismatch(format!(
                "checkpoint config {:?} differs from requested {:?}",
                self.config, expected
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = encode_checkpoint(self)?;
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| XrdsError::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| XrdsError::io(&tmp, e))?;
        f.sync_all().map_err(|e| XrdsError::io(&tmp, e))?;
        drop(f);
        fs::rename(&tmp, path).map_err(|e| XrdsError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| XrdsError::io(path, e))?;
        decode_checkpoint(&bytes)
    }

    /// Loads a checkpoint and rejects it unless it was trained for `scale`.
    pub fn load_for_scale(path: &Path, scale: usize) -> Result<Self> {
        let model = Self::load(path)?;
        if model.scale() != scale {
            return Err(XrdsError::ConfigMismatch(format!(
                "checkpoint {} is for scale {}, requested scale {scale}",
                path.display(),
                model.scale()
            )));
        }
        Ok(model)
    }

    /// Hex SHA-256 over the encoded parameters and config.
    pub fn fingerprint(&self) -> Result<String> {
        let bytes = encode_checkpoint(self)?;
        Ok(hex_digest(&bytes[bytes.len() - DIGEST_LEN..]))
    }
}

const MAGIC: &[u8; 8] = b"XRDSCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Layout: magic, version, config JSON, then `(name, shape, f32 LE data)`
/// records, closed by a SHA-256 of everything before it.
fn encode_checkpoint(model: &XrdsModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(&model.config)?;
    out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    for (name, t) in model.params.iter() {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| XrdsError::Integrity("checkpoint ends unexpectedly".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| XrdsError::Integrity("length field overflows".into()))
    }
}

fn decode_checkpoint(bytes: &[u8]) -> Result<XrdsModel> {
    if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN || &bytes[..MAGIC.len()] != MAGIC {
        return Err(XrdsError::Integrity("not an XRDS checkpoint or truncated header".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(XrdsError::Integrity("checkpoint checksum mismatch (truncated or corrupted)".into()));
    }
    let mut r = Reader { bytes: body, pos: MAGIC.len() };
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(XrdsError::ConfigMismatch(format!(
            "checkpoint format version {version}, this build reads {CHECKPOINT_VERSION}"
        )));
    }
    let n = r.u64()?;
    let config: ModelConfig = serde_json::from_slice(r.take(n)?)?;
    let mut model = XrdsModel::new(config, 0)?;
    let count = r.u64()?;
    if count != model.params.len() {
        return Err(XrdsError::ConfigMismatch(format!(
            "checkpoint holds {count} tensors, config implies {}",
            model.params.len()
        )));
    }
    for _ in 0..count {
        let n = r.u64()?;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| XrdsError::Integrity("parameter name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u64()?;
        let shape = (0..ndim).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = r.take(len * 4)?;
        let target = model
            .params
            .by_name_mut(&name)
            .ok_or_else(|| XrdsError::ConfigMismatch(format!("unexpected parameter `{name}`")))?;
        if target.shape() != shape.as_slice() {
            return Err(XrdsError::ConfigMismatch(format!(
                "parameter `{name}` has shape {shape:?}, config implies {:?}",
                target.shape()
            )));
        }
        for (dst, chunk) in target.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if r.pos != body.len() {
        return Err(XrdsError::Integrity("trailing bytes after parameters".into()));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aux_mask_parses_labels() {
        for m in AuxMask::ALL {
            assert_eq!(m.label().parse::<AuxMask>().unwrap(), m);
        }
        assert!("depth".parse::<AuxMask>().is_err());
        assert_eq!(AuxMask::NormalOnly.channel_gains(), [0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn config_rejects_bad_heads() {
        let cfg = ModelConfig {
            heads: 3,
            ..ModelConfig::micro()
        };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig {
            scale: 3,
            ..ModelConfig::micro()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_rejects_unknown_keys() {
        let err = serde_json::from_str::<ModelConfig>(r#"{"scale": 2, "colour": 1}"#);
        assert!(err.is_err());
        let cfg: ModelConfig = serde_json::from_str(r#"{"scale": 2}"#).unwrap();
        assert_eq!(cfg.groups, 3);
    }
}
