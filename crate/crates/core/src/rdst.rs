//! Residual densely-connected Swin Transformer blocks (RDST) and the groups
//! (XDG) that chain them behind a cross-modality module.

use xrds_autodiff::{Graph, Scalar, Var};

use crate::attention::{CrossModalityBlock, WindowAttention, WindowConfig};
use crate::error::{Result, XrdsError};
use crate::nn::{Bound, Builder, Conv2d, Init, LayerNorm, Linear, Mlp};

/// One dense layer: a pre-norm Swin layer on the concatenated input followed
/// by a growth convolution emitting `growth` new channels.
#[derive(Clone, Debug)]
pub struct DenseSwinLayer {
    pub norm_attn: LayerNorm,
    pub attn: WindowAttention,
    pub norm_mlp: LayerNorm,
    pub mlp: Mlp,
    pub growth: Conv2d,
}

impl DenseSwinLayer {
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        name: &str,
        dim: usize,
        growth: usize,
        growth_kernel: usize,
        cfg: WindowConfig,
    ) -> Result<Self> {
        b.scope(name, |b| {
            Ok(DenseSwinLayer {
                norm_attn: LayerNorm::new(b, "norm_attn", dim),
                attn: WindowAttention::new_self(b, "attn", dim, cfg)?,
                norm_mlp: LayerNorm::new(b, "norm_mlp", dim),
                mlp: Mlp::new(b, "mlp", dim, cfg.mlp_ratio),
                growth: Conv2d::new(b, "growth", dim, growth, growth_kernel, Init::KaimingUniform),
            })
        })
    }

    pub fn shift(&self) -> usize {
        self.attn.cfg.shift
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let n = self.norm_attn.forward(g, p, x);
        let a = self.attn.forward(g, p, n, None)?;
        let x = g.add(x, a);
        let n = self.norm_mlp.forward(g, p, x);
        let m = self.mlp.forward(g, p, n);
        let x = g.add(x, m);
        Ok(self.growth.forward(g, p, x))
    }
}

/// Dense layers with alternating shifts `0, w/2, 0, ...`, local feature fusion
/// over every intermediate feature and a local residual:
/// `y = x + LFF(concat(x, g_1, ..., g_L))`.
#[derive(Clone, Debug)]
pub struct Rdst {
    pub layers: Vec<DenseSwinLayer>,
    pub fusion: Linear,
    pub dim: usize,
}

impl Rdst {
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        name: &str,
        dim: usize,
        num_layers: usize,
        growth: usize,
        growth_kernel: usize,
        cfg: WindowConfig,
    ) -> Result<Self> {
        if num_layers == 0 {
            return Err(XrdsError::Config("RDST needs at least one dense layer".into()));
        }
        b.scope(name, |b| {
            let layers = (0..num_layers)
                .map(|l| {
                    let shift = if l % 2 == 1 { cfg.window / 2 } else { 0 };
                    DenseSwinLayer::new(
                        b,
                        &format!("layers.{l}"),
                        dim + l * growth,
                        growth,
                        growth_kernel,
                        cfg.with_shift(shift),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let fusion = Linear::new(b, "fusion", dim + num_layers * growth, dim, Init::Zeros);
            Ok(Rdst { layers, fusion, dim })
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        Ok(self.forward_features(g, p, x)?.0)
    }

    /// Output plus the dense features `[t_0 = x, g_1, ..., g_L]`.
    pub fn forward_features<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<(Var, Vec<Var>)> {
        let c = *g.shape(x).last().unwrap();
        if c != self.dim {
            return Err(XrdsError::Dimension(format!("RDST expects {} channels, got {c}", self.dim)));
        }
        let mut feats = vec![x];
        for layer in &self.layers {
            let input = if feats.len() == 1 { x } else { g.concat(&feats) };
            feats.push(layer.forward(g, p, input)?);
        }
        let all = g.concat(&feats);
        let fused = self.fusion.forward(g, p, all);
        Ok((g.add(x, fused), feats))
    }
}

/// `X = XM(F_prev, D)`, then `F = RDST_B(...RDST_1(X)) + X`.
#[derive(Clone, Debug)]
pub struct Xdg {
    pub xm: CrossModalityBlock,
    pub blocks: Vec<Rdst>,
}

impl Xdg {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        name: &str,
        dim: usize,
        guide_dim: usize,
        num_blocks: usize,
        num_layers: usize,
        growth: usize,
        growth_kernel: usize,
        cfg: WindowConfig,
    ) -> Result<Self> {
        if num_blocks == 0 {
            return Err(XrdsError::Config("an XDG needs at least one RDST block".into()));
        }
        b.scope(name, |b| {
            let xm = CrossModalityBlock::new(b, "xm", dim, guide_dim, cfg)?;
            let blocks = (0..num_blocks)
                .map(|i| Rdst::new(b, &format!("blocks.{i}"), dim, num_layers, growth, growth_kernel, cfg))
                .collect::<Result<Vec<_>>>()?;
            Ok(Xdg { xm, blocks })
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, f_prev: Var, d: Var) -> Result<Var> {
        let x = self.xm.forward(g, p, f_prev, d)?;
        let mut h = x;
        for block in &self.blocks {
            h = block.forward(g, p, h)?;
        }
        Ok(g.add(h, x))
    }
}
