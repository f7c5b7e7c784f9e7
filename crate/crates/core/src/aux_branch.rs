//! High-resolution auxiliary feature branch.
//!
//! `H_0 = conv(A)`, `H_i = RB_i(H_{i-1})`, and each guidance map
//! `D_i = project_i(deshuffle(H_i, s))` lands on the low-resolution grid with
//! `guide_channels` features. Every stage deshuffles by the SR scale `s`.

use xrds_autodiff::{Graph, Scalar, Var};

use crate::error::{Result, XrdsError};
use crate::nn::{Bound, Builder, Conv2d, Init, Linear};
use crate::rearrange::deshuffle_var;

pub const AUX_INPUT_CHANNELS: usize = 6;

/// `y = x + conv2(relu(conv1(x)))`, 3x3 convolutions, no normalization.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl ResidualBlock {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, name: &str, channels: usize) -> Self {
        b.scope(name, |b| ResidualBlock {
            conv1: Conv2d::new(b, "conv1", channels, channels, 3, Init::KaimingUniform),
            conv2: Conv2d::new(b, "conv2", channels, channels, 3, Init::Zeros),
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let c = *g.shape(x).last().unwrap();
        if c != self.conv1.cin {
            return Err(XrdsError::Dimension(format!(
                "residual block expects {} channels, got {c}",
                self.conv1.cin
            )));
        }
        let h = self.conv1.forward(g, p, x);
        let h = g.relu(h);
        let h = self.conv2.forward(g, p, h);
        Ok(g.add(x, h))
    }
}

#[derive(Clone, Debug)]
pub struct AuxBranch {
    pub input: Conv2d,
    pub blocks: Vec<ResidualBlock>,
    pub projections: Vec<Linear>,
    pub scale: usize,
}

impl AuxBranch {
    /// Branch producing `stages` guidance maps (one conv plus `stages - 1`
    /// residual blocks).
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        name: &str,
        stages: usize,
        channels: usize,
        guide_channels: usize,
        scale: usize,
    ) -> Self {
        assert!(stages >= 1, "aux branch needs at least one stage");
        b.scope(name, |b| {
            let input = Conv2d::new(b, "input", AUX_INPUT_CHANNELS, channels, 3, Init::KaimingUniform);
            let blocks = (1..stages)
                .map(|i| ResidualBlock::new(b, &format!("blocks.{i}"), channels))
                .collect();
            let projections = (0..stages)
                .map(|i| {
                    Linear::new(
                        b,
                        &format!("projections.{i}"),
                        channels * scale * scale,
                        guide_channels,
                        Init::KaimingUniform,
                    )
                })
                .collect();
            AuxBranch {
                input,
                blocks,
                projections,
                scale,
            }
        })
    }

    pub fn stages(&self) -> usize {
        self.projections.len()
    }

    /// `aux` is NHWC `[b, H, W, 6]`; returns the guidance maps `D_0..D_{N-1}`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, aux: Var) -> Result<Vec<Var>> {
        let s = g.shape(aux).to_vec();
        if s.len() != 4 || s[3] != AUX_INPUT_CHANNELS {
            return Err(XrdsError::Dimension(format!("aux input must be [b, H, W, 6], got {s:?}")));
        }
        if !s[1].is_multiple_of(self.scale) || !s[2].is_multiple_of(self.scale) {
            return Err(XrdsError::Dimension(format!(
                "aux {}x{} not divisible by scale {}",
                s[1], s[2], self.scale
            )));
        }
        let mut h = self.input.forward(g, p, aux);
        let mut guides = Vec::with_capacity(self.stages());
        for i in 0..self.stages() {
            if i > 0 {
                h = self.blocks[i - 1].forward(g, p, h)?;
            }
            let d = deshuffle_var(g, h, self.scale)?;
            guides.push(self.projections[i].forward(g, p, d));
        }
        Ok(guides)
    }
}
