//! Window attention: W-MSA, W-MCA and the cross-modality block (XM).
//!
//! Feature maps are NHWC. A window attention layer reflect-pads the grid to a
//! window multiple, optionally rolls it by `shift`, attends within each
//! `window x window` window and writes the result back onto the unpadded grid.

use std::rc::Rc;

use serde::{Deserialize, Serialize};
use xrds_autodiff::{AttentionMask, Graph, Scalar, Var};

use crate::error::{Result, XrdsError};
use crate::nn::{Bound, Builder, Init, LayerNorm, Linear, Mlp, ParamId};
use crate::rearrange::WindowGrid;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window: usize,
    pub heads: usize,
    pub shift: usize,
    pub mlp_ratio: f64,
    /// Learned per-head bias indexed by the relative offset of query and key.
    #[serde(default)]
    pub rel_pos_bias: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window: 8,
            heads: 4,
            shift: 0,
            mlp_ratio: 2.0,
            rel_pos_bias: false,
        }
    }
}

impl WindowConfig {
    pub fn with_shift(mut self, shift: usize) -> Self {
        self.shift = shift;
        self
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.window == 0 || self.heads == 0 {
            return Err(XrdsError::Config("window and heads must be positive".into()));
        }
        if !dim.is_multiple_of(self.heads) {
            return Err(XrdsError::Config(format!(
                "feature dim {dim} not divisible by {} heads",
                self.heads
            )));
        }
        if self.shift >= self.window {
            return Err(XrdsError::Config(format!(
                "shift {} must be below window {}",
                self.shift, self.window
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Projections {
    SelfAttention { qkv: Linear },
    Cross { q: Linear, kv: Linear },
}

/// Multi-head attention restricted to (optionally shifted) windows.
#[derive(Clone, Debug)]
pub struct WindowAttention {
    projections: Projections,
    pub proj: Linear,
    /// `[(2w - 1)^2, heads]` table, present when `cfg.rel_pos_bias` is set.
    pub pos_bias: Option<ParamId>,
    pub dim: usize,
    pub cfg: WindowConfig,
}

/// Intermediate tensors of one attention evaluation, for inspection.
pub struct AttentionTrace {
    pub output: Var,
    /// Softmax weights `[b * windows * heads, n, n]`.
    pub weights: Var,
    pub grid: WindowGrid,
}

/// Index map splitting `[rows, n, parts*dim]` into `[rows*heads, n, d]` for `part`.
fn split_heads_index(rows: usize, n: usize, dim: usize, heads: usize, parts: usize, part: usize) -> Vec<u32> {
    let d = dim / heads;
    let width = parts * dim;
    let mut idx = Vec::with_capacity(rows * n * dim);
    for r in 0..rows {
        for h in 0..heads {
            for t in 0..n {
                for j in 0..d {
                    idx.push(((r * n + t) * width + part * dim + h * d + j) as u32);
                }
            }
        }
    }
    idx
}

/// Index map expanding the `[(2w - 1)^2, heads]` bias table to `[rows * heads, n, n]`.
fn pos_bias_index(rows: usize, heads: usize, window: usize) -> Vec<u32> {
    let n = window * window;
    let span = 2 * window - 1;
    let mut one = Vec::with_capacity(heads * n * n);
    for h in 0..heads {
        for i in 0..n {
            for j in 0..n {
                let dy = i / window + window - 1 - j / window;
                let dx = i % window + window - 1 - j % window;
                one.push(((dy * span + dx) * heads + h) as u32);
            }
        }
    }
    let mut idx = Vec::with_capacity(rows * one.len());
    for _ in 0..rows {
        idx.extend_from_slice(&one);
    }
    idx
}

fn pos_bias_param<T: Scalar>(b: &mut Builder<'_, T>, cfg: &WindowConfig) -> Option<ParamId> {
    cfg.rel_pos_bias.then(|| {
        let span = 2 * cfg.window - 1;
        b.param("pos_bias", vec![span * span, cfg.heads], Init::TruncNormal(0.02), 1)
    })
}

/// Inverse of [`split_heads_index`] for a single part: `[rows*heads, n, d] -> [rows, n, dim]`.
fn merge_heads_index(rows: usize, n: usize, dim: usize, heads: usize) -> Vec<u32> {
    let d = dim / heads;
    let mut idx = Vec::with_capacity(rows * n * dim);
    for r in 0..rows {
        for t in 0..n {
            for h in 0..heads {
                for j in 0..d {
                    idx.push((((r * heads + h) * n + t) * d + j) as u32);
                }
            }
        }
    }
    idx
}

impl WindowAttention {
    /// W-MSA over `dim` features.
    pub fn new_self<T: Scalar>(b: &mut Builder<'_, T>, name: &str, dim: usize, cfg: WindowConfig) -> Result<Self> {
        cfg.validate(dim)?;
        Ok(b.scope(name, |b| WindowAttention {
            projections: Projections::SelfAttention {
                qkv: Linear::new(b, "qkv", dim, 3 * dim, Init::TruncNormal(0.02)),
            },
            proj: Linear::new(b, "proj", dim, dim, Init::Zeros),
            pos_bias: pos_bias_param(b, &cfg),
            dim,
            cfg,
        }))
    }

    /// W-MCA: queries from `dim` features, keys/values from `kv_dim` features.
    pub fn new_cross<T: Scalar>(
        b: &mut Builder<'_, T>,
        name: &str,
        dim: usize,
        kv_dim: usize,
        cfg: WindowConfig,
    ) -> Result<Self> {
        cfg.validate(dim)?;
        Ok(b.scope(name, |b| WindowAttention {
            projections: Projections::Cross {
                q: Linear::new(b, "q", dim, dim, Init::TruncNormal(0.02)),
                kv: Linear::new(b, "kv", kv_dim, 2 * dim, Init::TruncNormal(0.02)),
            },
            proj: Linear::new(b, "proj", dim, dim, Init::Zeros),
            pos_bias: pos_bias_param(b, &cfg),
            dim,
            cfg,
        }))
    }

    pub fn is_cross(&self) -> bool {
        matches!(self.projections, Projections::Cross { .. })
    }

    /// `x` is `[b, h, w, dim]`; `kv` (cross attention only) is `[b, h, w, kv_dim]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var, kv: Option<Var>) -> Result<Var> {
        Ok(self.forward_traced(g, p, x, kv)?.output)
    }

    pub fn forward_traced<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: Var,
        kv: Option<Var>,
    ) -> Result<AttentionTrace> {
        let xs = g.shape(x).to_vec();
        if xs.len() != 4 || xs[3] != self.dim {
            return Err(XrdsError::Dimension(format!(
                "attention expects [b, h, w, {}], got {xs:?}",
                self.dim
            )));
        }
        let (batch, h, w) = (xs[0], xs[1], xs[2]);
        let grid = WindowGrid::new(h, w, self.cfg.window, self.cfg.shift)?;
        let (nw, n) = (grid.num_windows(), grid.tokens());
        let rows = batch * nw;
        let heads = self.cfg.heads;
        let d = self.dim / heads;

        let partition = |g: &mut Graph<T>, v: Var| {
            let c = *g.shape(v).last().unwrap();
            let idx = Rc::new(grid.partition_index(batch, c));
            g.gather(v, idx, vec![rows, n, c])
        };
        let split = |g: &mut Graph<T>, v: Var, parts: usize, part: usize| {
            let idx = Rc::new(split_heads_index(rows, n, self.dim, heads, parts, part));
            g.gather(v, idx, vec![rows * heads, n, d])
        };

        let tokens = partition(g, x);
        let (q, k, v) = match (&self.projections, kv) {
            (Projections::SelfAttention { qkv }, None) => {
                let qkv = qkv.forward(g, p, tokens);
                (split(g, qkv, 3, 0), split(g, qkv, 3, 1), split(g, qkv, 3, 2))
            }
            (Projections::Cross { q, kv: kv_proj }, Some(kv)) => {
                let ks = g.shape(kv).to_vec();
                if ks.len() != 4 || ks[0] != batch || ks[1] != h || ks[2] != w {
                    return Err(XrdsError::Dimension(format!(
                        "cross-attention grids differ: queries {xs:?}, keys/values {ks:?}"
                    )));
                }
                if ks[3] != kv_proj.cin {
                    return Err(XrdsError::Dimension(format!(
                        "keys/values need {} channels, got {}",
                        kv_proj.cin, ks[3]
                    )));
                }
                let kv_tokens = partition(g, kv);
                let qt = q.forward(g, p, tokens);
                let kvt = kv_proj.forward(g, p, kv_tokens);
                (split(g, qt, 1, 0), split(g, kvt, 2, 0), split(g, kvt, 2, 1))
            }
            (Projections::SelfAttention { .. }, Some(_)) => {
                return Err(XrdsError::Dimension("self-attention takes no key/value source".into()))
            }
            (Projections::Cross { .. }, None) => {
                return Err(XrdsError::Dimension("cross-attention needs a key/value source".into()))
            }
        };

        let scale = T::one() / T::from_f64(d as f64).sqrt();
        let mut logits = g.bmm(q, k, true, scale);
        if let Some(table) = self.pos_bias {
            let idx = Rc::new(pos_bias_index(rows, heads, self.cfg.window));
            let bias = g.gather(p.var(table), idx, vec![rows * heads, n, n]);
            logits = g.add(logits, bias);
        }
        let mask = grid.mask::<T>().map(|values| AttentionMask {
            values,
            windows: nw,
            tokens: n,
            heads,
        });
        let weights = g.softmax(logits, mask.as_ref());
        let out = g.bmm(weights, v, false, T::one());
        let merged = g.gather(out, Rc::new(merge_heads_index(rows, n, self.dim, heads)), vec![rows, n, self.dim]);
        let projected = self.proj.forward(g, p, merged);
        let back = Rc::new(grid.reverse_index(batch, self.dim));
        let output = g.gather(projected, back, vec![batch, h, w, self.dim]);
        Ok(AttentionTrace { output, weights, grid })
    }
}

/// Cross-modality module:
///
/// ```text
/// F_mid   = F + W-MSA(LN(F))
/// F_cross = F_mid + W-MCA(LN(F_mid), LN(D))
/// X       = F_cross + MLP(LN(F_cross))
/// ```
#[derive(Clone, Debug)]
pub struct CrossModalityBlock {
    pub norm_self: LayerNorm,
    pub self_attn: WindowAttention,
    pub norm_query: LayerNorm,
    pub norm_guide: LayerNorm,
    pub cross_attn: WindowAttention,
    pub norm_mlp: LayerNorm,
    pub mlp: Mlp,
}

impl CrossModalityBlock {
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        name: &str,
        dim: usize,
        guide_dim: usize,
        cfg: WindowConfig,
    ) -> Result<Self> {
        let cfg = cfg.with_shift(0);
        b.scope(name, |b| {
            Ok(CrossModalityBlock {
                norm_self: LayerNorm::new(b, "norm_self", dim),
                self_attn: WindowAttention::new_self(b, "self_attn", dim, cfg)?,
                norm_query: LayerNorm::new(b, "norm_query", dim),
                norm_guide: LayerNorm::new(b, "norm_guide", guide_dim),
                cross_attn: WindowAttention::new_cross(b, "cross_attn", dim, guide_dim, cfg)?,
                norm_mlp: LayerNorm::new(b, "norm_mlp", dim),
                mlp: Mlp::new(b, "mlp", dim, cfg.mlp_ratio),
            })
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, f: Var, d: Var) -> Result<Var> {
        let (fs, ds) = (g.shape(f).to_vec(), g.shape(d).to_vec());
        if fs.len() != 4 || ds.len() != 4 || fs[..3] != ds[..3] {
            return Err(XrdsError::Dimension(format!(
                "XM inputs must share a grid: F {fs:?}, D {ds:?}"
            )));
        }
        let n = self.norm_self.forward(g, p, f);
        let a = self.self_attn.forward(g, p, n, None)?;
        let f_mid = g.add(f, a);
        let q = self.norm_query.forward(g, p, f_mid);
        let kv = self.norm_guide.forward(g, p, d);
        let c = self.cross_attn.forward(g, p, q, Some(kv))?;
        let f_cross = g.add(f_mid, c);
        let n = self.norm_mlp.forward(g, p, f_cross);
        let m = self.mlp.forward(g, p, n);
        Ok(g.add(f_cross, m))
    }
}
