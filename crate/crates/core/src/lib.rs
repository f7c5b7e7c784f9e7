//! Auxiliary-feature guided super-resolution of Monte Carlo renderings.
//!
//! The network (`XrdsModel`) fuses a noisy low-resolution rendering with
//! cheap high-resolution albedo and normal buffers through window
//! cross-attention, then upsamples with a pixel-shuffle head. The crate also
//! ships a procedural scene generator, the on-disk sample format, metrics, and
//! a deterministic trainer.

pub mod attention;
pub mod aux_branch;
pub mod data_io;
pub mod error;
pub mod feature_map;
pub mod nn;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod patches;
pub mod rdst;
pub mod rearrange;
pub mod toyscenes;
pub mod trainer;

pub use error::{Result, XrdsError};
pub use feature_map::FeatureMap;
