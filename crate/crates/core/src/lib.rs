//! ProcNet: a predictive-coding segmentation network with a horizontal-GRU
//! recurrent core, plus a render-and-compare pose tracker and a synthetic
//! occlusion benchmark.
//!
//! - [`tensor`]: f32 tensors with a reverse-mode gradient tape
//! - [`net`]: the layer stack, recurrent cells, weight files
//! - [`loss`]: segmentation decoder, Dice/Focal/prediction losses, training
//! - [`render`]: pinhole rasterizer for articulated meshes
//! - [`search`]: mask overlap scoring and numerical-gradient pose ascent
//! - [`bench`]: scene generation, occlusion injection, benchmark tables
//! - [`selfcheck`]: gradient, overlap and rasterizer checks

pub mod bench;
pub mod error;
pub mod loss;
pub mod mask;
pub mod net;
pub mod pgm;
pub mod render;
pub mod search;
pub mod selfcheck;
pub mod tensor;

pub use error::{Error, Result};
