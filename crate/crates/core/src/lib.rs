//! Biplanar spine assessment from trunk images: a channel-attention
//! U-shaped generator turns PA and LAT photographs into curve maps, which are
//! fused into a 3D spine curve whose inflection-plane angle grades severity.

// Validation is written as `!(x > bound)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod cobb;
pub mod curve;
pub mod error;
pub mod euformer;
pub mod imageio;
pub mod metrics;
pub mod pipeline;
pub mod selfcheck;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
