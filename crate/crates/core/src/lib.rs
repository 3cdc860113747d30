//! Monocular height estimation head built on adaptive bins: a local branch
//! and patch transformer predict per-image bin edges and per-pixel bin
//! probabilities, a head-tail cut separates foreground from background, and
//! heights are the probability-weighted mean of bin centers. Training adds
//! Chamfer, cross-entropy and distribution-based KL losses.

pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod regression;
pub mod synth;

pub use error::{Error, Result};
pub use heightbins_tensor as tensor;
