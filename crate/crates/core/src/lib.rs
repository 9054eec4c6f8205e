//! Pixel-domain styling of binary masks for diffusion-based dataset synthesis,
//! with the DDIM machinery, backends, metrics and experiment pipeline around it.

pub mod backend;
pub mod ddim;
mod error;
pub mod imagecore;
pub mod metrics;
pub mod pipeline;
pub mod prism;
pub mod seeds;

pub use error::{Error, Result};
pub use imagecore::{BinaryMask, ChannelStats, ImageRgb, PixelGrid};
