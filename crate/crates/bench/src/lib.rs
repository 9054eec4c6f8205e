//! Fixtures shared by the benchmarks.

use prism_core::imagecore::{BinaryMask, ChannelStats};
use prism_core::pipeline::synthetic_dendrite;

pub fn dendrite(size: usize) -> BinaryMask {
    synthetic_dendrite(size, size, 42)
}

pub fn style() -> ChannelStats {
    ChannelStats {
        mu: [0.45, 0.35, 0.3],
        sigma: [0.2, 0.15, 0.1],
        n_pixels: 0,
    }
}
