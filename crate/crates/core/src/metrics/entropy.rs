use crate::error::{Error, Result};
use crate::imagecore::ImageRgb;

pub const DEFAULT_BINS: usize = 256;

/// Shannon entropy in bits of the grayscale (luma) histogram.
pub fn shannon_entropy(image: &ImageRgb, bins: usize) -> Result<f64> {
    entropy_of_values(&image.luma(), bins)
}

/// Entropy of values in `[0, 1]` binned into `bins` equal-width bins; values
/// outside the range land in the end bins.
pub fn entropy_of_values(values: &[f64], bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::Config(format!("entropy needs at least 2 bins, got {bins}")));
    }
    if values.is_empty() {
        return Err(Error::DegenerateInput("entropy of an empty image".into()));
    }
    let mut hist = vec![0usize; bins];
    for &v in values {
        let b = (v * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize;
        hist[b] += 1;
    }
    let n = values.len() as f64;
    Ok(hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0))
}
