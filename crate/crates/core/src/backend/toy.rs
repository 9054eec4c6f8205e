//! A linear, analytically tractable stand-in for a latent diffusion model.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Capability, DenoiseBackend};
use crate::ddim::LatentTensor;
use crate::error::{Error, Result};
use crate::imagecore::{ImageRgb, PixelGrid};
use crate::seeds;

/// Latent scale of [`ToyBackend::default`] and of toy backends built from configs.
pub const DEFAULT_LATENT_SCALE: f64 = 8.0;

/// Block grid side used by [`ToyBackend::extract_features`].
pub const TOY_FEATURE_GRID: usize = 8;

/// Pixel↔latent codec of the toy backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ToyCodec {
    /// Latent equals the pixel grid, channel-first.
    #[default]
    Identity,
    /// k×k average-pool encode, nearest-neighbour decode. k ∈ {2, 4, 8}.
    AvgPool(usize),
}

impl ToyCodec {
    pub fn factor(self) -> usize {
        match self {
            ToyCodec::Identity => 1,
            ToyCodec::AvgPool(k) => k,
        }
    }
}

impl FromStr for ToyCodec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "identity" => Ok(ToyCodec::Identity),
            "avgpool_2" => Ok(ToyCodec::AvgPool(2)),
            "avgpool_4" => Ok(ToyCodec::AvgPool(4)),
            "avgpool_8" => Ok(ToyCodec::AvgPool(8)),
            other => Err(Error::Config(format!(
                "unknown toy codec {other:?} (expected identity, avgpool_2, avgpool_4 or avgpool_8)"
            ))),
        }
    }
}

impl TryFrom<String> for ToyCodec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ToyCodec> for String {
    fn from(c: ToyCodec) -> String {
        c.to_string()
    }
}

impl fmt::Display for ToyCodec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ToyCodec::Identity => write!(f, "identity"),
            ToyCodec::AvgPool(k) => write!(f, "avgpool_{k}"),
        }
    }
}

/// Gain of the linear ε-predictor `ε̂(z, t) = k(t)·z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PredictorGain {
    Constant(f64),
    /// `k(t) = base + slope·t`.
    Linear { base: f64, slope: f64 },
}

impl Default for PredictorGain {
    fn default() -> Self {
        PredictorGain::Constant(0.5)
    }
}

impl PredictorGain {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            PredictorGain::Constant(k) => k,
            PredictorGain::Linear { base, slope } => base + slope * t as f64,
        }
    }
}

/// Linear toy backend: every operation is additive and homogeneous (decode up to the final clip).
///
/// `latent_scale` plays the role of a VAE scaling factor: it sets the image
/// signal level relative to the unit-variance diffusion noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyBackend {
    pub codec: ToyCodec,
    pub gain: PredictorGain,
    /// Multiplier applied by encode and undone by decode.
    pub latent_scale: f64,
}

impl Default for ToyBackend {
    fn default() -> Self {
        Self::new(ToyCodec::default(), PredictorGain::default()).with_latent_scale(DEFAULT_LATENT_SCALE)
    }
}

impl ToyBackend {
    pub fn new(codec: ToyCodec, gain: PredictorGain) -> Self {
        Self {
            codec,
            gain,
            latent_scale: 1.0,
        }
    }

    pub fn with_latent_scale(self, latent_scale: f64) -> Self {
        Self { latent_scale, ..self }
    }

    pub fn identity(gain: f64) -> Self {
        Self::new(ToyCodec::Identity, PredictorGain::Constant(gain))
    }

    pub fn avgpool(k: usize, gain: f64) -> Self {
        Self::new(ToyCodec::AvgPool(k), PredictorGain::Constant(gain))
    }

    /// Encode an unclipped pixel grid.
    pub fn encode_grid(&self, grid: &PixelGrid) -> Result<LatentTensor> {
        let k = self.codec.factor();
        let (h, w) = (grid.height(), grid.width());
        if h % k != 0 || w % k != 0 {
            return Err(Error::Dimension(format!(
                "{h}x{w} image is not divisible by the {k}x{k} pooling factor"
            )));
        }
        let (lh, lw) = (h / k, w / k);
        let norm = self.latent_scale / (k * k) as f64;
        let mut z = LatentTensor::zeros([3, lh, lw]);
        for c in 0..3 {
            for i in 0..lh {
                for j in 0..lw {
                    let mut acc = 0.0;
                    for y in i * k..(i + 1) * k {
                        for x in j * k..(j + 1) * k {
                            acc += grid.get(y, x, c);
                        }
                    }
                    z.set(c, i, j, acc * norm);
                }
            }
        }
        Ok(z)
    }

    /// Linear part of decode: nearest-neighbour upsampling, no clipping.
    pub fn decode_unclipped(&self, z: &LatentTensor) -> Result<PixelGrid> {
        let [c, lh, lw] = z.shape();
        if c != 3 {
            return Err(Error::Dimension(format!("toy decode expects 3 latent channels, got {c}")));
        }
        let k = self.codec.factor();
        let (h, w) = (lh * k, lw * k);
        let mut values = vec![0.0; h * w * 3];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..3 {
                    values[(y * w + x) * 3 + ch] = z.get(ch, y / k, x / k) / self.latent_scale;
                }
            }
        }
        PixelGrid::new(h, w, values)
    }
}

impl DenoiseBackend for ToyBackend {
    fn capabilities(&self) -> BTreeSet<Capability> {
        [
            Capability::Encode,
            Capability::Decode,
            Capability::PredictEps,
            Capability::EmbedImage,
            Capability::EmbedText,
            Capability::ExtractFeatures,
        ]
        .into_iter()
        .collect()
    }

    fn model_id(&self) -> String {
        format!("toy-{}", self.codec)
    }

    fn encode(&self, image: &ImageRgb) -> Result<LatentTensor> {
        self.encode_grid(&image.to_grid())
    }

    fn decode(&self, z: &LatentTensor) -> Result<ImageRgb> {
        Ok(self.decode_unclipped(z)?.clip())
    }

    fn predict_eps(&self, z: &LatentTensor, t: usize, _prompt: &str, _guidance: f64) -> Result<LatentTensor> {
        Ok(z.scaled(self.gain.at(t)))
    }

    /// Mean colour.
    fn embed_image(&self, image: &ImageRgb) -> Result<Vec<f64>> {
        let n = image.n_pixels() as f64;
        let mut mean = vec![0.0; 3];
        for p in image.pixels().chunks_exact(3) {
            for c in 0..3 {
                mean[c] += p[c];
            }
        }
        Ok(mean.into_iter().map(|s| s / n).collect())
    }

    /// A fixed positive 3-vector derived from the text.
    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let h = seeds::label(text);
        Ok((0..3u64)
            .map(|i| 0.25 + 0.75 * (seeds::derive(h, &[i]) >> 11) as f64 / (1u64 << 53) as f64)
            .collect())
    }

    /// Block means on a `TOY_FEATURE_GRID`² grid, per channel.
    fn extract_features(&self, image: &ImageRgb) -> Result<Vec<f64>> {
        let (h, w) = (image.height(), image.width());
        let (gh, gw) = (TOY_FEATURE_GRID.min(h), TOY_FEATURE_GRID.min(w));
        let mut sums = vec![0.0; gh * gw * 3];
        let mut counts = vec![0usize; gh * gw];
        for y in 0..h {
            let by = y * gh / h;
            for x in 0..w {
                let b = by * gw + x * gw / w;
                counts[b] += 1;
                for c in 0..3 {
                    sums[b * 3 + c] += image.get(y, x, c);
                }
            }
        }
        Ok(sums
            .iter()
            .enumerate()
            .map(|(i, s)| s / counts[i / 3] as f64)
            .collect())
    }
}
