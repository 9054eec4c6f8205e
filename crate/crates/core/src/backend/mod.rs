//! Denoising backends: VAE encode/decode, ε-prediction, whole-image img2img
//! and embedding/feature extraction behind one capability-negotiated trait.

mod remote;
mod toy;
pub mod wire;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::ddim::{DiffusionConfig, LatentTensor};
use crate::error::{Error, Result};
use crate::imagecore::ImageRgb;

pub use remote::{img2img_request, RemoteBackend, RemoteConfig, ENV_BACKEND_TIMEOUT, ENV_BACKEND_URL};
pub use toy::{PredictorGain, ToyBackend, ToyCodec, DEFAULT_LATENT_SCALE, TOY_FEATURE_GRID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Encode,
    Decode,
    PredictEps,
    FullImg2img,
    EmbedImage,
    EmbedText,
    ExtractFeatures,
}

/// Something that can drive image-to-image diffusion.
///
/// Every operation defaults to [`Error::Unsupported`]; implementors override
/// what they advertise in [`DenoiseBackend::capabilities`].
pub trait DenoiseBackend: Send + Sync {
    fn capabilities(&self) -> BTreeSet<Capability>;

    fn model_id(&self) -> String;

    fn supports(&self, capability: Capability) -> bool {
        self.capabilities().contains(&capability)
    }

    /// True when the backend exposes everything the local DDIM loop needs.
    fn supports_latent_loop(&self) -> bool {
        let caps = self.capabilities();
        [Capability::Encode, Capability::Decode, Capability::PredictEps]
            .iter()
            .all(|c| caps.contains(c))
    }

    fn encode(&self, _image: &ImageRgb) -> Result<LatentTensor> {
        Err(Error::Unsupported(Capability::Encode))
    }

    fn decode(&self, _z: &LatentTensor) -> Result<ImageRgb> {
        Err(Error::Unsupported(Capability::Decode))
    }

    fn predict_eps(&self, _z: &LatentTensor, _t: usize, _prompt: &str, _guidance: f64) -> Result<LatentTensor> {
        Err(Error::Unsupported(Capability::PredictEps))
    }

    /// Service-side img2img in one round trip.
    fn img2img(&self, _image: &ImageRgb, _cfg: &DiffusionConfig) -> Result<ImageRgb> {
        Err(Error::Unsupported(Capability::FullImg2img))
    }

    fn embed_image(&self, _image: &ImageRgb) -> Result<Vec<f64>> {
        Err(Error::Unsupported(Capability::EmbedImage))
    }

    fn embed_text(&self, _text: &str) -> Result<Vec<f64>> {
        Err(Error::Unsupported(Capability::EmbedText))
    }

    fn extract_features(&self, _image: &ImageRgb) -> Result<Vec<f64>> {
        Err(Error::Unsupported(Capability::ExtractFeatures))
    }
}

/// Backend selection as it appears in job configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    Toy {
        #[serde(default)]
        codec: ToyCodec,
        #[serde(default)]
        gain: PredictorGain,
        #[serde(default = "default_latent_scale")]
        latent_scale: f64,
    },
    Remote(RemoteConfig),
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Toy {
            codec: ToyCodec::default(),
            gain: PredictorGain::default(),
            latent_scale: DEFAULT_LATENT_SCALE,
        }
    }
}

impl BackendSpec {
    /// Instantiate; remote backends negotiate capabilities on construction.
    pub fn build(&self) -> Result<Box<dyn DenoiseBackend>> {
        match self {
            BackendSpec::Toy {
                codec,
                gain,
                latent_scale,
            } => {
                if !(*latent_scale > 0.0 && latent_scale.is_finite()) {
                    return Err(Error::Config(format!("toy latent_scale must be positive, got {latent_scale}")));
                }
                Ok(Box::new(ToyBackend::new(*codec, gain.clone()).with_latent_scale(*latent_scale)))
            }
            BackendSpec::Remote(cfg) => Ok(Box::new(RemoteBackend::connect(cfg.clone().with_env_overrides()?)?)),
        }
    }
}

fn default_latent_scale() -> f64 {
    DEFAULT_LATENT_SCALE
}
