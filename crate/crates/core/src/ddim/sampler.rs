use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ddim_step, forward_diffuse, DiffusionConfig, LatentTensor, Schedule};
use crate::backend::DenoiseBackend;
use crate::error::{Error, Result};
use crate::imagecore::ImageRgb;

#[derive(Debug, Clone, PartialEq)]
pub struct Img2ImgOutput {
    pub image: ImageRgb,
    /// Number of DDIM updates actually executed.
    pub iterations: usize,
}

/// `floor(strength · steps)`, guarded against representation error (0.3·10 → 3).
pub fn iterations_for(cfg: &DiffusionConfig) -> usize {
    let raw = cfg.strength * cfg.steps as f64;
    ((raw + 1e-9).floor() as usize).min(cfg.steps as usize)
}

/// Image-to-image diffusion.
///
/// Backends exposing encode/decode/ε-prediction run the local DDIM loop;
/// backends that only offer whole-image img2img are delegated to.
pub fn img2img(
    image: &ImageRgb,
    backend: &dyn DenoiseBackend,
    cfg: &DiffusionConfig,
    sched: &Schedule,
) -> Result<Img2ImgOutput> {
    cfg.validate()?;
    if !backend.supports_latent_loop() {
        let out = backend.img2img(image, cfg)?;
        return Ok(Img2ImgOutput {
            image: out,
            iterations: iterations_for(cfg),
        });
    }
    let z0 = backend.encode(image)?;
    img2img_from_latent(z0, backend, cfg, sched)
}

/// The local DDIM loop starting from an already encoded (possibly perturbed) latent.
pub fn img2img_from_latent(
    z0: LatentTensor,
    backend: &dyn DenoiseBackend,
    cfg: &DiffusionConfig,
    sched: &Schedule,
) -> Result<Img2ImgOutput> {
    cfg.validate()?;
    let timesteps = sched.inference_timesteps(cfg.steps)?;
    let n_iter = iterations_for(cfg);
    if n_iter == 0 {
        return Ok(Img2ImgOutput {
            image: backend.decode(&z0)?,
            iterations: 0,
        });
    }
    let tail = &timesteps[timesteps.len() - n_iter..];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eps = LatentTensor::randn(z0.shape(), &mut rng);
    let mut z = forward_diffuse(&z0, tail[0], &eps, sched)?;
    for (i, &t) in tail.iter().enumerate() {
        let eps_pred = backend.predict_eps(&z, t, &cfg.prompt, cfg.guidance)?;
        if eps_pred.shape() != z.shape() {
            return Err(Error::Dimension(format!(
                "ε prediction shape {:?} differs from latent {:?}",
                eps_pred.shape(),
                z.shape()
            )));
        }
        z = ddim_step(&z, &eps_pred, t, tail.get(i + 1).copied(), sched, cfg.eta, &mut rng)?;
        if !z.is_finite() {
            return Err(Error::NumericalDivergence(format!("non-finite latent after step t={t}")));
        }
    }
    Ok(Img2ImgOutput {
        image: backend.decode(&z)?,
        iterations: n_iter,
    })
}
