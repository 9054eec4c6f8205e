//! How an injected pixel-space signal propagates through ε-prediction into the
//! x₀ estimate, and how pixel-space injection compares with perturbing the latent directly.

use serde::{Deserialize, Serialize};

use super::{img2img, img2img_from_latent, predict_x0, DiffusionConfig, LatentTensor, Schedule};
use crate::backend::DenoiseBackend;
use crate::error::{Error, Result};
use crate::imagecore::{ImageRgb, PixelGrid};
use crate::metrics::ssim;
use crate::prism::NoiseField;

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub t: usize,
    /// `ε_θ(z'_t, t) − ε_θ(z_t, t)`.
    pub delta: LatentTensor,
    /// `√(1−ᾱ_t)/√ᾱ_t`.
    pub alpha_hat: f64,
    /// x₀ estimate from the clean latent.
    pub z0_clean: LatentTensor,
    /// x₀ estimate from the clean latent with the shifted prediction `ε_θ(z_t) + δ`.
    pub z0_shifted: LatentTensor,
    /// `max |(z0_shifted − z0_clean) + α̂·δ|`; zero up to rounding.
    pub identity_residual: f64,
    /// x₀ estimate from the re-encoded latent `z'_t` with its own prediction.
    pub z0_reencoded: LatentTensor,
    /// `max |(z0_reencoded − z0_clean) + α̂·δ|`; absorbs the shift of `z_t` itself.
    pub reencoded_residual: f64,
    /// Pixel values of `x + n` that had to be clipped into `[0, 1]` before encoding.
    pub clipped_values: usize,
}

/// Measure the ε-prediction residual δ caused by adding `n` to `x` before encoding.
///
/// `z_t = E(x)` and `z'_t = E(x + n)` are used directly as the step-`t` latents.
pub fn residual_analysis(
    x: &ImageRgb,
    n: &NoiseField,
    backend: &dyn DenoiseBackend,
    t: usize,
    sched: &Schedule,
    cfg: &DiffusionConfig,
) -> Result<ResidualReport> {
    let (shifted, clipped_values) = add_clipped(x, n)?;
    let z_t = backend.encode(x)?;
    let z_shift = backend.encode(&shifted)?;
    let eps = backend.predict_eps(&z_t, t, &cfg.prompt, cfg.guidance)?;
    let eps_shift = backend.predict_eps(&z_shift, t, &cfg.prompt, cfg.guidance)?;
    let delta = eps_shift.sub(&eps)?;
    let alpha_hat = sched.alpha_hat(t)?;

    let z0_clean = predict_x0(&z_t, &eps, t, sched)?;
    let z0_shifted = predict_x0(&z_t, &eps.add(&delta)?, t, sched)?;
    let z0_reencoded = predict_x0(&z_shift, &eps_shift, t, sched)?;
    let residual = |z0: &LatentTensor| -> Result<f64> {
        Ok(z0.sub(&z0_clean)?.lincomb(1.0, &delta, alpha_hat)?.max_abs())
    };
    let identity_residual = residual(&z0_shifted)?;
    let reencoded_residual = residual(&z0_reencoded)?;
    for v in [identity_residual, reencoded_residual] {
        if !v.is_finite() {
            return Err(Error::NumericalDivergence("non-finite residual".into()));
        }
    }
    Ok(ResidualReport {
        t,
        delta,
        alpha_hat,
        z0_clean,
        z0_shifted,
        identity_residual,
        z0_reencoded,
        reencoded_residual,
        clipped_values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchSummary {
    /// SSIM of the branch output against the clean input.
    pub ssim: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub pixel: BranchSummary,
    pub latent: BranchSummary,
    pub pixel_image: ImageRgb,
    pub latent_image: ImageRgb,
    /// RMS of the latent perturbation: RMS of `n` times the codec gain.
    pub perturbation_rms: f64,
}

/// Run img2img with `n` injected in pixel space and, separately, with an
/// equal-energy perturbation added to the clean latent.
///
/// The latent perturbation samples `n` on the latent grid (strided pick,
/// channel `c` taken from pixel channel `c mod 3`) and rescales it to the RMS
/// of `n` times the codec gain (the RMS of an encoded all-ones image), so an
/// identity codec sees exactly the same perturbation in both branches.
pub fn latent_injection_compare(
    x: &ImageRgb,
    n: &NoiseField,
    backend: &dyn DenoiseBackend,
    cfg: &DiffusionConfig,
    sched: &Schedule,
) -> Result<ComparisonReport> {
    let (noisy, _) = add_clipped(x, n)?;
    let pixel_image = img2img(&noisy, backend, cfg, sched)?.image;

    let z = backend.encode(x)?;
    let gain = backend.encode(&ImageRgb::filled(x.height(), x.width(), [1.0; 3]))?.rms();
    let perturbation = latent_perturbation(&n.grid, z.shape(), gain);
    let latent_image = img2img_from_latent(z.add(&perturbation)?, backend, cfg, sched)?.image;

    Ok(ComparisonReport {
        pixel: summarize(x, &pixel_image)?,
        latent: summarize(x, &latent_image)?,
        pixel_image,
        latent_image,
        perturbation_rms: perturbation.rms(),
    })
}

fn latent_perturbation(n: &PixelGrid, shape: [usize; 3], gain: f64) -> LatentTensor {
    let [lc, lh, lw] = shape;
    let sy = (n.height() / lh).max(1);
    let sx = (n.width() / lw).max(1);
    let mut m = LatentTensor::zeros(shape);
    for c in 0..lc {
        for i in 0..lh {
            for j in 0..lw {
                let (y, x) = ((i * sy).min(n.height() - 1), (j * sx).min(n.width() - 1));
                m.set(c, i, j, n.get(y, x, c % 3));
            }
        }
    }
    let target = gain * rms(n.values());
    let current = m.rms();
    if current > 0.0 && current != target {
        m = m.scaled(target / current);
    }
    m
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

fn add_clipped(x: &ImageRgb, n: &NoiseField) -> Result<(ImageRgb, usize)> {
    if n.height() != x.height() || n.width() != x.width() {
        return Err(Error::Dimension(format!(
            "noise {}x{} does not match image {}x{}",
            n.height(),
            n.width(),
            x.height(),
            x.width()
        )));
    }
    let sum: Vec<f64> = x.pixels().iter().zip(n.values()).map(|(a, b)| a + b).collect();
    let clipped = sum.iter().filter(|v| !(0.0..=1.0).contains(*v)).count();
    Ok((ImageRgb::from_unclipped(x.height(), x.width(), sum)?, clipped))
}

fn summarize(reference: &ImageRgb, out: &ImageRgb) -> Result<BranchSummary> {
    let v = out.pixels();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let std = (v.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / v.len() as f64).sqrt();
    Ok(BranchSummary {
        ssim: ssim(reference, out)?,
        mean,
        std,
    })
}
