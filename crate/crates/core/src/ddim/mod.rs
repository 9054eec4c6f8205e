//! DDIM schedule and sampling math.
//!
//! Internally the forward process is `z_t = √ᾱ_t·x₀ + √(1−ᾱ_t)·ε`, the
//! convention pretrained latent-diffusion backends use, and every inversion
//! identity in this module holds in that convention.
//! [`forward_diffuse_literal`] exposes the variant with a bare `ᾱ_t`
//! coefficient on `x₀` for side-by-side analysis.

mod analysis;
mod sampler;
mod tensor;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use analysis::{latent_injection_compare, residual_analysis, BranchSummary, ComparisonReport, ResidualReport};
pub use sampler::{img2img, img2img_from_latent, iterations_for, Img2ImgOutput};
pub use tensor::LatentTensor;

pub const DEFAULT_TRAIN_TIMESTEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 0.00085;
pub const DEFAULT_BETA_END: f64 = 0.012;
pub const DEFAULT_PROMPT: &str = "a realistic dendrite sample";

/// Cumulative signal-retention coefficients ᾱ_t, non-increasing in t.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    alphas: Vec<f64>,
    beta_start: f64,
    beta_end: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        make_schedule(DEFAULT_TRAIN_TIMESTEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule parameters are valid")
    }
}

impl Schedule {
    /// Wrap an explicit ᾱ sequence, checking range and monotonicity.
    pub fn from_alphas(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return Err(Error::Config(format!("schedule value {a} outside (0, 1]")));
        }
        if alphas.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Config("schedule values must be non-increasing".into()));
        }
        Ok(Self {
            alphas,
            beta_start: f64::NAN,
            beta_end: f64::NAN,
        })
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn beta_range(&self) -> (f64, f64) {
        (self.beta_start, self.beta_end)
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.alphas.get(t).copied().ok_or_else(|| {
            Error::Config(format!("step {t} outside schedule of length {}", self.alphas.len()))
        })
    }

    /// `√(1−ᾱ_t)/√ᾱ_t`, the gain with which an ε shift moves the x₀ estimate.
    pub fn alpha_hat(&self, t: usize) -> Result<f64> {
        let a = self.alpha(t)?;
        Ok((1.0 - a).sqrt() / a.sqrt())
    }

    /// Evenly strided inference timesteps, descending.
    pub fn inference_timesteps(&self, steps: u32) -> Result<Vec<usize>> {
        let steps = steps as usize;
        if steps == 0 || steps > self.len() {
            return Err(Error::Config(format!(
                "{steps} inference steps do not fit a schedule of length {}",
                self.len()
            )));
        }
        let ratio = self.len() / steps;
        Ok((0..steps).rev().map(|s| s * ratio).collect())
    }
}

/// Scaled-linear schedule: β linear in √β space, ᾱ_t = ∏ (1 − β_s).
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<Schedule> {
    if steps == 0 {
        return Err(Error::Config("schedule needs T ≥ 1".into()));
    }
    if !(beta_start >= 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Config(format!(
            "need 0 ≤ beta_start ≤ beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let (lo, hi) = (beta_start.sqrt(), beta_end.sqrt());
    let mut alphas = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for i in 0..steps {
        let beta = if steps == 1 || lo == hi {
            beta_start
        } else {
            let root = lo + (hi - lo) * i as f64 / (steps - 1) as f64;
            root * root
        };
        acc *= 1.0 - beta;
        alphas.push(acc);
    }
    Ok(Schedule {
        alphas,
        beta_start,
        beta_end,
    })
}

/// img2img parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    pub steps: u32,
    pub strength: f64,
    pub guidance: f64,
    pub prompt: String,
    pub seed: u64,
    pub eta: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            steps: 10,
            strength: 0.3,
            guidance: 10.0,
            prompt: DEFAULT_PROMPT.into(),
            seed: 0,
            eta: 0.0,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::Config("diffusion steps must be ≥ 1".into()));
        }
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(Error::Config(format!("strength {} outside [0, 1]", self.strength)));
        }
        if !(self.guidance >= 0.0 && self.guidance.is_finite()) {
            return Err(Error::Config(format!("guidance {} must be ≥ 0", self.guidance)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!("eta {} outside [0, 1]", self.eta)));
        }
        Ok(())
    }
}

/// `√ᾱ_t·x₀ + √(1−ᾱ_t)·ε`.
pub fn forward_diffuse(x0: &LatentTensor, t: usize, eps: &LatentTensor, sched: &Schedule) -> Result<LatentTensor> {
    let a = sched.alpha(t)?;
    x0.lincomb(a.sqrt(), eps, (1.0 - a).sqrt())
}

/// `ᾱ_t·x₀ + √(1−ᾱ_t)·ε`: the bare-coefficient variant. Not inverted by [`predict_x0`].
pub fn forward_diffuse_literal(
    x0: &LatentTensor,
    t: usize,
    eps: &LatentTensor,
    sched: &Schedule,
) -> Result<LatentTensor> {
    let a = sched.alpha(t)?;
    x0.lincomb(a, eps, (1.0 - a).sqrt())
}

/// `(z_t − √(1−ᾱ_t)·ε̂)/√ᾱ_t`.
pub fn predict_x0(z_t: &LatentTensor, eps_pred: &LatentTensor, t: usize, sched: &Schedule) -> Result<LatentTensor> {
    let a = sched.alpha(t)?;
    predict_x0_at(z_t, eps_pred, a)
}

fn predict_x0_at(z_t: &LatentTensor, eps_pred: &LatentTensor, a: f64) -> Result<LatentTensor> {
    if a <= 0.0 {
        return Err(Error::Singularity(format!("ᾱ_t = {a} has no inverse")));
    }
    let inv = 1.0 / a.sqrt();
    z_t.lincomb(inv, eps_pred, -(1.0 - a).sqrt() * inv)
}

/// One DDIM update from `t` to `t_prev` (`None` = fully denoised, ᾱ = 1).
///
/// With `eta = 0` the update is deterministic and `rng` is untouched.
pub fn ddim_step<R: Rng + ?Sized>(
    z_t: &LatentTensor,
    eps_pred: &LatentTensor,
    t: usize,
    t_prev: Option<usize>,
    sched: &Schedule,
    eta: f64,
    rng: &mut R,
) -> Result<LatentTensor> {
    if let Some(p) = t_prev {
        if p >= t {
            return Err(Error::Sequencing { t, t_prev });
        }
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Config(format!("eta {eta} outside [0, 1]")));
    }
    let a_t = sched.alpha(t)?;
    let a_prev = match t_prev {
        Some(p) => sched.alpha(p)?,
        None => 1.0,
    };
    let x0 = predict_x0_at(z_t, eps_pred, a_t)?;
    let sigma = if eta > 0.0 && a_t < 1.0 {
        eta * ((1.0 - a_prev) / (1.0 - a_t)).sqrt() * (1.0 - a_t / a_prev).max(0.0).sqrt()
    } else {
        0.0
    };
    let dir = (1.0 - a_prev - sigma * sigma).max(0.0).sqrt();
    let mut out = x0.lincomb(a_prev.sqrt(), eps_pred, dir)?;
    if sigma > 0.0 {
        let noise: Vec<f64> = (0..out.len()).map(|_| StandardNormal.sample(rng)).collect();
        let noise = LatentTensor::new(out.shape(), noise)?;
        out = out.lincomb(1.0, &noise, sigma)?;
    }
    Ok(out)
}
