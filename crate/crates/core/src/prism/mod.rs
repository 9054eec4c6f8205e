//! The pixel-domain styling transform.
//!
//! A binary mask is lifted into color space with a reference style
//! (`M·σ + μ` per channel), perturbed by an additive noise field, clipped to
//! the unit interval and finally passed through a chromatic-aberration step
//! that reshuffles channel values without moving structure.

mod perlin;

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{channel_stats, BinaryMask, ChannelStats, ImageRgb, PixelGrid};
use crate::seeds;

pub use perlin::Perlin;

/// Side length of the random reference image used by [`random_style`].
pub const RANDOM_STYLE_SIZE: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    SaltPepper,
    Perlin,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [NoiseKind::Gaussian, NoiseKind::SaltPepper, NoiseKind::Perlin];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::SaltPepper => "salt_pepper",
            NoiseKind::Perlin => "perlin",
        }
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "gaussian" => Ok(NoiseKind::Gaussian),
            "salt_pepper" | "salt-pepper" => Ok(NoiseKind::SaltPepper),
            "perlin" => Ok(NoiseKind::Perlin),
            other => Err(Error::Config(format!("unknown noise kind {other:?}"))),
        }
    }
}

/// Parameters of the injected noise field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Gaussian / Perlin mean. `None` means "use the style mean" inside
    /// [`apply_prism`] and zero for a bare [`sample_noise`].
    pub mu: Option<f64>,
    /// Gaussian std, Perlin std, and salt-and-pepper impulse amplitude.
    pub sigma: f64,
    /// Fraction of pixels hit by salt-and-pepper impulses.
    pub density: f64,
    /// Perlin base cell size in pixels.
    pub scale: f64,
    pub octaves: u32,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Gaussian,
            mu: None,
            sigma: 0.1,
            density: 0.01,
            scale: 32.0,
            octaves: 4,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn gaussian(mu: Option<f64>, sigma: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Gaussian,
            mu,
            sigma,
            seed,
            ..Self::default()
        }
    }

    pub fn salt_pepper(amplitude: f64, density: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::SaltPepper,
            sigma: amplitude,
            density,
            seed,
            ..Self::default()
        }
    }

    pub fn perlin(mu: Option<f64>, sigma: f64, scale: f64, octaves: u32, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Perlin,
            mu,
            sigma,
            scale,
            octaves,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("noise sigma {} must be ≥ 0", self.sigma)));
        }
        if !(0.0..=1.0).contains(&self.density) {
            return Err(Error::Config(format!(
                "salt-and-pepper density {} must lie in [0, 1]",
                self.density
            )));
        }
        if self.octaves < 1 {
            return Err(Error::Config("perlin octaves must be ≥ 1".into()));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("perlin scale {} must be > 0", self.scale)));
        }
        if let Some(mu) = self.mu {
            if !mu.is_finite() {
                return Err(Error::Config("noise mean must be finite".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChromaMode {
    None,
    GlobalPermute,
    PixelShuffle,
    ChannelOffset,
}

impl FromStr for ChromaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(ChromaMode::None),
            "global_permute" | "global-permute" => Ok(ChromaMode::GlobalPermute),
            "pixel_shuffle" | "pixel-shuffle" => Ok(ChromaMode::PixelShuffle),
            "channel_offset" | "channel-offset" => Ok(ChromaMode::ChannelOffset),
            other => Err(Error::Config(format!("unknown chroma mode {other:?}"))),
        }
    }
}

/// Chromatic-aberration parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChromaSpec {
    pub mode: ChromaMode,
    /// Per-channel `(dy, dx)` translation, `channel_offset` mode only.
    pub offsets: [[i32; 2]; 3],
    pub seed: u64,
}

impl Default for ChromaSpec {
    fn default() -> Self {
        Self {
            mode: ChromaMode::PixelShuffle,
            offsets: [[0, 0]; 3],
            seed: 0,
        }
    }
}

impl ChromaSpec {
    pub fn none() -> Self {
        Self {
            mode: ChromaMode::None,
            ..Self::default()
        }
    }

    pub fn with_mode(mode: ChromaMode, seed: u64) -> Self {
        Self {
            mode,
            seed,
            ..Self::default()
        }
    }

    /// Offsets must stay strictly inside the image.
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        for [dy, dx] in self.offsets {
            if dy.unsigned_abs() as usize >= height || dx.unsigned_abs() as usize >= width {
                return Err(Error::Config(format!(
                    "channel offset ({dy}, {dx}) exceeds image bounds {height}x{width}"
                )));
            }
        }
        Ok(())
    }
}

/// A realized noise field (unclipped), tied to the `NoiseSpec` that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseField {
    pub grid: PixelGrid,
    pub spec: NoiseSpec,
}

impl NoiseField {
    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn values(&self) -> &[f64] {
        self.grid.values()
    }

    /// An all-zero field, e.g. for "no injected signal" baselines.
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            grid: PixelGrid::zeros(height, width),
            spec: NoiseSpec {
                sigma: 0.0,
                mu: Some(0.0),
                ..NoiseSpec::default()
            },
        }
    }
}

/// Sample a noise field. An unset `mu` means zero mean.
pub fn sample_noise(spec: &NoiseSpec, height: usize, width: usize) -> Result<NoiseField> {
    let mu = spec.mu.unwrap_or(0.0);
    sample_noise_with_mean(spec, height, width, [mu; 3])
}

/// Sample a noise field with an explicit per-channel mean (Gaussian and Perlin).
pub fn sample_noise_with_mean(
    spec: &NoiseSpec,
    height: usize,
    width: usize,
    mean: [f64; 3],
) -> Result<NoiseField> {
    spec.validate()?;
    if height == 0 || width == 0 {
        return Err(Error::Dimension(format!(
            "noise dimensions must be positive, got {height}x{width}"
        )));
    }
    let n = height * width;
    let mut values = vec![0.0; n * 3];
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.kind {
        NoiseKind::Gaussian => {
            if spec.sigma == 0.0 {
                for px in values.chunks_exact_mut(3) {
                    px.copy_from_slice(&mean);
                }
            } else {
                let unit = Normal::new(0.0, 1.0).expect("unit normal");
                for px in values.chunks_exact_mut(3) {
                    for c in 0..3 {
                        let z: f64 = unit.sample(&mut rng);
                        px[c] = mean[c] + spec.sigma * z;
                    }
                }
            }
        }
        NoiseKind::SaltPepper => {
            // Impulses hit whole pixels: the same signed amplitude in every channel.
            let half = spec.density / 2.0;
            for px in values.chunks_exact_mut(3) {
                let u: f64 = rng.random();
                let v = if u < half {
                    spec.sigma
                } else if u < spec.density {
                    -spec.sigma
                } else {
                    0.0
                };
                px.fill(v);
            }
        }
        NoiseKind::Perlin => {
            for c in 0..3 {
                let lattice = Perlin::new(seeds::derive(spec.seed, &[c as u64]));
                let raw: Vec<f64> = (0..n)
                    .map(|i| {
                        let (y, x) = ((i / width) as f64, (i % width) as f64);
                        // Half-cell offset keeps samples off the zero-valued lattice points.
                        lattice.fbm(
                            (x + 0.5) / spec.scale,
                            (y + 0.5) / spec.scale,
                            spec.octaves,
                        )
                    })
                    .collect();
                let m = raw.iter().sum::<f64>() / n as f64;
                let sd = (raw.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt();
                for (i, r) in raw.iter().enumerate() {
                    let z = if sd > 0.0 { (r - m) / sd } else { 0.0 };
                    values[i * 3 + c] = mean[c] + spec.sigma * z;
                }
            }
        }
    }
    Ok(NoiseField {
        grid: PixelGrid::new(height, width, values)?,
        spec: *spec,
    })
}

const PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

/// Reshuffle channel values according to `spec.mode`.
pub fn chromatic_aberration(image: &ImageRgb, spec: &ChromaSpec) -> ImageRgb {
    let (h, w) = (image.height(), image.width());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.mode {
        ChromaMode::None => image.clone(),
        ChromaMode::GlobalPermute => {
            let perm = PERMUTATIONS[rng.random_range(0..PERMUTATIONS.len())];
            ImageRgb::from_fn(h, w, |y, x| {
                let p = image.rgb(y, x);
                [p[perm[0]], p[perm[1]], p[perm[2]]]
            })
        }
        ChromaMode::PixelShuffle => ImageRgb::from_fn(h, w, |y, x| {
            let perm = PERMUTATIONS[rng.random_range(0..PERMUTATIONS.len())];
            let p = image.rgb(y, x);
            [p[perm[0]], p[perm[1]], p[perm[2]]]
        }),
        ChromaMode::ChannelOffset => ImageRgb::from_fn(h, w, |y, x| {
            std::array::from_fn(|c| {
                let [dy, dx] = spec.offsets[c];
                let sy = (y as i64 - dy as i64).clamp(0, h as i64 - 1) as usize;
                let sx = (x as i64 - dx as i64).clamp(0, w as i64 - 1) as usize;
                image.get(sy, sx, c)
            })
        }),
    }
}

/// Mean of the noise actually used by [`apply_prism`]: the explicit `mu`, or
/// the style mean when unset.
pub fn effective_noise_mean(style: &ChannelStats, noise: &NoiseSpec) -> [f64; 3] {
    match noise.mu {
        Some(mu) => [mu; 3],
        None => style.mu,
    }
}

/// Realize the noise field [`apply_prism`] would use for this mask.
pub fn prism_noise(mask: &BinaryMask, style: &ChannelStats, noise: &NoiseSpec) -> Result<NoiseField> {
    sample_noise_with_mean(
        noise,
        mask.height(),
        mask.width(),
        effective_noise_mean(style, noise),
    )
}

/// `M·σ_c + μ_c + n_c` per channel, before clipping.
pub fn prism_pre_clip(mask: &BinaryMask, style: &ChannelStats, field: &NoiseField) -> Result<PixelGrid> {
    if field.height() != mask.height() || field.width() != mask.width() {
        return Err(Error::Dimension(format!(
            "noise field {}x{} does not match mask {}x{}",
            field.height(),
            field.width(),
            mask.height(),
            mask.width()
        )));
    }
    let mut out = field.grid.clone();
    for (px, &m) in out.values_mut().chunks_exact_mut(3).zip(mask.values()) {
        let m = m as f64;
        for c in 0..3 {
            px[c] += m * style.sigma[c] + style.mu[c];
        }
    }
    Ok(out)
}

/// Styled, noised, clipped and chroma-warped rendering of a mask, from an explicit noise field.
pub fn apply_prism_with_field(
    mask: &BinaryMask,
    style: &ChannelStats,
    field: &NoiseField,
    chroma: &ChromaSpec,
) -> Result<ImageRgb> {
    chroma.validate(mask.height(), mask.width())?;
    let styled = prism_pre_clip(mask, style, field)?.clip();
    Ok(chromatic_aberration(&styled, chroma))
}

/// Styled, noised, clipped and chroma-warped rendering of a mask.
pub fn apply_prism(
    mask: &BinaryMask,
    style: &ChannelStats,
    noise: &NoiseSpec,
    chroma: &ChromaSpec,
) -> Result<ImageRgb> {
    let field = prism_noise(mask, style, noise)?;
    apply_prism_with_field(mask, style, &field, chroma)
}

/// Stats of a uniform-random `RANDOM_STYLE_SIZE`² reference image.
pub fn random_style(seed: u64) -> ChannelStats {
    random_style_sized(seed, RANDOM_STYLE_SIZE, RANDOM_STYLE_SIZE)
}

/// Stats of a uniform-random `height`×`width` reference image.
pub fn random_style_sized(seed: u64, height: usize, width: usize) -> ChannelStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (height.max(1), width.max(1));
    let img = ImageRgb::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()]);
    channel_stats(&img)
}
