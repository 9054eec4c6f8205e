use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{JobConfig, NoiseMean, StyleSource};
use super::manifest::{
    Manifest, ManifestRecord, ManifestWriter, SampleSeeds, Status, CONFIG_ECHO_FILE, MANIFEST_FILE,
};
use super::masks::load_masks;
use crate::backend::{Capability, DenoiseBackend};
use crate::ddim::{img2img, DiffusionConfig, Schedule};
use crate::error::{Error, Result};
use crate::imagecore::{channel_stats, load_image, save_image, BinaryMask, ChannelStats, ImageRgb};
use crate::metrics::{clip_score, shannon_entropy, Measured, MetricReport};
use crate::prism::{apply_prism, random_style_sized, ChromaMode, ChromaSpec, NoiseSpec};
use crate::seeds;

pub const IMAGES_DIR: &str = "images";

/// Which parts of the styling transform are applied to the mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Treatment {
    /// Lift the mask with style statistics; otherwise the raw mask is the input.
    pub style: bool,
    pub noise: bool,
    pub chroma: bool,
}

impl Treatment {
    pub const FULL: Treatment = Treatment {
        style: true,
        noise: true,
        chroma: true,
    };
}

/// Fully resolved parameters of one generated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePlan {
    pub id: String,
    pub mask_index: usize,
    pub sample_index: usize,
    pub seeds: SampleSeeds,
    pub noise: NoiseSpec,
    pub chroma: ChromaSpec,
    pub diffusion: DiffusionConfig,
}

/// Seeds depend only on the base seed and the (mask, sample) position, so
/// sweep points and ablation arms share them.
pub fn plan_sample(cfg: &JobConfig, mask_index: usize, sample_index: usize) -> SamplePlan {
    let tag = |name: &str| seeds::derive(cfg.seed, &[seeds::label(name), mask_index as u64, sample_index as u64]);
    let seeds = SampleSeeds {
        style: tag("style"),
        noise: tag("noise"),
        chroma: tag("chroma"),
        diffusion: tag("diffusion"),
    };
    let mut noise = cfg.noise;
    noise.seed = seeds.noise;
    if noise.mu.is_none() && cfg.noise_mean == NoiseMean::Zero {
        noise.mu = Some(0.0);
    }
    let mut chroma = cfg.chroma;
    chroma.seed = seeds.chroma;
    let diffusion = DiffusionConfig {
        seed: seeds.diffusion,
        ..cfg.diffusion.clone()
    };
    SamplePlan {
        id: format!("m{mask_index:04}-s{sample_index:03}"),
        mask_index,
        sample_index,
        seeds,
        noise,
        chroma,
        diffusion,
    }
}

/// A style source with any reference image already reduced to statistics.
#[derive(Debug, Clone, PartialEq)]
pub enum ResolvedStyle {
    Random,
    Fixed(ChannelStats),
}

impl ResolvedStyle {
    pub fn resolve(source: &StyleSource) -> Result<Self> {
        Ok(match source {
            StyleSource::Random => ResolvedStyle::Random,
            StyleSource::Reference(p) => ResolvedStyle::Fixed(channel_stats(&load_image(p)?)),
            StyleSource::Stats(s) => ResolvedStyle::Fixed(*s),
        })
    }

    pub fn for_sample(&self, mask: &BinaryMask, seed: u64) -> ChannelStats {
        match self {
            ResolvedStyle::Random => random_style_sized(seed, mask.height(), mask.width()),
            ResolvedStyle::Fixed(s) => *s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub input: ImageRgb,
    pub output: ImageRgb,
    pub style: Option<ChannelStats>,
}

/// Style, noise and chroma the mask as the treatment says, then run img2img.
pub fn render_sample(
    mask: &BinaryMask,
    plan: &SamplePlan,
    style: &ResolvedStyle,
    treatment: Treatment,
    backend: &dyn DenoiseBackend,
    sched: &Schedule,
) -> Result<Rendered> {
    let (input, stats) = if treatment.style {
        let stats = style.for_sample(mask, plan.seeds.style);
        let noise = if treatment.noise {
            plan.noise
        } else {
            NoiseSpec {
                mu: Some(0.0),
                sigma: 0.0,
                ..plan.noise
            }
        };
        let chroma = if treatment.chroma {
            plan.chroma
        } else {
            ChromaSpec {
                mode: ChromaMode::None,
                ..plan.chroma
            }
        };
        (apply_prism(mask, &stats, &noise, &chroma)?, Some(stats))
    } else {
        (mask.to_image(), None)
    };
    let output = img2img(&input, backend, &plan.diffusion, sched)?.image;
    Ok(Rendered {
        input,
        output,
        style: stats,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Discard an existing manifest in the output directory.
    pub force: bool,
    /// Skip ids already completed in an existing manifest.
    pub resume: bool,
}

/// Write the resolved config (all defaults filled in) next to the outputs.
pub fn write_config_echo(cfg: &JobConfig, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(CONFIG_ECHO_FILE);
    std::fs::write(&path, cfg.to_json() + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Generate `samples_per_mask` images per mask into `cfg.output_dir`.
///
/// Per-sample failures become `failed` records and the run continues; the
/// returned manifest holds everything in the file, including earlier runs
/// when resuming.
pub fn generate_dataset(cfg: &JobConfig, backend: &dyn DenoiseBackend, opts: RunOptions) -> Result<Manifest> {
    cfg.validate()?;
    let masks = load_masks(&cfg.masks, cfg.mask_threshold)?;
    let style = ResolvedStyle::resolve(&cfg.style)?;
    let sched = cfg.schedule.build()?;
    let out = &cfg.output_dir;
    let manifest_path = out.join(MANIFEST_FILE);
    if manifest_path.exists() && !opts.resume {
        if !opts.force {
            return Err(Error::OutputExists(out.clone()));
        }
        std::fs::remove_file(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    }
    let images = out.join(IMAGES_DIR);
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    write_config_echo(cfg, out)?;

    let done = if manifest_path.exists() {
        Manifest::read(&manifest_path)?.completed_ids()
    } else {
        Default::default()
    };
    let plans: Vec<SamplePlan> = (0..masks.len())
        .flat_map(|m| (0..cfg.samples_per_mask).map(move |s| (m, s)))
        .map(|(m, s)| plan_sample(cfg, m, s))
        .filter(|p| !done.contains(&p.id))
        .collect();

    let mut writer = ManifestWriter::open(&manifest_path)?;
    let pool = cfg.thread_pool()?;
    let chunk = pool.current_num_threads().max(1) * 2;
    for batch in plans.chunks(chunk) {
        let records: Vec<ManifestRecord> = pool.install(|| {
            batch
                .par_iter()
                .map(|plan| {
                    let (path, mask) = &masks[plan.mask_index];
                    generate_one(cfg, plan, path, mask, &style, backend, &sched, &images)
                })
                .collect()
        });
        for r in &records {
            if let Some(e) = &r.error {
                log::warn!("sample {} failed: {e}", r.id);
            }
        }
        writer.append(&records)?;
    }
    Manifest::read(&manifest_path)
}

#[allow(clippy::too_many_arguments)]
fn generate_one(
    cfg: &JobConfig,
    plan: &SamplePlan,
    mask_path: &Path,
    mask: &BinaryMask,
    style: &ResolvedStyle,
    backend: &dyn DenoiseBackend,
    sched: &Schedule,
    images: &Path,
) -> ManifestRecord {
    let image_path = images.join(format!("{}.png", plan.id));
    let result = render_sample(mask, plan, style, Treatment::FULL, backend, sched).and_then(|r| {
        save_image(&r.output, &image_path)?;
        let metrics = record_metrics(cfg, &r.output, &plan.diffusion.prompt, backend);
        Ok((r.style, metrics))
    });
    let (status, style_stats, metrics, error, image_path) = match result {
        Ok((s, m)) => (Status::Ok, s, m, None, Some(image_path)),
        Err(e) => (Status::Failed, None, None, Some(e.to_string()), None),
    };
    ManifestRecord {
        id: plan.id.clone(),
        mask_path: mask_path.to_path_buf(),
        image_path,
        mask_index: plan.mask_index,
        sample_index: plan.sample_index,
        seeds: plan.seeds,
        style: style_stats,
        noise: plan.noise,
        chroma: plan.chroma,
        diffusion: plan.diffusion.clone(),
        metrics,
        status,
        error,
    }
}

/// Cheap per-image metrics: output entropy, and CLIP score when the backend embeds.
fn record_metrics(cfg: &JobConfig, image: &ImageRgb, prompt: &str, backend: &dyn DenoiseBackend) -> Option<MetricReport> {
    let mut report = MetricReport::default();
    if cfg.eval.entropy {
        report.entropy_bits = shannon_entropy(image, cfg.eval.entropy_bins).ok().map(|v| Measured::new(v, 1));
    }
    if cfg.eval.clip && backend.supports(Capability::EmbedImage) && backend.supports(Capability::EmbedText) {
        report.clip_score = backend
            .embed_image(image)
            .and_then(|i| clip_score(&i, &backend.embed_text(prompt)?))
            .ok()
            .map(|v| Measured::new(v, 1));
    }
    (report != MetricReport::default()).then_some(report)
}
