//! Parameter sweeps, the noise-type study and the four-arm ablation.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::JobConfig;
use super::generate::{plan_sample, render_sample, Rendered, ResolvedStyle, Treatment};
use super::masks::{load_masks, resolve_mask_paths};
use crate::backend::{Capability, DenoiseBackend};
use crate::error::{Error, Result};
use crate::imagecore::{load_image, BinaryMask, ImageRgb};
use crate::metrics::{
    clip_score, frechet_distance, gaussian_stats, morphology_similarity_with, nfid, shannon_entropy,
    train_mask_classifier, EvalParams, GaussianStats, Measured, MetricReport, MorphologyTarget,
};
use crate::prism::{NoiseKind, NoiseSpec};

/// One evaluated image: its mask, the styled input and the generated output.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSample {
    pub mask_index: usize,
    pub mask: BinaryMask,
    pub input: Option<ImageRgb>,
    pub output: ImageRgb,
}

/// Aggregate metrics over a set of generated samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetMetrics {
    pub n_samples: usize,
    /// Mean pairwise RMS pixel distance between outputs of the same mask.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diversity: Option<Measured>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy_input: Option<Measured>,
    /// Output metrics; `entropy_bits` is the output entropy.
    pub report: MetricReport,
}

/// RMS distance between two images of equal shape.
pub fn rms_distance(a: &ImageRgb, b: &ImageRgb) -> f64 {
    let n = a.pixels().len() as f64;
    (a.pixels().iter().zip(b.pixels()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / n).sqrt()
}

/// Mean pairwise output distance within each mask group, averaged over all pairs.
pub fn diversity(samples: &[EvalSample]) -> Option<Measured> {
    let mut groups: BTreeMap<usize, Vec<&ImageRgb>> = BTreeMap::new();
    for s in samples {
        groups.entry(s.mask_index).or_default().push(&s.output);
    }
    let pairs: Vec<(&ImageRgb, &ImageRgb)> = groups
        .values()
        .flat_map(|g| (0..g.len()).flat_map(move |i| (i + 1..g.len()).map(move |j| (g[i], g[j]))))
        .collect();
    if pairs.is_empty() {
        return None;
    }
    let dists: Vec<f64> = pairs.par_iter().map(|(a, b)| rms_distance(a, b)).collect();
    let n = samples.len();
    Measured::mean_of(&dists).map(|m| Measured::new(m.value, n))
}

/// Gaussian fit of backend features over a reference image directory.
pub fn reference_stats(dir: &std::path::Path, backend: &dyn DenoiseBackend) -> Result<GaussianStats> {
    let paths = resolve_mask_paths(&[dir.to_path_buf()]).map_err(|e| match e {
        Error::EmptyInput => Error::Config(format!("reference set {} holds no images", dir.display())),
        other => other,
    })?;
    let feats: Vec<Vec<f64>> = paths
        .par_iter()
        .map(|p| backend.extract_features(&load_image(p)?))
        .collect::<Result<_>>()?;
    gaussian_stats(&feats)
}

/// Everything needed to score sets against one configuration.
pub struct Evaluator<'a> {
    pub params: EvalParams,
    pub prompt: String,
    pub seed: u64,
    backend: &'a dyn DenoiseBackend,
    reference: Option<GaussianStats>,
}

impl<'a> Evaluator<'a> {
    /// Loads the FID reference set when FID is enabled.
    pub fn new(params: &EvalParams, prompt: &str, seed: u64, backend: &'a dyn DenoiseBackend) -> Result<Self> {
        let reference = if params.fid {
            let dir = params
                .reference
                .as_ref()
                .ok_or_else(|| Error::Config("FID is enabled but no reference set is configured".into()))?;
            if !backend.supports(Capability::ExtractFeatures) {
                return Err(Error::Unsupported(Capability::ExtractFeatures));
            }
            Some(reference_stats(dir, backend)?)
        } else {
            None
        };
        Ok(Self {
            params: params.clone(),
            prompt: prompt.to_owned(),
            seed,
            backend,
            reference,
        })
    }

    pub fn evaluate(&self, samples: &[EvalSample]) -> Result<SetMetrics> {
        let n = samples.len();
        if n < self.params.min_samples.max(1) {
            return Err(Error::InsufficientData(format!(
                "{n} samples, at least {} required",
                self.params.min_samples.max(1)
            )));
        }
        let p = &self.params;
        let mut report = MetricReport {
            params: Some(p.clone()),
            ..Default::default()
        };
        if let Some(reference) = &self.reference {
            let feats: Vec<Vec<f64>> = samples
                .par_iter()
                .map(|s| self.backend.extract_features(&s.output))
                .collect::<Result<_>>()?;
            let fid = frechet_distance(&gaussian_stats(&feats)?, reference)?;
            report.fid = Some(Measured::new(fid, n));
            if let Some(z) = p.nfid_normalizer {
                report.nfid = Some(Measured::new(nfid(fid, z)?, n));
            }
        }
        if p.ssim {
            report.ssim = Some(self.morphology(samples)?);
        }
        if p.clip && self.backend.supports(Capability::EmbedImage) && self.backend.supports(Capability::EmbedText) {
            let text = self.backend.embed_text(&self.prompt)?;
            let scores: Vec<f64> = samples
                .par_iter()
                .map(|s| clip_score(&self.backend.embed_image(&s.output)?, &text))
                .collect::<Result<_>>()?;
            report.clip_score = Measured::mean_of(&scores);
        }
        let mut entropy_input = None;
        if p.entropy {
            let out: Vec<f64> = samples
                .iter()
                .map(|s| shannon_entropy(&s.output, p.entropy_bins))
                .collect::<Result<_>>()?;
            report.entropy_bits = Measured::mean_of(&out);
            let inputs: Vec<f64> = samples
                .iter()
                .filter_map(|s| s.input.as_ref())
                .map(|i| shannon_entropy(i, p.entropy_bins))
                .collect::<Result<_>>()?;
            entropy_input = Measured::mean_of(&inputs);
        }
        Ok(SetMetrics {
            n_samples: n,
            diversity: diversity(samples),
            entropy_input,
            report,
        })
    }

    /// Held-out morphology SSIM: train on even-positioned samples, score the odd ones
    /// (a single sample is both trained and scored).
    fn morphology(&self, samples: &[EvalSample]) -> Result<Measured> {
        let p = &self.params;
        let (train, test): (Vec<_>, Vec<_>) = if samples.len() == 1 {
            (vec![&samples[0]], vec![&samples[0]])
        } else {
            let (a, b): (Vec<_>, Vec<_>) = samples.iter().enumerate().partition(|(i, _)| i % 2 == 0);
            (a.into_iter().map(|x| x.1).collect(), b.into_iter().map(|x| x.1).collect())
        };
        let clf = match p.morphology_target {
            MorphologyTarget::PredictedMask => {
                let pairs: Vec<(ImageRgb, BinaryMask)> =
                    train.iter().map(|s| (s.output.clone(), s.mask.clone())).collect();
                Some(train_mask_classifier(&pairs, self.seed, &p.classifier)?)
            }
            MorphologyTarget::GeneratedImage => None,
        };
        let scores: Vec<f64> = test
            .par_iter()
            .map(|s| morphology_similarity_with(&s.output, &s.mask, clf.as_ref(), p.morphology_target))
            .collect::<Result<_>>()?;
        Ok(Measured::new(scores.iter().sum::<f64>() / scores.len() as f64, scores.len()))
    }
}

struct Workspace {
    masks: Vec<(PathBuf, BinaryMask)>,
    style: ResolvedStyle,
    sched: crate::ddim::Schedule,
    pool: rayon::ThreadPool,
}

impl Workspace {
    fn new(cfg: &JobConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            masks: load_masks(&cfg.masks, cfg.mask_threshold)?,
            style: ResolvedStyle::resolve(&cfg.style)?,
            sched: cfg.schedule.build()?,
            pool: cfg.thread_pool()?,
        })
    }

    /// Render every mask × sample of `cfg` with the given treatment.
    fn render(&self, cfg: &JobConfig, treatment: Treatment, backend: &dyn DenoiseBackend) -> Result<Vec<EvalSample>> {
        let jobs: Vec<(usize, usize)> = (0..self.masks.len())
            .flat_map(|m| (0..cfg.samples_per_mask).map(move |s| (m, s)))
            .collect();
        self.pool.install(|| {
            jobs.par_iter()
                .map(|&(m, s)| {
                    let plan = plan_sample(cfg, m, s);
                    let mask = &self.masks[m].1;
                    let Rendered { input, output, .. } =
                        render_sample(mask, &plan, &self.style, treatment, backend, &self.sched)?;
                    Ok(EvalSample {
                        mask_index: m,
                        mask: mask.clone(),
                        input: Some(input),
                        output,
                    })
                })
                .collect()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub metrics: SetMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    /// Name of the swept parameter.
    pub axis: String,
    pub points: Vec<SweepPoint>,
    pub min_samples: usize,
}

/// Generate and score one set per noise σ; all points share per-sample seeds.
pub fn run_noise_sweep(cfg: &JobConfig, sigmas: &[f64], backend: &dyn DenoiseBackend) -> Result<SweepReport> {
    if sigmas.is_empty() {
        return Err(Error::Config("sweep needs at least one sigma".into()));
    }
    let ws = Workspace::new(cfg)?;
    let eval = Evaluator::new(&cfg.eval, &cfg.diffusion.prompt, cfg.seed, backend)?;
    let mut points = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let point_cfg = JobConfig {
            noise: NoiseSpec { sigma, ..cfg.noise },
            ..cfg.clone()
        };
        point_cfg.noise.validate()?;
        let samples = ws.render(&point_cfg, Treatment::FULL, backend)?;
        log::info!("sweep sigma={sigma}: {} samples", samples.len());
        points.push(SweepPoint {
            value: sigma,
            metrics: eval.evaluate(&samples)?,
        });
    }
    Ok(SweepReport {
        axis: "noise_sigma".into(),
        points,
        min_samples: cfg.eval.min_samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseTypeRow {
    pub kind: NoiseKind,
    pub noise: NoiseSpec,
    pub metrics: SetMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseTypeReport {
    pub rows: Vec<NoiseTypeRow>,
}

/// One set per noise kind, using the other noise parameters from the config.
pub fn run_noise_type_study(cfg: &JobConfig, kinds: &[NoiseKind], backend: &dyn DenoiseBackend) -> Result<NoiseTypeReport> {
    if kinds.is_empty() {
        return Err(Error::Config("noise-type study needs at least one kind".into()));
    }
    let ws = Workspace::new(cfg)?;
    let eval = Evaluator::new(&cfg.eval, &cfg.diffusion.prompt, cfg.seed, backend)?;
    let mut rows = Vec::new();
    for &kind in kinds {
        let noise = NoiseSpec { kind, ..cfg.noise };
        noise.validate()?;
        let kind_cfg = JobConfig { noise, ..cfg.clone() };
        let samples = ws.render(&kind_cfg, Treatment::FULL, backend)?;
        rows.push(NoiseTypeRow {
            kind,
            noise,
            metrics: eval.evaluate(&samples)?,
        });
    }
    Ok(NoiseTypeReport { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// The raw mask straight into img2img.
    None,
    NoiseOnly,
    ChromaOnly,
    NoiseChroma,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::None, Arm::NoiseOnly, Arm::ChromaOnly, Arm::NoiseChroma];

    pub fn treatment(self) -> Treatment {
        match self {
            Arm::None => Treatment {
                style: false,
                noise: false,
                chroma: false,
            },
            Arm::NoiseOnly => Treatment {
                style: true,
                noise: true,
                chroma: false,
            },
            Arm::ChromaOnly => Treatment {
                style: true,
                noise: false,
                chroma: true,
            },
            Arm::NoiseChroma => Treatment::FULL,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Arm::None => "none",
            Arm::NoiseOnly => "noise_only",
            Arm::ChromaOnly => "chroma_only",
            Arm::NoiseChroma => "noise_chroma",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmRow {
    pub arm: Arm,
    pub metrics: SetMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub masks: Vec<PathBuf>,
    pub arms: Vec<ArmRow>,
}

/// The four arms over the same masks and per-sample seeds.
pub fn run_ablation(cfg: &JobConfig, backend: &dyn DenoiseBackend) -> Result<AblationReport> {
    run_arms(cfg, &Arm::ALL, backend)
}

/// A subset of the ablation arms, in the given order.
pub fn run_arms(cfg: &JobConfig, arms: &[Arm], backend: &dyn DenoiseBackend) -> Result<AblationReport> {
    if arms.is_empty() {
        return Err(Error::Config("ablation needs at least one arm".into()));
    }
    let ws = Workspace::new(cfg)?;
    let eval = Evaluator::new(&cfg.eval, &cfg.diffusion.prompt, cfg.seed, backend)?;
    let mut rows = Vec::new();
    for &arm in arms {
        let samples = ws.render(cfg, arm.treatment(), backend)?;
        log::info!("ablation arm {}: {} samples", arm.name(), samples.len());
        rows.push(ArmRow {
            arm,
            metrics: eval.evaluate(&samples)?,
        });
    }
    Ok(AblationReport {
        masks: ws.masks.iter().map(|(p, _)| p.clone()).collect(),
        arms: rows,
    })
}
