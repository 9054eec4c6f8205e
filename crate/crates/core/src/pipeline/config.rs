use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::BackendSpec;
use crate::ddim::{make_schedule, DiffusionConfig, Schedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_TRAIN_TIMESTEPS};
use crate::error::{Error, Result};
use crate::imagecore::{ChannelStats, DEFAULT_MASK_THRESHOLD};
use crate::metrics::EvalParams;
use crate::prism::{ChromaSpec, NoiseSpec};

/// Where the reference style statistics come from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "StyleRepr", into = "StyleRepr")]
pub enum StyleSource {
    /// A fresh uniform-random reference image per sample.
    #[default]
    Random,
    /// Per-channel statistics of a reference image on disk.
    Reference(PathBuf),
    /// Statistics given inline.
    Stats(ChannelStats),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum StyleRepr {
    Stats(ChannelStats),
    Text(String),
}

impl From<StyleRepr> for StyleSource {
    fn from(r: StyleRepr) -> Self {
        match r {
            StyleRepr::Stats(s) => StyleSource::Stats(s),
            StyleRepr::Text(t) if t == "random" => StyleSource::Random,
            StyleRepr::Text(t) => StyleSource::Reference(t.into()),
        }
    }
}

impl From<&str> for StyleSource {
    /// `random`, or a reference image path.
    fn from(s: &str) -> Self {
        StyleRepr::Text(s.to_owned()).into()
    }
}

impl From<StyleSource> for StyleRepr {
    fn from(s: StyleSource) -> Self {
        match s {
            StyleSource::Random => StyleRepr::Text("random".into()),
            StyleSource::Reference(p) => StyleRepr::Text(p.to_string_lossy().into_owned()),
            StyleSource::Stats(s) => StyleRepr::Stats(s),
        }
    }
}

impl fmt::Display for StyleSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StyleSource::Random => write!(f, "random"),
            StyleSource::Reference(p) => write!(f, "{}", p.display()),
            StyleSource::Stats(s) => write!(f, "mu={:?} sigma={:?}", s.mu, s.sigma),
        }
    }
}

/// Noise mean used when `noise.mu` is unset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMean {
    #[default]
    Zero,
    /// The style mean, per channel.
    Style,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSpec {
    pub train_timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            train_timesteps: DEFAULT_TRAIN_TIMESTEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
        }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<Schedule> {
        make_schedule(self.train_timesteps, self.beta_start, self.beta_end)
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JobConfig {
    /// Mask files or directories of masks.
    #[serde(deserialize_with = "one_or_many")]
    pub masks: Vec<PathBuf>,
    pub mask_threshold: f64,
    pub style: StyleSource,
    pub noise: NoiseSpec,
    pub noise_mean: NoiseMean,
    pub chroma: ChromaSpec,
    pub diffusion: DiffusionConfig,
    pub schedule: ScheduleSpec,
    pub backend: BackendSpec,
    pub samples_per_mask: usize,
    pub output_dir: PathBuf,
    /// Base seed; every per-sample seed is derived from it.
    pub seed: u64,
    /// Worker threads; 0 uses all cores.
    pub workers: usize,
    pub eval: EvalParams,
}

impl Default for JobConfig {
    fn default() -> Self {
        Self {
            masks: Vec::new(),
            mask_threshold: DEFAULT_MASK_THRESHOLD,
            style: StyleSource::Random,
            noise: NoiseSpec::default(),
            noise_mean: NoiseMean::Zero,
            chroma: ChromaSpec::default(),
            diffusion: DiffusionConfig::default(),
            schedule: ScheduleSpec::default(),
            backend: BackendSpec::default(),
            samples_per_mask: 1,
            output_dir: PathBuf::from("prism-out"),
            seed: 0,
            workers: 0,
            eval: EvalParams::default(),
        }
    }
}

fn one_or_many<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<PathBuf>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(PathBuf),
        Many(Vec<PathBuf>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(p) => vec![p],
        OneOrMany::Many(v) => v,
    })
}

impl JobConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_mask == 0 {
            return Err(Error::Config("samples_per_mask must be ≥ 1".into()));
        }
        if !(self.mask_threshold > 0.0 && self.mask_threshold < 1.0) {
            return Err(Error::Config(format!("mask_threshold {} must lie in (0, 1)", self.mask_threshold)));
        }
        if let Some(z) = self.eval.nfid_normalizer {
            if !(z > 0.0 && z.is_finite()) {
                return Err(Error::Config(format!("nfid_normalizer must be positive, got {z}")));
            }
        }
        if self.eval.entropy_bins < 2 {
            return Err(Error::Config("entropy_bins must be ≥ 2".into()));
        }
        self.noise.validate()?;
        self.diffusion.validate()?;
        self.schedule.build()?;
        Ok(())
    }

    /// Parse TOML or JSON (by extension; TOML otherwise) and resolve relative
    /// paths against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            Self::from_json(&text)?
        } else {
            Self::from_toml(&text)?
        };
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid TOML config: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.masks.iter_mut().for_each(fix);
        fix(&mut self.output_dir);
        if let StyleSource::Reference(p) = &mut self.style {
            fix(p);
        }
        if let Some(p) = &mut self.eval.reference {
            fix(p);
        }
    }

    pub(crate) fn thread_pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
    }
}
