//! Evaluation metrics: Fréchet distance, SSIM, mask recovery, entropy and CLIP score.

pub mod classifier;
pub mod clip;
pub mod entropy;
pub mod fid;
pub mod ssim;

use serde::{Deserialize, Serialize};

pub use classifier::{
    morphology_similarity, morphology_similarity_with, train_mask_classifier, ClassifierConfig, MaskClassifier,
    MorphologyTarget, TrainingMeta,
};
pub use clip::clip_score;
pub use entropy::{entropy_of_values, shannon_entropy, DEFAULT_BINS};
pub use fid::{frechet_distance, gaussian_stats, nfid, GaussianStats, MomentAccumulator};
pub use ssim::{ssim, ssim_map, GrayPlane, Planes, SsimMap};

/// A metric value together with the number of samples behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    pub n: usize,
}

impl Measured {
    pub fn new(value: f64, n: usize) -> Self {
        Self { value, n }
    }

    /// Mean of a non-empty slice of per-sample values.
    pub fn mean_of(values: &[f64]) -> Option<Self> {
        (!values.is_empty()).then(|| Self::new(values.iter().sum::<f64>() / values.len() as f64, values.len()))
    }
}

/// Settings echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalParams {
    /// FID needs `reference`.
    pub fid: bool,
    pub ssim: bool,
    pub clip: bool,
    pub entropy: bool,
    pub nfid_normalizer: Option<f64>,
    pub morphology_target: MorphologyTarget,
    pub entropy_bins: usize,
    pub classifier: ClassifierConfig,
    /// Directory of real images for FID.
    pub reference: Option<std::path::PathBuf>,
    /// Minimum successful samples behind every reported aggregate.
    pub min_samples: usize,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            fid: false,
            ssim: true,
            clip: true,
            entropy: true,
            nfid_normalizer: None,
            morphology_target: MorphologyTarget::default(),
            entropy_bins: DEFAULT_BINS,
            classifier: ClassifierConfig::default(),
            reference: None,
            min_samples: 2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fid: Option<Measured>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nfid: Option<Measured>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim: Option<Measured>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_score: Option<Measured>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entropy_bits: Option<Measured>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<EvalParams>,
}
