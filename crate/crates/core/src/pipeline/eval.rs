use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::manifest::Manifest;
use super::study::{EvalSample, Evaluator, SetMetrics};
use crate::backend::DenoiseBackend;
use crate::error::{Error, Result};
use crate::imagecore::{load_image, load_mask, BinaryMask};
use crate::metrics::EvalParams;

/// Score every completed record of a manifest as one set.
pub fn evaluate_manifest(
    path: impl AsRef<Path>,
    params: &EvalParams,
    mask_threshold: f64,
    seed: u64,
    backend: &dyn DenoiseBackend,
) -> Result<SetMetrics> {
    let manifest = Manifest::read(path)?;
    let records = manifest.latest_ok();
    let first = records
        .first()
        .ok_or_else(|| Error::InsufficientData("manifest holds no completed records".into()))?;
    let mut masks: BTreeMap<PathBuf, BinaryMask> = BTreeMap::new();
    let mut samples = Vec::with_capacity(records.len());
    for r in &records {
        let image_path = r
            .image_path
            .as_ref()
            .ok_or_else(|| Error::Serde(format!("record {} is ok but has no image path", r.id)))?;
        if !masks.contains_key(&r.mask_path) {
            masks.insert(r.mask_path.clone(), load_mask(&r.mask_path, mask_threshold)?);
        }
        samples.push(EvalSample {
            mask_index: r.mask_index,
            mask: masks[&r.mask_path].clone(),
            input: None,
            output: load_image(image_path)?,
        });
    }
    Evaluator::new(params, &first.diffusion.prompt, seed, backend)?.evaluate(&samples)
}
