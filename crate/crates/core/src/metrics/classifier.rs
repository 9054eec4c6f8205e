//! Per-pixel random-forest mask recovery.
//!
//! Each pixel is described by its RGB value plus the per-channel mean and
//! standard deviation over a square neighbourhood (edge-clipped). Trees are
//! grown on bootstrap samples with a random feature subset per node and
//! histogram split search; the ensemble votes by averaging leaf class-1 rates.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ssim::{ssim, GrayPlane};
use crate::error::{Error, Result};
use crate::imagecore::{BinaryMask, ImageRgb};
use crate::seeds;

pub const N_FEATURES: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub trees: usize,
    pub max_depth: usize,
    /// Pixels sampled per training image.
    pub pixel_budget: usize,
    /// Side of the square neighbourhood for the local mean/std features.
    pub window: usize,
    /// Histogram bins per candidate split.
    pub bins: usize,
    pub min_leaf: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            trees: 50,
            max_depth: 12,
            pixel_budget: 20_000,
            window: 5,
            bins: 32,
            min_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub n_pairs: usize,
    pub n_samples: usize,
    pub n_positive: usize,
    pub seed: u64,
    pub config: ClassifierConfig,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(p) => return p,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

/// A trained per-pixel mask predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskClassifier {
    trees: Vec<Tree>,
    pub window: usize,
    pub meta: TrainingMeta,
}

/// Per-pixel feature rows, `N_FEATURES` values each, row-major over pixels.
pub fn pixel_features(image: &ImageRgb, window: usize) -> Vec<[f64; N_FEATURES]> {
    let (h, w) = (image.height(), image.width());
    let r = window / 2;
    // Summed-area tables of values and squares, per channel, (h+1)×(w+1).
    let mut sums = vec![[0.0f64; 6]; (h + 1) * (w + 1)];
    for y in 0..h {
        for x in 0..w {
            let p = image.rgb(y, x);
            let mut cell = [0.0; 6];
            for c in 0..3 {
                cell[c] = p[c];
                cell[c + 3] = p[c] * p[c];
            }
            let up = sums[y * (w + 1) + x + 1];
            let left = sums[(y + 1) * (w + 1) + x];
            let diag = sums[y * (w + 1) + x];
            for k in 0..6 {
                cell[k] += up[k] + left[k] - diag[k];
            }
            sums[(y + 1) * (w + 1) + x + 1] = cell;
        }
    }
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            let at = |yy: usize, xx: usize| sums[yy * (w + 1) + xx];
            let (a, b, c, d) = (at(y1, x1), at(y0, x1), at(y1, x0), at(y0, x0));
            let p = image.rgb(y, x);
            let mut f = [0.0; N_FEATURES];
            for ch in 0..3 {
                let s = a[ch] - b[ch] - c[ch] + d[ch];
                let s2 = a[ch + 3] - b[ch + 3] - c[ch + 3] + d[ch + 3];
                let mean = s / n;
                f[ch] = p[ch];
                f[3 + ch] = mean;
                f[6 + ch] = (s2 / n - mean * mean).max(0.0).sqrt();
            }
            out.push(f);
        }
    }
    out
}

/// Train on (image, ground-truth mask) pairs; the mask bits are the labels.
pub fn train_mask_classifier(
    pairs: &[(ImageRgb, BinaryMask)],
    seed: u64,
    config: &ClassifierConfig,
) -> Result<MaskClassifier> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no training pairs".into()));
    }
    if config.trees == 0 || config.max_depth == 0 || config.pixel_budget == 0 || config.bins < 2 {
        return Err(Error::Config("classifier needs ≥1 tree, depth ≥1, budget ≥1, bins ≥2".into()));
    }
    let mut xs: Vec<[f64; N_FEATURES]> = Vec::new();
    let mut ys: Vec<u8> = Vec::new();
    for (i, (image, mask)) in pairs.iter().enumerate() {
        if image.height() != mask.height() || image.width() != mask.width() {
            return Err(Error::Dimension(format!(
                "training pair {i}: image {}x{} vs mask {}x{}",
                image.height(),
                image.width(),
                mask.height(),
                mask.width()
            )));
        }
        let feats = pixel_features(image, config.window);
        let mut idx: Vec<usize> = (0..feats.len()).collect();
        if idx.len() > config.pixel_budget {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, &[seeds::label("subsample"), i as u64]));
            idx.shuffle(&mut rng);
            idx.truncate(config.pixel_budget);
            idx.sort_unstable();
        }
        for j in idx {
            xs.push(feats[j]);
            ys.push(mask.values()[j]);
        }
    }
    let n_positive = ys.iter().filter(|&&y| y == 1).count();
    if n_positive == 0 || n_positive == ys.len() {
        return Err(Error::DegenerateLabels(format!(
            "all {} training pixels belong to class {}",
            ys.len(),
            ys[0]
        )));
    }
    let trees = (0..config.trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, &[seeds::label("tree"), t as u64]));
            grow_tree(&xs, &ys, config, &mut rng)
        })
        .collect();
    Ok(MaskClassifier {
        trees,
        window: config.window,
        meta: TrainingMeta {
            n_pairs: pairs.len(),
            n_samples: ys.len(),
            n_positive,
            seed,
            config: *config,
        },
    })
}

impl MaskClassifier {
    /// Ensemble class-1 probability per pixel.
    pub fn predict_proba(&self, image: &ImageRgb) -> Vec<f64> {
        let feats = pixel_features(image, self.window);
        feats
            .par_iter()
            .map(|f| self.trees.iter().map(|t| t.predict(f)).sum::<f64>() / self.trees.len() as f64)
            .collect()
    }

    pub fn predict_mask(&self, image: &ImageRgb) -> BinaryMask {
        let values = self.predict_proba(image).into_iter().map(|p| (p >= 0.5) as u8).collect();
        BinaryMask::new(image.height(), image.width(), values).expect("prediction matches image shape")
    }

    /// Fraction of pixels whose predicted label equals the mask.
    pub fn accuracy(&self, image: &ImageRgb, mask: &BinaryMask) -> f64 {
        let pred = self.predict_mask(image);
        let hits = pred.values().iter().zip(mask.values()).filter(|(a, b)| a == b).count();
        hits as f64 / mask.values().len() as f64
    }
}

/// What the morphology SSIM compares against the ground-truth mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MorphologyTarget {
    /// The mask recovered from the generated image by the classifier.
    #[default]
    PredictedMask,
    /// The generated image's luma itself.
    GeneratedImage,
}

/// SSIM between the mask recovered from `generated` and the ground truth.
pub fn morphology_similarity(generated: &ImageRgb, gt_mask: &BinaryMask, clf: &MaskClassifier) -> Result<f64> {
    ssim(&clf.predict_mask(generated), gt_mask)
}

pub fn morphology_similarity_with(
    generated: &ImageRgb,
    gt_mask: &BinaryMask,
    clf: Option<&MaskClassifier>,
    target: MorphologyTarget,
) -> Result<f64> {
    match (target, clf) {
        (MorphologyTarget::PredictedMask, Some(clf)) => morphology_similarity(generated, gt_mask, clf),
        (MorphologyTarget::PredictedMask, None) => {
            Err(Error::Config("predicted-mask SSIM needs a trained classifier".into()))
        }
        (MorphologyTarget::GeneratedImage, _) => ssim(&GrayPlane::luma_of(generated), &GrayPlane::of_mask(gt_mask)),
    }
}

fn grow_tree(xs: &[[f64; N_FEATURES]], ys: &[u8], cfg: &ClassifierConfig, rng: &mut ChaCha8Rng) -> Tree {
    let n = xs.len();
    let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let mtry = (N_FEATURES as f64).sqrt().round() as usize;
    let mut nodes = vec![Node::Leaf(0.0)];
    let mut stack = vec![(0usize, sample, 0usize)];
    let all: Vec<usize> = (0..N_FEATURES).collect();
    while let Some((slot, idx, depth)) = stack.pop() {
        let pos = idx.iter().filter(|&&i| ys[i] == 1).count();
        let p = pos as f64 / idx.len() as f64;
        if depth >= cfg.max_depth || pos == 0 || pos == idx.len() || idx.len() < 2 * cfg.min_leaf {
            nodes[slot] = Node::Leaf(p);
            continue;
        }
        let candidates: Vec<usize> = all.choose_multiple(rng, mtry).copied().collect();
        let Some((feature, threshold)) = best_split(xs, ys, &idx, &candidates, cfg) else {
            nodes[slot] = Node::Leaf(p);
            continue;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| xs[i][feature] <= threshold);
        let (li, ri) = (nodes.len(), nodes.len() + 1);
        nodes.push(Node::Leaf(0.0));
        nodes.push(Node::Leaf(0.0));
        nodes[slot] = Node::Split {
            feature,
            threshold,
            left: li,
            right: ri,
        };
        stack.push((ri, r, depth + 1));
        stack.push((li, l, depth + 1));
    }
    Tree { nodes }
}

/// Best Gini split over equal-width histogram edges of the candidate features.
fn best_split(
    xs: &[[f64; N_FEATURES]],
    ys: &[u8],
    idx: &[usize],
    candidates: &[usize],
    cfg: &ClassifierConfig,
) -> Option<(usize, f64)> {
    let n = idx.len() as f64;
    let total_pos = idx.iter().filter(|&&i| ys[i] == 1).count() as f64;
    let mut best: Option<(f64, usize, f64)> = None;
    let mut counts = vec![[0.0f64; 2]; cfg.bins];
    for &f in candidates {
        let (lo, hi) = idx
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| (lo.min(xs[i][f]), hi.max(xs[i][f])));
        if !(hi > lo) {
            continue;
        }
        let width = (hi - lo) / cfg.bins as f64;
        counts.iter_mut().for_each(|c| *c = [0.0; 2]);
        for &i in idx {
            let b = (((xs[i][f] - lo) / width) as usize).min(cfg.bins - 1);
            counts[b][ys[i] as usize] += 1.0;
        }
        let (mut left_n, mut left_pos) = (0.0, 0.0);
        for (b, c) in counts.iter().enumerate().take(cfg.bins - 1) {
            left_n += c[0] + c[1];
            left_pos += c[1];
            let right_n = n - left_n;
            if left_n < cfg.min_leaf as f64 || right_n < cfg.min_leaf as f64 {
                continue;
            }
            let right_pos = total_pos - left_pos;
            let gini = |m: f64, p: f64| {
                let q = p / m;
                m * 2.0 * q * (1.0 - q)
            };
            let impurity = gini(left_n, left_pos) + gini(right_n, right_pos);
            if best.map_or(true, |(bi, _, _)| impurity < bi) {
                best = Some((impurity, f, lo + width * (b + 1) as f64));
            }
        }
    }
    let parent = n * 2.0 * (total_pos / n) * (1.0 - total_pos / n);
    best.filter(|(imp, _, _)| *imp < parent).map(|(_, f, t)| (f, t))
}
