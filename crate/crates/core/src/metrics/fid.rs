//! Gaussian feature statistics and the Fréchet distance between them.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalues above this negative tolerance are treated as numerically zero.
pub const PSD_TOLERANCE: f64 = -1e-8;

/// Mean and (n−1)-normalized covariance of a feature set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// Row-major `d×d`.
    pub cov: Vec<f64>,
    pub n_samples: usize,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn cov_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim(), self.dim(), &self.cov)
    }

    /// Build from an explicit mean and covariance (symmetrized).
    pub fn from_parts(mean: Vec<f64>, cov: Vec<f64>, n_samples: usize) -> Result<Self> {
        let d = mean.len();
        if d == 0 || cov.len() != d * d {
            return Err(Error::Dimension(format!(
                "covariance of {} entries does not match dimension {d}",
                cov.len()
            )));
        }
        let m = DMatrix::from_row_slice(d, d, &cov);
        let sym = (&m + m.transpose()) * 0.5;
        Ok(Self {
            mean,
            cov: row_major(&sym),
            n_samples,
        })
    }
}

/// Streaming first and second moments; partial accumulators merge associatively.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    n: usize,
    mean: DVector<f64>,
    /// Sum of outer products of deviations from the running mean.
    m2: DMatrix<f64>,
}

impl MomentAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: DVector::zeros(dim),
            m2: DMatrix::zeros(dim, dim),
        }
    }

    pub fn push(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.mean.len() {
            return Err(Error::Dimension(format!(
                "feature of dimension {} pushed into accumulator of dimension {}",
                x.len(),
                self.mean.len()
            )));
        }
        let x = DVector::from_column_slice(x);
        self.n += 1;
        let d_before = &x - &self.mean;
        self.mean += &d_before / self.n as f64;
        let d_after = &x - &self.mean;
        self.m2 += &d_before * d_after.transpose();
        Ok(())
    }

    pub fn merge(mut self, other: Self) -> Result<Self> {
        if other.mean.len() != self.mean.len() {
            return Err(Error::Dimension("cannot merge accumulators of different dimension".into()));
        }
        if other.n == 0 {
            return Ok(self);
        }
        if self.n == 0 {
            return Ok(other);
        }
        let n = (self.n + other.n) as f64;
        let delta = &other.mean - &self.mean;
        let w = self.n as f64 * other.n as f64 / n;
        self.m2 += &other.m2 + &delta * delta.transpose() * w;
        self.mean += &delta * (other.n as f64 / n);
        self.n += other.n;
        Ok(self)
    }

    pub fn finish(self) -> Result<GaussianStats> {
        if self.n < 2 {
            return Err(Error::InsufficientData(format!(
                "covariance needs ≥ 2 samples, got {}",
                self.n
            )));
        }
        let cov = &self.m2 / (self.n - 1) as f64;
        let sym = (&cov + cov.transpose()) * 0.5;
        Ok(GaussianStats {
            mean: self.mean.iter().copied().collect(),
            cov: row_major(&sym),
            n_samples: self.n,
        })
    }
}

/// Sample mean and unbiased covariance.
pub fn gaussian_stats<V: AsRef<[f64]>>(features: &[V]) -> Result<GaussianStats> {
    if features.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "covariance needs ≥ 2 samples, got {}",
            features.len()
        )));
    }
    let mut acc = MomentAccumulator::new(features[0].as_ref().len());
    for f in features {
        acc.push(f.as_ref())?;
    }
    acc.finish()
}

/// `‖μ_a−μ_b‖² + Tr(Σ_a + Σ_b − 2(Σ_a Σ_b)^{1/2})`.
///
/// `Tr (Σ_a Σ_b)^{1/2}` is evaluated as `Tr (Σ_a^{1/2} Σ_b Σ_a^{1/2})^{1/2}`, whose
/// argument is symmetric PSD, so both roots come from symmetric eigendecompositions.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!(
            "feature dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let (ca, cb) = (a.cov_matrix(), b.cov_matrix());
    let root_a = psd_sqrt(&ca)?;
    let inner = &root_a * &cb * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let trace_root: f64 = clamped_eigenvalues(&inner)?.iter().map(|l| l.sqrt()).sum();
    let fid = mean_term + ca.trace() + cb.trace() - 2.0 * trace_root;
    if !fid.is_finite() {
        return Err(Error::NumericalDivergence("Fréchet distance is not finite".into()));
    }
    Ok(fid.max(0.0))
}

/// `fid / normalizer`.
pub fn nfid(fid_value: f64, normalizer: f64) -> Result<f64> {
    if !(normalizer > 0.0 && normalizer.is_finite()) {
        return Err(Error::Config(format!("nFID normalizer {normalizer} must be > 0")));
    }
    Ok(fid_value / normalizer)
}

fn clamped_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let mut out = Vec::with_capacity(eig.eigenvalues.len());
    for &l in eig.eigenvalues.iter() {
        if !l.is_finite() {
            return Err(Error::NumericalDivergence("non-finite eigenvalue".into()));
        }
        if l < PSD_TOLERANCE * m.norm().max(1.0) {
            log::debug!("clamping eigenvalue {l} of a nominally PSD matrix");
        }
        out.push(l.max(0.0));
    }
    Ok(out)
}

fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()),
    );
    if roots.iter().any(|r| !r.is_finite()) {
        return Err(Error::NumericalDivergence("non-finite covariance".into()));
    }
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.transpose())
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn stats(mean: Vec<f64>, cov: Vec<f64>) -> GaussianStats {
        GaussianStats::from_parts(mean, cov, 100).unwrap()
    }

    /// Closed form for 2×2 matrices with non-negative real spectrum:
    /// Tr √M = √(tr M + 2 √det M).
    fn trace_sqrt_2x2(a: &[f64; 4], b: &[f64; 4]) -> f64 {
        let m = [
            a[0] * b[0] + a[1] * b[2],
            a[0] * b[1] + a[1] * b[3],
            a[2] * b[0] + a[3] * b[2],
            a[2] * b[1] + a[3] * b[3],
        ];
        let tr = m[0] + m[3];
        let det = m[0] * m[3] - m[1] * m[2];
        (tr + 2.0 * det.sqrt()).sqrt()
    }

    #[test]
    fn stats_examples() {
        let same = gaussian_stats(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert!(same.cov.iter().all(|&c| c == 0.0));
        let one_d = gaussian_stats(&[[0.0], [2.0]]).unwrap();
        assert_eq!(one_d.mean, vec![1.0]);
        assert_eq!(one_d.cov, vec![2.0]);
        assert!(matches!(gaussian_stats(&[[1.0]]), Err(Error::InsufficientData(_))));

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let draws: Vec<[f64; 2]> = (0..10_000)
            .map(|_| [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)])
            .collect();
        let s = gaussian_stats(&draws).unwrap();
        assert!(s.mean.iter().all(|m| m.abs() < 0.05));
    }

    #[test]
    fn frechet_examples() {
        let a = stats(vec![0.3, -1.0], vec![2.0, 0.4, 0.4, 1.0]);
        assert!(frechet_distance(&a, &a).unwrap() <= 1e-8);
        let x = stats(vec![0.0], vec![1.0]);
        let y = stats(vec![2.0], vec![1.0]);
        assert!((frechet_distance(&x, &y).unwrap() - 4.0).abs() < 1e-9);

        let ca = [2.0, 0.0, 0.0, 1.0];
        let cb = [1.0, 0.5, 0.5, 1.0];
        let oracle = 3.0 + 2.0 - 2.0 * trace_sqrt_2x2(&ca, &cb);
        // scipy.linalg.sqrtm reference: 0.33117156332204623
        assert!((oracle - 0.331_171_563_322_046_2).abs() < 1e-12);
        let got = frechet_distance(&stats(vec![0.0; 2], ca.to_vec()), &stats(vec![0.0; 2], cb.to_vec())).unwrap();
        assert!((got - oracle).abs() < 1e-9);

        assert!(matches!(frechet_distance(&x, &a), Err(Error::Dimension(_))));
    }

    #[test]
    fn nfid_examples() {
        assert_eq!(nfid(0.0, 3.0).unwrap(), 0.0);
        assert_eq!(nfid(1.7, 1.0).unwrap(), 1.7);
        assert!(matches!(nfid(1.0, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn merged_accumulators_match_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..3).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let batch = gaussian_stats(&xs).unwrap();
        let mut left = MomentAccumulator::new(3);
        let mut right = MomentAccumulator::new(3);
        for (i, x) in xs.iter().enumerate() {
            if i < 17 { left.push(x).unwrap() } else { right.push(x).unwrap() }
        }
        let merged = left.merge(right).unwrap().finish().unwrap();
        for (p, q) in batch.cov.iter().zip(&merged.cov) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn diagonal_matches_one_d_closed_form(
            m1 in prop::collection::vec(-3.0f64..3.0, 3),
            m2 in prop::collection::vec(-3.0f64..3.0, 3),
            s1 in prop::collection::vec(0.01f64..4.0, 3),
            s2 in prop::collection::vec(0.01f64..4.0, 3),
        ) {
            let diag = |s: &[f64]| {
                let mut c = vec![0.0; 9];
                for i in 0..3 { c[i * 4] = s[i] * s[i]; }
                c
            };
            let a = stats(m1.clone(), diag(&s1));
            let b = stats(m2.clone(), diag(&s2));
            let closed: f64 = (0..3).map(|i| (m1[i] - m2[i]).powi(2) + (s1[i] - s2[i]).powi(2)).sum();
            prop_assert!((frechet_distance(&a, &b).unwrap() - closed).abs() < 1e-9);
        }

        #[test]
        fn symmetric_and_non_negative(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut sample = |shift: f64| -> Vec<Vec<f64>> {
                (0..12).map(|_| (0..4).map(|_| { let v: f64 = StandardNormal.sample(&mut rng); shift + v }).collect()).collect()
            };
            let a = gaussian_stats(&sample(0.0)).unwrap();
            let b = gaussian_stats(&sample(0.5)).unwrap();
            let ab = frechet_distance(&a, &b).unwrap();
            let ba = frechet_distance(&b, &a).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-8 * (1.0 + ab));
        }
    }
}
