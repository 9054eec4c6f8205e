use crate::error::{Error, Result};

/// `100 · max(0, cos(image_vec, text_vec))`.
pub fn clip_score(image_vec: &[f64], text_vec: &[f64]) -> Result<f64> {
    if image_vec.len() != text_vec.len() {
        return Err(Error::Dimension(format!(
            "embedding dimensions differ: {} vs {}",
            image_vec.len(),
            text_vec.len()
        )));
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (na, nb) = (norm(image_vec), norm(text_vec));
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(Error::DegenerateInput("embedding with zero or non-finite norm".into()));
    }
    let dot: f64 = image_vec.iter().zip(text_vec).map(|(a, b)| a * b).sum();
    Ok(100.0 * (dot / (na * nb)).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert!((clip_score(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 100.0).abs() < 1e-12);
        assert_eq!(clip_score(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(clip_score(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(clip_score(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::DegenerateInput(_))));
        assert!(matches!(clip_score(&[1.0], &[1.0, 0.0]), Err(Error::Dimension(_))));
    }

    proptest! {
        #[test]
        fn scale_invariant(a in prop::collection::vec(-1.0f64..1.0, 4), b in prop::collection::vec(-1.0f64..1.0, 4), k in 0.01f64..100.0) {
            prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
            let s = clip_score(&a, &b).unwrap();
            let scaled: Vec<f64> = a.iter().map(|v| v * k).collect();
            prop_assert!((clip_score(&scaled, &b).unwrap() - s).abs() < 1e-9);
        }
    }
}
