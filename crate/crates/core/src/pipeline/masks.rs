use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imagecore::{load_mask, BinaryMask};

const MASK_EXTENSIONS: [&str; 5] = ["png", "tif", "tiff", "bmp", "jpg"];

/// Expand files and directories (non-recursive, sorted) into mask files.
pub fn resolve_mask_paths(entries: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in entries {
        if entry.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(entry)
                .map_err(|e| Error::io(entry, e))?
                .filter_map(|d| d.ok().map(|d| d.path()))
                .filter(|p| p.is_file() && is_mask_file(p))
                .collect();
            files.sort();
            out.extend(files);
        } else if entry.is_file() {
            out.push(entry.clone());
        } else {
            return Err(Error::io(
                entry,
                std::io::Error::new(std::io::ErrorKind::NotFound, "mask path does not exist"),
            ));
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(out)
}

fn is_mask_file(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| MASK_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

pub fn load_masks(entries: &[PathBuf], threshold: f64) -> Result<Vec<(PathBuf, BinaryMask)>> {
    resolve_mask_paths(entries)?
        .into_iter()
        .map(|p| load_mask(&p, threshold).map(|m| (p, m)))
        .collect()
}

/// A branching, dendrite-like binary pattern grown from the image centre.
pub fn synthetic_dendrite(height: usize, width: usize, seed: u64) -> BinaryMask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut on = vec![false; height * width];
    let scale = height.min(width) as f64;
    let (cy, cx) = (height as f64 / 2.0, width as f64 / 2.0);

    struct Branch {
        y: f64,
        x: f64,
        angle: f64,
        length: f64,
        radius: f64,
    }
    let roots = rng.random_range(3..6);
    let mut stack: Vec<Branch> = (0..roots)
        .map(|i| Branch {
            y: cy,
            x: cx,
            angle: std::f64::consts::TAU * (i as f64 + rng.random::<f64>() * 0.5) / roots as f64,
            length: scale * rng.random_range(0.25..0.45),
            radius: (scale / 40.0).max(1.0),
        })
        .collect();
    let mut budget = 400;
    while let Some(b) = stack.pop() {
        let (mut y, mut x, mut angle) = (b.y, b.x, b.angle);
        let mut walked = 0.0;
        while walked < b.length {
            disc(&mut on, height, width, y, x, b.radius);
            angle += rng.random_range(-0.15..0.15);
            y += angle.sin();
            x += angle.cos();
            walked += 1.0;
            if y < 0.0 || x < 0.0 || y >= height as f64 || x >= width as f64 {
                break;
            }
            if budget > 0 && walked > 4.0 && rng.random::<f64>() < 0.04 {
                budget -= 1;
                let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
                stack.push(Branch {
                    y,
                    x,
                    angle: angle + side * rng.random_range(0.35..1.0),
                    length: (b.length - walked) * rng.random_range(0.4..0.8),
                    radius: (b.radius * 0.75).max(0.6),
                });
            }
        }
    }
    BinaryMask::from_fn(height, width, |y, x| on[y * width + x])
}

fn disc(on: &mut [bool], h: usize, w: usize, cy: f64, cx: f64, r: f64) {
    let (y0, y1) = ((cy - r).floor().max(0.0) as usize, ((cy + r).ceil() as usize).min(h.saturating_sub(1)));
    let (x0, x1) = ((cx - r).floor().max(0.0) as usize, ((cx + r).ceil() as usize).min(w.saturating_sub(1)));
    for y in y0..=y1 {
        for x in x0..=x1 {
            if (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= r * r {
                on[y * w + x] = true;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::save_mask;

    #[test]
    fn dendrites_are_seeded_and_non_degenerate() {
        let a = synthetic_dendrite(64, 64, 1);
        assert_eq!(a, synthetic_dendrite(64, 64, 1));
        assert_ne!(a, synthetic_dendrite(64, 64, 2));
        let frac = a.count_ones() as f64 / (64.0 * 64.0);
        assert!(frac > 0.02 && frac < 0.6, "{frac}");
    }

    #[test]
    fn directories_expand_sorted() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["b.png", "a.png"] {
            save_mask(&synthetic_dendrite(16, 16, 0), dir.path().join(name)).unwrap();
        }
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let paths = resolve_mask_paths(&[dir.path().to_path_buf()]).unwrap();
        assert_eq!(paths, vec![dir.path().join("a.png"), dir.path().join("b.png")]);
    }

    #[test]
    fn empty_and_missing_inputs() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(resolve_mask_paths(&[dir.path().to_path_buf()]), Err(Error::EmptyInput)));
        assert!(matches!(resolve_mask_paths(&[]), Err(Error::EmptyInput)));
        assert!(matches!(resolve_mask_paths(&[dir.path().join("nope.png")]), Err(Error::Io { .. })));
    }
}
