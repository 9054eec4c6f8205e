//! Windowed structural similarity with a Gaussian window.

use crate::error::{Error, Result};
use crate::imagecore::{BinaryMask, ImageRgb};

pub const WINDOW: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
/// Dynamic range of the unit-interval pixel domain.
pub const DYNAMIC_RANGE: f64 = 1.0;

/// Anything that can be viewed as one or more equally sized real planes.
pub trait Planes {
    fn dims(&self) -> (usize, usize);
    fn planes(&self) -> Vec<Vec<f64>>;
}

impl Planes for ImageRgb {
    fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    fn planes(&self) -> Vec<Vec<f64>> {
        ImageRgb::planes(self).into()
    }
}

impl Planes for BinaryMask {
    fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    fn planes(&self) -> Vec<Vec<f64>> {
        vec![self.as_f64()]
    }
}

/// A single-channel real image.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayPlane {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl GrayPlane {
    pub fn luma_of(image: &ImageRgb) -> Self {
        Self {
            height: image.height(),
            width: image.width(),
            values: image.luma(),
        }
    }

    pub fn of_mask(mask: &BinaryMask) -> Self {
        Self {
            height: mask.height(),
            width: mask.width(),
            values: mask.as_f64(),
        }
    }
}

impl Planes for GrayPlane {
    fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn planes(&self) -> Vec<Vec<f64>> {
        vec![self.values.clone()]
    }
}

/// Mean SSIM: per-window values averaged over channels, then over windows.
pub fn ssim<A: Planes + ?Sized, B: Planes + ?Sized>(a: &A, b: &B) -> Result<f64> {
    let map = ssim_map(a, b)?;
    Ok(map.values.iter().sum::<f64>() / map.values.len() as f64)
}

/// Channel-averaged SSIM of every fully contained window, row-major over window positions.
#[derive(Debug, Clone, PartialEq)]
pub struct SsimMap {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

pub fn ssim_map<A: Planes + ?Sized, B: Planes + ?Sized>(a: &A, b: &B) -> Result<SsimMap> {
    let (h, w) = a.dims();
    if b.dims() != (h, w) {
        return Err(Error::Dimension(format!(
            "SSIM inputs differ in shape: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let (pa, pb) = (a.planes(), b.planes());
    if pa.len() != pb.len() {
        return Err(Error::Dimension(format!(
            "SSIM inputs differ in channel count: {} vs {}",
            pa.len(),
            pb.len()
        )));
    }
    let ky = gaussian_kernel(odd_at_most(WINDOW, h));
    let kx = gaussian_kernel(odd_at_most(WINDOW, w));
    let (rows, cols) = (h - ky.len() + 1, w - kx.len() + 1);
    let c1 = (K1 * DYNAMIC_RANGE).powi(2);
    let c2 = (K2 * DYNAMIC_RANGE).powi(2);
    let mut acc = vec![0.0; rows * cols];
    for (x, y) in pa.iter().zip(&pb) {
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
        let blur = |p: &[f64]| filter_valid(p, h, w, &ky, &kx);
        let (mx, my) = (blur(x), blur(y));
        let (sxx, syy, sxy) = (blur(&xx), blur(&yy), blur(&xy));
        for i in 0..acc.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            acc[i] += ((2.0 * ux * uy + c1) * (2.0 * cov + c2))
                / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
    }
    let n = pa.len() as f64;
    Ok(SsimMap {
        rows,
        cols,
        values: acc.into_iter().map(|v| v / n).collect(),
    })
}

fn odd_at_most(window: usize, extent: usize) -> usize {
    let s = window.min(extent);
    if s % 2 == 0 {
        s - 1
    } else {
        s
    }
}

fn gaussian_kernel(size: usize) -> Vec<f64> {
    let half = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable "valid" correlation.
fn filter_valid(p: &[f64], h: usize, w: usize, ky: &[f64], kx: &[f64]) -> Vec<f64> {
    let cols = w - kx.len() + 1;
    let rows = h - ky.len() + 1;
    let mut horiz = vec![0.0; h * cols];
    for y in 0..h {
        let row = &p[y * w..(y + 1) * w];
        for x in 0..cols {
            horiz[y * cols + x] = kx.iter().zip(&row[x..]).map(|(k, v)| k * v).sum();
        }
    }
    let mut out = vec![0.0; rows * cols];
    for y in 0..rows {
        for (j, k) in ky.iter().enumerate() {
            let src = &horiz[(y + j) * cols..(y + j + 1) * cols];
            for (o, v) in out[y * cols..(y + 1) * cols].iter_mut().zip(src) {
                *o += k * v;
            }
        }
    }
    out
}
