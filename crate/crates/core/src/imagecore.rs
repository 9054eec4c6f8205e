//! Pixel-domain carriers: RGB images on the unit interval, binary masks,
//! per-channel statistics and raster file I/O.
//!
//! Pixels are stored row-major, channel-interleaved (`[(y * w + x) * 3 + c]`),
//! as `f64` in `[0, 1]`. Quantization only happens at file boundaries.

use std::path::Path;

use ::image::{DynamicImage, ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default grayscale threshold used when binarizing mask files.
pub const DEFAULT_MASK_THRESHOLD: f64 = 0.5;

/// Rec. 601 luma weights.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// An unclipped H×W×3 grid of reals, used for intermediate (pre-clip) results.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGrid {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl PixelGrid {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        if values.len() != height * width * 3 {
            return Err(Error::Dimension(format!(
                "expected {} values for {height}x{width}x3, got {}",
                height * width * 3,
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width * 3],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.values[(y * self.width + x) * 3 + c]
    }

    /// Clamp every value to `[0, 1]`. NaN maps to 0.
    pub fn clip(&self) -> ImageRgb {
        ImageRgb {
            height: self.height,
            width: self.width,
            pixels: self.values.iter().map(|&v| clip_unit(v)).collect(),
        }
    }
}

/// An RGB image with every channel value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl ImageRgb {
    /// Build from interleaved RGB values; rejects out-of-range or non-finite values.
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        if pixels.len() != height * width * 3 {
            return Err(Error::Dimension(format!(
                "expected {} values for {height}x{width}x3, got {}",
                height * width * 3,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    /// Build from interleaved values, clamping each into `[0, 1]`.
    pub fn from_unclipped(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        Ok(PixelGrid::new(height, width, values)?.clip())
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let rgb = rgb.map(clip_unit);
        let mut pixels = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            pixels.extend_from_slice(&rgb);
        }
        Self {
            height: height.max(1),
            width: width.max(1),
            pixels,
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut pixels = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend(f(y, x).map(clip_unit));
            }
        }
        Self {
            height,
            width,
            pixels,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    pub fn rgb(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Per-pixel Rec. 601 luma, row-major.
    pub fn luma(&self) -> Vec<f64> {
        self.pixels
            .chunks_exact(3)
            .map(|p| (LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2]).clamp(0.0, 1.0))
            .collect()
    }

    /// One row-major plane per channel.
    pub fn planes(&self) -> [Vec<f64>; 3] {
        std::array::from_fn(|c| self.pixels.iter().skip(c).step_by(3).copied().collect())
    }

    pub fn to_grid(&self) -> PixelGrid {
        PixelGrid {
            height: self.height,
            width: self.width,
            values: self.pixels.clone(),
        }
    }

    pub fn same_shape(&self, other: &ImageRgb) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Largest absolute per-value difference.
    pub fn max_abs_diff(&self, other: &ImageRgb) -> f64 {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// An H×W mask over `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, values: Vec<u8>) -> Result<Self> {
        check_dims(height, width)?;
        if values.len() != height * width {
            return Err(Error::Dimension(format!(
                "expected {} mask values for {height}x{width}, got {}",
                height * width,
                values.len()
            )));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::Config("mask values must be exactly 0 or 1".into()));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                values.push(f(y, x) as u8);
            }
        }
        Self {
            height,
            width,
            values,
        }
    }

    /// Binarize a luma plane: 1 iff value ≥ threshold.
    pub fn from_threshold(height: usize, width: usize, luma: &[f64], threshold: f64) -> Result<Self> {
        let values = luma.iter().map(|&v| (v >= threshold) as u8).collect();
        Self::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.values[y * self.width + x]
    }

    pub fn count_ones(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    pub fn inverted(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|v| 1 - v).collect(),
        }
    }

    /// Values as reals in `{0.0, 1.0}`.
    pub fn as_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    /// White-on-black rendering.
    pub fn to_image(&self) -> ImageRgb {
        ImageRgb::from_fn(self.height, self.width, |y, x| [self.get(y, x) as f64; 3])
    }
}

/// Per-channel population mean and standard deviation of an image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mu: [f64; 3],
    pub sigma: [f64; 3],
    #[serde(default)]
    pub n_pixels: usize,
}

impl ChannelStats {
    /// Stats with the same mean and deviation in every channel.
    pub fn uniform(mu: f64, sigma: f64) -> Self {
        Self {
            mu: [mu; 3],
            sigma: [sigma.max(0.0); 3],
            n_pixels: 1,
        }
    }
}

/// Population (1/N) mean and standard deviation per channel.
pub fn channel_stats(image: &ImageRgb) -> ChannelStats {
    let n = image.n_pixels() as f64;
    let mut mu = [0.0; 3];
    for p in image.pixels.chunks_exact(3) {
        for c in 0..3 {
            mu[c] += p[c];
        }
    }
    mu = mu.map(|s| s / n);
    // Two-pass variance keeps the 1e-9 reproducibility bound on near-constant images.
    let mut var = [0.0; 3];
    for p in image.pixels.chunks_exact(3) {
        for c in 0..3 {
            let d = p[c] - mu[c];
            var[c] += d * d;
        }
    }
    ChannelStats {
        mu,
        sigma: var.map(|v| (v / n).sqrt()),
        n_pixels: image.n_pixels(),
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageRgb> {
    let path = path.as_ref();
    let dynamic = open_raster(path)?;
    Ok(dynamic_to_rgb(&dynamic))
}

/// Load a raster and binarize its grayscale value at `threshold`.
pub fn load_mask(path: impl AsRef<Path>, threshold: f64) -> Result<BinaryMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!(
            "mask threshold {threshold} must lie in (0, 1)"
        )));
    }
    let image = load_image(path)?;
    BinaryMask::from_threshold(image.height, image.width, &image.luma(), threshold)
}

/// Lossless 8-bit encoding; format chosen from the file extension (PNG or TIFF).
pub fn save_image(image: &ImageRgb, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buffer = to_rgb8(image);
    buffer.save(path).map_err(|e| match e {
        ::image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buffer: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(
        mask.width as u32,
        mask.height as u32,
        mask.values.iter().map(|&v| v * 255).collect(),
    )
    .expect("buffer length matches mask dimensions");
    buffer.save(path).map_err(|e| match e {
        ::image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

/// Encode as an in-memory PNG (used for the backend wire format).
pub fn encode_png(image: &ImageRgb) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    DynamicImage::ImageRgb8(to_rgb8(image))
        .write_to(&mut out, ::image::ImageFormat::Png)
        .expect("in-memory PNG encoding cannot fail");
    out.into_inner()
}

/// Decode an in-memory raster.
pub fn decode_raster(bytes: &[u8]) -> Result<ImageRgb> {
    let dynamic = ::image::load_from_memory(bytes)
        .map_err(|e| Error::Decode(format!("raster payload: {e}")))?;
    Ok(dynamic_to_rgb(&dynamic))
}

pub(crate) fn clip_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Dimension(format!(
            "image dimensions must be positive, got {height}x{width}"
        )));
    }
    Ok(())
}

fn open_raster(path: &Path) -> Result<DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ::image::ImageReader::new(std::io::Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

fn dynamic_to_rgb(dynamic: &DynamicImage) -> ImageRgb {
    use ::image::DynamicImage as D;
    let sixteen = matches!(
        dynamic,
        D::ImageLuma16(_) | D::ImageLumaA16(_) | D::ImageRgb16(_) | D::ImageRgba16(_)
    );
    let (width, height) = (dynamic.width() as usize, dynamic.height() as usize);
    let pixels = if sixteen {
        dynamic
            .to_rgb16()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / u16::MAX as f64)
            .collect()
    } else {
        dynamic
            .to_rgb8()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / u8::MAX as f64)
            .collect()
    };
    ImageRgb {
        height,
        width,
        pixels,
    }
}

fn to_rgb8(image: &ImageRgb) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
    let raw = image
        .pixels
        .iter()
        .map(|&v| (v * 255.0).round() as u8)
        .collect();
    ImageBuffer::from_raw(image.width as u32, image.height as u32, raw)
        .expect("buffer length matches image dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray_png(dir: &Path, name: &str, value: u8) -> std::path::PathBuf {
        let path = dir.join(name);
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_pixel(4, 3, Luma([value]));
        buf.save(&path).unwrap();
        path
    }

    #[test]
    fn load_maps_codes_to_unit_interval() {
        let dir = tempfile::tempdir().unwrap();
        for (code, expected) in [(255u8, 1.0), (0, 0.0), (128, 128.0 / 255.0)] {
            let img = load_image(gray_png(dir.path(), &format!("{code}.png"), code)).unwrap();
            assert_eq!((img.height(), img.width()), (3, 4));
            assert!(img.pixels().iter().all(|&v| v == expected));
        }
    }

    #[test]
    fn sixteen_bit_uses_its_own_max_code() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deep.png");
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_pixel(2, 2, Luma([65535]));
        buf.save(&path).unwrap();
        let img = load_image(&path).unwrap();
        assert!(img.pixels().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_image(dir.path().join("missing.png")),
            Err(Error::Io { .. })
        ));
        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"definitely not a png").unwrap();
        assert!(matches!(load_image(&junk), Err(Error::Format { .. })));
    }

    #[test]
    fn mask_threshold_rule() {
        let dir = tempfile::tempdir().unwrap();
        let white = load_mask(gray_png(dir.path(), "w.png", 255), 0.5).unwrap();
        assert_eq!(white.count_ones(), 12);
        let black = load_mask(gray_png(dir.path(), "b.png", 0), 0.5).unwrap();
        assert_eq!(black.count_ones(), 0);
        // 153 / 255 = 0.6
        let gray = load_mask(gray_png(dir.path(), "g.png", 153), 0.5).unwrap();
        assert_eq!(gray.count_ones(), 12);
        assert!(load_mask(gray_png(dir.path(), "t.png", 1), 1.5).is_err());
    }

    #[test]
    fn stats_examples() {
        let c = ImageRgb::filled(5, 7, [0.3, 0.3, 0.3]);
        let s = channel_stats(&c);
        for ch in 0..3 {
            assert!((s.mu[ch] - 0.3).abs() < 1e-15);
            assert!(s.sigma[ch] < 1e-15);
        }

        let half = ImageRgb::from_fn(2, 2, |y, _| [y as f64, 0.0, 0.0]);
        let s = channel_stats(&half);
        assert_eq!(s.mu[0], 0.5);
        assert_eq!(s.sigma[0], 0.5);

        let vals = [0.2, 0.4, 0.6, 0.8];
        let four = ImageRgb::from_fn(1, 4, |_, x| [vals[x]; 3]);
        let s = channel_stats(&four);
        assert!((s.mu[1] - 0.5).abs() < 1e-12);
        assert!((s.sigma[1] - 0.223_606_797_749_978_96).abs() < 1e-12);
    }

    #[test]
    fn save_quantizes_by_rounding() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.png");
        let img = ImageRgb::from_fn(1, 3, |_, x| [[1.0, 0.0, 0.5][x]; 3]);
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.rgb(0, 0), [1.0; 3]);
        assert_eq!(back.rgb(0, 1), [0.0; 3]);
        assert_eq!(back.rgb(0, 2), [128.0 / 255.0; 3]);
    }

    #[test]
    fn save_to_missing_dir_is_io_error() {
        let img = ImageRgb::filled(1, 1, [0.0; 3]);
        assert!(matches!(
            save_image(&img, "/nonexistent-dir/x.png"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn constructors_reject_bad_input() {
        assert!(ImageRgb::new(0, 2, vec![]).is_err());
        assert!(ImageRgb::new(1, 1, vec![0.0, 1.2, 0.0]).is_err());
        assert!(BinaryMask::new(1, 2, vec![0, 2]).is_err());
        assert_eq!(
            ImageRgb::from_unclipped(1, 1, vec![-0.5, 2.0, f64::NAN]).unwrap().pixels(),
            &[0.0, 1.0, 0.0]
        );
    }

    fn small_image() -> impl Strategy<Value = ImageRgb> {
        (1usize..8, 1usize..8).prop_flat_map(|(h, w)| {
            prop::collection::vec(0.0f64..=1.0, h * w * 3)
                .prop_map(move |v| ImageRgb::new(h, w, v).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn png_round_trip_within_half_code(img in small_image()) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("rt.png");
            save_image(&img, &path).unwrap();
            let back = load_image(&path).unwrap();
            prop_assert!(img.max_abs_diff(&back) <= 1.0 / 510.0 + 1e-12);
        }

        #[test]
        fn stats_permutation_invariant(img in small_image(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut order: Vec<usize> = (0..img.n_pixels()).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let shuffled: Vec<f64> = order
                .iter()
                .flat_map(|&i| img.pixels()[i * 3..i * 3 + 3].to_vec())
                .collect();
            let a = channel_stats(&img);
            let b = channel_stats(&ImageRgb::new(img.height(), img.width(), shuffled).unwrap());
            for c in 0..3 {
                prop_assert!((a.mu[c] - b.mu[c]).abs() < 1e-12);
                prop_assert!((a.sigma[c] - b.sigma[c]).abs() < 1e-12);
            }
        }

        #[test]
        fn stats_shift_moves_mean_only(
            vals in prop::collection::vec(0.0f64..0.5, 48),
            k in 0.0f64..0.5,
        ) {
            let a = channel_stats(&ImageRgb::new(4, 4, vals.clone()).unwrap());
            let shifted = ImageRgb::new(4, 4, vals.iter().map(|v| v + k).collect()).unwrap();
            let b = channel_stats(&shifted);
            for c in 0..3 {
                prop_assert!((b.mu[c] - a.mu[c] - k).abs() < 1e-12);
                prop_assert!((b.sigma[c] - a.sigma[c]).abs() < 1e-9);
            }
        }
    }
}
