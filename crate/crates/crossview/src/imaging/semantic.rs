//! Photometric augmentation: color jitter plus optional blur, grayscale
//! conversion and posterization. Deterministic given the parameter record,
//! shape preserving, output always clamped to [0,1].

use super::{ImageBuf, LayoutParams};
use crate::error::{Error, Result};
use ndarray::Array3;
use rand::Rng;

const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// Photometric parameter record. Factors of 1, sigma 0 and no flags is the
/// identity. Serialized alongside every augmented sample for provenance.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SemanticParams {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub blur_sigma: f32,
    pub grayscale: bool,
    pub posterize_bits: Option<u8>,
}

impl SemanticParams {
    pub fn identity() -> Self {
        Self {
            brightness: 1.0,
            contrast: 1.0,
            saturation: 1.0,
            blur_sigma: 0.0,
            grayscale: false,
            posterize_bits: None,
        }
    }

    pub fn is_identity(&self) -> bool {
        self == &Self::identity()
    }

    pub fn validate(&self) -> Result<()> {
        if self.brightness <= 0.0 || !self.brightness.is_finite() {
            return Err(Error::InvalidParam(format!(
                "brightness factor must be positive, got {}",
                self.brightness
            )));
        }
        if self.contrast <= 0.0 || !self.contrast.is_finite() {
            return Err(Error::InvalidParam(format!(
                "contrast factor must be positive, got {}",
                self.contrast
            )));
        }
        if self.saturation <= 0.0 || !self.saturation.is_finite() {
            return Err(Error::InvalidParam(format!(
                "saturation factor must be positive, got {}",
                self.saturation
            )));
        }
        if self.blur_sigma < 0.0 || !self.blur_sigma.is_finite() {
            return Err(Error::InvalidParam(format!(
                "blur sigma must be >= 0, got {}",
                self.blur_sigma
            )));
        }
        if let Some(bits) = self.posterize_bits {
            if !(3..=8).contains(&bits) {
                return Err(Error::InvalidParam(format!(
                    "posterize bits must be in 3..=8, got {bits}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for SemanticParams {
    fn default() -> Self {
        Self::identity()
    }
}

/// Sampling ranges for [`sample_semantic_params`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SemanticRanges {
    pub brightness: (f32, f32),
    pub contrast: (f32, f32),
    pub saturation: (f32, f32),
    pub blur_prob: f64,
    pub blur_sigma: (f32, f32),
    pub grayscale_prob: f64,
    pub posterize_prob: f64,
}

impl Default for SemanticRanges {
    fn default() -> Self {
        Self {
            brightness: (0.7, 1.3),
            contrast: (0.7, 1.3),
            saturation: (0.7, 1.3),
            blur_prob: 0.3,
            blur_sigma: (0.3, 1.5),
            grayscale_prob: 0.1,
            posterize_prob: 0.1,
        }
    }
}

fn luma_at(data: &Array3<f32>, i: usize, j: usize) -> f32 {
    LUMA[0] * data[[i, j, 0]] + LUMA[1] * data[[i, j, 1]] + LUMA[2] * data[[i, j, 2]]
}

fn gaussian_blur(img: &ImageBuf, sigma: f32) -> ImageBuf {
    let radius = (3.0 * sigma).ceil() as i64;
    if radius < 1 {
        return img.clone();
    }
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let denom = 2.0 * sigma * sigma;
    for t in -radius..=radius {
        kernel.push((-(t * t) as f32 / denom).exp());
    }
    let norm: f32 = kernel.iter().sum();
    for k in kernel.iter_mut() {
        *k /= norm;
    }
    let (h, w) = (img.height(), img.width());
    let clamp_i = |v: i64, hi: usize| v.clamp(0, hi as i64 - 1) as usize;
    // Separable passes, edge-clamped.
    let src = img.data();
    let mut horiz = Array3::zeros((h, w, 3));
    for i in 0..h {
        for j in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (ki, t) in (-radius..=radius).enumerate() {
                    acc += kernel[ki] * src[[i, clamp_i(j as i64 + t, w), c]];
                }
                horiz[[i, j, c]] = acc;
            }
        }
    }
    let mut out = Array3::zeros((h, w, 3));
    for i in 0..h {
        for j in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (ki, t) in (-radius..=radius).enumerate() {
                    acc += kernel[ki] * horiz[[clamp_i(i as i64 + t, h), j, c]];
                }
                out[[i, j, c]] = acc;
            }
        }
    }
    ImageBuf::new(out).expect("shape preserved")
}

/// Apply photometric augmentation in the fixed order brightness, contrast,
/// saturation, blur, grayscale, posterize.
pub fn semantic_augment(img: &ImageBuf, s: &SemanticParams) -> Result<ImageBuf> {
    s.validate()?;
    let mut out = img.clone();

    if s.brightness != 1.0 {
        out.data_mut().mapv_inplace(|v| v * s.brightness);
        out.clamp_unit();
    }

    if s.contrast != 1.0 {
        let (h, w) = (out.height(), out.width());
        let mut mean = 0.0f64;
        for i in 0..h {
            for j in 0..w {
                mean += luma_at(out.data(), i, j) as f64;
            }
        }
        let mean = (mean / (h * w) as f64) as f32;
        out.data_mut()
            .mapv_inplace(|v| mean + (v - mean) * s.contrast);
        out.clamp_unit();
    }

    if s.saturation != 1.0 {
        let (h, w) = (out.height(), out.width());
        let mut next = out.data().clone();
        for i in 0..h {
            for j in 0..w {
                let gray = luma_at(out.data(), i, j);
                for c in 0..3 {
                    next[[i, j, c]] = gray + (out.data()[[i, j, c]] - gray) * s.saturation;
                }
            }
        }
        out = ImageBuf::new(next)?;
        out.clamp_unit();
    }

    if s.blur_sigma > 0.0 {
        out = gaussian_blur(&out, s.blur_sigma);
    }

    if s.grayscale {
        let (h, w) = (out.height(), out.width());
        let mut next = out.data().clone();
        for i in 0..h {
            for j in 0..w {
                let gray = luma_at(out.data(), i, j);
                for c in 0..3 {
                    next[[i, j, c]] = gray;
                }
            }
        }
        out = ImageBuf::new(next)?;
    }

    if let Some(bits) = s.posterize_bits {
        let levels = ((1u32 << bits) - 1) as f32;
        out.data_mut()
            .mapv_inplace(|v| (v * levels).round() / levels);
    }

    out.clamp_unit();
    Ok(out)
}

/// Uniform draw over the eight layout elements, excluding `avoid` when given.
pub fn sample_layout_params<R: Rng>(rng: &mut R, avoid: Option<LayoutParams>) -> LayoutParams {
    let all = LayoutParams::all();
    match avoid {
        None => all[rng.random_range(0..8)],
        Some(a) => {
            let skip = a.index();
            let mut idx = rng.random_range(0..7);
            if idx >= skip {
                idx += 1;
            }
            all[idx]
        }
    }
}

/// Draw photometric parameters from the configured ranges.
pub fn sample_semantic_params<R: Rng>(rng: &mut R, ranges: &SemanticRanges) -> SemanticParams {
    let uniform = |rng: &mut R, (lo, hi): (f32, f32)| {
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    };
    let brightness = uniform(rng, ranges.brightness);
    let contrast = uniform(rng, ranges.contrast);
    let saturation = uniform(rng, ranges.saturation);
    let blur_sigma = if rng.random_bool(ranges.blur_prob) {
        uniform(rng, ranges.blur_sigma)
    } else {
        0.0
    };
    let grayscale = rng.random_bool(ranges.grayscale_prob);
    let posterize_bits = if rng.random_bool(ranges.posterize_prob) {
        Some(rng.random_range(3..=8u8))
    } else {
        None
    };
    SemanticParams {
        brightness,
        contrast,
        saturation,
        blur_sigma,
        grayscale,
        posterize_bits,
    }
}

/// One layout draw (optionally constrained away from `avoid`) plus one
/// photometric draw from `ranges`.
pub fn sample_ls_params<R: Rng>(
    rng: &mut R,
    ranges: &SemanticRanges,
    avoid: Option<LayoutParams>,
) -> (LayoutParams, SemanticParams) {
    let layout = sample_layout_params(rng, avoid);
    let semantic = sample_semantic_params(rng, ranges);
    (layout, semantic)
}
