//! Image geometry: polar resampling of aerial views, the D4 layout
//! operations applied synchronously to both views, and photometric
//! augmentation. Everything here is pure and reentrant.

mod layout;
mod polar;
mod semantic;

pub mod io;

pub use layout::{aerial_layout_op, panorama_layout_op, panorama_layout_op_rounded, LayoutParams};
pub use polar::{polar_resample_plane, polar_transform};
pub use semantic::{
    sample_layout_params, sample_ls_params, sample_semantic_params, semantic_augment,
    SemanticParams, SemanticRanges,
};

use crate::error::{Error, Result};
use ndarray::Array3;

/// Which branch of the siamese model an image feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Ground,
    Aerial,
}

impl std::fmt::Display for View {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            View::Ground => write!(f, "ground"),
            View::Aerial => write!(f, "aerial"),
        }
    }
}

/// RGB image with values in [0,1], stored (height, width, 3).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    data: Array3<f32>,
}

impl ImageBuf {
    pub fn new(data: Array3<f32>) -> Result<Self> {
        if data.shape()[2] != 3 {
            return Err(Error::Shape(format!(
                "image must have 3 channels, got {}",
                data.shape()[2]
            )));
        }
        Ok(Self { data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            data: Array3::zeros((height, width, 3)),
        }
    }

    /// Constant-valued image, useful in tests.
    pub fn splat(height: usize, width: usize, value: f32) -> Self {
        Self {
            data: Array3::from_elem((height, width, 3), value),
        }
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<f32> {
        &mut self.data
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }

    pub fn is_square(&self) -> bool {
        self.height() == self.width()
    }

    /// Largest absolute pixel difference between two images of equal shape.
    pub fn max_abs_diff(&self, other: &ImageBuf) -> f32 {
        assert_eq!(self.data.shape(), other.data.shape(), "shape mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// Mean absolute pixel difference between two images of equal shape.
    pub fn mean_abs_diff(&self, other: &ImageBuf) -> f32 {
        assert_eq!(self.data.shape(), other.data.shape(), "shape mismatch");
        let n = self.data.len() as f32;
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .sum::<f32>()
            / n
    }

    pub fn clamp_unit(&mut self) {
        self.data.mapv_inplace(|v| v.clamp(0.0, 1.0));
    }

    /// Bilinear resize to (out_h, out_w), edge-clamped.
    pub fn resize(&self, out_h: usize, out_w: usize) -> Result<ImageBuf> {
        if out_h < 1 || out_w < 1 {
            return Err(Error::InvalidParam(format!(
                "degenerate resize target {out_h}x{out_w}"
            )));
        }
        if out_h == self.height() && out_w == self.width() {
            return Ok(self.clone());
        }
        let (h, w) = (self.height(), self.width());
        let mut out = Array3::zeros((out_h, out_w, 3));
        let sy = h as f32 / out_h as f32;
        let sx = w as f32 / out_w as f32;
        for i in 0..out_h {
            // Align pixel centers.
            let y = (i as f32 + 0.5) * sy - 0.5;
            for j in 0..out_w {
                let x = (j as f32 + 0.5) * sx - 0.5;
                for c in 0..3 {
                    out[[i, j, c]] = sample_bilinear(&self.data, y, x, c, h, w);
                }
            }
        }
        ImageBuf::new(out)
    }
}

pub(crate) fn sample_bilinear(
    data: &Array3<f32>,
    y: f32,
    x: f32,
    c: usize,
    h: usize,
    w: usize,
) -> f32 {
    let y = y.clamp(0.0, (h - 1) as f32);
    let x = x.clamp(0.0, (w - 1) as f32);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = y - y0 as f32;
    let fx = x - x0 as f32;
    let top = data[[y0, x0, c]] * (1.0 - fx) + data[[y0, x1, c]] * fx;
    let bot = data[[y1, x0, c]] * (1.0 - fx) + data[[y1, x1, c]] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Square aerial image; row 0 is the north edge, column 0 the west edge.
#[derive(Debug, Clone, PartialEq)]
pub struct AerialImage(ImageBuf);

impl AerialImage {
    pub fn new(image: ImageBuf) -> Result<Self> {
        if !image.is_square() {
            return Err(Error::NotSquare {
                height: image.height(),
                width: image.width(),
            });
        }
        Ok(Self(image))
    }

    pub fn side(&self) -> usize {
        self.0.height()
    }

    pub fn image(&self) -> &ImageBuf {
        &self.0
    }

    pub fn into_image(self) -> ImageBuf {
        self.0
    }
}

/// Ground panorama; column 0 faces north, bearings increase clockwise,
/// and the width axis is 360-degree periodic.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundPanorama(ImageBuf);

impl GroundPanorama {
    pub fn new(image: ImageBuf) -> Self {
        Self(image)
    }

    pub fn image(&self) -> &ImageBuf {
        &self.0
    }

    pub fn into_image(self) -> ImageBuf {
        self.0
    }
}
