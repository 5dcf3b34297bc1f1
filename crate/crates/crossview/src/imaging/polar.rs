//! Polar resampling of a square aerial image into a panorama-shaped grid.
//!
//! Output pixel (i, j) looks along bearing theta = 2*pi*j/out_w (clockwise
//! from north) at radius rho = (S/2) * (out_h - i)/out_h from the image
//! center, so row 0 is the outermost ring and the bottom row is near the
//! center. The mapping is centered on the pixel-grid center (S-1)/2, which
//! is what makes the discrete D4 layout operations commute with it; the
//! commutation test below is the single source of truth for the convention.

use super::{sample_bilinear, AerialImage, GroundPanorama, ImageBuf};
use crate::error::{Error, Result};
use ndarray::{Array2, Array3};

/// Resample an aerial image into a (out_h, out_w) panorama-shaped image.
/// Samples falling outside the aerial footprint clamp to the edge.
pub fn polar_transform(a: &AerialImage, out_h: usize, out_w: usize) -> Result<GroundPanorama> {
    if out_h < 2 || out_w < 2 {
        return Err(Error::InvalidParam(format!(
            "degenerate polar output {out_h}x{out_w}"
        )));
    }
    let s = a.side();
    let src = a.image().data();
    let center = (s as f32 - 1.0) / 2.0;
    let mut out = Array3::zeros((out_h, out_w, 3));
    for i in 0..out_h {
        let rho = (s as f32 / 2.0) * ((out_h - i) as f32) / out_h as f32;
        for j in 0..out_w {
            let theta = 2.0 * std::f32::consts::PI * j as f32 / out_w as f32;
            let x = center + rho * theta.sin();
            let y = center - rho * theta.cos();
            for c in 0..3 {
                out[[i, j, c]] = sample_bilinear(src, y, x, c, s, s);
            }
        }
    }
    Ok(GroundPanorama::new(ImageBuf::new(out)?))
}

/// Single-plane variant used to unroll descriptor heatmaps for display.
pub fn polar_resample_plane(plane: &Array2<f32>, out_h: usize, out_w: usize) -> Array2<f32> {
    let (h, w) = plane.dim();
    assert_eq!(h, w, "polar unroll requires a square plane");
    let s = h;
    let center = (s as f32 - 1.0) / 2.0;
    let mut out = Array2::zeros((out_h, out_w));
    // Same mapping as polar_transform, inlined for a 1-channel array.
    let sample = |y: f32, x: f32| -> f32 {
        let y = y.clamp(0.0, (s - 1) as f32);
        let x = x.clamp(0.0, (s - 1) as f32);
        let y0 = y.floor() as usize;
        let x0 = x.floor() as usize;
        let y1 = (y0 + 1).min(s - 1);
        let x1 = (x0 + 1).min(s - 1);
        let fy = y - y0 as f32;
        let fx = x - x0 as f32;
        let top = plane[[y0, x0]] * (1.0 - fx) + plane[[y0, x1]] * fx;
        let bot = plane[[y1, x0]] * (1.0 - fx) + plane[[y1, x1]] * fx;
        top * (1.0 - fy) + bot * fy
    };
    for i in 0..out_h {
        let rho = (s as f32 / 2.0) * ((out_h - i) as f32) / out_h as f32;
        for j in 0..out_w {
            let theta = 2.0 * std::f32::consts::PI * j as f32 / out_w as f32;
            out[[i, j]] = sample(center - rho * theta.cos(), center + rho * theta.sin());
        }
    }
    out
}
