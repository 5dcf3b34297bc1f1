//! Figure-style exports: descriptor heatmap grids, contrastive-pair
//! contact sheets and distance-distribution violin plots. All renderers
//! are deterministic; labels live in the accompanying CSV/JSON artifacts.

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::imaging::{polar_resample_plane, ImageBuf, View};
use crate::model::Model;
use crate::sampling::HardSampleCategory;
use ndarray::{Array2, Array3};

/// Viridis-style perceptual colormap over [0,1].
pub fn colormap(v: f32) -> [f32; 3] {
    const STOPS: [[f32; 3]; 9] = [
        [0.267, 0.005, 0.329],
        [0.283, 0.141, 0.458],
        [0.254, 0.265, 0.530],
        [0.207, 0.372, 0.553],
        [0.164, 0.471, 0.558],
        [0.128, 0.567, 0.551],
        [0.135, 0.659, 0.518],
        [0.267, 0.749, 0.441],
        [0.993, 0.906, 0.144],
    ];
    let v = v.clamp(0.0, 1.0) * (STOPS.len() - 1) as f32;
    let i = (v.floor() as usize).min(STOPS.len() - 2);
    let t = v - i as f32;
    let mut out = [0.0; 3];
    for c in 0..3 {
        out[c] = STOPS[i][c] * (1.0 - t) + STOPS[i + 1][c] * t;
    }
    out
}

/// Render a single-channel map on the [0,1] colormap, upscaled by `scale`
/// with nearest-neighbor sampling.
pub fn render_plane(plane: &Array2<f32>, scale: usize) -> ImageBuf {
    let (h, w) = plane.dim();
    let scale = scale.max(1);
    let mut out = Array3::zeros((h * scale, w * scale, 3));
    for i in 0..h * scale {
        for j in 0..w * scale {
            let rgb = colormap(plane[[i / scale, j / scale]]);
            for c in 0..3 {
                out[[i, j, c]] = rgb[c];
            }
        }
    }
    ImageBuf::new(out).expect("3 channels")
}

/// Compose cells into a grid with a uniform margin; cells of one row share
/// a height, columns are left-aligned.
pub fn mosaic(rows: &[Vec<ImageBuf>], margin: usize, background: f32) -> ImageBuf {
    let row_heights: Vec<usize> = rows
        .iter()
        .map(|r| r.iter().map(|c| c.height()).max().unwrap_or(0))
        .collect();
    let row_widths: Vec<usize> = rows
        .iter()
        .map(|r| r.iter().map(|c| c.width() + margin).sum::<usize>() + margin)
        .collect();
    let total_h: usize = row_heights.iter().map(|h| h + margin).sum::<usize>() + margin;
    let total_w = row_widths.iter().copied().max().unwrap_or(margin);
    let mut out = Array3::from_elem((total_h, total_w, 3), background);
    let mut y = margin;
    for (row, &rh) in rows.iter().zip(&row_heights) {
        let mut x = margin;
        for cell in row {
            for i in 0..cell.height() {
                for j in 0..cell.width() {
                    for c in 0..3 {
                        out[[y + i, x + j, c]] = cell.data()[[i, j, c]];
                    }
                }
            }
            x += cell.width() + margin;
        }
        y += rh + margin;
    }
    ImageBuf::new(out).expect("3 channels")
}

/// Descriptor heatmaps for one pair: K rows, ground on the left and aerial
/// on the right. With `unroll_aerial`, square aerial descriptor planes are
/// polar-resampled to panorama shape before rendering (the display used
/// when the model was trained without the polar preprocessing).
pub fn descriptor_heatmap_grid(
    model: &Model,
    ground: &ImageBuf,
    aerial: &ImageBuf,
    unroll_aerial: bool,
) -> Result<ImageBuf> {
    let mut g = Graph::new();
    let og = model.forward(&mut g, ground, View::Ground)?;
    let oa = model.forward(&mut g, aerial, View::Aerial)?;
    let k = model.config().descriptors;

    let plane = |node: crate::graph::NodeId, idx: usize, g: &Graph| -> Array2<f32> {
        let v = g.value(node);
        let (h, w) = (v.shape()[1], v.shape()[2]);
        Array2::from_shape_fn((h, w), |(i, j)| v[[idx, i, j]])
    };

    let mut rows = Vec::with_capacity(k);
    for m in 0..k {
        let gp = plane(og.descriptors, m, &g);
        let mut ap = plane(oa.descriptors, m, &g);
        if unroll_aerial {
            if ap.nrows() != ap.ncols() {
                return Err(Error::Shape(
                    "aerial descriptors are not square; unrolling only applies to models \
                     trained without the polar preprocessing"
                        .into(),
                ));
            }
            ap = polar_resample_plane(&ap, gp.nrows(), gp.ncols());
        }
        let scale = (96 / gp.nrows().max(1)).clamp(2, 24);
        rows.push(vec![render_plane(&gp, scale), render_plane(&ap, scale)]);
    }
    Ok(mosaic(&rows, 4, 1.0))
}

/// Contact sheet of contrastive pairs: one row per source pair, cells
/// [ground A | aerial A | ground B | aerial B], where A and B are the two
/// renderings of that source.
pub fn contact_sheet(
    manifest: &crate::dataset::PairManifest,
    batch: &crate::sampling::ContrastiveBatch,
    cell_height: usize,
) -> Result<ImageBuf> {
    let n = batch.elements.len();
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::InvalidParam(
            "contact sheet needs a contrastive batch (2*bs elements)".into(),
        ));
    }
    let bs = n / 2;
    let images = crate::sampling::materialize_batch(manifest, batch, None)?;
    let resize_to_height = |img: &ImageBuf| -> Result<ImageBuf> {
        let w = (img.width() * cell_height).div_ceil(img.height());
        img.resize(cell_height, w.max(1))
    };
    let mut rows = Vec::with_capacity(bs);
    for i in 0..bs {
        let (ga, aa) = &images[i];
        let (gb, ab) = &images[bs + i];
        rows.push(vec![
            resize_to_height(ga)?,
            resize_to_height(aa)?,
            resize_to_height(gb)?,
            resize_to_height(ab)?,
        ]);
    }
    Ok(mosaic(&rows, 4, 1.0))
}

/// Violin plot of per-category distance distributions, one violin per
/// category in the canonical order, Gaussian-kernel density, shared y-axis.
pub fn violin_plot(
    distributions: &[(HardSampleCategory, Vec<f64>)],
    width: usize,
    height: usize,
) -> ImageBuf {
    let mut out = Array3::from_elem((height, width, 3), 1.0f32);
    if distributions.is_empty() {
        return ImageBuf::new(out).expect("3 channels");
    }
    let all: Vec<f64> = distributions
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .collect();
    let (lo, hi) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(*v), hi.max(*v))
        });
    let span = (hi - lo).max(1e-9);
    let (lo, hi) = (lo - 0.05 * span, hi + 0.05 * span);
    let pad = 8usize;
    let lane_w = (width - 2 * pad) / distributions.len().max(1);
    let plot_h = height.saturating_sub(2 * pad).max(1);

    for (lane, (cat, values)) in distributions.iter().enumerate() {
        if values.is_empty() {
            continue;
        }
        // Silverman-style bandwidth on the pooled span.
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        let bw = (1.06 * std * n.powf(-0.2)).max(span * 0.01);
        let color = colormap(0.15 + 0.7 * lane as f32 / distributions.len() as f32);
        let _ = cat;
        let cx = pad + lane * lane_w + lane_w / 2;

        // Density along the vertical axis.
        let mut density = vec![0.0f64; plot_h];
        for (row, d) in density.iter_mut().enumerate() {
            let y = hi - (hi - lo) * row as f64 / (plot_h - 1).max(1) as f64;
            *d = values
                .iter()
                .map(|v| (-0.5 * ((y - v) / bw).powi(2)).exp())
                .sum::<f64>();
        }
        let dmax = density.iter().cloned().fold(f64::MIN, f64::max).max(1e-12);
        let half_max = (lane_w as f64 / 2.0 - 2.0).max(1.0);
        for (row, d) in density.iter().enumerate() {
            let half = ((d / dmax) * half_max).round() as usize;
            let i = pad + row;
            for dx in 0..=half {
                for sign in [-1isize, 1] {
                    let j = cx as isize + sign * dx as isize;
                    if j >= 0 && (j as usize) < width {
                        for c in 0..3 {
                            out[[i, j as usize, c]] = color[c];
                        }
                    }
                }
            }
        }
        // Mean tick.
        let mean_row = ((hi - mean) / (hi - lo) * (plot_h - 1) as f64).round() as usize;
        let i = pad + mean_row.min(plot_h - 1);
        for j in cx.saturating_sub(lane_w / 2 - 1)..(cx + lane_w / 2 - 1).min(width) {
            for c in 0..3 {
                out[[i, j, c]] = 0.0;
            }
        }
    }
    ImageBuf::new(out).expect("3 channels")
}
