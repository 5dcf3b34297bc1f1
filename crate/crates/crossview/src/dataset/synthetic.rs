//! Synthetic paired-data generator. Each aerial is a unique arrangement of
//! colored shapes over a smooth textured background; its ground view is the
//! polar resampling of that aerial plus photometric noise, so ground/aerial
//! correspondence is exact by construction and every geometric invariant is
//! testable end to end.

use super::{load_manifest, ManifestFormat, PairManifest, ResizePolicy, Split};
use crate::error::{Error, Result};
use crate::imaging::{io, polar_transform, AerialImage, ImageBuf};
use ndarray::Array3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticSpec {
    pub n_pairs: usize,
    /// Aerial images are squares of this side.
    pub aerial_size: usize,
    /// (height, width) of the ground panorama; width must divide by 4.
    pub pano_size: (usize, usize),
    /// Inclusive range for the number of shapes per aerial.
    pub shape_count: (usize, usize),
    /// Std-dev of the Gaussian photometric noise on the ground view.
    pub noise_sigma: f32,
    /// Fraction of pairs generated as a D4-transformed twin of the
    /// previous pair: same content, different layout. Twins make retrieval
    /// unsolvable by layout-blind pooling, which is the point of the
    /// benchmark.
    pub layout_twin_frac: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_pairs: 64,
            aerial_size: 64,
            pano_size: (32, 128),
            shape_count: (3, 8),
            noise_sigma: 0.02,
            layout_twin_frac: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 {
            return Err(Error::InvalidParam("n_pairs must be > 0".into()));
        }
        if self.aerial_size < 8 {
            return Err(Error::InvalidParam("aerial_size must be >= 8".into()));
        }
        if self.pano_size.0 < 2 || self.pano_size.1 < 4 {
            return Err(Error::InvalidParam("pano_size too small".into()));
        }
        if !self.pano_size.1.is_multiple_of(4) {
            return Err(Error::WidthNotQuarterable {
                width: self.pano_size.1,
            });
        }
        if self.shape_count.0 > self.shape_count.1 || self.shape_count.0 == 0 {
            return Err(Error::InvalidParam(format!(
                "bad shape count range {:?}",
                self.shape_count
            )));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidParam("noise_sigma must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.layout_twin_frac) {
            return Err(Error::InvalidParam(
                "layout_twin_frac must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

fn textured_background(s: usize, rng: &mut ChaCha8Rng) -> ImageBuf {
    // Two random low-frequency waves per channel over a mid-gray base.
    let mut waves = Vec::new();
    for _ in 0..3 {
        let w1 = (
            rng.random_range(0.3..1.5f32),
            rng.random_range(0.3..1.5f32),
            rng.random_range(0.0..std::f32::consts::TAU),
            rng.random_range(0.08..0.18f32),
        );
        let w2 = (
            rng.random_range(1.0..3.0f32),
            rng.random_range(1.0..3.0f32),
            rng.random_range(0.0..std::f32::consts::TAU),
            rng.random_range(0.04..0.10f32),
        );
        waves.push((w1, w2));
    }
    let base = rng.random_range(0.35..0.55f32);
    let data = Array3::from_shape_fn((s, s, 3), |(i, j, c)| {
        let (w1, w2) = waves[c];
        let x = j as f32 / s as f32;
        let y = i as f32 / s as f32;
        let v = base
            + w1.3 * (std::f32::consts::TAU * (w1.0 * x + w1.1 * y) + w1.2).sin()
            + w2.3 * (std::f32::consts::TAU * (w2.0 * x + w2.1 * y) + w2.2).sin();
        v.clamp(0.05, 0.95)
    });
    ImageBuf::new(data).expect("3 channels")
}

fn draw_shapes(img: &mut ImageBuf, count: usize, rng: &mut ChaCha8Rng) {
    let s = img.height() as f32;
    for _ in 0..count {
        let color = [
            rng.random::<f32>(),
            rng.random::<f32>(),
            rng.random::<f32>(),
        ];
        if rng.random_bool(0.5) {
            // Filled circle.
            let cx = rng.random_range(0.15..0.85) * s;
            let cy = rng.random_range(0.15..0.85) * s;
            let r = rng.random_range(0.06..0.22) * s;
            let r2 = r * r;
            for i in 0..img.height() {
                for j in 0..img.width() {
                    let dy = i as f32 - cy;
                    let dx = j as f32 - cx;
                    if dy * dy + dx * dx <= r2 {
                        for (c, value) in color.iter().enumerate() {
                            img.data_mut()[[i, j, c]] = *value;
                        }
                    }
                }
            }
        } else {
            // Axis-aligned filled rectangle.
            let x0 = rng.random_range(0.05..0.75) * s;
            let y0 = rng.random_range(0.05..0.75) * s;
            let w = rng.random_range(0.08..0.3) * s;
            let h = rng.random_range(0.08..0.3) * s;
            let (x1, y1) = ((x0 + w).min(s - 1.0), (y0 + h).min(s - 1.0));
            for i in y0 as usize..=y1 as usize {
                for j in x0 as usize..=x1 as usize {
                    for (c, value) in color.iter().enumerate() {
                        img.data_mut()[[i, j, c]] = *value;
                    }
                }
            }
        }
    }
}

/// Generate `spec.n_pairs` pairs under `out_dir` (PNGs plus `manifest.csv`)
/// and return the loaded manifest with a native resize policy.
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<PairManifest> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0f32, spec.noise_sigma.max(1e-12)).expect("valid sigma");

    let mut csv = String::new();
    let mut previous: Option<AerialImage> = None;
    for idx in 0..spec.n_pairs {
        let make_twin =
            idx > 0 && spec.layout_twin_frac > 0.0 && rng.random_bool(spec.layout_twin_frac);
        let aerial_img = if make_twin {
            let base = previous.as_ref().expect("idx > 0");
            let layout = crate::imaging::sample_layout_params(
                &mut rng,
                Some(crate::imaging::LayoutParams::identity()),
            );
            crate::imaging::aerial_layout_op(base, &layout)
        } else {
            let mut aerial = textured_background(spec.aerial_size, &mut rng);
            let count = rng.random_range(spec.shape_count.0..=spec.shape_count.1);
            draw_shapes(&mut aerial, count, &mut rng);
            AerialImage::new(aerial)?
        };
        previous = Some(aerial_img.clone());
        let mut ground =
            polar_transform(&aerial_img, spec.pano_size.0, spec.pano_size.1)?.into_image();
        if spec.noise_sigma > 0.0 {
            ground
                .data_mut()
                .mapv_inplace(|v| (v + noise.sample(&mut rng)).clamp(0.0, 1.0));
        }

        let ground_name = format!("ground_{idx:04}.png");
        let aerial_name = format!("aerial_{idx:04}.png");
        io::save_image(&ground, &out_dir.join(&ground_name))?;
        io::save_image(aerial_img.image(), &out_dir.join(&aerial_name))?;
        csv.push_str(&format!("{ground_name},{aerial_name}\n"));
    }
    let manifest_path = out_dir.join("manifest.csv");
    std::fs::write(&manifest_path, csv).map_err(|e| Error::io(&manifest_path, e))?;
    load_manifest(
        &manifest_path,
        ManifestFormat::CvusaCsv,
        Split::Train,
        ResizePolicy::Native,
    )
}
