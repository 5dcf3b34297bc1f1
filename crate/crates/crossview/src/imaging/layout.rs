//! D4 layout operations on the aerial plane and their exact panorama
//! counterparts.
//!
//! Convention (the single source of truth, fixed by the polar commutation
//! invariant): flip mirrors aerial columns first, then the image is rotated
//! clockwise by `rotation_quarters` quarter turns. On the panorama, flip is
//! the bearing negation `j -> (W - j) mod W` and a clockwise quarter turn of
//! the aerial rolls panorama content toward higher column indices by W/4.

use super::{AerialImage, GroundPanorama, ImageBuf};
use crate::error::{Error, Result};
use ndarray::Array3;

/// One element of the dihedral group D4 acting on the aerial plane:
/// an optional mirror about the north-south axis followed by a clockwise
/// rotation in quarter turns.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize, Default,
)]
pub struct LayoutParams {
    pub rotation_quarters: u8,
    pub flip: bool,
}

impl LayoutParams {
    pub fn new(rotation_quarters: u8, flip: bool) -> Self {
        Self {
            rotation_quarters: rotation_quarters % 4,
            flip,
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn is_identity(&self) -> bool {
        self.rotation_quarters == 0 && !self.flip
    }

    /// All eight group elements in a fixed enumeration order.
    pub fn all() -> [LayoutParams; 8] {
        let mut out = [LayoutParams::identity(); 8];
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = LayoutParams::new((i % 4) as u8, i >= 4);
        }
        out
    }

    /// Index of this element in the [`LayoutParams::all`] enumeration.
    pub fn index(&self) -> usize {
        self.rotation_quarters as usize + if self.flip { 4 } else { 0 }
    }

    /// Group product: the element equivalent to applying `self` first and
    /// then `other`. With r = rotation and F = flip, an element acts as
    /// r^k F^f, and F r^k = r^{-k} F gives the composition rule below.
    pub fn then(&self, other: &LayoutParams) -> LayoutParams {
        let k1 = self.rotation_quarters as i32;
        let k2 = other.rotation_quarters as i32;
        let k = if other.flip { k2 - k1 } else { k2 + k1 };
        LayoutParams::new(k.rem_euclid(4) as u8, self.flip ^ other.flip)
    }
}

impl std::fmt::Display for LayoutParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "rot{}{}",
            self.rotation_quarters as usize * 90,
            if self.flip { "+flip" } else { "" }
        )
    }
}

fn mirror_columns(img: &ImageBuf) -> ImageBuf {
    let (h, w) = (img.height(), img.width());
    let src = img.data();
    let mut out = Array3::zeros((h, w, 3));
    for i in 0..h {
        for j in 0..w {
            for c in 0..3 {
                out[[i, j, c]] = src[[i, w - 1 - j, c]];
            }
        }
    }
    ImageBuf::new(out).expect("shape preserved")
}

fn rotate_quarter_cw(img: &ImageBuf) -> ImageBuf {
    // out(i, j) = in(S-1-j, i); the north edge lands on the east edge.
    let (h, w) = (img.height(), img.width());
    assert_eq!(h, w, "quarter rotation requires a square image");
    let src = img.data();
    let mut out = Array3::zeros((h, w, 3));
    for i in 0..h {
        for j in 0..w {
            for c in 0..3 {
                out[[i, j, c]] = src[[h - 1 - j, i, c]];
            }
        }
    }
    ImageBuf::new(out).expect("shape preserved")
}

/// Apply a layout element to an aerial image: flip first, then rotate
/// clockwise. A pure index permutation, hence lossless.
pub fn aerial_layout_op(a: &AerialImage, p: &LayoutParams) -> AerialImage {
    let mut img = if p.flip {
        mirror_columns(a.image())
    } else {
        a.image().clone()
    };
    for _ in 0..(p.rotation_quarters % 4) {
        img = rotate_quarter_cw(&img);
    }
    AerialImage::new(img).expect("square preserved")
}

fn roll_columns(img: &ImageBuf, shift: usize) -> ImageBuf {
    // Content moves toward higher column indices by `shift`.
    let (h, w) = (img.height(), img.width());
    let shift = shift % w;
    let src = img.data();
    let mut out = Array3::zeros((h, w, 3));
    for i in 0..h {
        for j in 0..w {
            let sj = (j + w - shift) % w;
            for c in 0..3 {
                out[[i, j, c]] = src[[i, sj, c]];
            }
        }
    }
    ImageBuf::new(out).expect("shape preserved")
}

fn negate_bearing(img: &ImageBuf) -> ImageBuf {
    // j -> (W - j) mod W, the exact counterpart of the aerial mirror.
    let (h, w) = (img.height(), img.width());
    let src = img.data();
    let mut out = Array3::zeros((h, w, 3));
    for i in 0..h {
        for j in 0..w {
            let sj = (w - j) % w;
            for c in 0..3 {
                out[[i, j, c]] = src[[i, sj, c]];
            }
        }
    }
    ImageBuf::new(out).expect("shape preserved")
}

/// Panorama counterpart of [`aerial_layout_op`]: bearing negation for the
/// flip, then a circular roll by `rotation_quarters * W/4` columns.
/// Errors when the width is not divisible by 4 (the roll would not be exact).
pub fn panorama_layout_op(g: &GroundPanorama, p: &LayoutParams) -> Result<GroundPanorama> {
    let w = g.image().width();
    if !w.is_multiple_of(4) {
        return Err(Error::WidthNotQuarterable { width: w });
    }
    Ok(panorama_layout_op_with_roll(
        g,
        p,
        p.rotation_quarters as usize * (w / 4),
    ))
}

/// Fallback for widths not divisible by 4: rolls by the nearest integer
/// column count. Inexact by up to half a column of bearing.
pub fn panorama_layout_op_rounded(g: &GroundPanorama, p: &LayoutParams) -> GroundPanorama {
    let w = g.image().width();
    let roll = ((p.rotation_quarters as f64) * (w as f64) / 4.0).round() as usize;
    panorama_layout_op_with_roll(g, p, roll)
}

fn panorama_layout_op_with_roll(
    g: &GroundPanorama,
    p: &LayoutParams,
    roll: usize,
) -> GroundPanorama {
    let mut img = if p.flip {
        negate_bearing(g.image())
    } else {
        g.image().clone()
    };
    if !roll.is_multiple_of(img.width()) {
        img = roll_columns(&img, roll);
    }
    GroundPanorama::new(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_aerial(side: usize, seed: u64) -> AerialImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array3::from_shape_fn((side, side, 3), |_| rng.random::<f32>());
        AerialImage::new(ImageBuf::new(data).unwrap()).unwrap()
    }

    fn random_pano(h: usize, w: usize, seed: u64) -> GroundPanorama {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array3::from_shape_fn((h, w, 3), |_| rng.random::<f32>());
        GroundPanorama::new(ImageBuf::new(data).unwrap())
    }

    #[test]
    fn identity_layout_is_identity() {
        let a = random_aerial(8, 1);
        let out = aerial_layout_op(&a, &LayoutParams::identity());
        assert_eq!(out.image(), a.image());
        let g = random_pano(4, 16, 2);
        let out = panorama_layout_op(&g, &LayoutParams::identity()).unwrap();
        assert_eq!(out.image(), g.image());
    }

    #[test]
    fn rot180_twice_is_identity() {
        let a = random_aerial(9, 3);
        let p = LayoutParams::new(2, false);
        let twice = aerial_layout_op(&aerial_layout_op(&a, &p), &p);
        assert_eq!(twice.image(), a.image());
    }

    #[test]
    fn four_quarter_rolls_are_identity() {
        let g = random_pano(3, 12, 4);
        let p = LayoutParams::new(1, false);
        let mut out = g.clone();
        for _ in 0..4 {
            out = panorama_layout_op(&out, &p).unwrap();
        }
        assert_eq!(out.image(), g.image());
    }

    #[test]
    fn pano_width_must_divide_by_four() {
        let g = random_pano(3, 10, 5);
        let p = LayoutParams::new(1, false);
        assert!(panorama_layout_op(&g, &p).is_err());
        // flip alone still needs no roll but the contract is uniform
        let rounded = panorama_layout_op_rounded(&g, &p);
        assert_eq!(rounded.image().width(), 10);
    }

    /// Brute-force per-pixel permutation oracle for (rot90, flip).
    #[test]
    fn layout_op_matches_permutation_oracle() {
        let s = 7;
        let a = random_aerial(s, 6);
        let p = LayoutParams::new(1, true);
        let got = aerial_layout_op(&a, &p);
        // flip: (i, j) <- (i, s-1-j); then rot90cw: (i, j) <- (s-1-j, i).
        // Composite: out(i, j) = flipped(s-1-j, i) = in(s-1-j, s-1-i).
        let src = a.image().data();
        for i in 0..s {
            for j in 0..s {
                for c in 0..3 {
                    let expect = src[[s - 1 - j, s - 1 - i, c]];
                    assert_eq!(got.image().data()[[i, j, c]], expect, "at ({i},{j},{c})");
                }
            }
        }
    }

    #[test]
    fn d4_group_law_holds_for_all_64_pairs() {
        let a = random_aerial(6, 7);
        for p1 in LayoutParams::all() {
            for p2 in LayoutParams::all() {
                let sequential = aerial_layout_op(&aerial_layout_op(&a, &p1), &p2);
                let composed = aerial_layout_op(&a, &p1.then(&p2));
                assert_eq!(
                    sequential.image(),
                    composed.image(),
                    "group law failed for {p1} then {p2}"
                );
            }
        }
    }

    #[test]
    fn d4_group_law_holds_on_panorama_side() {
        let g = random_pano(4, 16, 8);
        for p1 in LayoutParams::all() {
            for p2 in LayoutParams::all() {
                let sequential =
                    panorama_layout_op(&panorama_layout_op(&g, &p1).unwrap(), &p2).unwrap();
                let composed = panorama_layout_op(&g, &p1.then(&p2)).unwrap();
                assert_eq!(
                    sequential.image(),
                    composed.image(),
                    "pano group law failed for {p1} then {p2}"
                );
            }
        }
    }

    #[test]
    fn layout_ops_are_bijections() {
        // Pixel multiset is preserved exactly.
        let a = random_aerial(5, 9);
        for p in LayoutParams::all() {
            let out = aerial_layout_op(&a, &p);
            let mut before: Vec<u32> = a.image().data().iter().map(|v| v.to_bits()).collect();
            let mut after: Vec<u32> = out.image().data().iter().map(|v| v.to_bits()).collect();
            before.sort_unstable();
            after.sort_unstable();
            assert_eq!(before, after, "not a permutation for {p}");
        }
    }

    #[test]
    fn enumeration_round_trips_through_index() {
        for (i, p) in LayoutParams::all().iter().enumerate() {
            assert_eq!(p.index(), i);
        }
    }
}
