//! Batch construction. Three modes: plain pairs, independently augmented
//! pairs, and contrastive batches that re-render each source pair twice
//! under controlled layout/semantic differences so every batch carries its
//! own hard samples. Augmentation is materialized lazily at collation time;
//! every element keeps full provenance.

use crate::dataset::{PairManifest, PairRecord};
use crate::error::{Error, Result};
use crate::imaging::{
    aerial_layout_op, panorama_layout_op, polar_transform, sample_layout_params,
    sample_semantic_params, semantic_augment, AerialImage, GroundPanorama, ImageBuf, LayoutParams,
    SemanticParams, SemanticRanges,
};
use rand::seq::index::sample as index_sample;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Which component differs between the two renderings of a source pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ChsgVariant {
    /// Both layout and semantics differ (the default).
    #[default]
    LayoutAndSemantic,
    /// No layout simulation at all; semantics differ.
    SemanticOnly,
    /// Layouts differ; no semantic augmentation.
    LayoutOnly,
    /// One shared random layout; semantics differ.
    SameLayoutDiffSemantic,
    /// Shared semantics; layouts differ.
    SameSemanticDiffLayout,
}

impl ChsgVariant {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "l+s" => ChsgVariant::LayoutAndSemantic,
            "s-only" => ChsgVariant::SemanticOnly,
            "l-only" => ChsgVariant::LayoutOnly,
            "same-l+s" => ChsgVariant::SameLayoutDiffSemantic,
            "same-s+l" => ChsgVariant::SameSemanticDiffLayout,
            other => {
                return Err(Error::InvalidParam(format!(
                    "unknown contrastive variant `{other}` (expected l+s, s-only, l-only, same-l+s, same-s+l)"
                )))
            }
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ChsgVariant::LayoutAndSemantic => "l+s",
            ChsgVariant::SemanticOnly => "s-only",
            ChsgVariant::LayoutOnly => "l-only",
            ChsgVariant::SameLayoutDiffSemantic => "same-l+s",
            ChsgVariant::SameSemanticDiffLayout => "same-s+l",
        }
    }
}

/// Sampler mode selected in the training config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "variant")]
pub enum SamplerMode {
    Raw,
    Ls,
    Chsg(ChsgVariant),
}

/// Tag carried by a constructed batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchMode {
    Raw,
    Ls,
    Chsg,
    ChsgVariant,
}

/// One augmented pair: the source record plus the synchronized layout and
/// the per-view photometric parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BatchElement {
    pub source: PairRecord,
    pub layout: LayoutParams,
    pub semantic_ground: SemanticParams,
    pub semantic_aerial: SemanticParams,
}

impl BatchElement {
    fn plain(source: PairRecord) -> Self {
        Self {
            source,
            layout: LayoutParams::identity(),
            semantic_ground: SemanticParams::identity(),
            semantic_aerial: SemanticParams::identity(),
        }
    }
}

/// An ordered training batch. In contrastive modes the layout is
/// `[g_1..g_bs, d_1..d_bs]` where elements i and bs+i share a source pair.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ContrastiveBatch {
    pub mode: BatchMode,
    pub elements: Vec<BatchElement>,
}

impl ContrastiveBatch {
    /// Matched pairs fed to the loss (2*bs in contrastive modes).
    pub fn num_pairs(&self) -> usize {
        self.elements.len()
    }
}

fn draw_sources(
    manifest: &PairManifest,
    bs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PairRecord>> {
    if bs == 0 {
        return Err(Error::InvalidParam("batch size must be > 0".into()));
    }
    if manifest.len() < bs {
        return Err(Error::InvalidParam(format!(
            "need {bs} distinct pairs but the manifest has {}",
            manifest.len()
        )));
    }
    let picks = index_sample(rng, manifest.len(), bs);
    Ok(picks.iter().map(|i| manifest.records[i].clone()).collect())
}

/// Un-augmented batch of distinct pairs.
pub fn build_raw_batch(
    manifest: &PairManifest,
    bs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ContrastiveBatch> {
    let elements = draw_sources(manifest, bs, rng)?
        .into_iter()
        .map(BatchElement::plain)
        .collect();
    Ok(ContrastiveBatch {
        mode: BatchMode::Raw,
        elements,
    })
}

/// Each source augmented once: a non-identity layout plus per-view
/// photometrics. Contrast across sources only.
pub fn build_ls_batch(
    manifest: &PairManifest,
    bs: usize,
    rng: &mut ChaCha8Rng,
    ranges: &SemanticRanges,
) -> Result<ContrastiveBatch> {
    let elements = draw_sources(manifest, bs, rng)?
        .into_iter()
        .map(|source| BatchElement {
            source,
            layout: sample_layout_params(rng, Some(LayoutParams::identity())),
            semantic_ground: sample_semantic_params(rng, ranges),
            semantic_aerial: sample_semantic_params(rng, ranges),
        })
        .collect();
    Ok(ContrastiveBatch {
        mode: BatchMode::Ls,
        elements,
    })
}

/// Contrastive batch: two renderings per source, `[g..., d...]`, with the
/// shared/contrasted components picked by `variant`.
pub fn build_chsg_batch(
    manifest: &PairManifest,
    bs: usize,
    rng: &mut ChaCha8Rng,
    variant: ChsgVariant,
    ranges: &SemanticRanges,
) -> Result<ContrastiveBatch> {
    let sources = draw_sources(manifest, bs, rng)?;
    let mut gammas = Vec::with_capacity(bs);
    let mut deltas = Vec::with_capacity(bs);
    for source in sources {
        let (layout_g, layout_d) = match variant {
            ChsgVariant::SemanticOnly => (LayoutParams::identity(), LayoutParams::identity()),
            ChsgVariant::SameLayoutDiffSemantic => {
                let l = sample_layout_params(rng, None);
                (l, l)
            }
            _ => {
                let lg = sample_layout_params(rng, None);
                let ld = sample_layout_params(rng, Some(lg));
                (lg, ld)
            }
        };
        let identity_semantics = matches!(variant, ChsgVariant::LayoutOnly);
        let (sg_g, sa_g, sg_d, sa_d) = if identity_semantics {
            (
                SemanticParams::identity(),
                SemanticParams::identity(),
                SemanticParams::identity(),
                SemanticParams::identity(),
            )
        } else {
            let sg_g = sample_semantic_params(rng, ranges);
            let sa_g = sample_semantic_params(rng, ranges);
            if matches!(variant, ChsgVariant::SameSemanticDiffLayout) {
                (sg_g.clone(), sa_g.clone(), sg_g, sa_g)
            } else {
                let sg_d = sample_semantic_params(rng, ranges);
                let sa_d = sample_semantic_params(rng, ranges);
                (sg_g, sa_g, sg_d, sa_d)
            }
        };
        gammas.push(BatchElement {
            source: source.clone(),
            layout: layout_g,
            semantic_ground: sg_g,
            semantic_aerial: sa_g,
        });
        deltas.push(BatchElement {
            source,
            layout: layout_d,
            semantic_ground: sg_d,
            semantic_aerial: sa_d,
        });
    }
    gammas.extend(deltas);
    Ok(ContrastiveBatch {
        mode: if variant == ChsgVariant::LayoutAndSemantic {
            BatchMode::Chsg
        } else {
            BatchMode::ChsgVariant
        },
        elements: gammas,
    })
}

/// Dispatch on the configured sampler mode.
pub fn build_batch(
    manifest: &PairManifest,
    mode: SamplerMode,
    bs: usize,
    rng: &mut ChaCha8Rng,
    ranges: &SemanticRanges,
) -> Result<ContrastiveBatch> {
    match mode {
        SamplerMode::Raw => build_raw_batch(manifest, bs, rng),
        SamplerMode::Ls => build_ls_batch(manifest, bs, rng, ranges),
        SamplerMode::Chsg(variant) => build_chsg_batch(manifest, bs, rng, variant, ranges),
    }
}

/// Render one element to model-ready images: synchronized layout first,
/// then per-view photometrics, then (optionally) the polar transform of the
/// aerial to `polar_to` = (out_h, out_w).
pub fn materialize_element(
    manifest: &PairManifest,
    element: &BatchElement,
    polar_to: Option<(usize, usize)>,
) -> Result<(ImageBuf, ImageBuf)> {
    let ground = GroundPanorama::new(manifest.load_ground(&element.source)?);
    let aerial = AerialImage::new(manifest.load_aerial(&element.source)?)?;

    let ground = panorama_layout_op(&ground, &element.layout)?.into_image();
    let aerial = aerial_layout_op(&aerial, &element.layout);

    let ground = semantic_augment(&ground, &element.semantic_ground)?;
    let aerial = semantic_augment(aerial.image(), &element.semantic_aerial)?;

    let aerial = match polar_to {
        Some((h, w)) => polar_transform(&AerialImage::new(aerial)?, h, w)?.into_image(),
        None => aerial,
    };
    Ok((ground, aerial))
}

/// Render a whole batch in parallel, preserving element order.
pub fn materialize_batch(
    manifest: &PairManifest,
    batch: &ContrastiveBatch,
    polar_to: Option<(usize, usize)>,
) -> Result<Vec<(ImageBuf, ImageBuf)>> {
    batch
        .elements
        .par_iter()
        .map(|el| materialize_element(manifest, el, polar_to))
        .collect()
}

/// Category labels of the hard-sample distance experiment.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum HardSampleCategory {
    Original,
    Unmatched,
    Flip,
    Rot90,
    Rot180,
    Rot270,
}

impl HardSampleCategory {
    pub const ALL: [HardSampleCategory; 6] = [
        HardSampleCategory::Original,
        HardSampleCategory::Unmatched,
        HardSampleCategory::Flip,
        HardSampleCategory::Rot90,
        HardSampleCategory::Rot180,
        HardSampleCategory::Rot270,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            HardSampleCategory::Original => "original",
            HardSampleCategory::Unmatched => "unmatched",
            HardSampleCategory::Flip => "flip",
            HardSampleCategory::Rot90 => "rot90",
            HardSampleCategory::Rot180 => "rot180",
            HardSampleCategory::Rot270 => "rot270",
        }
    }

    /// Transform applied to the ground panorama alone (aerial stays fixed).
    pub fn ground_layout(&self) -> LayoutParams {
        match self {
            HardSampleCategory::Original | HardSampleCategory::Unmatched => {
                LayoutParams::identity()
            }
            HardSampleCategory::Flip => LayoutParams::new(0, true),
            HardSampleCategory::Rot90 => LayoutParams::new(1, false),
            HardSampleCategory::Rot180 => LayoutParams::new(2, false),
            HardSampleCategory::Rot270 => LayoutParams::new(3, false),
        }
    }
}

/// One labeled evaluation pair: the (possibly transformed) ground of
/// `ground_source` against the fixed aerial of `aerial_source`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HardSampleItem {
    pub category: HardSampleCategory,
    pub ground_source: PairRecord,
    pub ground_layout: LayoutParams,
    pub aerial_source: PairRecord,
}

/// Labeled pair set for the distance-distribution experiment: for each of n
/// sampled pairs, the original pairing, a deranged re-pairing, and the four
/// ground-only transforms.
pub fn hard_sample_eval_set(
    manifest: &PairManifest,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<HardSampleItem>> {
    let sources = draw_sources(manifest, n, rng)?;
    let derangement = sample_derangement(n, rng);
    let mut items = Vec::with_capacity(6 * n);
    for category in HardSampleCategory::ALL {
        for (i, source) in sources.iter().enumerate() {
            let aerial_source = if category == HardSampleCategory::Unmatched {
                sources[derangement[i]].clone()
            } else {
                source.clone()
            };
            items.push(HardSampleItem {
                category,
                ground_source: source.clone(),
                ground_layout: category.ground_layout(),
                aerial_source,
            });
        }
    }
    Ok(items)
}

/// Fixed-point-free permutation of 0..n. Rejection-samples shuffles, falling
/// back to a cyclic shift if n < 2 or luck runs out.
fn sample_derangement(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n < 2 {
        return (0..n).collect();
    }
    for _ in 0..64 {
        let perm = index_sample(rng, n, n).into_vec();
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            return perm;
        }
    }
    let mut perm: Vec<usize> = (1..n).collect();
    perm.push(0);
    perm
}

#[cfg(test)]
mod tests;
