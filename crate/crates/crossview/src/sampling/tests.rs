use super::*;
use crate::dataset::{generate_synthetic, SyntheticSpec};
use rand::SeedableRng;
use std::collections::HashSet;

fn test_manifest(n: usize) -> (tempfile::TempDir, PairManifest) {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_synthetic(
        &SyntheticSpec {
            n_pairs: n,
            aerial_size: 16,
            pano_size: (8, 16),
            seed: 11,
            ..SyntheticSpec::default()
        },
        dir.path(),
    )
    .unwrap();
    (dir, m)
}

#[test]
fn raw_batch_is_plain_and_distinct() {
    let (_dir, m) = test_manifest(12);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch = build_raw_batch(&m, 8, &mut rng).unwrap();
    assert_eq!(batch.mode, BatchMode::Raw);
    assert_eq!(batch.num_pairs(), 8);
    let ids: HashSet<_> = batch.elements.iter().map(|e| &e.source.pair_id).collect();
    assert_eq!(ids.len(), 8, "sources must be distinct");
    for e in &batch.elements {
        assert!(e.layout.is_identity());
        assert!(e.semantic_ground.is_identity());
        assert!(e.semantic_aerial.is_identity());
    }
}

#[test]
fn equal_seeds_build_identical_batches() {
    let (_dir, m) = test_manifest(12);
    let ranges = SemanticRanges::default();
    for mode in [
        SamplerMode::Raw,
        SamplerMode::Ls,
        SamplerMode::Chsg(ChsgVariant::LayoutAndSemantic),
    ] {
        let a = build_batch(&m, mode, 6, &mut ChaCha8Rng::seed_from_u64(3), &ranges).unwrap();
        let b = build_batch(&m, mode, 6, &mut ChaCha8Rng::seed_from_u64(3), &ranges).unwrap();
        assert_eq!(a, b, "mode {mode:?} not deterministic");
    }
}

#[test]
fn insufficient_data_is_an_error() {
    let (_dir, m) = test_manifest(4);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert!(build_raw_batch(&m, 5, &mut rng).is_err());
    assert!(build_ls_batch(&m, 5, &mut rng, &SemanticRanges::default()).is_err());
}

#[test]
fn ls_batch_layouts_are_identity_free() {
    let (_dir, m) = test_manifest(10);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ranges = SemanticRanges::default();
    let mut seen = HashSet::new();
    for _ in 0..200 {
        let batch = build_ls_batch(&m, 4, &mut rng, &ranges).unwrap();
        assert_eq!(batch.mode, BatchMode::Ls);
        for e in &batch.elements {
            assert!(!e.layout.is_identity(), "layout must never be identity");
            seen.insert(e.layout.index());
        }
        let ids: HashSet<_> = batch.elements.iter().map(|e| &e.source.pair_id).collect();
        assert_eq!(ids.len(), 4);
    }
    assert_eq!(seen.len(), 7, "all non-identity layouts should appear");
}

#[test]
fn chsg_default_contrasts_layouts_and_semantics() {
    let (_dir, m) = test_manifest(10);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ranges = SemanticRanges::default();
    for _ in 0..1000 {
        let bs = 4;
        let batch =
            build_chsg_batch(&m, bs, &mut rng, ChsgVariant::LayoutAndSemantic, &ranges).unwrap();
        assert_eq!(batch.mode, BatchMode::Chsg);
        assert_eq!(batch.num_pairs(), 2 * bs);
        let ids: HashSet<_> = batch.elements[..bs]
            .iter()
            .map(|e| e.source.pair_id.clone())
            .collect();
        assert_eq!(ids.len(), bs, "gamma sources must be distinct");
        for i in 0..bs {
            let gamma = &batch.elements[i];
            let delta = &batch.elements[bs + i];
            assert_eq!(gamma.source.pair_id, delta.source.pair_id, "pairing broken");
            assert_ne!(gamma.layout, delta.layout, "layouts must differ");
        }
    }
}

#[test]
fn chsg_variants_share_and_contrast_as_declared() {
    let (_dir, m) = test_manifest(10);
    let ranges = SemanticRanges::default();
    let bs = 4;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch = build_chsg_batch(
        &m,
        bs,
        &mut rng,
        ChsgVariant::SameLayoutDiffSemantic,
        &ranges,
    )
    .unwrap();
    assert_eq!(batch.mode, BatchMode::ChsgVariant);
    for i in 0..bs {
        let (g, d) = (&batch.elements[i], &batch.elements[bs + i]);
        assert_eq!(g.layout, d.layout, "same-l must share the layout");
        assert!(
            g.semantic_ground != d.semantic_ground || g.semantic_aerial != d.semantic_aerial,
            "semantics must differ"
        );
    }

    let batch = build_chsg_batch(&m, bs, &mut rng, ChsgVariant::SemanticOnly, &ranges).unwrap();
    for i in 0..2 * bs {
        assert!(
            batch.elements[i].layout.is_identity(),
            "s-only has no layout sim"
        );
    }

    let batch = build_chsg_batch(&m, bs, &mut rng, ChsgVariant::LayoutOnly, &ranges).unwrap();
    for i in 0..bs {
        let (g, d) = (&batch.elements[i], &batch.elements[bs + i]);
        assert_ne!(g.layout, d.layout);
        assert!(g.semantic_ground.is_identity() && d.semantic_aerial.is_identity());
    }

    let batch = build_chsg_batch(
        &m,
        bs,
        &mut rng,
        ChsgVariant::SameSemanticDiffLayout,
        &ranges,
    )
    .unwrap();
    for i in 0..bs {
        let (g, d) = (&batch.elements[i], &batch.elements[bs + i]);
        assert_ne!(g.layout, d.layout);
        assert_eq!(g.semantic_ground, d.semantic_ground);
        assert_eq!(g.semantic_aerial, d.semantic_aerial);
    }
}

#[test]
fn variant_names_round_trip() {
    for v in [
        ChsgVariant::LayoutAndSemantic,
        ChsgVariant::SemanticOnly,
        ChsgVariant::LayoutOnly,
        ChsgVariant::SameLayoutDiffSemantic,
        ChsgVariant::SameSemanticDiffLayout,
    ] {
        assert_eq!(ChsgVariant::parse(v.as_str()).unwrap(), v);
    }
    assert!(ChsgVariant::parse("bogus").is_err());
}

#[test]
fn batch_provenance_serializes() {
    let (_dir, m) = test_manifest(6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let batch = build_chsg_batch(
        &m,
        3,
        &mut rng,
        ChsgVariant::LayoutAndSemantic,
        &SemanticRanges::default(),
    )
    .unwrap();
    let json = serde_json::to_string(&batch).unwrap();
    let back: ContrastiveBatch = serde_json::from_str(&json).unwrap();
    assert_eq!(batch, back);
}

#[test]
fn materialized_batch_has_requested_shapes() {
    let (_dir, m) = test_manifest(6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let batch = build_chsg_batch(
        &m,
        2,
        &mut rng,
        ChsgVariant::LayoutAndSemantic,
        &SemanticRanges::default(),
    )
    .unwrap();
    // With the polar preprocessing the aerial view gets panorama shape.
    let images = materialize_batch(&m, &batch, Some((8, 16))).unwrap();
    assert_eq!(images.len(), 4);
    for (g, a) in &images {
        assert_eq!((g.height(), g.width()), (8, 16));
        assert_eq!((a.height(), a.width()), (8, 16));
    }
    // Without it the aerial keeps its own shape.
    let images = materialize_batch(&m, &batch, None).unwrap();
    for (_, a) in &images {
        assert_eq!((a.height(), a.width()), (16, 16));
    }
}

#[test]
fn raw_materialization_is_the_plain_image() {
    let (_dir, m) = test_manifest(4);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let batch = build_raw_batch(&m, 2, &mut rng).unwrap();
    let images = materialize_batch(&m, &batch, None).unwrap();
    for (element, (g, a)) in batch.elements.iter().zip(&images) {
        let g0 = m.load_ground(&element.source).unwrap();
        let a0 = m.load_aerial(&element.source).unwrap();
        assert_eq!(g, &g0);
        assert_eq!(a, &a0);
    }
}

#[test]
fn hard_sample_set_has_six_categories_times_n() {
    let (_dir, m) = test_manifest(8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let items = hard_sample_eval_set(&m, 5, &mut rng).unwrap();
    assert_eq!(items.len(), 30);
    for category in HardSampleCategory::ALL {
        let of_cat: Vec<_> = items.iter().filter(|i| i.category == category).collect();
        assert_eq!(of_cat.len(), 5, "{category:?}");
        for item in of_cat {
            if category == HardSampleCategory::Unmatched {
                assert_ne!(
                    item.ground_source.pair_id, item.aerial_source.pair_id,
                    "unmatched must never use the true pairing"
                );
            } else {
                assert_eq!(item.ground_source.pair_id, item.aerial_source.pair_id);
                assert_eq!(item.ground_layout, category.ground_layout());
            }
        }
    }
}

#[test]
fn rot180_applied_twice_restores_the_panorama() {
    let (_dir, m) = test_manifest(3);
    let layout = HardSampleCategory::Rot180.ground_layout();
    let g = GroundPanorama::new(m.load_ground(&m.records[0]).unwrap());
    let once = panorama_layout_op(&g, &layout).unwrap();
    let twice = panorama_layout_op(&once, &layout).unwrap();
    assert_eq!(twice.image(), g.image());
}

#[test]
fn derangements_have_no_fixed_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for n in [2usize, 3, 5, 17] {
        for _ in 0..50 {
            let d = sample_derangement(n, &mut rng);
            assert_eq!(d.len(), n);
            let mut sorted = d.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..n).collect::<Vec<_>>(), "not a permutation");
            assert!(
                d.iter().enumerate().all(|(i, &p)| i != p),
                "fixed point in {d:?}"
            );
        }
    }
}
