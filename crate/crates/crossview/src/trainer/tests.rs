use super::*;
use crate::dataset::{generate_synthetic, SyntheticSpec};
use crate::model::DescriptorActivation;

fn tiny_train_config(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 3,
        learning_rate: 1e-3,
        sampler: SamplerMode::Chsg(ChsgVariant::LayoutAndSemantic),
        polar: true,
        model: ModelConfig {
            channels: 8,
            descriptors: 2,
            gle_layers: 1,
            gle_heads: 2,
            stride: 4,
            ground_size: (8, 16),
            aerial_size: (8, 16),
            activation: DescriptorActivation::Sigmoid,
            normalize: true,
        },
        ..TrainConfig::default()
    }
}

fn tiny_corpus(n: usize, seed: u64) -> (tempfile::TempDir, PairManifest) {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_synthetic(
        &SyntheticSpec {
            n_pairs: n,
            aerial_size: 16,
            pano_size: (8, 16),
            seed,
            ..SyntheticSpec::default()
        },
        dir.path(),
    )
    .unwrap();
    (dir, m)
}

#[test]
fn config_round_trips_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_train_config(4);
    let path = dir.path().join("train.json");
    cfg.to_json_file(&path).unwrap();
    let back = TrainConfig::from_json_file(&path).unwrap();
    assert_eq!(cfg, back);

    // Unknown fields are schema violations.
    let mut value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    value["bogus_field"] = serde_json::json!(1);
    std::fs::write(&path, value.to_string()).unwrap();
    assert!(TrainConfig::from_json_file(&path).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = tiny_train_config(4);
    cfg.batch_size = 1;
    assert!(cfg.validate().is_err());

    let mut cfg = tiny_train_config(4);
    cfg.polar = true;
    cfg.model.aerial_size = (16, 16);
    assert!(cfg.validate().is_err(), "polar needs matching aerial input");

    let mut cfg = tiny_train_config(4);
    cfg.schema_version = 99;
    assert!(cfg.validate().is_err());
}

#[test]
fn warmup_schedule_ramps_then_holds() {
    let mut cfg = tiny_train_config(100);
    cfg.warmup_frac = 0.05;
    cfg.learning_rate = 1.0;
    assert!((cfg.lr_at(0) - 0.2).abs() < 1e-12);
    assert!((cfg.lr_at(4) - 1.0).abs() < 1e-12);
    assert!((cfg.lr_at(50) - 1.0).abs() < 1e-12);
    cfg.warmup_frac = 0.0;
    assert_eq!(cfg.lr_at(0), 1.0);
}

#[test]
fn fixed_seed_runs_produce_identical_logs() {
    let (_dir, m) = tiny_corpus(6, 0);
    let cfg = tiny_train_config(3);
    let out1 = tempfile::tempdir().unwrap();
    let out2 = tempfile::tempdir().unwrap();
    let a = train(&cfg, &m, out1.path(), None).unwrap();
    let b = train(&cfg, &m, out2.path(), None).unwrap();
    assert_eq!(a.records, b.records, "training must be deterministic");
    let log1 = std::fs::read_to_string(&a.log_path).unwrap();
    let log2 = std::fs::read_to_string(&b.log_path).unwrap();
    assert_eq!(log1, log2);
}

#[test]
fn loss_decreases_on_a_tiny_overfit() {
    let (_dir, m) = tiny_corpus(4, 1);
    let mut cfg = tiny_train_config(12);
    cfg.learning_rate = 3e-3;
    let out = tempfile::tempdir().unwrap();
    let result = train(&cfg, &m, out.path(), None).unwrap();
    let first = result.records.first().unwrap().l_total;
    let last = result.records.last().unwrap().l_total;
    assert!(last < first, "no learning signal: {first} -> {last}");
    assert!(result.records.iter().all(|r| r.grad_norm.is_finite()));
}

#[test]
fn checkpoint_resume_matches_uninterrupted_run() {
    let (_dir, m) = tiny_corpus(6, 2);
    let full_cfg = tiny_train_config(4);

    let out_full = tempfile::tempdir().unwrap();
    let full = train(&full_cfg, &m, out_full.path(), None).unwrap();

    // Stop after 2 steps, then resume to 4.
    let mut half_cfg = full_cfg.clone();
    half_cfg.steps = 2;
    let out_half = tempfile::tempdir().unwrap();
    let half = train(&half_cfg, &m, out_half.path(), None).unwrap();

    let out_resumed = tempfile::tempdir().unwrap();
    // Resuming with an extended step budget continues the same trajectory.
    let ckpt = load_checkpoint(&half.checkpoint_path).unwrap();
    assert_eq!(ckpt.step, 2);
    let resumed_cfg = TrainConfig {
        steps: 4,
        ..half_cfg.clone()
    };
    let resumed = train(
        &resumed_cfg,
        &m,
        out_resumed.path(),
        Some(&half.checkpoint_path),
    )
    .unwrap();

    assert_eq!(resumed.records.len(), 2);
    assert_eq!(
        full.records[2..],
        resumed.records[..],
        "resumed trajectory diverged from the uninterrupted run"
    );
}

#[test]
fn checkpoint_weights_round_trip_bit_exact() {
    let (_dir, m) = tiny_corpus(4, 3);
    let cfg = tiny_train_config(2);
    let out = tempfile::tempdir().unwrap();
    let result = train(&cfg, &m, out.path(), None).unwrap();
    let loaded = load_checkpoint(&result.checkpoint_path).unwrap();
    assert_eq!(loaded.step, 2);
    // Saving again must reproduce the archive byte for byte.
    let second = out.path().join("again.ckpt");
    save_checkpoint(
        &second,
        &loaded.model,
        &loaded.config,
        loaded.step,
        &loaded.optimizer,
        &loaded.sampler_rng,
        &loaded.cf_rng,
    )
    .unwrap();
    let a = std::fs::read(&result.checkpoint_path).unwrap();
    let b = std::fs::read(&second).unwrap();
    assert_eq!(a, b);
}

#[test]
fn cf_toggle_changes_only_the_cf_summands_at_step_zero() {
    let (_dir, m) = tiny_corpus(6, 4);
    let mut on = tiny_train_config(1);
    on.loss.cf_enabled = true;
    let mut off = on.clone();
    off.loss.cf_enabled = false;

    let out_on = tempfile::tempdir().unwrap();
    let out_off = tempfile::tempdir().unwrap();
    let ron = &train(&on, &m, out_on.path(), None).unwrap().records[0];
    let roff = &train(&off, &m, out_off.path(), None).unwrap().records[0];

    assert_eq!(ron.l_triplet, roff.l_triplet, "triplet term must not move");
    assert_eq!(roff.l_cf_a, 0.0);
    assert_eq!(roff.l_cf_g, 0.0);
    assert!(ron.l_cf_a > 0.0 && ron.l_cf_g > 0.0);
    // The logged terms are f32 graph readouts; additivity holds to f32
    // rounding here (the f64 evaluators carry the 1e-9 contract).
    assert!((ron.l_total - (ron.l_triplet + ron.l_cf_a + ron.l_cf_g)).abs() < 1e-6);
    assert_eq!(roff.l_total, roff.l_triplet);
}

#[test]
fn nan_parameters_abort_with_diagnostics() {
    let (_dir, m) = tiny_corpus(4, 5);
    let cfg = tiny_train_config(1);
    let out = tempfile::tempdir().unwrap();
    // Train one step, poison the checkpoint weights, then resume.
    let result = train(&cfg, &m, out.path(), None).unwrap();
    let mut loaded = load_checkpoint(&result.checkpoint_path).unwrap();
    let pid = loaded
        .model
        .store
        .id_by_name("ground.gle.proj.weight")
        .unwrap();
    loaded.model.store.value_mut(pid)[[0, 0]] = f32::NAN;
    let mut resumed_cfg = loaded.config.clone();
    resumed_cfg.steps = 2;
    let poisoned = out.path().join("poisoned.ckpt");
    save_checkpoint(
        &poisoned,
        &loaded.model,
        &resumed_cfg,
        1,
        &loaded.optimizer,
        &loaded.sampler_rng,
        &loaded.cf_rng,
    )
    .unwrap();
    let err = train(&resumed_cfg, &m, out.path(), Some(&poisoned)).unwrap_err();
    assert!(matches!(err, Error::TrainAbort(_)), "{err}");
    assert!(out.path().join("nan_dump.json").exists());
}

#[test]
fn compare_modes_emits_aligned_runs() {
    let (_dir, m) = tiny_corpus(8, 6);
    let mut cfg = tiny_train_config(2);
    cfg.batch_size = 2;
    let out = tempfile::tempdir().unwrap();
    let report = compare_modes(&cfg, &m, out.path()).unwrap();
    assert_eq!(report.runs.len(), 4);
    let labels: Vec<_> = report.runs.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, vec!["raw", "ls", "ls-2x", "chsg"]);
    for run in &report.runs {
        assert_eq!(run.losses.len(), 2, "{}: unequal step count", run.label);
        assert!(run.metrics.r_at.contains_key(&1));
    }
    assert_eq!(report.runs[2].batch_size, 2 * cfg.batch_size);
    assert!(out.path().join("mode_comparison.json").exists());
    // Schema sanity: the report reloads.
    let text = std::fs::read_to_string(out.path().join("mode_comparison.json")).unwrap();
    let back: ModeComparison = serde_json::from_str(&text).unwrap();
    assert_eq!(back.runs.len(), 4);
}

#[test]
fn chsg_batches_feed_double_pairs_to_the_loss() {
    let (_dir, m) = tiny_corpus(6, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch = build_batch(
        &m,
        SamplerMode::Chsg(ChsgVariant::LayoutAndSemantic),
        3,
        &mut rng,
        &SemanticRanges::default(),
    )
    .unwrap();
    assert_eq!(batch.num_pairs(), 6);
}
