//! The training loop: batch construction, two-view forward, combined loss,
//! AdamW update, JSON-lines logging and checkpointing.

mod checkpoint;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, LoadedCheckpoint, RngState};
pub use optim::AdamW;

use crate::dataset::PairManifest;
use crate::error::{Error, Result};
use crate::eval::{embed_dataset, evaluate, MetricsReport};
use crate::graph::Graph;
use crate::imaging::{SemanticRanges, View};
use crate::model::{Model, ModelConfig};
use crate::objectives::{graph_total_loss, LossBreakdown, LossConfig};
use crate::sampling::{build_batch, materialize_batch, ChsgVariant, SamplerMode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Full training-run configuration, embedded in checkpoints and accepted
/// from JSON config files (with schema validation).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Fraction of steps spent in linear warmup (0 disables it).
    pub warmup_frac: f64,
    /// Clip the global gradient norm to this value when set.
    pub grad_clip: Option<f64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub sampler: SamplerMode,
    /// Polar-transform the aerial view to the panorama shape at load.
    pub polar: bool,
    pub loss: LossConfig,
    pub model: ModelConfig,
    pub semantic_ranges: SemanticRanges,
    pub deterministic: bool,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schema_version: checkpoint::SCHEMA_VERSION,
            seed: 0,
            steps: 100,
            batch_size: 32,
            learning_rate: 1e-4,
            weight_decay: 0.03,
            warmup_frac: 0.0,
            grad_clip: None,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            sampler: SamplerMode::Chsg(ChsgVariant::LayoutAndSemantic),
            polar: true,
            loss: LossConfig::default(),
            model: ModelConfig::default(),
            semantic_ranges: SemanticRanges::default(),
            deterministic: true,
            log_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != checkpoint::SCHEMA_VERSION {
            return Err(Error::InvalidParam(format!(
                "config schema {} unsupported (expected {})",
                self.schema_version,
                checkpoint::SCHEMA_VERSION
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidParam("batch size must be >= 2".into()));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParam("learning rate must be > 0".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidParam("weight decay must be >= 0".into()));
        }
        if !(0.0..=0.9).contains(&self.warmup_frac) {
            return Err(Error::InvalidParam(
                "warmup fraction must be in [0, 0.9]".into(),
            ));
        }
        if let Some(clip) = self.grad_clip {
            if clip <= 0.0 || !clip.is_finite() {
                return Err(Error::InvalidParam("grad_clip must be > 0".into()));
            }
        }
        for (name, b) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidParam(format!(
                    "{name} must be in [0, 1), got {b}"
                )));
            }
        }
        if self.steps == 0 {
            return Err(Error::InvalidParam("steps must be > 0".into()));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidParam("log_every must be > 0".into()));
        }
        if self.polar && self.model.aerial_size != self.model.ground_size {
            return Err(Error::InvalidParam(
                "polar preprocessing feeds the aerial branch panorama-shaped input; \
                 model.aerial_size must equal model.ground_size"
                    .into(),
            ));
        }
        self.loss.validate()?;
        self.model.validate()
    }

    /// Polar output size (the panorama shape) when enabled.
    pub fn polar_to(&self) -> Option<(usize, usize)> {
        self.polar.then_some(self.model.ground_size)
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let warmup = (self.warmup_frac * self.steps as f64).round() as usize;
        if warmup > 0 && step < warmup {
            self.learning_rate * (step + 1) as f64 / warmup as f64
        } else {
            self.learning_rate
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_file(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// One JSON-lines record per logged step.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub l_total: f64,
    pub l_triplet: f64,
    pub l_cf_a: f64,
    pub l_cf_g: f64,
    pub grad_norm: f64,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
    pub steps_run: usize,
    pub records: Vec<LogRecord>,
}

/// Train from scratch (or resume from `resume`) until `config.steps`
/// optimizer steps have been taken; writes `train_log.jsonl` and
/// `checkpoint.ckpt` under `out_dir`.
pub fn train(
    config: &TrainConfig,
    manifest: &PairManifest,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutput> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let (mut model, mut optimizer, mut sampler_rng, mut cf_rng, start_step) = match resume {
        None => {
            let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
            let model = Model::new(config.model.clone(), &mut init_rng)?;
            let mut optimizer = AdamW::new(&model.store, config.weight_decay as f32);
            optimizer.beta1 = config.adam_beta1 as f32;
            optimizer.beta2 = config.adam_beta2 as f32;
            // Independent streams for sampling and counterfactual draws.
            let mut sampler_rng = ChaCha8Rng::seed_from_u64(config.seed);
            sampler_rng.set_stream(1);
            let mut cf_rng = ChaCha8Rng::seed_from_u64(config.seed);
            cf_rng.set_stream(2);
            (model, optimizer, sampler_rng, cf_rng, 0usize)
        }
        Some(path) => {
            let loaded = load_checkpoint(path)?;
            // The step budget may be extended on resume; everything else
            // must match the checkpointed run.
            let mut normalized = loaded.config.clone();
            normalized.steps = config.steps;
            if normalized != *config {
                return Err(Error::Checkpoint(
                    "resume config differs from the checkpointed config".into(),
                ));
            }
            if loaded.step > config.steps {
                return Err(Error::Checkpoint(format!(
                    "checkpoint is already at step {} but the target is {}",
                    loaded.step, config.steps
                )));
            }
            (
                loaded.model,
                loaded.optimizer,
                loaded.sampler_rng,
                loaded.cf_rng,
                loaded.step,
            )
        }
    };

    let log_path = out_dir.join("train_log.jsonl");
    let mut log_file = std::fs::OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .write(true)
        .truncate(resume.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;

    let mut records = Vec::new();
    for step in start_step..config.steps {
        let record = train_step(
            config,
            manifest,
            &mut model,
            &mut optimizer,
            &mut sampler_rng,
            &mut cf_rng,
            step,
            out_dir,
        )?;
        if step % config.log_every == 0 || step + 1 == config.steps {
            let line = serde_json::to_string(&record)?;
            writeln!(log_file, "{line}").map_err(|e| Error::io(&log_path, e))?;
        }
        records.push(record);
    }
    log_file.flush().map_err(|e| Error::io(&log_path, e))?;

    let checkpoint_path = out_dir.join("checkpoint.ckpt");
    save_checkpoint(
        &checkpoint_path,
        &model,
        config,
        config.steps,
        &optimizer,
        &sampler_rng,
        &cf_rng,
    )?;
    Ok(TrainOutput {
        checkpoint_path,
        log_path,
        steps_run: config.steps - start_step,
        records,
    })
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    config: &TrainConfig,
    manifest: &PairManifest,
    model: &mut Model,
    optimizer: &mut AdamW,
    sampler_rng: &mut ChaCha8Rng,
    cf_rng: &mut ChaCha8Rng,
    step: usize,
    out_dir: &Path,
) -> Result<LogRecord> {
    let batch = build_batch(
        manifest,
        config.sampler,
        config.batch_size,
        sampler_rng,
        &config.semantic_ranges,
    )?;
    let images = materialize_batch(manifest, &batch, config.polar_to())?;

    let mut g = Graph::new();
    let mut ground_nodes = Vec::with_capacity(images.len());
    let mut aerial_nodes = Vec::with_capacity(images.len());
    let mut ground_raws = Vec::with_capacity(images.len());
    let mut aerial_raws = Vec::with_capacity(images.len());
    for (ground, aerial) in &images {
        let og = model.forward(&mut g, ground, View::Ground)?;
        let oa = model.forward(&mut g, aerial, View::Aerial)?;
        ground_nodes.push(og.embedding);
        aerial_nodes.push(oa.embedding);
        ground_raws.push(og.raw);
        aerial_raws.push(oa.raw);
    }

    let cf_nodes = if config.loss.cf_enabled {
        let mut ground_hats = Vec::with_capacity(images.len());
        let mut aerial_hats = Vec::with_capacity(images.len());
        for (&gr, &ar) in ground_raws.iter().zip(&aerial_raws) {
            ground_hats.push(model.counterfactual_forward(&mut g, gr, cf_rng)?);
            aerial_hats.push(model.counterfactual_forward(&mut g, ar, cf_rng)?);
        }
        Some((ground_hats, aerial_hats))
    } else {
        None
    };

    let terms = graph_total_loss(
        &mut g,
        &ground_nodes,
        &aerial_nodes,
        cf_nodes.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice())),
        &config.loss,
    );

    let breakdown = LossBreakdown {
        total: g.scalar(terms.total) as f64,
        triplet: g.scalar(terms.triplet) as f64,
        cf_aerial: g.scalar(terms.cf_aerial) as f64,
        cf_ground: g.scalar(terms.cf_ground) as f64,
    };
    if !breakdown.total.is_finite() {
        let dump = serde_json::json!({
            "step": step,
            "loss": format!("{breakdown:?}"),
            "weight_norm": model.store.value_norm(),
            "batch": batch,
        });
        let dump_path = out_dir.join("nan_dump.json");
        std::fs::write(&dump_path, serde_json::to_string_pretty(&dump)?)
            .map_err(|e| Error::io(&dump_path, e))?;
        return Err(Error::TrainAbort(format!(
            "non-finite loss at step {step}; diagnostics in {}",
            dump_path.display()
        )));
    }

    model.store.zero_grads();
    g.backward(terms.total, &mut model.store);
    let grad_norm = model.store.grad_norm() as f64;
    if !grad_norm.is_finite() {
        return Err(Error::TrainAbort(format!(
            "non-finite gradient norm at step {step}"
        )));
    }
    if let Some(clip) = config.grad_clip {
        if grad_norm > clip {
            model.store.scale_grads((clip / grad_norm) as f32);
        }
    }
    optimizer.step(&mut model.store, config.lr_at(step) as f32);

    Ok(LogRecord {
        step,
        l_total: breakdown.total,
        l_triplet: breakdown.triplet,
        l_cf_a: breakdown.cf_aerial,
        l_cf_g: breakdown.cf_ground,
        grad_norm,
    })
}

/// One run of the mode-comparison experiment.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ModeRun {
    pub label: String,
    pub sampler: SamplerMode,
    pub batch_size: usize,
    pub losses: Vec<f64>,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ModeComparison {
    pub steps: usize,
    pub runs: Vec<ModeRun>,
}

/// Train {raw(bs), ls(bs), ls(2bs), chsg(bs)} with shared seeds and report
/// aligned loss curves plus train-set retrieval metrics for each.
pub fn compare_modes(
    base: &TrainConfig,
    manifest: &PairManifest,
    out_dir: &Path,
) -> Result<ModeComparison> {
    let configs = [
        ("raw", SamplerMode::Raw, base.batch_size),
        ("ls", SamplerMode::Ls, base.batch_size),
        ("ls-2x", SamplerMode::Ls, base.batch_size * 2),
        (
            "chsg",
            SamplerMode::Chsg(ChsgVariant::LayoutAndSemantic),
            base.batch_size,
        ),
    ];
    let mut runs = Vec::new();
    for (label, sampler, bs) in configs {
        let config = TrainConfig {
            sampler,
            batch_size: bs,
            ..base.clone()
        };
        let run_dir = out_dir.join(label);
        let out = train(&config, manifest, &run_dir, None)?;
        let loaded = load_checkpoint(&out.checkpoint_path)?;
        let queries = embed_dataset(&loaded.model, manifest, View::Ground, None)?;
        let refs = embed_dataset(&loaded.model, manifest, View::Aerial, config.polar_to())?;
        let metrics = evaluate(&loaded.model, &queries, &refs, manifest)?;
        runs.push(ModeRun {
            label: label.to_string(),
            sampler,
            batch_size: bs,
            losses: out.records.iter().map(|r| r.l_total).collect(),
            metrics,
        });
    }
    let report = ModeComparison {
        steps: base.steps,
        runs,
    };
    let path = out_dir.join("mode_comparison.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)?)
        .map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

#[cfg(test)]
mod tests;
