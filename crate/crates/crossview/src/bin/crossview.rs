//! Operator CLI: dataset generation, dedup, training, evaluation, mode
//! comparison and figure-style exports.
//!
//! Exit codes: 0 success, 1 runtime assertion failed (non-finite losses,
//! retrieval postconditions), 2 usage or I/O errors.

use clap::{Args, Parser, Subcommand};
use crossview::dataset::{
    apply_dedup, dedup, generate_synthetic, load_manifest, save_manifest, ManifestFormat,
    PairManifest, ResizePolicy, Split, SyntheticSpec,
};
use crossview::error::Error;
use crossview::eval::{
    distance_distribution, distances_to_csv, embed_dataset, evaluate, save_embeddings,
};
use crossview::imaging::{io as image_io, SemanticRanges, View};
use crossview::sampling::{build_chsg_batch, hard_sample_eval_set, ChsgVariant};
use crossview::trainer::{compare_modes, load_checkpoint, train, TrainConfig};
use crossview::viz::{contact_sheet, descriptor_heatmap_grid, violin_plot};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "crossview",
    version,
    about = "Cross-view geo-localization toolkit"
)]
struct Cli {
    /// Print a machine-readable summary JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ManifestArgs {
    /// Manifest path (CSV file, directory, or JSON file depending on
    /// --format).
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "cvusa-csv")]
    format: FormatArg,
    #[arg(long, value_enum, default_value = "train")]
    split: SplitArg,
    /// Image sizing at load: keep files as stored, or resize to the
    /// stride-compatible full-size defaults (ground 128x672, aerial
    /// 256x256).
    #[arg(long, value_enum, default_value = "native")]
    resize: ResizeArg,
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum FormatArg {
    CvusaCsv,
    DirectoryPairs,
    VigorJson,
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum SplitArg {
    Train,
    Test,
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum ResizeArg {
    Native,
    Desk,
}

impl ManifestArgs {
    fn load(&self) -> Result<PairManifest, Error> {
        let format = match self.format {
            FormatArg::CvusaCsv => ManifestFormat::CvusaCsv,
            FormatArg::DirectoryPairs => ManifestFormat::DirectoryPairs,
            FormatArg::VigorJson => ManifestFormat::VigorJson,
        };
        let split = match self.split {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        };
        let resize = match self.resize {
            ResizeArg::Native => ResizePolicy::Native,
            ResizeArg::Desk => ResizePolicy::desk(),
        };
        load_manifest(&self.manifest, format, split, resize)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        pairs: usize,
        #[arg(long, default_value_t = 64)]
        aerial_size: usize,
        #[arg(long, default_value_t = 32)]
        pano_height: usize,
        #[arg(long, default_value_t = 128)]
        pano_width: usize,
        #[arg(long, default_value_t = 3)]
        shapes_min: usize,
        #[arg(long, default_value_t = 8)]
        shapes_max: usize,
        #[arg(long, default_value_t = 0.02)]
        noise: f32,
        /// Fraction of pairs that are D4-layout twins of their predecessor.
        #[arg(long, default_value_t = 0.0)]
        twin_frac: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Hash decoded pixels and report duplicate pairs.
    Dedup {
        #[command(flatten)]
        manifest: ManifestArgs,
        /// Write the report JSON here (defaults to stdout summary only).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write a deduplicated manifest (train splits drop duplicates).
        #[arg(long)]
        apply: Option<PathBuf>,
    },
    /// Train a model from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        manifest: ManifestArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a manifest: R@K, R@1%, hit rate.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        manifest: ManifestArgs,
        /// Metrics JSON path (defaults under the checkpoint's directory).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also persist query/reference embeddings next to the metrics.
        #[arg(long)]
        save_embeddings: bool,
    },
    /// Export descriptor heatmaps and contrastive contact sheets.
    Visualize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        manifest: ManifestArgs,
        #[arg(long)]
        out: PathBuf,
        /// Pair id to visualize (defaults to the first record).
        #[arg(long)]
        pair: Option<String>,
        /// Polar-unroll square aerial descriptors for display.
        #[arg(long)]
        unroll_aerial: bool,
        /// Also write a contact sheet of this many contrastive pairs.
        #[arg(long)]
        chsg_sheet: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Distance distributions over hard-sample categories.
    Distdist {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        manifest: ManifestArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train {raw, ls, ls-2x, chsg} with shared seeds and compare.
    CompareModes {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        manifest: ManifestArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(serde::Serialize)]
struct Summary {
    command: &'static str,
    ok: bool,
    artifacts: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    detail: Option<serde_json::Value>,
}

fn exit_code(err: &Error) -> i32 {
    // 1 = a runtime postcondition failed; 2 = usage or I/O.
    match err {
        Error::TrainAbort(_) | Error::Retrieval(_) => 1,
        _ => 2,
    }
}

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&summary).unwrap());
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(exit_code(&err));
        }
    }
}

fn run(cli: &Cli) -> Result<Summary, Error> {
    match &cli.command {
        Command::Synth {
            out,
            pairs,
            aerial_size,
            pano_height,
            pano_width,
            shapes_min,
            shapes_max,
            noise,
            twin_frac,
            seed,
        } => {
            let spec = SyntheticSpec {
                n_pairs: *pairs,
                aerial_size: *aerial_size,
                pano_size: (*pano_height, *pano_width),
                shape_count: (*shapes_min, *shapes_max),
                noise_sigma: *noise,
                layout_twin_frac: *twin_frac,
                seed: *seed,
            };
            let manifest = generate_synthetic(&spec, out)?;
            if !cli.json {
                println!(
                    "wrote {} pairs under {} (manifest.csv)",
                    manifest.len(),
                    out.display()
                );
            }
            Ok(Summary {
                command: "synth",
                ok: true,
                artifacts: vec![out.join("manifest.csv")],
                detail: Some(serde_json::json!({"pairs": manifest.len(), "spec": spec})),
            })
        }
        Command::Dedup {
            manifest,
            out,
            apply,
        } => {
            let loaded = manifest.load()?;
            let report = dedup(&loaded)?;
            let mut artifacts = Vec::new();
            if let Some(path) = out {
                write_json(path, &report)?;
                artifacts.push(path.clone());
            }
            if let Some(path) = apply {
                let cleaned = if loaded.split == Split::Train {
                    apply_dedup(&loaded, &report)?
                } else {
                    // Duplicates are kept in test splits.
                    loaded.clone()
                };
                save_manifest(&cleaned, path)?;
                artifacts.push(path.clone());
            }
            if !cli.json {
                println!(
                    "{} pairs scanned, {} duplicate groups, {} removable",
                    report.pairs_scanned,
                    report.groups.len(),
                    report.pairs_removable
                );
            }
            Ok(Summary {
                command: "dedup",
                ok: true,
                artifacts,
                detail: Some(serde_json::to_value(&report)?),
            })
        }
        Command::Train {
            config,
            manifest,
            out,
            resume,
        } => {
            let config = TrainConfig::from_json_file(config)?;
            let loaded = manifest.load()?;
            let result = train(&config, &loaded, out, resume.as_deref())?;
            if !cli.json {
                println!(
                    "trained {} steps; checkpoint at {}",
                    result.steps_run,
                    result.checkpoint_path.display()
                );
            }
            let last = result.records.last().map(|r| r.l_total);
            Ok(Summary {
                command: "train",
                ok: true,
                artifacts: vec![result.checkpoint_path, result.log_path],
                detail: Some(serde_json::json!({
                    "steps_run": result.steps_run,
                    "final_loss": last,
                })),
            })
        }
        Command::Eval {
            checkpoint,
            manifest,
            out,
            save_embeddings: save_emb,
        } => {
            let loaded = load_checkpoint(checkpoint)?;
            let data = manifest.load()?;
            let queries = embed_dataset(&loaded.model, &data, View::Ground, None)?;
            let refs = embed_dataset(&loaded.model, &data, View::Aerial, loaded.config.polar_to())?;
            let report = evaluate(&loaded.model, &queries, &refs, &data)?;
            let out_path = out.clone().unwrap_or_else(|| {
                checkpoint
                    .parent()
                    .unwrap_or(Path::new("."))
                    .join("metrics.json")
            });
            write_json(&out_path, &report)?;
            let mut artifacts = vec![out_path.clone()];
            if *save_emb {
                let base_dir = out_path.parent().unwrap_or(Path::new("."));
                save_embeddings(&queries, &base_dir.join("query_embeddings"))?;
                save_embeddings(&refs, &base_dir.join("ref_embeddings"))?;
                artifacts.push(base_dir.join("query_embeddings.f32"));
                artifacts.push(base_dir.join("ref_embeddings.f32"));
            }
            if !cli.json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            }
            Ok(Summary {
                command: "eval",
                ok: true,
                artifacts,
                detail: Some(serde_json::to_value(&report)?),
            })
        }
        Command::Visualize {
            checkpoint,
            manifest,
            out,
            pair,
            unroll_aerial,
            chsg_sheet,
            seed,
        } => {
            let loaded = load_checkpoint(checkpoint)?;
            let data = manifest.load()?;
            std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            let record = match pair {
                Some(id) => data
                    .records
                    .iter()
                    .find(|r| &r.pair_id == id)
                    .ok_or_else(|| Error::Manifest(format!("pair {id} not found")))?,
                None => &data.records[0],
            };
            let ground = data.load_ground(record)?;
            let aerial_raw = data.load_aerial(record)?;
            let aerial = match loaded.config.polar_to() {
                Some((h, w)) => crossview::imaging::polar_transform(
                    &crossview::imaging::AerialImage::new(aerial_raw)?,
                    h,
                    w,
                )?
                .into_image(),
                None => aerial_raw,
            };
            let grid = descriptor_heatmap_grid(&loaded.model, &ground, &aerial, *unroll_aerial)?;
            let grid_path = out.join(format!("descriptors_{}.png", record.pair_id));
            image_io::save_image(&grid, &grid_path)?;
            let mut artifacts = vec![grid_path];

            if let Some(n) = chsg_sheet {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let batch = build_chsg_batch(
                    &data,
                    *n,
                    &mut rng,
                    ChsgVariant::LayoutAndSemantic,
                    &SemanticRanges::default(),
                )?;
                let sheet = contact_sheet(&data, &batch, 96)?;
                let sheet_path = out.join("contact_sheet.png");
                image_io::save_image(&sheet, &sheet_path)?;
                let prov_path = out.join("contact_sheet_provenance.json");
                write_json(&prov_path, &batch)?;
                artifacts.push(sheet_path);
                artifacts.push(prov_path);
            }
            if !cli.json {
                for a in &artifacts {
                    println!("wrote {}", a.display());
                }
            }
            Ok(Summary {
                command: "visualize",
                ok: true,
                artifacts,
                detail: None,
            })
        }
        Command::Distdist {
            checkpoint,
            manifest,
            out,
            n,
            seed,
        } => {
            let loaded = load_checkpoint(checkpoint)?;
            let data = manifest.load()?;
            std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let items = hard_sample_eval_set(&data, *n, &mut rng)?;
            let dist =
                distance_distribution(&loaded.model, &data, &items, loaded.config.polar_to())?;
            let csv_path = out.join("distances.csv");
            std::fs::write(&csv_path, distances_to_csv(&dist))
                .map_err(|e| Error::io(&csv_path, e))?;
            let plot = violin_plot(&dist, 640, 320);
            let plot_path = out.join("distances_violin.png");
            image_io::save_image(&plot, &plot_path)?;
            let means: serde_json::Value = dist
                .iter()
                .map(|(c, v)| {
                    (
                        c.as_str().to_string(),
                        serde_json::json!(v.iter().sum::<f64>() / v.len().max(1) as f64),
                    )
                })
                .collect::<serde_json::Map<_, _>>()
                .into();
            if !cli.json {
                println!("{}", serde_json::to_string_pretty(&means)?);
            }
            Ok(Summary {
                command: "distdist",
                ok: true,
                artifacts: vec![csv_path, plot_path],
                detail: Some(means),
            })
        }
        Command::CompareModes {
            config,
            manifest,
            out,
        } => {
            let config = TrainConfig::from_json_file(config)?;
            let data = manifest.load()?;
            let report = compare_modes(&config, &data, out)?;
            if !cli.json {
                for run in &report.runs {
                    println!(
                        "{}: bs={} final_loss={:.4} R@1={:.3}",
                        run.label,
                        run.batch_size,
                        run.losses.last().copied().unwrap_or(f64::NAN),
                        run.metrics.r_at.get(&1).copied().unwrap_or(f64::NAN),
                    );
                }
            }
            Ok(Summary {
                command: "compare-modes",
                ok: true,
                artifacts: vec![out.join("mode_comparison.json")],
                detail: Some(serde_json::to_value(&report)?),
            })
        }
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}
