//! Manifest-based ingestion of paired ground/aerial corpora, pixel-hash
//! deduplication and the synthetic paired-dataset generator.

mod dedup;
mod synthetic;

pub use dedup::{apply_dedup, dedup, DedupGroup, DedupReport};
pub use synthetic::{generate_synthetic, SyntheticSpec};

use crate::error::{Error, Result};
use crate::imaging::{io, ImageBuf};
use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// How images are shaped at load. `Fixed` pins stride-compatible sizes;
/// `Native` keeps files as stored (synthetic sets are generated
/// stride-compatible already).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum ResizePolicy {
    Native,
    Fixed {
        ground: (usize, usize),
        aerial: (usize, usize),
    },
}

impl ResizePolicy {
    /// Stride-16-compatible default for full-size corpora: panoramas to
    /// 128x672 (nearest stride multiple of the usual 122x671), aerials to
    /// 256x256.
    pub fn desk() -> Self {
        ResizePolicy::Fixed {
            ground: (128, 672),
            aerial: (256, 256),
        }
    }

    pub fn apply_ground(&self, img: ImageBuf) -> Result<ImageBuf> {
        match self {
            ResizePolicy::Native => Ok(img),
            ResizePolicy::Fixed { ground, .. } => img.resize(ground.0, ground.1),
        }
    }

    pub fn apply_aerial(&self, img: ImageBuf) -> Result<ImageBuf> {
        match self {
            ResizePolicy::Native => Ok(img),
            ResizePolicy::Fixed { aerial, .. } => img.resize(aerial.0, aerial.1),
        }
    }
}

/// One matched ground/aerial pair.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PairRecord {
    pub pair_id: String,
    pub ground_path: PathBuf,
    pub aerial_path: PathBuf,
}

/// One reference aerial image in the retrieval pool.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AerialRef {
    pub id: String,
    pub path: PathBuf,
}

/// Manifest formats accepted by [`load_manifest`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ManifestFormat {
    /// CSV rows `ground_path,aerial_path`, relative to the file.
    CvusaCsv,
    /// Directory with `ground/` and `aerial/` subdirectories holding
    /// identically named files.
    DirectoryPairs,
    /// JSON with an explicit aerial pool and per-query positive /
    /// semi-positive id sets.
    VigorJson,
}

/// A validated corpus: matched pairs, the aerial reference pool, and the
/// per-query positive sets used by retrieval metrics.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PairManifest {
    pub split: Split,
    pub records: Vec<PairRecord>,
    pub aerial_pool: Vec<AerialRef>,
    /// Query pair_id -> ids in `aerial_pool` covering the query location.
    pub positives: BTreeMap<String, Vec<String>>,
    /// Query pair_id -> other covering aerials (many-to-one corpora only).
    pub semi_positives: BTreeMap<String, Vec<String>>,
    pub resize: ResizePolicy,
}

impl PairManifest {
    /// Number of ground queries.
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of reference aerials.
    pub fn num_refs(&self) -> usize {
        self.aerial_pool.len()
    }

    /// True when every query's positive set is exactly its own aerial.
    pub fn is_one_to_one(&self) -> bool {
        self.len() == self.num_refs()
            && self.records.iter().all(|r| {
                self.positives
                    .get(&r.pair_id)
                    .is_some_and(|p| p.len() == 1 && p[0] == r.pair_id)
            })
            && self.semi_positives.values().all(|s| s.is_empty())
    }

    pub fn load_ground(&self, record: &PairRecord) -> Result<ImageBuf> {
        self.resize
            .apply_ground(io::load_image(&record.ground_path)?)
    }

    pub fn load_aerial(&self, record: &PairRecord) -> Result<ImageBuf> {
        self.resize
            .apply_aerial(io::load_image(&record.aerial_path)?)
    }

    pub fn load_pool_aerial(&self, item: &AerialRef) -> Result<ImageBuf> {
        self.resize.apply_aerial(io::load_image(&item.path)?)
    }

    fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::Manifest("manifest has no pairs".into()));
        }
        let mut ids = HashSet::new();
        for r in &self.records {
            if !ids.insert(r.pair_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate pair id {}", r.pair_id)));
            }
        }
        let mut pool_ids = HashSet::new();
        for a in &self.aerial_pool {
            if !pool_ids.insert(a.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate aerial id {}", a.id)));
            }
        }
        for r in &self.records {
            for path in [&r.ground_path, &r.aerial_path] {
                if !path.exists() {
                    return Err(Error::Manifest(format!(
                        "pair {}: missing file {}",
                        r.pair_id,
                        path.display()
                    )));
                }
            }
            let positives = self.positives.get(&r.pair_id).ok_or_else(|| {
                Error::Manifest(format!("pair {} has no positive set", r.pair_id))
            })?;
            if positives.is_empty() {
                return Err(Error::Manifest(format!(
                    "pair {} has an empty positive set",
                    r.pair_id
                )));
            }
            for pid in positives
                .iter()
                .chain(self.semi_positives.get(&r.pair_id).into_iter().flatten())
            {
                if !pool_ids.contains(pid.as_str()) {
                    return Err(Error::Manifest(format!(
                        "pair {}: id {pid} not in the aerial pool",
                        r.pair_id
                    )));
                }
            }
        }
        for a in &self.aerial_pool {
            if !a.path.exists() {
                return Err(Error::Manifest(format!(
                    "aerial {}: missing file {}",
                    a.id,
                    a.path.display()
                )));
            }
        }
        Ok(())
    }
}

/// Build the pool/positives structure for a one-to-one pair list.
fn one_to_one(records: Vec<PairRecord>, split: Split, resize: ResizePolicy) -> PairManifest {
    let aerial_pool = records
        .iter()
        .map(|r| AerialRef {
            id: r.pair_id.clone(),
            path: r.aerial_path.clone(),
        })
        .collect();
    let positives = records
        .iter()
        .map(|r| (r.pair_id.clone(), vec![r.pair_id.clone()]))
        .collect();
    PairManifest {
        split,
        records,
        aerial_pool,
        positives,
        semi_positives: BTreeMap::new(),
        resize,
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct VigorQuery {
    id: String,
    ground: PathBuf,
    positives: Vec<String>,
    #[serde(default)]
    semi_positives: Vec<String>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct VigorFile {
    aerials: Vec<AerialRef>,
    queries: Vec<VigorQuery>,
}

pub fn load_manifest(
    path: &Path,
    format: ManifestFormat,
    split: Split,
    resize: ResizePolicy,
) -> Result<PairManifest> {
    let manifest = match format {
        ManifestFormat::CvusaCsv => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let base = path.parent().unwrap_or(Path::new("."));
            let mut records = Vec::new();
            for (idx, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                let mut cols = line.split(',');
                let (ground, aerial) = match (cols.next(), cols.next()) {
                    (Some(g), Some(a)) if !g.is_empty() && !a.is_empty() => (g, a),
                    _ => {
                        return Err(Error::Manifest(format!(
                            "{}:{}: expected `ground_path,aerial_path`",
                            path.display(),
                            idx + 1
                        )))
                    }
                };
                records.push(PairRecord {
                    pair_id: format!("{idx:06}"),
                    ground_path: base.join(ground),
                    aerial_path: base.join(aerial),
                });
            }
            one_to_one(records, split, resize)
        }
        ManifestFormat::DirectoryPairs => {
            let ground_dir = path.join("ground");
            let aerial_dir = path.join("aerial");
            let mut names: Vec<String> = std::fs::read_dir(&ground_dir)
                .map_err(|e| Error::io(&ground_dir, e))?
                .filter_map(|e| e.ok())
                .filter(|e| e.path().is_file())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .collect();
            names.sort();
            let records = names
                .into_iter()
                .map(|name| {
                    let stem = Path::new(&name)
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| name.clone());
                    PairRecord {
                        pair_id: stem,
                        ground_path: ground_dir.join(&name),
                        aerial_path: aerial_dir.join(&name),
                    }
                })
                .collect();
            one_to_one(records, split, resize)
        }
        ManifestFormat::VigorJson => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let file: VigorFile = serde_json::from_str(&text)?;
            let base = path.parent().unwrap_or(Path::new("."));
            let aerial_pool: Vec<AerialRef> = file
                .aerials
                .into_iter()
                .map(|a| AerialRef {
                    id: a.id,
                    path: base.join(a.path),
                })
                .collect();
            let by_id: BTreeMap<&str, &PathBuf> = aerial_pool
                .iter()
                .map(|a| (a.id.as_str(), &a.path))
                .collect();
            let mut records = Vec::new();
            let mut positives = BTreeMap::new();
            let mut semi_positives = BTreeMap::new();
            for q in file.queries {
                let first = q
                    .positives
                    .first()
                    .ok_or_else(|| Error::Manifest(format!("query {} has no positives", q.id)))?;
                let aerial_path = by_id
                    .get(first.as_str())
                    .ok_or_else(|| {
                        Error::Manifest(format!("query {}: unknown aerial {first}", q.id))
                    })?
                    .to_path_buf();
                records.push(PairRecord {
                    pair_id: q.id.clone(),
                    ground_path: base.join(&q.ground),
                    aerial_path,
                });
                positives.insert(q.id.clone(), q.positives);
                semi_positives.insert(q.id, q.semi_positives);
            }
            PairManifest {
                split,
                records,
                aerial_pool,
                positives,
                semi_positives,
                resize,
            }
        }
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Write a manifest. `.csv` emits the one-to-one CSV layout (paths made
/// relative to the file when possible), `.json` the full pool format.
pub fn save_manifest(manifest: &PairManifest, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "csv" => {
            if !manifest.is_one_to_one() {
                return Err(Error::Manifest(
                    "CSV layout cannot express many-to-one positive sets; use .json".into(),
                ));
            }
            let base = path.parent().unwrap_or(Path::new("."));
            let relativize = |p: &Path| -> String {
                p.strip_prefix(base)
                    .map(|r| r.to_string_lossy().into_owned())
                    .unwrap_or_else(|_| p.to_string_lossy().into_owned())
            };
            let mut out = String::new();
            for r in &manifest.records {
                out.push_str(&relativize(&r.ground_path));
                out.push(',');
                out.push_str(&relativize(&r.aerial_path));
                out.push('\n');
            }
            std::fs::write(path, out).map_err(|e| Error::io(path, e))
        }
        "json" => {
            let base = path.parent().unwrap_or(Path::new("."));
            let relativize = |p: &Path| -> PathBuf {
                p.strip_prefix(base)
                    .map(Path::to_path_buf)
                    .unwrap_or_else(|_| p.to_path_buf())
            };
            let file = VigorFile {
                aerials: manifest
                    .aerial_pool
                    .iter()
                    .map(|a| AerialRef {
                        id: a.id.clone(),
                        path: relativize(&a.path),
                    })
                    .collect(),
                queries: manifest
                    .records
                    .iter()
                    .map(|r| VigorQuery {
                        id: r.pair_id.clone(),
                        ground: relativize(&r.ground_path),
                        positives: manifest.positives[&r.pair_id].clone(),
                        semi_positives: manifest
                            .semi_positives
                            .get(&r.pair_id)
                            .cloned()
                            .unwrap_or_default(),
                    })
                    .collect(),
            };
            let text = serde_json::to_string_pretty(&file)?;
            std::fs::write(path, text).map_err(|e| Error::io(path, e))
        }
        other => Err(Error::Manifest(format!(
            "unsupported manifest extension `{other}` (use .csv or .json)"
        ))),
    }
}
