//! Embedding extraction, exact L2 nearest-neighbor retrieval and the
//! recall / hit-rate metric suite.

use crate::dataset::PairManifest;
use crate::error::{Error, Result};
use crate::imaging::{panorama_layout_op, polar_transform, AerialImage, GroundPanorama, View};
use crate::model::Model;
use crate::sampling::{HardSampleCategory, HardSampleItem};
use md5::{Digest, Md5};
use ndarray::Array2;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::path::Path;

/// Row-aligned embeddings with their source ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub data: Array2<f32>,
    pub ids: Vec<String>,
    pub view: View,
}

impl EmbeddingMatrix {
    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }
}

/// Embed every query (ground view) or every reference aerial (aerial view)
/// of a manifest, in manifest order. `polar_to` applies the aerial polar
/// preprocessing and must match how the model was trained.
pub fn embed_dataset(
    model: &Model,
    manifest: &PairManifest,
    view: View,
    polar_to: Option<(usize, usize)>,
) -> Result<EmbeddingMatrix> {
    let items: Vec<(String, std::path::PathBuf)> = match view {
        View::Ground => manifest
            .records
            .iter()
            .map(|r| (r.pair_id.clone(), r.ground_path.clone()))
            .collect(),
        View::Aerial => manifest
            .aerial_pool
            .iter()
            .map(|a| (a.id.clone(), a.path.clone()))
            .collect(),
    };
    let dim = model.config().embedding_dim();
    let rows: Vec<Result<Vec<f32>>> = items
        .par_iter()
        .map(|(id, path)| -> Result<Vec<f32>> {
            let img = crate::imaging::io::load_image(path)?;
            let img = match view {
                View::Ground => manifest.resize.apply_ground(img)?,
                View::Aerial => {
                    let img = manifest.resize.apply_aerial(img)?;
                    match polar_to {
                        Some((h, w)) => {
                            polar_transform(&AerialImage::new(img)?, h, w)?.into_image()
                        }
                        None => img,
                    }
                }
            };
            let f = model.embed(&img, view)?;
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::Retrieval(format!(
                    "non-finite embedding for {view} item {id}"
                )));
            }
            Ok(f.to_vec())
        })
        .collect();

    let mut data = Array2::<f32>::zeros((items.len(), dim));
    for (i, row) in rows.into_iter().enumerate() {
        let row = row?;
        if row.len() != dim {
            return Err(Error::Retrieval(format!(
                "embedding dim {} does not match config {dim}",
                row.len()
            )));
        }
        for (j, v) in row.into_iter().enumerate() {
            data[[i, j]] = v;
        }
    }
    Ok(EmbeddingMatrix {
        data,
        ids: items.into_iter().map(|(id, _)| id).collect(),
        view,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f32,
}

/// Exact top-k retrieval output. `ref_ids[neighbors[q][r].index]` is the
/// id of the r-th ranked reference for query q.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub query_ids: Vec<String>,
    pub ref_ids: Vec<String>,
    pub neighbors: Vec<Vec<Neighbor>>,
    pub k: usize,
}

/// Exact full-scan L2 top-k; ties break toward the lower reference index.
pub fn knn(query: &EmbeddingMatrix, refs: &EmbeddingMatrix, k: usize) -> Result<RetrievalResult> {
    if query.dim() != refs.dim() {
        return Err(Error::Retrieval(format!(
            "embedding dims differ: queries {} vs refs {}",
            query.dim(),
            refs.dim()
        )));
    }
    if k == 0 || k > refs.len() {
        return Err(Error::Retrieval(format!(
            "k = {k} out of range for {} references",
            refs.len()
        )));
    }
    let neighbors: Vec<Vec<Neighbor>> = (0..query.len())
        .into_par_iter()
        .map(|qi| {
            let qrow = query.data.row(qi);
            let mut all: Vec<Neighbor> = (0..refs.len())
                .map(|ri| {
                    let rrow = refs.data.row(ri);
                    let d = qrow
                        .iter()
                        .zip(rrow.iter())
                        .map(|(a, b)| {
                            let t = *a as f64 - *b as f64;
                            t * t
                        })
                        .sum::<f64>()
                        .sqrt() as f32;
                    Neighbor {
                        index: ri,
                        distance: d,
                    }
                })
                .collect();
            all.sort_unstable_by(|a, b| {
                a.distance
                    .total_cmp(&b.distance)
                    .then(a.index.cmp(&b.index))
            });
            all.truncate(k);
            all
        })
        .collect();
    Ok(RetrievalResult {
        query_ids: query.ids.clone(),
        ref_ids: refs.ids.clone(),
        neighbors,
        k,
    })
}

/// Fraction of queries whose positive set intersects the top-k ranks.
pub fn recall_at_k(
    result: &RetrievalResult,
    positives: &BTreeMap<String, Vec<String>>,
    k: usize,
) -> Result<f64> {
    if k == 0 || k > result.k {
        return Err(Error::Retrieval(format!(
            "recall k = {k} exceeds retrieved depth {}",
            result.k
        )));
    }
    let mut hits = 0usize;
    for (qid, ranked) in result.query_ids.iter().zip(&result.neighbors) {
        let pos = positives
            .get(qid)
            .filter(|p| !p.is_empty())
            .ok_or_else(|| Error::Retrieval(format!("query {qid} has no positives")))?;
        if ranked[..k]
            .iter()
            .any(|n| pos.iter().any(|p| p == &result.ref_ids[n.index]))
        {
            hits += 1;
        }
    }
    Ok(hits as f64 / result.query_ids.len() as f64)
}

/// Fraction of queries whose top-1 lies in positives ∪ semi-positives.
pub fn hit_rate(
    result: &RetrievalResult,
    positives: &BTreeMap<String, Vec<String>>,
    semi_positives: &BTreeMap<String, Vec<String>>,
) -> Result<f64> {
    let mut hits = 0usize;
    for (qid, ranked) in result.query_ids.iter().zip(&result.neighbors) {
        let top = &result.ref_ids[ranked[0].index];
        let pos = positives
            .get(qid)
            .filter(|p| !p.is_empty())
            .ok_or_else(|| Error::Retrieval(format!("query {qid} has no positives")))?;
        let in_pos = pos.iter().any(|p| p == top);
        let in_semi = semi_positives
            .get(qid)
            .map(|s| s.iter().any(|p| p == top))
            .unwrap_or(false);
        if in_pos || in_semi {
            hits += 1;
        }
    }
    Ok(hits as f64 / result.query_ids.len() as f64)
}

/// Retrieval metric suite for one (queries, references) pair.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    /// Recall at each of K in {1, 5, 10} that fits the reference count.
    pub r_at: BTreeMap<usize, f64>,
    /// Recall at K = ceil(n_refs / 100).
    pub r_at_percent: f64,
    /// Top-1 in positives ∪ semi-positives; None for one-to-one corpora
    /// where it would equal R@1 trivially.
    pub hit_rate: Option<f64>,
    pub n_queries: usize,
    pub n_refs: usize,
    pub config_hash: String,
}

pub fn config_hash(model: &Model) -> String {
    let json = serde_json::to_string(model.config()).expect("config serializes");
    let mut hasher = Md5::new();
    hasher.update(json.as_bytes());
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Run retrieval and assemble the metric suite over a manifest's positive
/// sets. `include_hit_rate` adds the top-1 positives∪semi metric (always
/// computed for many-to-one corpora).
pub fn evaluate(
    model: &Model,
    query: &EmbeddingMatrix,
    refs: &EmbeddingMatrix,
    manifest: &PairManifest,
) -> Result<MetricsReport> {
    let n_refs = refs.len();
    let percent_k = n_refs.div_ceil(100).max(1);
    let max_k = [1usize, 5, 10]
        .into_iter()
        .filter(|k| *k <= n_refs)
        .chain(std::iter::once(percent_k))
        .max()
        .unwrap();
    let result = knn(query, refs, max_k)?;
    let mut r_at = BTreeMap::new();
    for k in [1usize, 5, 10] {
        if k <= n_refs {
            r_at.insert(k, recall_at_k(&result, &manifest.positives, k)?);
        }
    }
    let r_at_percent = recall_at_k(&result, &manifest.positives, percent_k)?;
    let hit = if manifest.is_one_to_one() {
        None
    } else {
        Some(hit_rate(
            &result,
            &manifest.positives,
            &manifest.semi_positives,
        )?)
    };
    Ok(MetricsReport {
        r_at,
        r_at_percent,
        hit_rate: hit,
        n_queries: query.len(),
        n_refs,
        config_hash: config_hash(model),
    })
}

/// Per-category embedding distances for the hard-sample experiment.
pub fn distance_distribution(
    model: &Model,
    manifest: &PairManifest,
    items: &[HardSampleItem],
    polar_to: Option<(usize, usize)>,
) -> Result<Vec<(HardSampleCategory, Vec<f64>)>> {
    let distances: Vec<Result<(HardSampleCategory, f64)>> = items
        .par_iter()
        .map(|item| -> Result<(HardSampleCategory, f64)> {
            let ground = manifest.load_ground(&item.ground_source)?;
            let ground =
                panorama_layout_op(&GroundPanorama::new(ground), &item.ground_layout)?.into_image();
            let f_g = model.embed(&ground, View::Ground)?;

            let aerial = manifest.load_aerial(&item.aerial_source)?;
            let aerial = match polar_to {
                Some((h, w)) => polar_transform(&AerialImage::new(aerial)?, h, w)?.into_image(),
                None => aerial,
            };
            let f_a = model.embed(&aerial, View::Aerial)?;
            let d = f_g
                .iter()
                .zip(f_a.iter())
                .map(|(a, b)| {
                    let t = *a as f64 - *b as f64;
                    t * t
                })
                .sum::<f64>()
                .sqrt();
            Ok((item.category, d))
        })
        .collect();

    let mut by_cat: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
    for d in distances {
        let (cat, dist) = d?;
        by_cat.entry(cat.as_str()).or_default().push(dist);
    }
    Ok(HardSampleCategory::ALL
        .into_iter()
        .filter_map(|c| by_cat.remove(c.as_str()).map(|v| (c, v)))
        .collect())
}

/// CSV rows `category,distance` in category order.
pub fn distances_to_csv(dist: &[(HardSampleCategory, Vec<f64>)]) -> String {
    let mut out = String::from("category,distance\n");
    for (cat, values) in dist {
        for v in values {
            out.push_str(&format!("{},{v}\n", cat.as_str()));
        }
    }
    out
}

#[derive(serde::Serialize, serde::Deserialize)]
struct EmbeddingSidecar {
    n: usize,
    d: usize,
    ids: Vec<String>,
    view: View,
}

/// Persist as raw little-endian f32 (`<base>.f32`) plus a JSON sidecar
/// (`<base>.json`).
pub fn save_embeddings(matrix: &EmbeddingMatrix, base: &Path) -> Result<()> {
    let bin_path = base.with_extension("f32");
    let json_path = base.with_extension("json");
    if let Some(parent) = base.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut bytes = Vec::with_capacity(matrix.data.len() * 4);
    for v in matrix.data.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))?;
    let sidecar = EmbeddingSidecar {
        n: matrix.len(),
        d: matrix.dim(),
        ids: matrix.ids.clone(),
        view: matrix.view,
    };
    std::fs::write(&json_path, serde_json::to_string_pretty(&sidecar)?)
        .map_err(|e| Error::io(&json_path, e))
}

pub fn load_embeddings(base: &Path) -> Result<EmbeddingMatrix> {
    let bin_path = base.with_extension("f32");
    let json_path = base.with_extension("json");
    let sidecar: EmbeddingSidecar = serde_json::from_str(
        &std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?,
    )?;
    let bytes = std::fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    if bytes.len() != sidecar.n * sidecar.d * 4 {
        return Err(Error::Retrieval(format!(
            "embedding payload is {} bytes, expected {}",
            bytes.len(),
            sidecar.n * sidecar.d * 4
        )));
    }
    let mut data = Array2::<f32>::zeros((sidecar.n, sidecar.d));
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        data[[i / sidecar.d, i % sidecar.d]] =
            f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
    }
    Ok(EmbeddingMatrix {
        data,
        ids: sidecar.ids,
        view: sidecar.view,
    })
}
