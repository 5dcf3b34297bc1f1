//! Pixel-hash deduplication: md5 over the decoded RGB8 bytes of each pair
//! (ground image first, then aerial), so byte-identical pixel content is
//! grouped while re-encodes that change any pixel are not.

use super::{PairManifest, PairRecord};
use crate::error::{Error, Result};
use crate::imaging::io;
use md5::{Digest, Md5};
use rayon::prelude::*;
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DedupGroup {
    pub pixel_hash: String,
    /// In manifest order; the first member is kept when the group is
    /// collapsed.
    pub pair_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DedupReport {
    pub pairs_scanned: usize,
    /// Only groups with two or more members are reported.
    pub groups: Vec<DedupGroup>,
    pub pairs_removable: usize,
}

impl DedupReport {
    pub fn is_clean(&self) -> bool {
        self.groups.is_empty()
    }
}

fn pair_hash(record: &PairRecord) -> Result<String> {
    // Hash decoded pixels, not file bytes, and always at native size.
    let ground = io::load_image(&record.ground_path)?;
    let aerial = io::load_image(&record.aerial_path)?;
    let mut hasher = Md5::new();
    hasher.update(io::rgb8_bytes(&ground));
    hasher.update(io::rgb8_bytes(&aerial));
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Group pairs whose decoded pixel content is identical.
pub fn dedup(manifest: &PairManifest) -> Result<DedupReport> {
    let hashes: Vec<Result<String>> = manifest.records.par_iter().map(pair_hash).collect();

    let mut by_hash: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for (record, hash) in manifest.records.iter().zip(hashes) {
        let hash = hash?;
        if !by_hash.contains_key(&hash) {
            order.push(hash.clone());
        }
        by_hash
            .entry(hash)
            .or_default()
            .push(record.pair_id.clone());
    }

    let mut groups = Vec::new();
    let mut removable = 0;
    for hash in order {
        let ids = &by_hash[&hash];
        if ids.len() >= 2 {
            removable += ids.len() - 1;
            groups.push(DedupGroup {
                pixel_hash: hash.clone(),
                pair_ids: ids.clone(),
            });
        }
    }
    Ok(DedupReport {
        pairs_scanned: manifest.len(),
        groups,
        pairs_removable: removable,
    })
}

/// Collapse duplicate groups, keeping the first member of each. Intended
/// for training manifests; test manifests keep their duplicates.
pub fn apply_dedup(manifest: &PairManifest, report: &DedupReport) -> Result<PairManifest> {
    let mut drop: std::collections::HashSet<&str> = std::collections::HashSet::new();
    for group in &report.groups {
        for id in group.pair_ids.iter().skip(1) {
            drop.insert(id.as_str());
        }
    }
    let records: Vec<PairRecord> = manifest
        .records
        .iter()
        .filter(|r| !drop.contains(r.pair_id.as_str()))
        .cloned()
        .collect();
    if records.is_empty() {
        return Err(Error::Manifest("dedup removed every pair".into()));
    }
    let aerial_pool = manifest
        .aerial_pool
        .iter()
        .filter(|a| !drop.contains(a.id.as_str()))
        .cloned()
        .collect();
    let positives = manifest
        .positives
        .iter()
        .filter(|(id, _)| !drop.contains(id.as_str()))
        .map(|(id, p)| {
            (
                id.clone(),
                p.iter()
                    .filter(|x| !drop.contains(x.as_str()))
                    .cloned()
                    .collect(),
            )
        })
        .collect();
    let semi_positives = manifest
        .semi_positives
        .iter()
        .filter(|(id, _)| !drop.contains(id.as_str()))
        .map(|(id, p)| {
            (
                id.clone(),
                p.iter()
                    .filter(|x| !drop.contains(x.as_str()))
                    .cloned()
                    .collect(),
            )
        })
        .collect();
    let out = PairManifest {
        split: manifest.split,
        records,
        aerial_pool,
        positives,
        semi_positives,
        resize: manifest.resize,
    };
    Ok(out)
}
