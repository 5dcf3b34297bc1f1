//! Checkpoint archive: a magic header, a JSON table of named float32
//! little-endian arrays (weights plus optimizer moments), the training
//! config, the step count and the RNG states needed for bit-identical
//! resumption.

use super::{AdamW, TrainConfig};
use crate::error::{Error, Result};
use crate::model::Model;
use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"XVIEWCK1";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RngState {
    seed_hex: String,
    stream: u64,
    word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        let seed = rng.get_seed();
        Self {
            seed_hex: seed.iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        if self.seed_hex.len() != 64 {
            return Err(Error::Checkpoint("bad rng seed length".into()));
        }
        let mut seed = [0u8; 32];
        for (i, chunk) in self.seed_hex.as_bytes().chunks_exact(2).enumerate() {
            let hex = std::str::from_utf8(chunk)
                .ok()
                .and_then(|s| u8::from_str_radix(s, 16).ok())
                .ok_or_else(|| Error::Checkpoint("bad rng seed hex".into()))?;
            seed[i] = hex;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        let word_pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint("bad rng word position".into()))?;
        rng.set_word_pos(word_pos);
        Ok(rng)
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset in f32 units into the payload.
    offset: usize,
    len: usize,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Header {
    schema_version: u32,
    config: TrainConfig,
    step: usize,
    adam_t: u64,
    sampler_rng: RngState,
    cf_rng: RngState,
    arrays: Vec<ArrayEntry>,
}

pub struct LoadedCheckpoint {
    pub model: Model,
    pub config: TrainConfig,
    pub step: usize,
    pub optimizer: AdamW,
    pub sampler_rng: ChaCha8Rng,
    pub cf_rng: ChaCha8Rng,
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    config: &TrainConfig,
    step: usize,
    optimizer: &AdamW,
    sampler_rng: &ChaCha8Rng,
    cf_rng: &ChaCha8Rng,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut arrays = Vec::new();
    let mut payload: Vec<f32> = Vec::new();
    {
        let mut push = |name: String, data: &ArrayD<f32>| {
            arrays.push(ArrayEntry {
                name,
                shape: data.shape().to_vec(),
                offset: payload.len(),
                len: data.len(),
            });
            payload.extend(data.iter().copied());
        };
        for id in model.store.ids() {
            push(model.store.name(id).to_string(), model.store.value(id));
        }
        let (m, v) = optimizer.moments();
        for (id, arr) in model.store.ids().zip(m.iter()) {
            push(format!("adam.m.{}", model.store.name(id)), arr);
        }
        for (id, arr) in model.store.ids().zip(v.iter()) {
            push(format!("adam.v.{}", model.store.name(id)), arr);
        }
    }
    let header = Header {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        step,
        adam_t: optimizer.t,
        sampler_rng: RngState::capture(sampler_rng),
        cf_rng: RngState::capture(cf_rng),
        arrays,
    };
    let header_json = serde_json::to_vec(&header)?;

    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let write = |w: &mut std::io::BufWriter<std::fs::File>, bytes: &[u8]| -> Result<()> {
        w.write_all(bytes).map_err(|e| Error::io(path, e))
    };
    write(&mut w, MAGIC)?;
    write(&mut w, &(header_json.len() as u64).to_le_bytes())?;
    write(&mut w, &header_json)?;
    for v in &payload {
        write(&mut w, &v.to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = std::io::BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint archive",
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)
        .map_err(|e| Error::io(path, e))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_slice(&header_bytes)?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint schema {}",
            header.schema_version
        )));
    }
    let mut payload_bytes = Vec::new();
    r.read_to_end(&mut payload_bytes)
        .map_err(|e| Error::io(path, e))?;
    let total: usize = header.arrays.iter().map(|a| a.len).sum();
    if payload_bytes.len() != total * 4 {
        return Err(Error::Checkpoint(format!(
            "payload is {} bytes, expected {}",
            payload_bytes.len(),
            total * 4
        )));
    }
    let floats: Vec<f32> = payload_bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let take = |entry: &ArrayEntry| -> Result<ArrayD<f32>> {
        let end = entry.offset + entry.len;
        if end > floats.len() || entry.shape.iter().product::<usize>() != entry.len {
            return Err(Error::Checkpoint(format!("corrupt array {}", entry.name)));
        }
        ArrayD::from_shape_vec(IxDyn(&entry.shape), floats[entry.offset..end].to_vec())
            .map_err(|e| Error::Checkpoint(format!("array {}: {e}", entry.name)))
    };

    // Rebuild the model and overwrite every parameter from the archive.
    header.config.validate()?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(header.config.seed);
    let mut model = Model::new(header.config.model.clone(), &mut init_rng)?;
    let mut m_moments = Vec::new();
    let mut v_moments = Vec::new();
    for id in model.store.ids().collect::<Vec<_>>() {
        let name = model.store.name(id).to_string();
        let find = |full: &str| -> Result<ArrayD<f32>> {
            header
                .arrays
                .iter()
                .find(|a| a.name == full)
                .map(take)
                .transpose()?
                .ok_or_else(|| Error::Checkpoint(format!("missing array {full}")))
        };
        let value = find(&name)?;
        if value.shape() != model.store.value(id).shape() {
            return Err(Error::Checkpoint(format!(
                "array {name} has shape {:?}, expected {:?}",
                value.shape(),
                model.store.value(id).shape()
            )));
        }
        *model.store.value_mut(id) = value;
        m_moments.push(find(&format!("adam.m.{name}"))?);
        v_moments.push(find(&format!("adam.v.{name}"))?);
    }

    let mut optimizer = AdamW::new(&model.store, header.config.weight_decay as f32);
    optimizer.beta1 = header.config.adam_beta1 as f32;
    optimizer.beta2 = header.config.adam_beta2 as f32;
    optimizer.restore(header.adam_t, m_moments, v_moments);

    Ok(LoadedCheckpoint {
        model,
        config: header.config.clone(),
        step: header.step,
        optimizer,
        sampler_rng: header.sampler_rng.restore()?,
        cf_rng: header.cf_rng.restore()?,
    })
}
