use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{Model, ModelConfig};
use super::{TrainConfig, TrainError};
use crate::diff::Tensor;

pub const CHECKPOINT_FORMAT: &str = "molham-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const BLOB: &str = "params.bin";

/// Serializable ChaCha8 position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// `u128` word position, decimal.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex(&rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Option<ChaCha8Rng> {
        if self.seed.len() != 64 {
            return None;
        }
        let mut seed = [0u8; 32];
        for (k, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * k..2 * k + 2], 16).ok()?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().ok()?);
        Some(rng)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Offset into the blob, in f64 elements.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    pub rng: Option<RngState>,
    pub params: Vec<ParamEntry>,
    pub blob_bytes: usize,
    pub sha256: String,
}

/// A model plus the run state stored next to it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub train: Option<TrainConfig>,
    pub rng: Option<RngState>,
}

/// Writes `manifest.json` and `params.bin` (little-endian f64) into `dir`.
pub fn save_checkpoint(dir: &Path, ck: &Checkpoint) -> Result<(), TrainError> {
    fs::create_dir_all(dir)?;
    let mut blob = Vec::with_capacity(ck.model.store.num_scalars() * 8);
    let mut params = Vec::new();
    let mut offset = 0;
    for (_, name, t) in ck.model.store.iter() {
        params.push(ParamEntry {
            name: name.to_string(),
            shape: [t.rows(), t.cols()],
            offset,
        });
        offset += t.len();
        for x in t.data() {
            blob.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        model: ck.model.cfg.clone(),
        train: ck.train.clone(),
        rng: ck.rng.clone(),
        params,
        blob_bytes: blob.len(),
        sha256: hex(&Sha256::digest(&blob)),
    };
    fs::write(dir.join(BLOB), &blob)?;
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

fn read_manifest(dir: &Path) -> Result<CheckpointManifest, TrainError> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let m: CheckpointManifest = serde_json::from_str(&text).map_err(|e| TrainError::CorruptFile {
        path: dir.join(MANIFEST),
        message: e.to_string(),
    })?;
    if m.format != CHECKPOINT_FORMAT || m.version != CHECKPOINT_VERSION {
        return Err(TrainError::VersionMismatch(format!(
            "found {} v{}, expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}",
            m.format, m.version
        )));
    }
    Ok(m)
}

fn read_blob(dir: &Path, m: &CheckpointManifest) -> Result<Vec<f64>, TrainError> {
    let path = dir.join(BLOB);
    let bytes = fs::read(&path)?;
    let corrupt = |message: String| TrainError::CorruptFile {
        path: path.clone(),
        message,
    };
    if bytes.len() != m.blob_bytes || bytes.len() % 8 != 0 {
        return Err(corrupt(format!("expected {} bytes, found {}", m.blob_bytes, bytes.len())));
    }
    let digest = hex(&Sha256::digest(&bytes));
    if digest != m.sha256 {
        return Err(corrupt(format!("checksum {digest} does not match manifest {}", m.sha256)));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

/// Copies stored tensors into `model`, which must have the same parameter
/// names and shapes.
fn fill(model: &mut Model, m: &CheckpointManifest, blob: &[f64]) -> Result<(), TrainError> {
    if m.params.len() != model.store.len() {
        return Err(TrainError::VersionMismatch(format!(
            "checkpoint has {} parameter tensors, model has {}",
            m.params.len(),
            model.store.len()
        )));
    }
    let mut staged = Vec::with_capacity(m.params.len());
    for e in &m.params {
        let id = model
            .store
            .id_of(&e.name)
            .ok_or_else(|| TrainError::VersionMismatch(format!("unknown parameter {}", e.name)))?;
        let cur = model.store.get(id);
        if [cur.rows(), cur.cols()] != e.shape {
            return Err(TrainError::VersionMismatch(format!(
                "parameter {} has shape {:?} in the checkpoint but {:?} in the model",
                e.name,
                e.shape,
                [cur.rows(), cur.cols()]
            )));
        }
        let len = e.shape[0] * e.shape[1];
        let data = blob.get(e.offset..e.offset + len).ok_or_else(|| TrainError::CorruptFile {
            path: BLOB.into(),
            message: format!("parameter {} runs past the blob", e.name),
        })?;
        staged.push((id, Tensor::from_vec(e.shape[0], e.shape[1], data.to_vec()).expect("shape")));
    }
    for (id, t) in staged {
        *model.store.get_mut(id) = t;
    }
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint, TrainError> {
    let m = read_manifest(dir)?;
    let blob = read_blob(dir, &m)?;
    let mut model = Model::new(&m.model, 0);
    fill(&mut model, &m, &blob)?;
    Ok(Checkpoint {
        model,
        train: m.train,
        rng: m.rng,
    })
}

/// Loads parameters into an existing model, rejecting any shape difference.
pub fn load_into(model: &mut Model, dir: &Path) -> Result<(), TrainError> {
    let m = read_manifest(dir)?;
    let blob = read_blob(dir, &m)?;
    fill(model, &m, &blob)
}
