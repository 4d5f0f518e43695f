//! Versioned binary checkpoints: a JSON metadata blob plus every named
//! parameter tensor, written little-endian. Loading verifies the magic,
//! the format version and tensor shapes; resuming training additionally
//! verifies the stored config hash so a checkpoint is never continued
//! under a different configuration.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayD, IxDyn};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

use crate::model::ParamStore;

const MAGIC: &[u8; 4] = b"CGCN";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    BadVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("metadata error: {0}")]
    Meta(#[from] serde_json::Error),
    #[error("config hash mismatch: checkpoint {stored}, current {current}")]
    ConfigMismatch { stored: String, current: String },
}

/// Metadata stored alongside the tensors.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    /// Which training stage produced this checkpoint.
    pub stage: String,
    /// Last completed epoch (1-based); 0 for a fresh initialization.
    pub epoch: usize,
    /// Hex SHA-256 of the canonical config serialization.
    pub config_hash: String,
    /// Root RNG seed of the run that wrote this checkpoint.
    pub seed: u64,
    /// Best validation metric seen so far, if any.
    pub best_metric: Option<f64>,
}

/// Hex SHA-256 of a serializable config's canonical JSON form.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    use sha2::{Digest, Sha256};
    let json = serde_json::to_string(cfg).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save<C: Serialize>(
    path: &Path,
    meta: &CheckpointMeta,
    config: &C,
    params: &ParamStore,
) -> Result<(), CheckpointError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    write_blob(&mut w, serde_json::to_string(meta)?.as_bytes())?;
    write_blob(&mut w, serde_json::to_string(config)?.as_bytes())?;
    w.write_u32::<LittleEndian>(params.len() as u32)?;
    for (name, value) in params.iter() {
        write_blob(&mut w, name.as_bytes())?;
        w.write_u32::<LittleEndian>(value.ndim() as u32)?;
        for &d in value.shape() {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for &v in value.iter() {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Load a checkpoint; the config is returned as raw JSON so callers can
/// deserialize into their own config type.
pub fn load(path: &Path) -> Result<(CheckpointMeta, String, ParamStore), CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&read_blob(&mut r)?)?;
    let config_json = String::from_utf8(read_blob(&mut r)?)
        .map_err(|_| CheckpointError::Corrupt("config is not utf-8".into()))?;
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name = String::from_utf8(read_blob(&mut r)?)
            .map_err(|_| CheckpointError::Corrupt("tensor name is not utf-8".into()))?;
        let ndim = r.read_u32::<LittleEndian>()? as usize;
        if ndim > 8 {
            return Err(CheckpointError::Corrupt(format!("{name}: rank {ndim}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.read_u32::<LittleEndian>()? as usize);
        }
        let n: usize = shape.iter().product();
        if n > 64 << 20 {
            return Err(CheckpointError::Corrupt(format!("{name}: {n} elements")));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.read_f32::<LittleEndian>()?);
        }
        let arr = ArrayD::from_shape_vec(IxDyn(&shape), data)
            .map_err(|e| CheckpointError::Corrupt(format!("{name}: {e}")))?;
        params.insert(&name, arr);
    }
    Ok((meta, config_json, params))
}

/// Load a checkpoint and verify it was written under the same config.
pub fn load_matching<C: Serialize + DeserializeOwned>(
    path: &Path,
    current: &C,
) -> Result<(CheckpointMeta, ParamStore), CheckpointError> {
    let (meta, _config_json, params) = load(path)?;
    let current_hash = config_hash(current);
    if meta.config_hash != current_hash {
        return Err(CheckpointError::ConfigMismatch {
            stored: meta.config_hash,
            current: current_hash,
        });
    }
    Ok((meta, params))
}

fn write_blob<W: Write>(w: &mut W, bytes: &[u8]) -> Result<(), CheckpointError> {
    w.write_u32::<LittleEndian>(bytes.len() as u32)?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_blob<R: Read>(r: &mut R) -> Result<Vec<u8>, CheckpointError> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    if len > 16 << 20 {
        return Err(CheckpointError::Corrupt(format!("blob of {len} bytes")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}
