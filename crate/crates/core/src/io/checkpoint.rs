//! Checkpoint archive: a magic line, the byte length of a TOML manifest, the
//! manifest itself, then every array's little-endian payload in manifest
//! order.
//!
//! ```text
//! MAVFI-CHECKPOINT
//! <manifest length>
//! <manifest>
//! <payload>
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::{Real, Tensor};

pub const CHECKPOINT_MAGIC: &str = "MAVFI-CHECKPOINT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: u64,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    /// Fingerprint of `model`.
    pub fingerprint: String,
    pub step: u64,
    pub dtype: String,
    /// Optimizer update count, when optimizer state is stored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer_step: Option<u64>,
    pub model: ModelConfig,
    #[serde(default)]
    pub arrays: Vec<ArchiveEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointArchive<T> {
    pub manifest: Manifest,
    pub arrays: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> CheckpointArchive<T> {
    pub fn new(model: &ModelConfig, step: u64, arrays: BTreeMap<String, Tensor<T>>) -> Self {
        let manifest = Manifest {
            format_version: CHECKPOINT_VERSION,
            fingerprint: model.fingerprint(),
            step,
            dtype: T::DTYPE.to_string(),
            optimizer_step: None,
            model: model.clone(),
            arrays: Vec::new(),
        };
        Self { manifest, arrays }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut manifest = self.manifest.clone();
        manifest.arrays.clear();
        let mut offset = 0u64;
        let mut payload = Vec::new();
        for (name, t) in &self.arrays {
            let bytes = (t.len() * T::BYTES) as u64;
            manifest.arrays.push(ArchiveEntry { name: name.clone(), shape: t.shape().to_vec(), offset, bytes });
            for &v in t.data() {
                v.write_le(&mut payload);
            }
            offset += bytes;
        }
        let text = toml::to_string(&manifest).expect("manifest serialises");
        let mut out = format!("{CHECKPOINT_MAGIC}\n{}\n", text.len()).into_bytes();
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&payload);
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |m: &str| Error::format(path, format!("corrupt checkpoint: {m}"));
        let mut lines = bytes.splitn(3, |&b| b == b'\n');
        if lines.next() != Some(CHECKPOINT_MAGIC.as_bytes()) {
            return Err(Error::format(path, "not a checkpoint archive"));
        }
        let len: usize = lines
            .next()
            .and_then(|l| std::str::from_utf8(l).ok())
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| corrupt("missing manifest length"))?;
        let rest = lines.next().ok_or_else(|| corrupt("missing manifest"))?;
        if rest.len() < len {
            return Err(corrupt("manifest truncated"));
        }
        let text = std::str::from_utf8(&rest[..len]).map_err(|_| corrupt("manifest is not UTF-8"))?;
        let manifest: Manifest = toml::from_str(text).map_err(|e| corrupt(&format!("manifest: {e}")))?;
        if manifest.format_version != CHECKPOINT_VERSION {
            return Err(Error::format(
                path,
                format!(
                    "unsupported checkpoint format version {} (this build reads version {CHECKPOINT_VERSION})",
                    manifest.format_version
                ),
            ));
        }
        if manifest.dtype != T::DTYPE {
            return Err(Error::format(path, format!("checkpoint holds {} arrays, expected {}", manifest.dtype, T::DTYPE)));
        }
        if manifest.fingerprint != manifest.model.fingerprint() {
            return Err(corrupt("manifest fingerprint does not match its model configuration"));
        }
        let payload = &rest[len..];
        let mut arrays = BTreeMap::new();
        let mut expected_offset = 0u64;
        for e in &manifest.arrays {
            let n: usize = e.shape.iter().product();
            if e.bytes != (n * T::BYTES) as u64 || e.offset != expected_offset {
                return Err(corrupt(&format!("array `{}` has an inconsistent extent", e.name)));
            }
            let end = (e.offset + e.bytes) as usize;
            if end > payload.len() {
                return Err(corrupt(&format!("array `{}` runs past the end of the file", e.name)));
            }
            let data = payload[e.offset as usize..end].chunks_exact(T::BYTES).map(T::read_le).collect();
            if arrays.insert(e.name.clone(), Tensor::from_vec(&e.shape, data)?).is_some() {
                return Err(corrupt(&format!("duplicate array `{}`", e.name)));
            }
            expected_offset = e.offset + e.bytes;
        }
        if expected_offset as usize != payload.len() {
            return Err(corrupt("trailing bytes after the last array"));
        }
        Ok(Self { manifest, arrays })
    }
}

pub fn write_archive<T: Real>(archive: &CheckpointArchive<T>, path: &Path) -> Result<()> {
    write_atomic(path, &archive.encode())
}

pub fn read_archive<T: Real>(path: &Path) -> Result<CheckpointArchive<T>> {
    CheckpointArchive::decode(&read_bytes(path)?, path)
}
