//! Portable checkpoints: a JSON manifest plus raw little-endian parameter values,
//! packed into one file as length-prefixed sections.
//!
//! ```text
//! magic "I2VCKPT1" | u64 manifest_len | manifest JSON | u64 payload_len | payload
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

const MAGIC: &[u8; 8] = b"I2VCKPT1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F64,
    /// Lossy storage; values are widened back to `f64` on load.
    F32,
}

impl Dtype {
    pub fn width(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub dtype: Dtype,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub model_config: ModelConfig,
    pub epoch: usize,
    pub params: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub epoch: usize,
    pub dtype: Dtype,
}

impl Checkpoint {
    pub fn new(model: Model, epoch: usize) -> Self {
        Self {
            model,
            epoch,
            dtype: Dtype::F64,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        self.model.config()
    }

    /// Errors unless the checkpoint was trained for `num_types` event types.
    pub fn check_compatible(&self, num_types: usize) -> Result<()> {
        let k = self.config().num_types;
        if k != num_types {
            return Err(Error::Incompatible(format!(
                "checkpoint has K={k} but data has K={num_types}"
            )));
        }
        Ok(())
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            format_version: FORMAT_VERSION,
            model_config: *self.config(),
            epoch: self.epoch,
            params: self
                .model
                .params()
                .iter()
                .map(|p| ManifestEntry {
                    name: p.name.clone(),
                    shape: p.value.shape(),
                    dtype: self.dtype,
                })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest())?;
        let mut payload = Vec::with_capacity(self.model.params().num_values() * self.dtype.width());
        for p in self.model.params().iter() {
            for &v in p.value.data() {
                match self.dtype {
                    Dtype::F64 => payload.extend_from_slice(&v.to_le_bytes()),
                    Dtype::F32 => payload.extend_from_slice(&(v as f32).to_le_bytes()),
                }
            }
        }
        let mut out = Vec::with_capacity(8 + 16 + manifest.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(corrupt("bad magic; not a checkpoint file"));
        }
        let mut pos = MAGIC.len();
        let read_len = |pos: &mut usize| -> Result<usize> {
            let raw = bytes
                .get(*pos..*pos + 8)
                .ok_or_else(|| corrupt("truncated section header"))?;
            *pos += 8;
            Ok(u64::from_le_bytes(raw.try_into().expect("8 bytes")) as usize)
        };
        let manifest_len = read_len(&mut pos)?;
        let manifest_bytes = bytes
            .get(pos..pos + manifest_len)
            .ok_or_else(|| corrupt("corrupt manifest: truncated"))?;
        pos += manifest_len;
        let manifest: Manifest = serde_json::from_slice(manifest_bytes)
            .map_err(|e| Error::Checkpoint(format!("corrupt manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                manifest.format_version
            )));
        }
        let payload_len = read_len(&mut pos)?;
        let payload = &bytes[pos..];
        if payload.len() != payload_len {
            return Err(Error::Checkpoint(format!(
                "payload length mismatch: header says {payload_len} bytes, found {}",
                payload.len()
            )));
        }
        let dtype = manifest
            .params
            .first()
            .map_or(Dtype::F64, |e| e.dtype);
        if let Some(e) = manifest.params.iter().find(|e| e.dtype != dtype) {
            return Err(Error::Checkpoint(format!(
                "dtype mismatch: parameter {} is {:?}, expected {:?}",
                e.name, e.dtype, dtype
            )));
        }
        let expected: usize = manifest
            .params
            .iter()
            .map(|e| e.shape[0] * e.shape[1] * e.dtype.width())
            .sum();
        if expected != payload_len {
            return Err(Error::Checkpoint(format!(
                "payload length mismatch: manifest needs {expected} bytes, payload has {payload_len}"
            )));
        }

        let mut store = ParamStore::new();
        let mut offset = 0;
        for entry in &manifest.params {
            let [rows, cols] = entry.shape;
            if rows == 0 || cols == 0 {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch: parameter {} has empty shape",
                    entry.name
                )));
            }
            let w = entry.dtype.width();
            let values: Vec<f64> = payload[offset..offset + rows * cols * w]
                .chunks_exact(w)
                .map(|c| match entry.dtype {
                    Dtype::F64 => f64::from_le_bytes(c.try_into().expect("8 bytes")),
                    Dtype::F32 => f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64,
                })
                .collect();
            offset += rows * cols * w;
            store.add(entry.name.clone(), Tensor::new(rows, cols, values));
        }
        let model = Model::from_store(manifest.model_config, store).map_err(|e| match e {
            Error::Incompatible(msg) => Error::Checkpoint(format!("shape mismatch: {msg}")),
            other => other,
        })?;
        Ok(Self {
            model,
            epoch: manifest.epoch,
            dtype,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DecoderKind, Mode};

    fn ckpt() -> Checkpoint {
        let cfg = ModelConfig {
            d_type: 3,
            d_time: 2,
            d_hidden: 4,
            num_components: 2,
            ..ModelConfig::new(5)
        };
        Checkpoint::new(Model::new(cfg, 3).unwrap(), 7)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        let c = ckpt();
        save_checkpoint(&c, &a).unwrap();
        let loaded = load_checkpoint(&a).unwrap();
        assert_eq!(loaded, c);
        save_checkpoint(&loaded, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn truncated_payload_is_reported() {
        let mut bytes = ckpt().to_bytes().unwrap();
        bytes.pop();
        let err = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("payload length mismatch"), "{err}");
    }

    #[test]
    fn corrupt_manifest_is_reported() {
        let mut bytes = ckpt().to_bytes().unwrap();
        bytes[17] = b'#';
        let err = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("corrupt manifest"), "{err}");
    }

    #[test]
    fn incompatible_k_is_reported() {
        let err = ckpt().check_compatible(9).unwrap_err();
        assert!(matches!(err, Error::Incompatible(_)));
        assert!(ckpt().check_compatible(5).is_ok());
    }

    #[test]
    fn manifest_shape_must_match_config() {
        let c = ckpt();
        let mut manifest = c.manifest();
        // Swap the config to one whose layout differs but keep the payload.
        manifest.model_config.mode = Mode::Global;
        let m = serde_json::to_vec(&manifest).unwrap();
        let full = c.to_bytes().unwrap();
        let old_len = u64::from_le_bytes(full[8..16].try_into().unwrap()) as usize;
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&(m.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&m);
        bytes.extend_from_slice(&full[16 + old_len..]);
        let err = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("shape mismatch"), "{err}");
    }

    #[test]
    fn f32_storage_round_trips_after_first_save() {
        let mut c = ckpt();
        c.dtype = Dtype::F32;
        let once = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(once.dtype, Dtype::F32);
        let twice = Checkpoint::from_bytes(&once.to_bytes().unwrap()).unwrap();
        assert_eq!(once, twice);
        assert_eq!(once.config().decoder, DecoderKind::Density);
    }
}
