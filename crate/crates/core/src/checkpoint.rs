//! `.ommc` checkpoint files. Layout is documented in `docs/checkpoint.md`.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::binio::Cursor;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::{ModelParams, PARAM_NAMES};
use crate::optim::AdamState;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OMMC";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const CHECKPOINT_EXTENSION: &str = "ommc";

/// Position of a ChaCha generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    /// Compact JSON of the resolved run config.
    pub config_json: String,
    pub params: ModelParams,
    pub adam: AdamState,
    pub rng: RngState,
    pub nonfinite_skips: u64,
}

impl Checkpoint {
    pub fn config(&self) -> Result<RunConfig> {
        RunConfig::from_json(&self.config_json)
    }

    pub fn config_hash(&self) -> [u8; 32] {
        Sha256::digest(self.config_json.as_bytes()).into()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self.params.tensors();
        if self.adam.m.len() != tensors.len() || self.adam.v.len() != tensors.len() {
            return Err(Error::State("optimizer moments do not match parameters".into()));
        }
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.step.to_le_bytes());
        buf.extend_from_slice(&self.adam.t.to_le_bytes());
        buf.extend_from_slice(&self.nonfinite_skips.to_le_bytes());
        buf.extend_from_slice(&self.rng.seed);
        buf.extend_from_slice(&self.rng.stream.to_le_bytes());
        buf.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        buf.extend_from_slice(&(self.config_json.len() as u32).to_le_bytes());
        buf.extend_from_slice(self.config_json.as_bytes());
        buf.extend_from_slice(&self.config_hash());
        buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (i, t) in tensors.iter().enumerate() {
            let name = PARAM_NAMES[i];
            buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &s in t.shape() {
                buf.extend_from_slice(&(s as u64).to_le_bytes());
            }
            for part in [*t, &self.adam.m[i], &self.adam.v[i]] {
                if part.shape() != t.shape() {
                    return Err(Error::State(format!("moment shape mismatch for {name}")));
                }
                for v in part.data() {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint: bad magic".into()));
        }
        if bytes.len() < 4 + 32 {
            return Err(Error::Length {
                what: "checkpoint".into(),
                expected: 36,
                actual: bytes.len(),
            });
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Corruption("checkpoint checksum mismatch".into()));
        }
        let mut cur = Cursor::new(body);
        cur.take(4, "magic")?;
        let version = cur.u32("header")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let step = cur.u64("header")?;
        let t = cur.u64("header")?;
        let nonfinite_skips = cur.u64("header")?;
        let rng = RngState {
            seed: cur.array("rng seed")?,
            stream: cur.u64("rng stream")?,
            word_pos: cur.u128("rng position")?,
        };
        let config_len = cur.u32("config length")? as usize;
        let config_json = String::from_utf8(cur.take(config_len, "config")?.to_vec())
            .map_err(|_| Error::Corruption("config is not UTF-8".into()))?;
        let hash: [u8; 32] = cur.array("config hash")?;
        let actual: [u8; 32] = Sha256::digest(config_json.as_bytes()).into();
        if hash != actual {
            return Err(Error::Corruption("config hash mismatch".into()));
        }
        let count = cur.u32("tensor count")? as usize;
        if count != PARAM_NAMES.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, found {count}",
                PARAM_NAMES.len()
            )));
        }
        let mut params = Vec::with_capacity(count);
        let mut m = Vec::with_capacity(count);
        let mut v = Vec::with_capacity(count);
        for expected in PARAM_NAMES {
            let name_len = cur.u16("tensor name")? as usize;
            let name = cur.take(name_len, "tensor name")?;
            if name != expected.as_bytes() {
                return Err(Error::Format(format!(
                    "expected tensor {expected}, found {}",
                    String::from_utf8_lossy(name)
                )));
            }
            let ndim = cur.u32("tensor rank")? as usize;
            if ndim > 4 {
                return Err(Error::Format(format!("{expected} has rank {ndim}")));
            }
            let shape = (0..ndim)
                .map(|_| cur.u64("tensor shape").map(|s| s as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &s| a.checked_mul(s))
                .ok_or_else(|| Error::Format(format!("{expected} shape overflows")))?;
            let mut read = |what: &str| -> Result<Tensor> {
                let data = cur.f64s(n, what)?;
                Tensor::new(shape.clone(), data)
            };
            params.push(read(expected)?);
            m.push(read("first moment")?);
            v.push(read("second moment")?);
        }
        if !cur.is_done() {
            return Err(Error::Format(format!(
                "{} trailing bytes in checkpoint",
                cur.remaining()
            )));
        }
        Ok(Self {
            step,
            config_json,
            params: ModelParams::from_tensors(params)?,
            adam: AdamState { m, v, t },
            rng,
            nonfinite_skips,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
        })?;
        Self::from_bytes(&bytes)
    }
}
