//! Binary checkpoint format.
//!
//! ```text
//! magic    8 bytes  "CLRNCKPT"
//! version  u32
//! digest   32 bytes SHA-256 of the config JSON
//! epoch    u32
//! config   u32 length + UTF-8 JSON
//! 3 sections (parameters, buffers, optimizer state), each:
//!   count  u32
//!   count x { name: u32 length + UTF-8, ndim: u32, dims: ndim x u32, data: f32 }
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{NnError, ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CLRNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub type NamedTensors = Vec<(String, Tensor)>;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_json: String,
    pub epoch: u32,
    pub params: NamedTensors,
    pub buffers: NamedTensors,
    pub optimizer: NamedTensors,
}

fn round_f32(t: &Tensor) -> Tensor {
    let data = t.data().iter().map(|&v| v as f32 as f64).collect();
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}

impl Checkpoint {
    /// Snapshot of a store. Values are rounded to `f32`, the on-disk precision.
    pub fn from_store(config_json: String, epoch: u32, store: &ParamStore, optimizer: NamedTensors) -> Self {
        let collect =
            |it: &mut dyn Iterator<Item = (&str, &Tensor)>| it.map(|(n, t)| (n.to_string(), round_f32(t))).collect();
        Self {
            config_json,
            epoch,
            params: collect(&mut store.params()),
            buffers: collect(&mut store.buffers()),
            optimizer: optimizer.iter().map(|(n, t)| (n.clone(), round_f32(t))).collect(),
        }
    }

    /// Copies parameters and buffers into a store with the same layout.
    pub fn restore(&self, store: &mut ParamStore) -> Result<(), NnError> {
        for (name, t) in self.params.iter().chain(&self.buffers) {
            store.assign(name, t.clone())?;
        }
        Ok(())
    }

    pub fn config_digest(&self) -> [u8; 32] {
        Sha256::digest(self.config_json.as_bytes()).into()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_digest());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        put_str(&mut out, &self.config_json);
        for section in [&self.params, &self.buffers, &self.optimizer] {
            out.extend_from_slice(&(section.len() as u32).to_le_bytes());
            for (name, t) in section {
                put_str(&mut out, name);
                out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
                for &d in t.shape() {
                    out.extend_from_slice(&(d as u32).to_le_bytes());
                }
                for &v in t.data() {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(NnError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let epoch = r.u32()?;
        let config_json = r.string()?;
        let mut sections = Vec::with_capacity(3);
        for _ in 0..3 {
            let count = r.u32()? as usize;
            let mut section = Vec::new();
            for _ in 0..count {
                let name = r.string()?;
                let ndim = r.u32()? as usize;
                let dims = (0..ndim)
                    .map(|_| r.u32().map(|d| d as usize))
                    .collect::<Result<Vec<_>, _>>()?;
                let n: usize = dims.iter().product();
                let raw = r.take(
                    n.checked_mul(4)
                        .ok_or_else(|| NnError::Checkpoint("tensor too large".into()))?,
                )?;
                let data = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect();
                section.push((name, Tensor::new(dims, data)?));
            }
            sections.push(section);
        }
        if r.pos != bytes.len() {
            return Err(NnError::Checkpoint("trailing bytes".into()));
        }
        let optimizer = sections.pop().expect("3 sections");
        let buffers = sections.pop().expect("3 sections");
        let params = sections.pop().expect("3 sections");
        let ckpt = Self {
            config_json,
            epoch,
            params,
            buffers,
            optimizer,
        };
        if ckpt.config_digest() != digest {
            return Err(NnError::Checkpoint(
                "config digest does not match the stored config".into(),
            ));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| NnError::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String, NnError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| NnError::Checkpoint("invalid UTF-8".into()))
    }
}
