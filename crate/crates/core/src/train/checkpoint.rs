//! Versioned binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "SDGNNCKP" | u32 version | u64 header length | header JSON
//! u32 array count | per array: u32 name length, name, u32 rank, u64 dims.., f64 values..
//! ```
//!
//! Arrays are named `param/<name>`, `adam.m/<name>` and `adam.v/<name>`, in
//! parameter order. Anything after the last array is an error.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, TrainConfig};
use crate::data::Vocabs;
use crate::error::{Error, Result};
use crate::model::{param_specs, Sdgnn, SdgnnConfig};
use crate::numcore::{ParamStore, RngState, Tensor};

const MAGIC: &[u8; 8] = b"SDGNNCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: SdgnnConfig,
    pub train: TrainConfig,
    pub vocabs: Vocabs,
    pub params: ParamStore,
    pub adam: AdamState,
    pub epoch: usize,
    pub rng: RngState,
    pub best_val_auroc: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: SdgnnConfig,
    train: TrainConfig,
    vocabs: Vocabs,
    epoch: usize,
    rng: RngState,
    best_val_auroc: Option<f64>,
    adam_t: u64,
}

impl Checkpoint {
    /// Rebuilds the network bound to this checkpoint's parameters.
    pub fn network(&self) -> Result<Sdgnn> {
        let map = self.model.mode.relation_map(&self.vocabs.relations);
        Sdgnn::bind(self.model.clone(), map, &self.params)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            model: self.model.clone(),
            train: self.train.clone(),
            vocabs: self.vocabs.clone(),
            epoch: self.epoch,
            rng: self.rng,
            best_val_auroc: self.best_val_auroc,
            adam_t: self.adam.t,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);

        let n = self.params.len();
        if self.adam.m.len() != n || self.adam.v.len() != n {
            return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
        }
        out.extend_from_slice(&(3 * n as u32).to_le_bytes());
        for (prefix, tensors) in [
            ("param", self.params.iter().map(|p| &p.value).collect::<Vec<_>>()),
            ("adam.m", self.adam.m.iter().collect()),
            ("adam.v", self.adam.v.iter().collect()),
        ] {
            for (p, t) in self.params.iter().zip(tensors) {
                write_array(&mut out, &format!("{prefix}/{}", p.name), t);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let header_len = r.u64()? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len)?)?;

        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count);
        for _ in 0..count {
            arrays.push(read_array(&mut r)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes after the last array", bytes.len() - r.pos)));
        }

        let specs = param_specs(&header.model);
        if count != 3 * specs.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} arrays for this configuration, found {count}",
                3 * specs.len()
            )));
        }
        let mut arrays = arrays.into_iter();
        let mut take = |prefix: &str, name: &str, shape: &[usize]| -> Result<Tensor> {
            let (got, t) = arrays.next().expect("count checked");
            let want = format!("{prefix}/{name}");
            if got != want {
                return Err(Error::Checkpoint(format!("expected array {want}, found {got}")));
            }
            if t.shape() != shape {
                return Err(Error::Checkpoint(format!("array {want} has shape {:?}, expected {shape:?}", t.shape())));
            }
            Ok(t)
        };
        let mut params = ParamStore::new();
        for s in &specs {
            params.add(s.name.clone(), take("param", &s.name, &s.shape)?, s.decay);
        }
        let m = specs.iter().map(|s| take("adam.m", &s.name, &s.shape)).collect::<Result<_>>()?;
        let v = specs.iter().map(|s| take("adam.v", &s.name, &s.shape)).collect::<Result<_>>()?;

        let ckpt = Checkpoint {
            model: header.model,
            train: header.train,
            vocabs: header.vocabs,
            params,
            adam: AdamState { t: header.adam_t, m, v },
            epoch: header.epoch,
            rng: header.rng,
            best_val_auroc: header.best_val_auroc,
        };
        ckpt.network()?;
        Ok(ckpt)
    }
}

fn write_array(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_array(r: &mut Reader<'_>) -> Result<(String, Tensor)> {
    let name_len = r.u32()? as usize;
    let name = String::from_utf8(r.take(name_len)?.to_vec())
        .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?;
    let rank = r.u32()? as usize;
    let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let len = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
        .ok_or_else(|| Error::Checkpoint(format!("array {name} is truncated")))?;
    let raw = r.take(len * 8)?;
    let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((name, Tensor::new(shape, data)?))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Checkpoint(format!(
                "file truncated: wanted {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
