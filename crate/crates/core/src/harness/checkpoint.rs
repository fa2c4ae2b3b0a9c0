//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MARC"  u32 version
//! u32 len, model config as JSON
//! u32 count, then per parameter:  entry
//! u32 epoch, u64 optimizer step
//! u32 count, then per BN buffer:  entry "<name>.mean", entry "<name>.var"
//! u32 count, then per moment:     entry "adam.m.<param>", entry "adam.v.<param>"
//!
//! entry := u32 name len, UTF-8 name, u32 rank, u32 extents..., f32 values
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::AdamState;

const MAGIC: &[u8; 4] = b"MARC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything besides the weights needed to resume training.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainState {
    pub epoch: u32,
    pub adam: AdamState<f32>,
}

struct Entry {
    name: String,
    shape: Vec<usize>,
    data: Vec<f32>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_entry(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f32]) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, shape.len() as u32);
    for &d in shape {
        put_u32(out, d as u32);
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn checkpoint_bytes(model: &Model, state: &TrainState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    let cfg = serde_json::to_vec(model.config()).expect("config serializes");
    put_u32(&mut out, cfg.len() as u32);
    out.extend_from_slice(&cfg);

    let params = model.params.params();
    put_u32(&mut out, params.len() as u32);
    for p in params {
        put_entry(&mut out, &p.name, p.value.shape(), p.value.data());
    }

    put_u32(&mut out, state.epoch);
    out.extend_from_slice(&state.adam.step.to_le_bytes());
    let stats = model.params.all_stats();
    put_u32(&mut out, stats.len() as u32);
    for s in stats {
        put_entry(&mut out, &format!("{}.mean", s.name), &[s.mean.len()], &s.mean);
        put_entry(&mut out, &format!("{}.var", s.name), &[s.var.len()], &s.var);
    }
    put_u32(&mut out, state.adam.m.len() as u32);
    for (i, (m, v)) in state.adam.m.iter().zip(&state.adam.v).enumerate() {
        let p = &params[i];
        put_entry(&mut out, &format!("adam.m.{}", p.name), p.value.shape(), m);
        put_entry(&mut out, &format!("adam.v.{}", p.name), p.value.shape(), v);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    names: HashSet<String>,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Truncated(what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn entry(&mut self) -> Result<Entry, CheckpointError> {
        let len = self.u32("entry name")? as usize;
        let name = std::str::from_utf8(self.take(len, "entry name")?)
            .map_err(|_| CheckpointError::Entry {
                name: "?".into(),
                message: "name is not UTF-8".into(),
            })?
            .to_string();
        if !self.names.insert(name.clone()) {
            return Err(CheckpointError::DuplicateName(name));
        }
        let rank = self.u32("entry rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(self.u32("entry extents")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| CheckpointError::Entry {
                name: name.clone(),
                message: "extents overflow".into(),
            })?;
        let bytes = self.take(n.checked_mul(4).ok_or(CheckpointError::Truncated("entry data"))?, "entry data")?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Entry { name, shape, data })
    }
}

fn expect_entry(e: Entry, name: &str, shape: &[usize]) -> Result<Vec<f32>, CheckpointError> {
    if e.name != name {
        return Err(if e.name.is_empty() {
            CheckpointError::Missing(name.to_string())
        } else {
            CheckpointError::Entry {
                name: e.name,
                message: format!("expected entry {name:?}"),
            }
        });
    }
    if e.shape != shape {
        return Err(CheckpointError::Entry {
            name: e.name,
            message: format!("shape {:?}, model expects {shape:?}", e.shape),
        });
    }
    Ok(e.data)
}

pub fn checkpoint_from_bytes(buf: &[u8]) -> Result<(Model, TrainState)> {
    if buf.len() < 4 {
        return Err(CheckpointError::Truncated("magic").into());
    }
    if &buf[..4] != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    let mut r = Reader {
        buf,
        pos: 4,
        names: HashSet::new(),
    };
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version).into());
    }
    let len = r.u32("config")? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(len, "config")?).map_err(|e| CheckpointError::Entry {
        name: "config".into(),
        message: e.to_string(),
    })?;
    let mut model = Model::build(&config, 0)?;

    let n = r.u32("parameter count")? as usize;
    let expected = model.params.params().len();
    // Read every entry first so duplicates and truncation are reported as such.
    let mut entries = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        entries.push(r.entry()?);
    }
    if n < expected {
        let have: HashSet<&str> = entries.iter().map(|e| e.name.as_str()).collect();
        let missing = model
            .params
            .params()
            .iter()
            .find(|p| !have.contains(p.name.as_str()))
            .map_or_else(String::new, |p| p.name.clone());
        return Err(CheckpointError::Missing(missing).into());
    }
    if n > expected {
        return Err(CheckpointError::Entry {
            name: entries[expected].name.clone(),
            message: "not a parameter of this model".into(),
        }
        .into());
    }
    for (p, e) in model.params.params_mut().iter_mut().zip(entries) {
        let data = expect_entry(e, &p.name, p.value.shape())?;
        p.value.data_mut().copy_from_slice(&data);
    }

    let epoch = r.u32("epoch")?;
    let step = r.u64("optimizer step")?;
    let n_stats = r.u32("statistics count")? as usize;
    if n_stats != model.params.all_stats().len() {
        return Err(CheckpointError::Entry {
            name: "statistics".into(),
            message: format!("{n_stats} buffers, model has {}", model.params.all_stats().len()),
        }
        .into());
    }
    for s in model.params.all_stats_mut() {
        let w = s.mean.len();
        s.mean = expect_entry(r.entry()?, &format!("{}.mean", s.name), &[w])?;
        s.var = expect_entry(r.entry()?, &format!("{}.var", s.name), &[w])?;
    }
    let n_moments = r.u32("moment count")? as usize;
    if n_moments != 0 && n_moments != expected {
        return Err(CheckpointError::Entry {
            name: "adam".into(),
            message: format!("{n_moments} moment pairs for {expected} parameters"),
        }
        .into());
    }
    let mut adam = AdamState {
        step,
        m: Vec::with_capacity(n_moments),
        v: Vec::with_capacity(n_moments),
    };
    for p in model.params.params().iter().take(n_moments) {
        adam.m.push(expect_entry(r.entry()?, &format!("adam.m.{}", p.name), p.value.shape())?);
        adam.v.push(expect_entry(r.entry()?, &format!("adam.v.{}", p.name), p.value.shape())?);
    }
    if r.pos != buf.len() {
        return Err(CheckpointError::Entry {
            name: "trailer".into(),
            message: format!("{} unexpected trailing bytes", buf.len() - r.pos),
        }
        .into());
    }
    Ok((model, TrainState { epoch, adam }))
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model, state: &TrainState) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_bytes(model, state)).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, TrainState)> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    checkpoint_from_bytes(&buf)
}
