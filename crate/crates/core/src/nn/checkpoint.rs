//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SYLV" | version: u32
//! repeated until EOF:
//!   name_len: u32 | name: UTF-8 | frozen: u8 | rank: u32 | dims: u64 * rank | payload: f32 * prod(dims)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::model::ClassifierModel;
use crate::nn::tensor::Tensor;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"SYLV";
pub const FORMAT_VERSION: u32 = 1;

/// One record of a checkpoint file.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub frozen: bool,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    /// Overrides stored frozen flags: the top `k` layers become trainable
    /// and everything below is frozen.
    pub unfreeze_top_k: Option<usize>,
}

pub fn encode_records(records: &[TensorRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.push(r.frozen as u8);
        out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
        for &d in &r.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &r.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated file while reading {what} at byte {}", self.pos)),
        }
    }

    fn u32(&mut self, what: &str) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_records(bytes: &[u8]) -> std::result::Result<Vec<TensorRecord>, String> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err("bad magic bytes (expected \"SYLV\")".into());
    }
    let version = c.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(format!("unsupported format version {version} (expected {FORMAT_VERSION})"));
    }
    let mut records = Vec::new();
    while c.pos < bytes.len() {
        let len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|e| format!("parameter name is not UTF-8: {e}"))?
            .to_owned();
        let frozen = match c.take(1, "frozen flag")?[0] {
            0 => false,
            1 => true,
            other => return Err(format!("{name}: invalid frozen flag {other}")),
        };
        let rank = c.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u64("dimension")? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| format!("{name}: dimension overflow"))?;
        let payload = c.take(count.checked_mul(4).ok_or("payload overflow")?, "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        records.push(TensorRecord { name, frozen, shape, data });
    }
    Ok(records)
}

pub fn write_records(path: &Path, records: &[TensorRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_records(records))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<TensorRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode_records(&bytes).map_err(|reason| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn model_records<T: Scalar>(model: &ClassifierModel<T>) -> Vec<TensorRecord> {
    model
        .params()
        .iter()
        .map(|p| TensorRecord {
            name: p.name.clone(),
            frozen: p.frozen,
            shape: p.value.shape().to_vec(),
            data: p.value.data().iter().map(|v| v.widen() as f32).collect(),
        })
        .collect()
}

pub fn save_checkpoint<T: Scalar>(model: &ClassifierModel<T>, path: &Path) -> Result<()> {
    write_records(path, &model_records(model))
}

/// Copies stored parameters into `model`, which must have the same
/// architecture (names and shapes).
pub fn apply_records<T: Scalar>(
    model: &mut ClassifierModel<T>,
    records: &[TensorRecord],
    options: LoadOptions,
    path: &Path,
) -> Result<()> {
    let fail = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    if records.len() != model.params().len() {
        return Err(fail(format!(
            "checkpoint has {} parameters, model expects {}",
            records.len(),
            model.params().len()
        )));
    }
    for r in records {
        let p = model
            .params_mut()
            .get_mut(&r.name)
            .ok_or_else(|| fail(format!("unexpected parameter {}", r.name)))?;
        if p.value.shape() != r.shape.as_slice() {
            return Err(fail(format!(
                "{}: stored shape {:?} does not match model shape {:?}",
                r.name,
                r.shape,
                p.value.shape()
            )));
        }
        p.value = Tensor::new(r.shape.clone(), r.data.iter().map(|&v| T::narrow(v as f64)).collect())?;
        p.frozen = r.frozen;
    }
    if let Some(k) = options.unfreeze_top_k {
        model.params_mut().unfreeze_top(k);
    }
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(model: &mut ClassifierModel<T>, path: &Path, options: LoadOptions) -> Result<()> {
    let records = read_records(path)?;
    apply_records(model, &records, options, path)
}
