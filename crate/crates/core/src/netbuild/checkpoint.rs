//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! "SVNC" | u32 version | u32 len, config text | u8 binarized | u32 count
//! count × (u32 len, name | u8 kind | u32 rows | u32 cols | u8 dtype | rows·cols f64)
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use super::binarize::{binarize_plan, BinarizePlan};
use super::config::Config;
use super::model::Model;
use crate::autodiff::ParamKind;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SVNC";
pub const VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let text = model.config().to_text();
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.push(model.is_binarized() as u8);
    out.extend_from_slice(&(model.store.len() as u32).to_le_bytes());
    for (name, t, kind) in model.store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(match kind {
            ParamKind::Trainable => 0,
            ParamKind::Buffer => 1,
        });
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        out.push(DTYPE_F64);
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Load(format!(
                "truncated checkpoint: {what} needs {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        String::from_utf8(self.take(len, what)?.to_vec()).map_err(|_| Error::Load(format!("{what} is not UTF-8")))
    }
}

/// Rebuilds a model from checkpoint bytes.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Load("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Load(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let text = r.string("config")?;
    let config = Config::parse(&text).map_err(|e| Error::Load(format!("embedded config: {e}")))?;
    let binarized = match r.u8("binarized flag")? {
        0 => false,
        1 => true,
        b => return Err(Error::Load(format!("bad binarized flag {b}"))),
    };
    let mut model = Model::build(&config, 0)?;
    if binarized && !model.is_binarized() {
        binarize_plan(&mut model, BinarizePlan::TwoStepPhase2)?;
    }
    let count = r.u32("tensor count")? as usize;
    let mut seen = BTreeSet::new();
    for _ in 0..count {
        let name = r.string("tensor name")?;
        let kind = match r.u8("tensor kind")? {
            0 => ParamKind::Trainable,
            1 => ParamKind::Buffer,
            k => return Err(Error::Load(format!("tensor '{name}': bad kind {k}"))),
        };
        let rows = r.u32("tensor rows")? as usize;
        let cols = r.u32("tensor cols")? as usize;
        let dtype = r.u8("dtype")?;
        if dtype != DTYPE_F64 {
            return Err(Error::Load(format!("tensor '{name}': unsupported dtype tag {dtype}")));
        }
        let payload = r.take(
            rows.checked_mul(cols)
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| Error::Load(format!("tensor '{name}': size overflow")))?,
            "tensor payload",
        )?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if model.store.kind(&name) != Some(kind) {
            return Err(Error::Load(format!("unknown tensor '{name}' for this architecture")));
        }
        let expected = model.store.get(&name)?.shape();
        if expected != (rows, cols) {
            return Err(Error::Load(format!(
                "tensor '{name}' has shape {rows}x{cols}, architecture expects {}x{}",
                expected.0, expected.1
            )));
        }
        if !seen.insert(name.clone()) {
            return Err(Error::Load(format!("duplicate tensor '{name}'")));
        }
        model.store.set(&name, Tensor::from_vec(rows, cols, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Load(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    if let Some((name, _, _)) = model.store.iter().find(|(n, _, _)| !seen.contains(*n)) {
        return Err(Error::Load(format!("checkpoint is missing tensor '{name}'")));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Load(m) => Error::Load(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Loads a checkpoint and checks that it was written for `expected`'s
/// architecture.
pub fn load_checkpoint_for(path: &Path, expected: &Config) -> Result<Model> {
    let model = load_checkpoint(path)?;
    let got = &model.config().model;
    if got != &expected.model {
        let what = if got.backbone != expected.model.backbone {
            format!("backbone '{}' vs expected '{}'", got.backbone, expected.model.backbone)
        } else {
            "model settings differ".to_string()
        };
        return Err(Error::Load(format!("checkpoint/config mismatch: {what}")));
    }
    Ok(model)
}
