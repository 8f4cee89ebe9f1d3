//! Checkpoint layout (little endian):
//!
//! ```text
//! "PCKP" u16 version
//! u32 meta_len, meta_len bytes of JSON (architecture and model config)
//! u64 seed, u64 step
//! u32 count, then per parameter:
//!     u16 name_len, name, u8 ndim, ndim x u32 dims, f32 data
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::nn::{ParamStore, Tensor};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PCKP";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub seed: u64,
    pub step: u64,
    pub params: ParamStore<f32>,
}

fn fmt(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let meta = serde_json::to_vec(&ck.meta)?;
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&ck.seed.to_le_bytes());
    out.extend_from_slice(&ck.step.to_le_bytes());
    out.extend_from_slice(&(ck.params.len() as u32).to_le_bytes());
    for (name, t) in ck.params.iter() {
        if name.len() > u16::MAX as usize || t.shape().len() > u8::MAX as usize {
            return Err(fmt(format!("parameter `{name}` cannot be encoded")));
        }
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for d in t.shape() {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(fmt("truncated checkpoint"));
        }
        let (a, b) = self.buf.split_at(n);
        self.buf = b;
        Ok(a)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(fmt("not a checkpoint (bad magic)"));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(fmt(format!("unsupported checkpoint version {version}")));
    }
    let meta_len = r.u32()? as usize;
    let meta = serde_json::from_slice(r.take(meta_len)?)?;
    let seed = r.u64()?;
    let step = r.u64()?;
    let count = r.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| fmt("parameter name is not UTF-8"))?
            .to_string();
        let ndim = r.u8()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| fmt("parameter too large"))?)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(fmt(format!("parameter `{name}` holds non-finite values")));
        }
        params.insert(name, Tensor::from_vec(&shape, data));
    }
    if !r.buf.is_empty() {
        return Err(fmt("trailing bytes after checkpoint"));
    }
    Ok(Checkpoint {
        meta,
        seed,
        step,
        params,
    })
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let bytes = encode_checkpoint(ck)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
