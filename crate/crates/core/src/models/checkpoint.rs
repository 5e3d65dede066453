//! The "RDKD" tensor container.
//!
//! Layout: magic `RDKD`, version u16, then per record the
//! name length u16, UTF-8 name, dtype u8 (0 = f32, 1 = f64), rank u8, each
//! dimension as u32, and the little-endian payload. A CRC32 of all
//! preceding bytes closes the file. Integers are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::tensor::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"RDKD";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DType {
    #[default]
    F32,
    F64,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }
}

pub fn encode<'a, I>(records: I, dtype: DType) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = (&'a str, &'a Tensor)>,
{
    let records: Vec<_> = records.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (name, t) in records {
        let nb = name.as_bytes();
        let nlen = u16::try_from(nb.len()).map_err(|_| Error::format(name, "record name longer than 65535 bytes"))?;
        let rank = u8::try_from(t.shape().len()).map_err(|_| Error::format(name, "rank above 255"))?;
        out.extend_from_slice(&nlen.to_le_bytes());
        out.extend_from_slice(nb);
        out.push(dtype.code());
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::format(name, "dimension above u32"))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        match dtype {
            DType::F32 => t.values().iter().for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
            DType::F64 => t.values().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    source: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| {
            Error::format(self.source, format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Decodes records in file order. Tensors come back as f64 with
/// `requires_grad` unset.
pub fn decode(source: &str, bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    if bytes.len() < MAGIC.len() + 2 + 4 {
        return Err(Error::format(source, "file too short for an RDKD container"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::format(source, "CRC32 mismatch"));
    }
    let mut r = Reader { bytes: body, pos: 0, source };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(source, "missing RDKD magic"));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::format(source, format!("unsupported version {version}")));
    }
    let mut out = Vec::new();
    while r.pos < body.len() {
        let nlen = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(nlen, "name")?)
            .map_err(|_| Error::format(source, "record name is not UTF-8"))?
            .to_string();
        let dtype = r.u8("dtype")?;
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match dtype {
            0 => r
                .take(n * 4, &name)?
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                .collect(),
            1 => r
                .take(n * 8, &name)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
            d => return Err(Error::format(source, format!("record `{name}` has unknown dtype code {d}"))),
        };
        out.push((name, Tensor::new(&shape, values)?));
    }
    Ok(out)
}

pub fn save_store(path: &Path, store: &ParamStore, dtype: DType) -> Result<()> {
    write_atomic(path, &encode(store.iter().map(|(k, v)| (k.as_str(), v)), dtype)?)
}

pub fn read(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&path.display().to_string(), &bytes)
}

/// Loads every record as a trainable parameter.
pub fn load_store(path: &Path) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    for (name, t) in read(path)? {
        store.insert(name, t);
    }
    Ok(store)
}
