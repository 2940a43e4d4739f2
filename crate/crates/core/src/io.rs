//! On-disk tensor container.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "S2FTNSR1"
//! count   u64      number of tensor records
//! cfg     16 bytes ASCII hex config hash ("0000000000000000" when unset)
//! record  repeated `count` times:
//!   name_len u32, name  name_len bytes UTF-8
//!   dtype    u8        1 = f32, 2 = f64
//!   rank     u64
//!   dims     rank x u64
//!   data     product(dims) x dtype size, little-endian
//! ```
//!
//! Readers reject trailing bytes after the last record, so truncated or
//! concatenated files are detected.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 8] = b"S2FTNSR1";
pub const NO_CONFIG_HASH: &str = "0000000000000000";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 1,
    F64 = 2,
}

/// One named tensor record.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<u64>,
    /// Values widened to f64 regardless of on-disk dtype.
    pub data: Vec<f64>,
}

impl TensorRecord {
    pub fn f64(name: impl Into<String>, dims: &[usize], data: Vec<f64>) -> Self {
        TensorRecord {
            name: name.into(),
            dtype: DType::F64,
            dims: dims.iter().map(|&d| d as u64).collect(),
            data,
        }
    }

    pub fn f32(name: impl Into<String>, dims: &[usize], data: Vec<f64>) -> Self {
        TensorRecord {
            name: name.into(),
            dtype: DType::F32,
            dims: dims.iter().map(|&d| d as u64).collect(),
            data,
        }
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product::<u64>() as usize
    }
}

/// A parsed tensor file: config hash plus records in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub config_hash: String,
    pub records: Vec<TensorRecord>,
}

impl TensorFile {
    pub fn new(config_hash: impl Into<String>) -> Self {
        TensorFile {
            config_hash: config_hash.into(),
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, rec: TensorRecord) {
        self.records.push(rec);
    }

    pub fn find(&self, name: &str) -> Option<&TensorRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        if self.config_hash.len() != 16 || !self.config_hash.is_ascii() {
            return Err(Error::InvalidConfig(format!(
                "config hash must be 16 ascii chars, got {:?}",
                self.config_hash
            )));
        }
        w.write_all(TENSOR_MAGIC)?;
        w.write_all(&(self.records.len() as u64).to_le_bytes())?;
        w.write_all(self.config_hash.as_bytes())?;
        for rec in &self.records {
            let expected = rec.numel();
            if rec.data.len() != expected {
                return Err(Error::shape(
                    "tensor_file",
                    format!("record {}: dims {:?} need {} values, have {}",
                        rec.name, rec.dims, expected, rec.data.len()),
                ));
            }
            w.write_all(&(rec.name.len() as u32).to_le_bytes())?;
            w.write_all(rec.name.as_bytes())?;
            w.write_all(&[rec.dtype as u8])?;
            w.write_all(&(rec.dims.len() as u64).to_le_bytes())?;
            for &d in &rec.dims {
                w.write_all(&d.to_le_bytes())?;
            }
            match rec.dtype {
                DType::F32 => {
                    let mut buf = Vec::with_capacity(rec.data.len() * 4);
                    for &v in &rec.data {
                        buf.extend_from_slice(&(v as f32).to_le_bytes());
                    }
                    w.write_all(&buf)?;
                }
                DType::F64 => {
                    let mut buf = Vec::with_capacity(rec.data.len() * 8);
                    for &v in &rec.data {
                        buf.extend_from_slice(&v.to_le_bytes());
                    }
                    w.write_all(&buf)?;
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read, origin: &str) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::parse(&bytes, origin)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::parse(&bytes, &path.display().to_string())
    }

    pub fn parse(bytes: &[u8], origin: &str) -> Result<Self> {
        let fail = |detail: String| Error::format(origin, detail);
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(fail(format!(
                    "truncated: need {} bytes at offset {}, file has {}",
                    n, pos, bytes.len()
                )));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };

        if take(&mut pos, 8)? != TENSOR_MAGIC {
            return Err(fail("bad magic, not a tensor file".into()));
        }
        let count = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let hash_bytes = take(&mut pos, 16)?;
        let config_hash = std::str::from_utf8(hash_bytes)
            .map_err(|_| fail("config hash is not ascii".into()))?
            .to_string();

        let mut records = Vec::with_capacity(count.min(1024) as usize);
        for i in 0..count {
            let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(take(&mut pos, name_len)?)
                .map_err(|_| fail(format!("record {i}: name is not utf-8")))?
                .to_string();
            let dtype = match take(&mut pos, 1)?[0] {
                1 => DType::F32,
                2 => DType::F64,
                d => return Err(fail(format!("record {name}: unknown dtype code {d}"))),
            };
            let rank = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
            }
            let numel = dims.iter().product::<u64>() as usize;
            let data = match dtype {
                DType::F32 => take(&mut pos, numel * 4)?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
                DType::F64 => take(&mut pos, numel * 8)?
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            };
            records.push(TensorRecord { name, dtype, dims, data });
        }
        if pos != bytes.len() {
            return Err(fail(format!(
                "{} trailing bytes after last record",
                bytes.len() - pos
            )));
        }
        Ok(TensorFile { config_hash, records })
    }
}
