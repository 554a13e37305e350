//! Bit-exact binary file formats.
//!
//! All integers are little-endian; all layouts are row-major.
//!
//! `FMAP`: magic `"FMAP"`, `u32` version (1), `u32` H, W, D, `u8` dtype
//! (0 = f32, 1 = f64), then `H*W*D` values ordered `(i, j, d)`.
//!
//! `FLOW`: magic `"FLOW"`, `u32` H, W, then `H*W` pairs of `f32` `(u, v)`,
//! optionally followed by a `u8` validity plane of `H*W` bytes.
//!
//! `CVOL`: magic `"CVOL"`, `u8` kind (0 = global, 1 = local), `u32` H, W,
//! `u32` radius (0 for global), `u8` dtype, then the volume values in
//! `(i, j, k, l)` order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use gocor::metrics::FlowField;
use gocor::{CorrespondenceVolume, FeatureMap, VolumeKind};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: bad magic at byte offset 0 (expected {expected})")]
    BadMagic { path: String, expected: &'static str },
    #[error("{path}: truncated file at byte offset {offset}")]
    Truncated { path: String, offset: usize },
    #[error("{path}: invalid {what} at byte offset {offset}")]
    InvalidField {
        path: String,
        what: String,
        offset: usize,
    },
    #[error("{path}: {len} trailing bytes at byte offset {offset}")]
    TrailingData {
        path: String,
        offset: usize,
        len: usize,
    },
    #[error("{path}: non-finite value at byte offset {offset}")]
    NonFinite { path: String, offset: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Invalid(#[from] gocor::GocorError),
}

pub type Result<T> = std::result::Result<T, FormatError>;

/// Storage precision of feature-map and volume files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }
}

/// Tracks the byte offset so parse errors can point at it.
struct Cursor {
    path: String,
    data: Vec<u8>,
    offset: usize,
}

impl Cursor {
    fn open(path: &Path) -> Result<Self> {
        let mut data = Vec::new();
        let file = File::open(path).map_err(|source| FormatError::Io {
            path: path.display().to_string(),
            source,
        })?;
        BufReader::new(file)
            .read_to_end(&mut data)
            .map_err(|source| FormatError::Io {
                path: path.display().to_string(),
                source,
            })?;
        Ok(Self {
            path: path.display().to_string(),
            data,
            offset: 0,
        })
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.offset + n > self.data.len() {
            return Err(FormatError::Truncated {
                path: self.path.clone(),
                offset: self.data.len(),
            });
        }
        let slice = &self.data[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn magic(&mut self, expected: &'static str) -> Result<()> {
        let got = self.take(4)?;
        if got != expected.as_bytes() {
            return Err(FormatError::BadMagic {
                path: self.path.clone(),
                expected,
            });
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        let bytes = self.take(4)?;
        Ok(u32::from_le_bytes(bytes.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn values(&mut self, count: usize, dtype: Dtype) -> Result<Vec<f64>> {
        let width = match dtype {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        };
        let start = self.offset;
        let bytes = self.take(count * width)?;
        let mut out = Vec::with_capacity(count);
        match dtype {
            Dtype::F32 => {
                for (idx, chunk) in bytes.chunks_exact(4).enumerate() {
                    let v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
                    if !v.is_finite() {
                        return Err(FormatError::NonFinite {
                            path: self.path.clone(),
                            offset: start + idx * 4,
                        });
                    }
                    out.push(v);
                }
            }
            Dtype::F64 => {
                for (idx, chunk) in bytes.chunks_exact(8).enumerate() {
                    let v = f64::from_le_bytes(chunk.try_into().unwrap());
                    if !v.is_finite() {
                        return Err(FormatError::NonFinite {
                            path: self.path.clone(),
                            offset: start + idx * 8,
                        });
                    }
                    out.push(v);
                }
            }
        }
        Ok(out)
    }

    fn finish(self) -> Result<()> {
        if self.offset != self.data.len() {
            return Err(FormatError::TrailingData {
                path: self.path,
                offset: self.offset,
                len: self.data.len() - self.offset,
            });
        }
        Ok(())
    }
}

struct Sink {
    out: BufWriter<File>,
    path: String,
}

impl Sink {
    fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|source| FormatError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self {
            out: BufWriter::new(file),
            path: path.display().to_string(),
        })
    }

    fn bytes(&mut self, data: &[u8]) -> Result<()> {
        self.out.write_all(data).map_err(|source| FormatError::Io {
            path: self.path.clone(),
            source,
        })
    }

    fn values(&mut self, data: &[f64], dtype: Dtype) -> Result<()> {
        match dtype {
            Dtype::F32 => {
                for &v in data {
                    self.bytes(&(v as f32).to_le_bytes())?;
                }
            }
            Dtype::F64 => {
                for &v in data {
                    self.bytes(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|source| FormatError::Io {
            path: self.path.clone(),
            source,
        })
    }
}

pub fn write_fmap(path: &Path, map: &FeatureMap, dtype: Dtype) -> Result<()> {
    let mut sink = Sink::create(path)?;
    sink.bytes(b"FMAP")?;
    sink.bytes(&1u32.to_le_bytes())?;
    sink.bytes(&(map.height() as u32).to_le_bytes())?;
    sink.bytes(&(map.width() as u32).to_le_bytes())?;
    sink.bytes(&(map.depth() as u32).to_le_bytes())?;
    sink.bytes(&[dtype.code()])?;
    sink.values(map.data(), dtype)?;
    sink.finish()
}

pub fn read_fmap(path: &Path) -> Result<FeatureMap> {
    let mut cur = Cursor::open(path)?;
    cur.magic("FMAP")?;
    let version_offset = cur.offset;
    let version = cur.u32()?;
    if version != 1 {
        return Err(FormatError::InvalidField {
            path: cur.path.clone(),
            what: format!("version {version}"),
            offset: version_offset,
        });
    }
    let h = cur.u32()? as usize;
    let w = cur.u32()? as usize;
    let d = cur.u32()? as usize;
    let dtype_offset = cur.offset;
    let code = cur.u8()?;
    let dtype = Dtype::from_code(code).ok_or_else(|| FormatError::InvalidField {
        path: cur.path.clone(),
        what: format!("dtype {code}"),
        offset: dtype_offset,
    })?;
    let data = cur.values(h * w * d, dtype)?;
    cur.finish()?;
    Ok(FeatureMap::new(h, w, d, data)?)
}

pub fn write_flow(path: &Path, flow: &FlowField) -> Result<()> {
    let mut sink = Sink::create(path)?;
    sink.bytes(b"FLOW")?;
    sink.bytes(&(flow.height() as u32).to_le_bytes())?;
    sink.bytes(&(flow.width() as u32).to_le_bytes())?;
    for &v in flow.data() {
        sink.bytes(&(v as f32).to_le_bytes())?;
    }
    if let Some(mask) = flow.mask() {
        for &m in mask {
            sink.bytes(&[u8::from(m)])?;
        }
    }
    sink.finish()
}

pub fn read_flow(path: &Path) -> Result<FlowField> {
    let mut cur = Cursor::open(path)?;
    cur.magic("FLOW")?;
    let h = cur.u32()? as usize;
    let w = cur.u32()? as usize;
    let start = cur.offset;
    let bytes = cur.take(h * w * 8)?;
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    for (idx, v) in data.iter().enumerate() {
        if !v.is_finite() {
            return Err(FormatError::NonFinite {
                path: cur.path.clone(),
                offset: start + idx * 4,
            });
        }
    }
    // A trailing validity plane is present iff exactly H*W bytes remain.
    let remaining = cur.data.len() - cur.offset;
    let mask = if remaining == h * w {
        let plane_offset = cur.offset;
        let plane = cur.take(h * w)?;
        let mut mask = Vec::with_capacity(h * w);
        for (idx, &b) in plane.iter().enumerate() {
            match b {
                0 => mask.push(false),
                1 => mask.push(true),
                other => {
                    return Err(FormatError::InvalidField {
                        path: cur.path.clone(),
                        what: format!("mask byte {other}"),
                        offset: plane_offset + idx,
                    })
                }
            }
        }
        Some(mask)
    } else {
        None
    };
    cur.finish()?;
    Ok(FlowField::new(h, w, data, mask)?)
}

pub fn write_cvol(path: &Path, vol: &CorrespondenceVolume, dtype: Dtype) -> Result<()> {
    let mut sink = Sink::create(path)?;
    sink.bytes(b"CVOL")?;
    let (kind, radius) = match vol.kind() {
        VolumeKind::Global => (0u8, 0u32),
        VolumeKind::Local { radius } => (1u8, radius as u32),
    };
    sink.bytes(&[kind])?;
    sink.bytes(&(vol.height() as u32).to_le_bytes())?;
    sink.bytes(&(vol.width() as u32).to_le_bytes())?;
    sink.bytes(&radius.to_le_bytes())?;
    sink.bytes(&[dtype.code()])?;
    sink.values(vol.data(), dtype)?;
    sink.finish()
}

pub fn read_cvol(path: &Path) -> Result<CorrespondenceVolume> {
    let mut cur = Cursor::open(path)?;
    cur.magic("CVOL")?;
    let kind_offset = cur.offset;
    let kind_code = cur.u8()?;
    let h = cur.u32()? as usize;
    let w = cur.u32()? as usize;
    let radius = cur.u32()? as usize;
    let kind = match kind_code {
        0 => VolumeKind::Global,
        1 => VolumeKind::Local { radius },
        other => {
            return Err(FormatError::InvalidField {
                path: cur.path.clone(),
                what: format!("volume kind {other}"),
                offset: kind_offset,
            })
        }
    };
    let dtype_offset = cur.offset;
    let code = cur.u8()?;
    let dtype = Dtype::from_code(code).ok_or_else(|| FormatError::InvalidField {
        path: cur.path.clone(),
        what: format!("dtype {code}"),
        offset: dtype_offset,
    })?;
    let count = h * w * kind.slice_len(h, w);
    let data = cur.values(count, dtype)?;
    cur.finish()?;
    Ok(CorrespondenceVolume::new(h, w, kind, data)?)
}
