//! Binary checkpoints.
//!
//! Layout: the magic `LFDESTCK`, a little-endian `u32` format version, a
//! `u64` length and a JSON header, then three tensor sections (weights,
//! Adam first moments, Adam second moments). Each section is a `u32` count
//! followed by `(name, dtype, rank, dims, raw little-endian values)`
//! records in name order.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"LFDESTCK";

/// Which part of the schedule a run is in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Pretrain,
    Joint,
    Done,
}

/// Saved generator position of a ChaCha stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    /// Hex-encoded 32-byte seed.
    pub seed: String,
    pub stream: u64,
    /// Decimal word position (a `u128`).
    pub word_pos: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: TrainConfig,
    pub stage: Stage,
    /// Iterations completed within `stage`.
    pub iteration: u64,
    pub rng: RngState,
    pub adam_step: u64,
    /// Wall-clock seconds spent so far.
    pub elapsed: f64,
}

/// A named tensor's dtype, shape and raw bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl Blob {
    pub fn from_tensor(name: &str, t: &Tensor) -> Result<Self> {
        let flat = t.flatten_all()?;
        let bytes = match t.dtype() {
            DType::F32 => flat.to_vec1::<f32>()?.iter().flat_map(|x| x.to_le_bytes()).collect(),
            DType::F64 => flat.to_vec1::<f64>()?.iter().flat_map(|x| x.to_le_bytes()).collect(),
            other => return Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
        };
        Ok(Self {
            name: name.to_string(),
            dtype: t.dtype(),
            dims: t.dims().to_vec(),
            bytes,
        })
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        let dev = Device::Cpu;
        Ok(match self.dtype {
            DType::F32 => {
                let v: Vec<f32> = self
                    .bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect();
                Tensor::from_vec(v, self.dims.as_slice(), &dev)?
            }
            _ => {
                let v: Vec<f64> = self
                    .bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                Tensor::from_vec(v, self.dims.as_slice(), &dev)?
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub weights: Vec<Blob>,
    pub adam_m: Vec<Blob>,
    pub adam_v: Vec<Blob>,
}

fn dtype_tag(d: DType) -> u8 {
    match d {
        DType::F32 => 0,
        _ => 1,
    }
}

fn corrupt(what: &str) -> Error {
    Error::Checkpoint(format!("truncated or corrupt checkpoint ({what})"))
}

fn read_exact<const N: usize>(r: &mut Cursor<&[u8]>, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|_| corrupt(what))?;
    Ok(buf)
}

fn read_vec(r: &mut Cursor<&[u8]>, len: usize, what: &str) -> Result<Vec<u8>> {
    let remaining = r.get_ref().len() as u64 - r.position();
    if len as u64 > remaining {
        return Err(corrupt(what));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|_| corrupt(what))?;
    Ok(buf)
}

fn write_section(out: &mut Vec<u8>, blobs: &[Blob]) {
    out.extend((blobs.len() as u32).to_le_bytes());
    for b in blobs {
        out.extend((b.name.len() as u32).to_le_bytes());
        out.extend(b.name.as_bytes());
        out.push(dtype_tag(b.dtype));
        out.extend((b.dims.len() as u32).to_le_bytes());
        for &d in &b.dims {
            out.extend((d as u64).to_le_bytes());
        }
        out.extend((b.bytes.len() as u64).to_le_bytes());
        out.extend(&b.bytes);
    }
}

fn read_section(r: &mut Cursor<&[u8]>) -> Result<Vec<Blob>> {
    let n = u32::from_le_bytes(read_exact(r, "section count")?) as usize;
    let mut blobs = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let len = u32::from_le_bytes(read_exact(r, "name length")?) as usize;
        let name = String::from_utf8(read_vec(r, len, "name")?).map_err(|_| corrupt("name"))?;
        let dtype = match read_exact::<1>(r, "dtype")?[0] {
            0 => DType::F32,
            1 => DType::F64,
            t => return Err(Error::Checkpoint(format!("unknown dtype tag {t}"))),
        };
        let rank = u32::from_le_bytes(read_exact(r, "rank")?) as usize;
        let dims = (0..rank)
            .map(|_| Ok(u64::from_le_bytes(read_exact(r, "dims")?) as usize))
            .collect::<Result<Vec<_>>>()?;
        let nbytes = u64::from_le_bytes(read_exact(r, "payload length")?) as usize;
        let width = if dtype == DType::F32 { 4 } else { 8 };
        if nbytes != dims.iter().product::<usize>() * width {
            return Err(corrupt(&format!("payload of {name}")));
        }
        let bytes = read_vec(r, nbytes, "payload")?;
        blobs.push(Blob { name, dtype, dims, bytes });
    }
    Ok(blobs)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(FORMAT_VERSION.to_le_bytes());
        let header = serde_json::to_vec(&self.header)?;
        out.extend((header.len() as u64).to_le_bytes());
        out.extend(header);
        write_section(&mut out, &self.weights);
        write_section(&mut out, &self.adam_m);
        write_section(&mut out, &self.adam_v);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        if &read_exact::<8>(&mut r, "magic")? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(read_exact(&mut r, "version")?);
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let len = u64::from_le_bytes(read_exact(&mut r, "header length")?) as usize;
        let header: CheckpointHeader = serde_json::from_slice(&read_vec(&mut r, len, "header")?)?;
        let weights = read_section(&mut r)?;
        let adam_m = read_section(&mut r)?;
        let adam_v = read_section(&mut r)?;
        if r.position() as usize != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self {
            header,
            weights,
            adam_m,
            adam_v,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let t = Tensor::new(&[[1.5f32, -2.0], [0.25, 3.0]], &Device::Cpu).unwrap();
        Checkpoint {
            header: CheckpointHeader {
                config: TrainConfig::desk(),
                stage: Stage::Joint,
                iteration: 17,
                rng: RngState {
                    seed: "00".repeat(32),
                    stream: 3,
                    word_pos: "123456789012345678901234567890".into(),
                },
                adam_step: 17,
                elapsed: 0.1 + 0.2,
            },
            weights: vec![Blob::from_tensor("w", &t).unwrap()],
            adam_m: vec![Blob::from_tensor("w", &t).unwrap()],
            adam_v: vec![],
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let bytes = sample().to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, sample());
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn version_mismatch_is_loud() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[8] = 99;
        let err = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("format version 99"), "{err}");
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"garbage").is_err());
    }
}
