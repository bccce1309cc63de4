//! `RVT1` volume files: magic, rank byte (3), `D,H,W` as LE u32, then the
//! row-major LE f64 intensities.

use std::path::Path;

use crate::checkpoint::{read_exact, read_f64, read_u32, read_u8};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RVT_MAGIC: &[u8; 4] = b"RVT1";

pub fn encode_rvt(volume: &Tensor) -> Result<Vec<u8>> {
    if volume.rank() != 3 {
        return Err(Error::dim(format!(
            "RVT1 stores rank-3 volumes, got {:?}",
            volume.shape()
        )));
    }
    let mut out = Vec::with_capacity(17 + 8 * volume.numel());
    out.extend_from_slice(RVT_MAGIC);
    out.push(3);
    for &d in volume.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in volume.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_rvt(bytes: &[u8]) -> Result<Tensor> {
    let mut r = bytes;
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != RVT_MAGIC {
        return Err(Error::Format("not an RVT1 file".into()));
    }
    let rank = read_u8(&mut r)?;
    if rank != 3 {
        return Err(Error::Format(format!("RVT1 rank must be 3, got {rank}")));
    }
    let dims = [read_u32(&mut r)?, read_u32(&mut r)?, read_u32(&mut r)?].map(|d| d as usize);
    let numel: usize = dims.iter().product();
    if r.len() != numel * 8 {
        return Err(Error::Format(format!(
            "RVT1 payload has {} bytes, dims {dims:?} need {}",
            r.len(),
            numel * 8
        )));
    }
    let data = (0..numel)
        .map(|_| read_f64(&mut r))
        .collect::<Result<Vec<_>>>()?;
    Tensor::new(&dims, data)
}

pub fn write_rvt(path: &Path, volume: &Tensor) -> Result<()> {
    std::fs::write(path, encode_rvt(volume)?)?;
    Ok(())
}

pub fn read_rvt(path: &Path) -> Result<Tensor> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    decode_rvt(&std::fs::read(path)?)
}
