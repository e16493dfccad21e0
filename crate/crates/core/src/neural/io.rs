//! Flat parameter files: magic, version, tensor count, each tensor's rank and
//! dimensions, then every value as little-endian f64 in tensor order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Params;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CAVP";
const VERSION: u32 = 1;

pub fn write_params<P: Params>(out: &mut impl Write, params: &P) -> std::io::Result<()> {
    let tensors = params.tensors();
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in &tensors {
        out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
    }
    for t in &tensors {
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read values into an existing container. The stored shapes must match the
/// container's exactly.
pub fn read_params<P: Params>(input: &mut impl Read, params: &mut P) -> Result<()> {
    let mut magic = [0u8; 4];
    read_exact(input, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a parameter file".into()));
    }
    let version = read_u32(input)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = read_u32(input)? as usize;
    let mut tensors = params.tensors_mut();
    if count != tensors.len() {
        return Err(Error::Format(format!(
            "expected {} tensors, file has {count}",
            tensors.len()
        )));
    }
    for (k, t) in tensors.iter().enumerate() {
        let rank = read_u32(input)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u64(input)? as usize);
        }
        if dims != t.shape() {
            return Err(Error::Format(format!(
                "tensor {k}: expected shape {:?}, file has {dims:?}",
                t.shape()
            )));
        }
    }
    for t in tensors.iter_mut() {
        for v in t.data_mut() {
            let mut buf = [0u8; 8];
            read_exact(input, &mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest).map_err(|e| Error::Format(e.to_string()))? != 0 {
        return Err(Error::Format("trailing bytes after parameters".into()));
    }
    Ok(())
}

pub fn save_params<P: Params>(path: &Path, params: &P) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_params(&mut out, params).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_params<P: Params>(path: &Path, params: &mut P) -> Result<()> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_params(&mut BufReader::new(file), params).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn read_exact(input: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    input
        .read_exact(buf)
        .map_err(|_| Error::Format("truncated parameter file".into()))
}

fn read_u32(input: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(input, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(input: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(input, &mut b)?;
    Ok(u64::from_le_bytes(b))
}
