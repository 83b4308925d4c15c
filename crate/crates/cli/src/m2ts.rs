//! The `M2TS` tensor file: magic `M2TS`, little-endian `u32` rank, `rank` little-endian
//! `u32` extents, then the row-major values as little-endian `f32`.

use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use m2vsl_core::Tensor;

pub const MAGIC: &[u8; 4] = b"M2TS";

/// Encoded size of a tensor of `shape`.
pub fn encoded_len(shape: &[usize]) -> usize {
    8 + 4 * shape.len() + 4 * shape.iter().product::<usize>()
}

pub fn encode(t: &Tensor) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(encoded_len(t.shape()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&u32::try_from(t.rank())?.to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&u32::try_from(d).context("extent does not fit in u32")?.to_le_bytes());
    }
    for &x in t.data() {
        let f = x as f32;
        ensure!(f.is_finite(), "value {x:e} does not fit in f32");
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(out)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).context("truncated M2TS header")?;
    Ok(u32::from_le_bytes(b))
}

/// Reads one tensor from the front of `r`, consuming exactly its encoded length.
pub fn read_from(r: &mut impl Read) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).context("truncated M2TS header")?;
    if &magic != MAGIC {
        bail!("bad magic {:?}, expected M2TS", magic);
    }
    let rank = read_u32(r)? as usize;
    ensure!(rank <= 16, "implausible rank {rank}");
    let shape = (0..rank).map(|_| read_u32(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    let mut raw = vec![0u8; 4 * n];
    r.read_exact(&mut raw).context("truncated M2TS data")?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(Tensor::new(&shape, data)?)
}

/// Decodes a buffer holding exactly one tensor.
pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let mut cur = bytes;
    let t = read_from(&mut cur)?;
    ensure!(cur.is_empty(), "{} trailing bytes after tensor", cur.len());
    Ok(t)
}

pub fn write(path: &Path, t: &Tensor) -> Result<()> {
    let bytes = encode(t)?;
    let mut f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode(&bytes).with_context(|| format!("decoding {}", path.display()))
}
