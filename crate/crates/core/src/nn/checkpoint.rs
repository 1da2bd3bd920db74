//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "RSGMCKPT"
//! version    u32
//! spec hash  32 bytes (SHA-256, see NetworkSpec::hash)
//! layers     u32
//! per layer  rows u32, cols u32
//! count      u64
//! params     count × f64
//! ```

use super::{NetworkSpec, ParamVector};
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"RSGMCKPT";
const VERSION: u32 = 1;

pub fn write_checkpoint(path: &Path, spec: &NetworkSpec, params: &ParamVector) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + 8 * params.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&spec.hash());
    buf.extend_from_slice(&(params.layout.len() as u32).to_le_bytes());
    for l in &params.layout {
        buf.extend_from_slice(&(l.rows as u32).to_le_bytes());
        buf.extend_from_slice(&(l.cols as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in &params.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("file is truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Reads a checkpoint and checks it was written for `spec`.
pub fn read_checkpoint(path: &Path, spec: &NetworkSpec) -> Result<ParamVector> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let hash = r.take(32)?;
    if hash != spec.hash() {
        let found: String = hash.iter().map(|b| format!("{b:02x}")).collect();
        return Err(Error::SpecHashMismatch { expected: spec.hash_hex(), found });
    }
    let layers = r.u32()? as usize;
    let mut shapes = Vec::with_capacity(layers);
    for _ in 0..layers {
        shapes.push((r.u32()? as usize, r.u32()? as usize));
    }
    if shapes != spec.layer_shapes() {
        return Err(Error::Checkpoint("layer table does not match the network".into()));
    }
    let count = r.u64()? as usize;
    if count != spec.num_params() {
        return Err(Error::Checkpoint(format!("expected {} parameters, found {count}", spec.num_params())));
    }
    let data: Vec<f64> = r.take(8 * count)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    let p = ParamVector::from_data(spec, data)?;
    if !p.is_finite() {
        return Err(Error::Checkpoint("non-finite parameter".into()));
    }
    Ok(p)
}
