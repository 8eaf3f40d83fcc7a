//! `FNW1` parameter files.
//!
//! Layout, all little-endian: the bytes `FNW1`, a `u32` conv-layer count, then
//! per conv layer `u32` in_ch, out_ch, kernel followed by `f64` weights in
//! `(out, in, ky, kx)` order and `out` `f64` biases. The architecture itself
//! comes from the [`NetConfig`]; the file is validated against it.

use std::path::Path;

use crate::error::{Error, Result};
use crate::featnet::{FeatNet, NetConfig};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"FNW1";

pub fn encode<S: Scalar>(net: &FeatNet<S>) -> Vec<u8> {
    let convs: Vec<_> = net.convs().collect();
    let mut out = MAGIC.to_vec();
    out.extend((convs.len() as u32).to_le_bytes());
    for c in convs {
        for d in [c.in_ch(), c.out_ch(), c.kernel()] {
            out.extend((d as u32).to_le_bytes());
        }
        for v in c.weight().iter().chain(c.bias()) {
            out.extend(v.as_f64().to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Data(format!(
                "weights: truncated while reading {what} at byte offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let b = self.take(n * 8, what)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

/// Parses parameters and checks them against the conv layers of `cfg`.
pub fn decode(bytes: &[u8], cfg: &NetConfig) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Data(format!(
            "weights: bad magic {:?}, expected \"FNW1\"",
            String::from_utf8_lossy(magic)
        )));
    }
    let dims = cfg.conv_dims();
    let count = cur.u32("layer count")?;
    if count != dims.len() {
        return Err(Error::Data(format!(
            "weights: file has {count} conv layers, configuration has {}",
            dims.len()
        )));
    }
    let mut params = Vec::with_capacity(count);
    for (i, &(in_ch, out_ch, kernel)) in dims.iter().enumerate() {
        let got = (cur.u32("in_ch")?, cur.u32("out_ch")?, cur.u32("kernel")?);
        if got != (in_ch, out_ch, kernel) {
            return Err(Error::Data(format!(
                "weights: conv layer {i} is {}->{} k{} in the file but {in_ch}->{out_ch} k{kernel} in the configuration",
                got.0, got.1, got.2
            )));
        }
        let w = cur.f64s(out_ch * in_ch * kernel * kernel, "weights")?;
        let b = cur.f64s(out_ch, "biases")?;
        params.push((w, b));
    }
    if cur.pos != bytes.len() {
        return Err(Error::Data(format!(
            "weights: {} trailing bytes after offset {}",
            bytes.len() - cur.pos,
            cur.pos
        )));
    }
    Ok(params)
}

pub fn read_weights(path: &Path, cfg: &NetConfig) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    decode(&super::read_bytes(path)?, cfg)
}

pub fn write_weights<S: Scalar>(net: &FeatNet<S>, path: &Path) -> Result<()> {
    super::write_bytes(path, &encode(net))
}
