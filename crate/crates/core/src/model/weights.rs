//! Binary weight files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    b"OSTW"
//! version  u32 = 1
//! count    u32
//! count x {
//!     name_len u16, name [u8; name_len] (UTF-8)
//!     rank     u8,  dims [u32; rank]
//!     payload  [f32; prod(dims)]
//! }
//! crc32    u32 over every preceding byte
//! ```
//!
//! Parameters are written in lexicographic name order.

use std::io::{Read, Write};
use std::path::Path;

use super::config::ModelConfig;
use super::state::ModelState;
use crate::error::{Error, Result};
use crate::tensor::{Tensor, MAX_RANK};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"OSTW";
pub const WEIGHTS_VERSION: u32 = 1;

/// Appends a CRC-32 of `buf` to it.
pub(crate) fn seal(buf: &mut Vec<u8>) {
    let crc = crc32fast::hash(buf);
    buf.extend_from_slice(&crc.to_le_bytes());
}

/// Verifies and strips the CRC-32 trailer written by [`seal`].
pub(crate) fn unseal(bytes: &[u8]) -> Result<&[u8]> {
    if bytes.len() < 4 {
        return Err(Error::Format(format!("truncated file: {} bytes", bytes.len())));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Format("checksum mismatch: file is corrupt or truncated".into()));
    }
    Ok(body)
}

pub(crate) fn write_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

/// Little-endian reader over an in-memory buffer that reports truncation
/// as a format error.
pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated file: needed {n} bytes at offset {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub(crate) fn is_at_end(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }
}

/// Serializes named `f32` tensors in the weight-file layout.
pub fn write_tensors<'a>(
    w: &mut impl Write,
    tensors: impl ExactSizeIterator<Item = (&'a str, &'a Tensor<f32>)>,
) -> Result<()> {
    let io = |e| Error::Format(format!("write failed: {e}"));
    w.write_all(WEIGHTS_MAGIC).map_err(io)?;
    write_u32(w, WEIGHTS_VERSION).map_err(io)?;
    write_u32(w, tensors.len() as u32).map_err(io)?;
    for (name, t) in tensors {
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Format(format!("parameter name too long: {name}")))?;
        w.write_all(&name_len.to_le_bytes()).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        w.write_all(&[t.rank() as u8]).map_err(io)?;
        for &d in t.shape() {
            write_u32(w, d as u32).map_err(io)?;
        }
        let mut payload = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&payload).map_err(io)?;
    }
    Ok(())
}

pub(crate) fn read_tensors(c: &mut Cursor<'_>) -> Result<Vec<(String, Tensor<f32>)>> {
    c.expect_magic(WEIGHTS_MAGIC)?;
    let version = c.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(Error::Format(format!(
            "unsupported weight format version {version} (expected {WEIGHTS_VERSION})"
        )));
    }
    let count = c.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = c.u8()? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Format(format!("parameter `{name}` has rank {rank}")));
        }
        let dims = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("parameter `{name}` is too large")))?;
        let bytes = c.take(len.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        let tensor = Tensor::new(&dims, data).map_err(|e| Error::Format(format!("parameter `{name}`: {e}")))?;
        out.push((name, tensor));
    }
    Ok(out)
}

pub fn encode_weights(state: &ModelState<f32>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let tensors: Vec<(&str, &Tensor<f32>)> = state.iter().collect();
    write_tensors(&mut buf, tensors.into_iter())?;
    seal(&mut buf);
    Ok(buf)
}

pub fn decode_weights(bytes: &[u8]) -> Result<ModelState<f32>> {
    // Magic and version are checked before the checksum so that a foreign
    // or future file gets the more specific message.
    let mut header = Cursor::new(bytes);
    header.expect_magic(WEIGHTS_MAGIC)?;
    let version = header.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(Error::Format(format!(
            "unsupported weight format version {version} (expected {WEIGHTS_VERSION})"
        )));
    }
    let mut c = Cursor::new(unseal(bytes)?);
    let tensors = read_tensors(&mut c)?;
    if !c.is_at_end() {
        return Err(Error::Format("trailing bytes after weight table".into()));
    }
    let mut state = ModelState::default();
    for (name, t) in tensors {
        if state.contains(&name) {
            return Err(Error::Format(format!("duplicate parameter `{name}`")));
        }
        state.insert(name, t);
    }
    Ok(state)
}

pub fn save_weights(state: &ModelState<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_weights(state)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelState<f32>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes)
}

impl ModelState<f32> {
    /// Replaces this state's tensors with those in `path` after checking
    /// them against `config`. On any error `self` is left untouched.
    pub fn load_from(&mut self, path: impl AsRef<Path>, config: &ModelConfig) -> Result<()> {
        let loaded = load_weights(path)?;
        loaded.check_against(config)?;
        let frozen = self.frozen().clone();
        *self = loaded;
        self.set_frozen(frozen)
    }

    /// Copies every backbone tensor from a weight file (e.g. converted
    /// pretrained weights). All shapes are checked before anything changes.
    pub fn load_backbone(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let loaded = load_weights(path)?;
        let mut updates = Vec::new();
        for (name, current) in self.iter().filter(|(n, _)| n.starts_with(super::config::BACKBONE_PREFIX)) {
            let src = loaded.get(name)?;
            if src.shape() != current.shape() {
                return Err(Error::Parameter {
                    name: name.into(),
                    reason: format!("pretrained shape {:?}, expected {:?}", src.shape(), current.shape()),
                });
            }
            updates.push((name.to_string(), src.clone()));
        }
        for (name, t) in updates {
            *self.get_mut(&name)? = t;
        }
        Ok(())
    }
}
