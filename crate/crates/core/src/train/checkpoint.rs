//! Training checkpoints.
//!
//! ```text
//! magic    b"OSTC"
//! version  u32 = 1
//! seed     u64
//! frozen   u32 count, count x (u16 len, name)
//! weights  weight-file block (see model::weights)
//! adam     u64 t, f64 lr, beta1, beta2, eps, then two weight-file blocks (m, v)
//! history  u32 count, count x (u32 epoch, f64 train_loss, train_acc, val_loss, val_acc, wall_time_s)
//! crc32    u32 over every preceding byte
//! ```

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use super::adam::AdamState;
use super::{EpochRecord, TrainHistory};
use crate::error::{Error, Result};
use crate::model::{read_tensors, seal, unseal, write_tensors, write_u32, Cursor, ModelState};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OSTC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to continue a run: per-epoch randomness is derived
/// from `(seed, epoch)`, so no generator state is stored.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub seed: u64,
    pub state: ModelState<f32>,
    pub opt: AdamState,
    pub history: TrainHistory,
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        let io = |e: std::io::Error| Error::Format(format!("write failed: {e}"));
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        write_u32(&mut buf, CHECKPOINT_VERSION).map_err(io)?;
        buf.extend_from_slice(&self.seed.to_le_bytes());
        write_u32(&mut buf, self.state.frozen().len() as u32).map_err(io)?;
        for name in self.state.frozen() {
            buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
        }
        let params: Vec<_> = self.state.iter().collect();
        write_tensors(&mut buf, params.into_iter())?;

        buf.extend_from_slice(&self.opt.t.to_le_bytes());
        for v in [self.opt.lr, self.opt.beta1, self.opt.beta2, self.opt.eps] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for moments in [&self.opt.m, &self.opt.v] {
            write_tensors(&mut buf, moments.iter().map(|(n, t)| (n.as_str(), t)))?;
        }

        write_u32(&mut buf, self.history.records.len() as u32).map_err(io)?;
        for r in &self.history.records {
            write_u32(&mut buf, r.epoch as u32).map_err(io)?;
            for v in [r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.wall_time_s] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        seal(&mut buf);
        Ok(buf)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(bytes);
        c.expect_magic(CHECKPOINT_MAGIC)?;
        let version = c.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let mut c = Cursor::new(unseal(bytes)?);
        c.take(8)?;
        let seed = c.u64()?;
        let mut frozen = BTreeSet::new();
        for _ in 0..c.u32()? {
            let len = c.u16()? as usize;
            let name = std::str::from_utf8(c.take(len)?).map_err(|_| Error::Format("frozen name is not UTF-8".into()))?;
            frozen.insert(name.to_string());
        }
        let mut state = ModelState::default();
        for (name, t) in read_tensors(&mut c)? {
            state.insert(name, t);
        }
        state.set_frozen(frozen).map_err(|e| Error::Format(e.to_string()))?;

        let t = c.u64()?;
        let [lr, beta1, beta2, eps] = [c.f64()?, c.f64()?, c.f64()?, c.f64()?];
        let m = read_tensors(&mut c)?.into_iter().collect();
        let v = read_tensors(&mut c)?.into_iter().collect();
        let opt = AdamState {
            lr,
            beta1,
            beta2,
            eps,
            t,
            m,
            v,
        };
        opt.check_against(&state).map_err(|e| Error::Format(e.to_string()))?;

        let mut records = Vec::new();
        for _ in 0..c.u32()? {
            let epoch = c.u32()? as usize;
            let [train_loss, train_acc, val_loss, val_acc, wall_time_s] = [c.f64()?, c.f64()?, c.f64()?, c.f64()?, c.f64()?];
            records.push(EpochRecord {
                epoch,
                train_loss,
                train_acc,
                val_loss,
                val_acc,
                wall_time_s,
            });
        }
        if !c.is_at_end() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self {
            seed,
            state,
            opt,
            history: TrainHistory { records },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.encode()?;
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&bytes))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}
