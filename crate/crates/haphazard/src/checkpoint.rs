//! Versioned binary snapshots of a pool model and its normalizer
//! statistics.
//!
//! The format is a flat little-endian stream: magic, version, a
//! fingerprint of the writing configuration, then every piece of mutable
//! state. Slot parameters are reproducible from (seed, feature id), so no
//! generator state is stored; reloading under the same configuration
//! resumes the run bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::normalize::{FeatureStats, StreamStats};
use crate::numerics::AdamState;
use crate::pool::{FeatureSlot, PoolConfig, PoolModel};
use crate::streams::FeatureId;

const MAGIC: [u8; 4] = *b"HZCK";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on checkpoint: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checkpoint was written by a different configuration")]
    ConfigMismatch,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn fingerprint(tag: &str, cfg: &PoolConfig) -> u64 {
    fnv1a(format!("{tag};{}", cfg.canonical()).as_bytes())
}

fn w_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn w_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn w_f64(w: &mut impl Write, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn w_vec(w: &mut impl Write, v: &[f64]) -> std::io::Result<()> {
    w_u64(w, v.len() as u64)?;
    for &x in v {
        w_f64(w, x)?;
    }
    Ok(())
}

fn w_opt_state(w: &mut impl Write, opt: &AdamState) -> std::io::Result<()> {
    w_vec(w, &opt.m)?;
    w_vec(w, &opt.v)?;
    w_u64(w, opt.step)
}

fn r_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn r_u64(r: &mut impl Read) -> Result<u64, CheckpointError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn r_f64(r: &mut impl Read) -> Result<f64, CheckpointError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn r_vec(r: &mut impl Read, cap: u64) -> Result<Vec<f64>, CheckpointError> {
    let len = r_u64(r)?;
    if len > cap {
        return Err(CheckpointError::Corrupt(format!("vector length {len} exceeds bound {cap}")));
    }
    (0..len).map(|_| r_f64(r)).collect()
}

fn r_opt_state(r: &mut impl Read, cap: u64) -> Result<AdamState, CheckpointError> {
    let m = r_vec(r, cap)?;
    let v = r_vec(r, cap)?;
    let step = r_u64(r)?;
    Ok(AdamState { m, v, step })
}

/// Upper bound on any stored vector length; rejects nonsense lengths from
/// corrupt files before allocation.
const VEC_CAP: u64 = 1 << 32;

/// Writes the model and normalizer state to `path`. `tag` names the run
/// configuration beyond the model (dataset, schedule, seed and so on) and
/// is folded into the stored fingerprint.
pub fn save(
    path: &Path,
    tag: &str,
    model: &PoolModel,
    stats: &StreamStats,
) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w_u32(&mut w, VERSION)?;
    w_u64(&mut w, fingerprint(tag, &model.cfg))?;
    w_u64(&mut w, model.seed)?;
    w_u64(&mut w, model.t)?;
    w_vec(&mut w, &model.c)?;
    w_vec(&mut w, &model.h)?;
    w_vec(&mut w, &model.head)?;
    w_opt_state(&mut w, &model.head_opt)?;
    w_u64(&mut w, model.over_capacity_events)?;
    w_u64(&mut w, model.dropped.len() as u64)?;
    for &(t, id) in &model.dropped {
        w_u64(&mut w, t)?;
        w_u32(&mut w, id)?;
    }
    w_u64(&mut w, model.slots.len() as u64)?;
    for (&id, slot) in &model.slots {
        w_u32(&mut w, id)?;
        w_vec(&mut w, &slot.params)?;
        w_opt_state(&mut w, &slot.opt)?;
        w_vec(&mut w, &slot.h)?;
        match slot.last_seen {
            Some(seen) => {
                w_u32(&mut w, 1)?;
                w_u64(&mut w, seen)?;
            }
            None => w_u32(&mut w, 0)?,
        }
        w_u64(&mut w, slot.seen_count)?;
    }
    w_u64(&mut w, stats.features.len() as u64)?;
    for (&id, fs) in &stats.features {
        let (count, mean, m2, min, max) = fs.raw_parts();
        w_u32(&mut w, id)?;
        w_u64(&mut w, count)?;
        w_f64(&mut w, mean)?;
        w_f64(&mut w, m2)?;
        w_f64(&mut w, min)?;
        w_f64(&mut w, max)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint back. `tag` and `cfg` must match what was saved;
/// the fingerprint check refuses state written by a different setup.
pub fn load(
    path: &Path,
    tag: &str,
    cfg: PoolConfig,
) -> Result<(PoolModel, StreamStats), CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    if r_u64(&mut r)? != fingerprint(tag, &cfg) {
        return Err(CheckpointError::ConfigMismatch);
    }
    let seed = r_u64(&mut r)?;
    let t = r_u64(&mut r)?;
    let c = r_vec(&mut r, VEC_CAP)?;
    let h = r_vec(&mut r, VEC_CAP)?;
    let head = r_vec(&mut r, VEC_CAP)?;
    let head_opt = r_opt_state(&mut r, VEC_CAP)?;
    let over_capacity_events = r_u64(&mut r)?;
    let n_dropped = r_u64(&mut r)?;
    let mut dropped = Vec::new();
    for _ in 0..n_dropped {
        let t = r_u64(&mut r)?;
        let id = r_u32(&mut r)?;
        dropped.push((t, id));
    }
    let n_slots = r_u64(&mut r)?;
    let mut slots = std::collections::BTreeMap::new();
    for _ in 0..n_slots {
        let id: FeatureId = r_u32(&mut r)?;
        let params = r_vec(&mut r, VEC_CAP)?;
        let opt = r_opt_state(&mut r, VEC_CAP)?;
        let h = r_vec(&mut r, VEC_CAP)?;
        let last_seen = match r_u32(&mut r)? {
            0 => None,
            1 => Some(r_u64(&mut r)?),
            other => {
                return Err(CheckpointError::Corrupt(format!("bad last_seen flag {other}")))
            }
        };
        let seen_count = r_u64(&mut r)?;
        slots.insert(id, FeatureSlot { params, opt, h, last_seen, seen_count });
    }
    let n_stats = r_u64(&mut r)?;
    let mut stats = StreamStats::new();
    for _ in 0..n_stats {
        let id: FeatureId = r_u32(&mut r)?;
        let count = r_u64(&mut r)?;
        let mean = r_f64(&mut r)?;
        let m2 = r_f64(&mut r)?;
        let min = r_f64(&mut r)?;
        let max = r_f64(&mut r)?;
        stats.features.insert(id, FeatureStats::from_raw_parts(count, mean, m2, min, max));
    }
    let mut trailer = [0u8; 1];
    if r.read(&mut trailer)? != 0 {
        return Err(CheckpointError::Corrupt("trailing bytes after state".to_string()));
    }
    let model = PoolModel {
        cfg,
        seed,
        slots,
        c,
        h,
        head,
        head_opt,
        t,
        dropped,
        over_capacity_events,
    };
    Ok((model, stats))
}
