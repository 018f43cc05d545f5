//! Checkpointing. A checkpoint freezes everything a training run needs to
//! continue bit-exactly: the full config (embedded as JSON, plus an FNV-1a
//! hash for quick mismatch detection), every named parameter of all three
//! stores, both optimizers, the recurrent carries, and both RNG streams.

use std::fs;
use std::path::Path;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::io::{tensor_from_bytes, tensor_to_bytes};
use crate::model::CarryState;
use crate::motion::MotionState;
use crate::params::ParamStore;
use crate::predictor::PredictorState;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::Trainer;
use crate::Scalar;

pub const MAGIC: &[u8; 4] = b"AVCK";
pub const VERSION: u32 = 1;

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub fn config_hash(cfg: &ExperimentConfig) -> u64 {
    fnv1a64(cfg.canonical_json().as_bytes())
}

/// Header fields readable without reconstructing the trainer.
#[derive(Debug, Clone)]
pub struct CheckpointMeta {
    pub version: u32,
    pub config_hash: u64,
    pub config_json: String,
    pub iteration: u64,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }
    fn tensor<T: Scalar>(&mut self, t: &Tensor<T>) {
        self.bytes(&tensor_to_bytes(t));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u64()? as usize;
        self.take(n)
    }
    fn tensor<T: Scalar>(&mut self) -> Result<Tensor<T>> {
        tensor_from_bytes(self.bytes()?)
    }
}

fn write_store<T: Scalar>(
    w: &mut Writer,
    store: &ParamStore<T>,
    adam: Option<(&[Tensor<T>], &[Tensor<T>])>,
) {
    w.u64(store.len() as u64);
    for id in 0..store.len() {
        let e = store.entry(id);
        w.bytes(e.name.as_bytes());
        w.u8(e.trainable as u8);
        w.tensor(&e.value);
        if let Some((m, v)) = adam {
            w.tensor(&m[id]);
            w.tensor(&v[id]);
        }
    }
}

/// Restore one section into an existing (freshly initialized) store by name.
/// Returns the optimizer moments in store order when requested.
fn read_store<T: Scalar>(
    r: &mut Reader,
    store: &mut ParamStore<T>,
    with_adam: bool,
) -> Result<Option<(Vec<Tensor<T>>, Vec<Tensor<T>>)>> {
    let count = r.u64()? as usize;
    if count != store.len() {
        return Err(Error::Checkpoint(format!(
            "store has {} parameters, checkpoint has {count}",
            store.len()
        )));
    }
    let mut m: Vec<Option<Tensor<T>>> = vec![None; store.len()];
    let mut v: Vec<Option<Tensor<T>>> = vec![None; store.len()];
    for _ in 0..count {
        let name = String::from_utf8(r.bytes()?.to_vec())
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let trainable = r.u8()? != 0;
        let value: Tensor<T> = r.tensor()?;
        let id = store
            .find(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter '{name}'")))?;
        let e = store.entry(id);
        if e.trainable != trainable || e.value.shape() != value.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter '{name}' does not match the configured model"
            )));
        }
        store.set(id, value);
        if with_adam {
            m[id] = Some(r.tensor()?);
            v[id] = Some(r.tensor()?);
        }
    }
    if with_adam {
        let unwrap = |xs: Vec<Option<Tensor<T>>>| xs.into_iter().map(|x| x.unwrap()).collect();
        Ok(Some((unwrap(m), unwrap(v))))
    } else {
        Ok(None)
    }
}

fn write_carry<T: Scalar>(w: &mut Writer, carry: &CarryState<T>) {
    w.u64(carry.motion.rings.len() as u64);
    for ring in &carry.motion.rings {
        w.u64(ring.len() as u64);
        for t in ring {
            w.tensor(t);
        }
    }
    match &carry.predictor {
        Some(p) => {
            w.u8(1);
            w.u64(p.hidden.len() as u64);
            for h in &p.hidden {
                w.tensor(h);
            }
        }
        None => w.u8(0),
    }
}

fn read_carry<T: Scalar>(r: &mut Reader) -> Result<CarryState<T>> {
    let layers = r.u64()? as usize;
    let mut rings = Vec::with_capacity(layers);
    for _ in 0..layers {
        let len = r.u64()? as usize;
        let mut ring = std::collections::VecDeque::with_capacity(len);
        for _ in 0..len {
            ring.push_back(r.tensor()?);
        }
        rings.push(ring);
    }
    let predictor = if r.u8()? != 0 {
        let cells = r.u64()? as usize;
        let mut hidden = Vec::with_capacity(cells);
        for _ in 0..cells {
            hidden.push(r.tensor()?);
        }
        Some(PredictorState { hidden })
    } else {
        None
    };
    Ok(CarryState { motion: MotionState { rings }, predictor })
}

fn rng_state(w: &mut Writer, rng: &Rng) {
    for word in rng.state() {
        w.u64(word);
    }
}

fn read_rng(r: &mut Reader) -> Result<Rng> {
    let mut s = [0u64; 4];
    for word in &mut s {
        *word = r.u64()?;
    }
    Ok(Rng::from_state(s))
}

pub fn save<T: Scalar>(path: impl AsRef<Path>, trainer: &Trainer<T>) -> Result<()> {
    let path = path.as_ref();
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    let json = trainer.cfg.canonical_json();
    w.u64(fnv1a64(json.as_bytes()));
    w.bytes(json.as_bytes());
    w.u64(trainer.iter);
    w.u64(trainer.cursor as u64);
    rng_state(&mut w, &trainer.noise_rng);
    rng_state(&mut w, &trainer.critic_rng);

    let (gm, gv, gstep) = trainer.adam_g.state();
    let (dm, dv, dstep) = trainer.adam_d.state();
    w.u64(gstep);
    w.u64(dstep);
    write_store(&mut w, &trainer.gen_store, Some((gm, gv)));
    write_store(&mut w, &trainer.critic_store, Some((dm, dv)));
    write_store(&mut w, &trainer.aux_store, None);
    write_carry(&mut w, &trainer.carry);

    let tmp = path.with_extension("avck.tmp");
    fs::write(&tmp, &w.0)
        .map_err(|e| Error::Checkpoint(format!("write {}: {e}", tmp.display())))?;
    fs::rename(&tmp, path)
        .map_err(|e| Error::Checkpoint(format!("rename to {}: {e}", path.display())))?;
    Ok(())
}

fn read_header<'a>(r: &mut Reader<'a>) -> Result<CheckpointMeta> {
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version} unsupported (expected {VERSION})"
        )));
    }
    let config_hash = r.u64()?;
    let config_json = String::from_utf8(r.bytes()?.to_vec())
        .map_err(|_| Error::Checkpoint("embedded config is not UTF-8".into()))?;
    if fnv1a64(config_json.as_bytes()) != config_hash {
        return Err(Error::Checkpoint("embedded config does not match its hash".into()));
    }
    let iteration = r.u64()?;
    Ok(CheckpointMeta { version, config_hash, config_json, iteration })
}

/// Read the header without touching parameters.
pub fn peek(path: impl AsRef<Path>) -> Result<CheckpointMeta> {
    let buf = fs::read(path.as_ref())
        .map_err(|e| Error::Checkpoint(format!("read {}: {e}", path.as_ref().display())))?;
    read_header(&mut Reader { buf: &buf, pos: 0 })
}

/// Rebuild a trainer in the exact saved state, from the embedded config.
pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<Trainer<T>> {
    let buf = fs::read(path.as_ref())
        .map_err(|e| Error::Checkpoint(format!("read {}: {e}", path.as_ref().display())))?;
    let mut r = Reader { buf: &buf, pos: 0 };
    let meta = read_header(&mut r)?;
    let cfg: ExperimentConfig = serde_json::from_str(&meta.config_json)
        .map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
    let mut trainer = Trainer::<T>::new(cfg)?;

    trainer.iter = meta.iteration;
    trainer.cursor = r.u64()? as usize;
    trainer.noise_rng = read_rng(&mut r)?;
    trainer.critic_rng = read_rng(&mut r)?;
    let gstep = r.u64()?;
    let dstep = r.u64()?;
    let (gm, gv) = read_store(&mut r, &mut trainer.gen_store, true)?.unwrap();
    let (dm, dv) = read_store(&mut r, &mut trainer.critic_store, true)?.unwrap();
    read_store(&mut r, &mut trainer.aux_store, false)?;
    trainer.adam_g.restore(gm, gv, gstep);
    trainer.adam_d.restore(dm, dv, dstep);
    trainer.carry = read_carry(&mut r)?;
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes after checkpoint payload".into()));
    }
    Ok(trainer)
}
