//! The `.pfck` checkpoint file. All integers and floats little-endian.
//!
//! ```text
//! "PFCK" | version u32 | descriptor str | epoch u32 | mean f32×3 | std f32×3
//! tensor count u32 | per tensor: name str | ndim u32 | dims u64×ndim | data f32×n
//! has_adam u8 | beta1 beta2 eps f32 | step u64 | m: count u32, tensors | v: likewise
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8. Adam moments are stored
//! like named tensors without the name.

use std::path::Path;

use shapeiq_core::models::{Architecture, Checkpoint, Model, ModelError};
use shapeiq_core::nn::{AdamConfig, AdamState, Tensor};
use shapeiq_core::qgen::NormalizationStats;

pub const MAGIC: &[u8; 4] = b"PFCK";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        v.iter().for_each(|x| self.0.extend_from_slice(&x.to_le_bytes()));
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn tensor(&mut self, t: &Tensor) {
        self.u32(t.shape().len() as u32);
        t.shape().iter().for_each(|&d| self.u64(d as u64));
        self.f32s(t.data());
    }
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.0.len() < n {
            return Err(CheckpointError::Corrupt("unexpected end of file".into()));
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, CheckpointError> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| CheckpointError::Corrupt("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn str(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Corrupt("invalid UTF-8".into()))
    }
    fn tensor(&mut self) -> Result<Tensor, CheckpointError> {
        let ndim = self.u32()? as usize;
        if ndim > 8 {
            return Err(CheckpointError::Corrupt(format!("{ndim} dimensions")));
        }
        let dims: Vec<usize> = (0..ndim).map(|_| self.u64().map(|d| d as usize)).collect::<Result<_, _>>()?;
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| CheckpointError::Corrupt("size overflow".into()))?;
        let data = self.f32s(n)?;
        Tensor::from_vec(&dims, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))
    }
    fn count(&mut self) -> Result<usize, CheckpointError> {
        let n = self.u32()? as usize;
        // Every entry takes at least four bytes; reject absurd counts early.
        if n > self.0.len() / 4 {
            return Err(CheckpointError::Corrupt(format!("count {n} exceeds the file")));
        }
        Ok(n)
    }
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.str(&ck.arch.descriptor());
    w.u32(ck.epoch);
    w.f32s(&ck.stats.mean);
    w.f32s(&ck.stats.std);
    w.u32(ck.tensors.len() as u32);
    for (name, t) in &ck.tensors {
        w.str(name);
        w.tensor(t);
    }
    match &ck.adam {
        None => w.0.push(0),
        Some((config, state)) => {
            w.0.push(1);
            w.f32s(&[config.beta1, config.beta2, config.eps]);
            w.u64(state.step);
            for moments in [&state.m, &state.v] {
                w.u32(moments.len() as u32);
                moments.iter().for_each(|t| w.tensor(t));
            }
        }
    }
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader(bytes);
    if r.take(4).map_err(|_| CheckpointError::Magic)? != MAGIC {
        return Err(CheckpointError::Magic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let arch = Architecture::parse(&r.str()?)?;
    let epoch = r.u32()?;
    let mean: [f32; 3] = r.f32s(3)?.try_into().unwrap();
    let std: [f32; 3] = r.f32s(3)?.try_into().unwrap();
    let stats = NormalizationStats::new(mean, std).ok_or_else(|| CheckpointError::Corrupt("invalid normalization stats".into()))?;
    let n = r.count()?;
    let mut tensors = Vec::with_capacity(n);
    for _ in 0..n {
        let name = r.str()?;
        tensors.push((name, r.tensor()?));
    }
    let adam = match r.u8()? {
        0 => None,
        1 => {
            let c = r.f32s(3)?;
            let config = AdamConfig { beta1: c[0], beta2: c[1], eps: c[2] };
            let step = r.u64()?;
            let mut moments = [Vec::new(), Vec::new()];
            for m in &mut moments {
                let n = r.count()?;
                for _ in 0..n {
                    m.push(r.tensor()?);
                }
            }
            let [m, v] = moments;
            Some((config, AdamState { step, m, v }))
        }
        b => return Err(CheckpointError::Corrupt(format!("optimizer flag {b}"))),
    };
    if !r.0.is_empty() {
        return Err(CheckpointError::Corrupt(format!("{} trailing bytes", r.0.len())));
    }
    Ok(Checkpoint { arch, tensors, adam, stats, epoch })
}

pub fn save(path: &Path, ck: &Checkpoint) -> Result<(), CheckpointError> {
    let bytes = encode(ck);
    crate::write_atomic(path, |w| w.write_all(&bytes))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    decode(&std::fs::read(path)?)
}

/// Loads a checkpoint and rebuilds its network.
pub fn load_model(path: &Path) -> Result<(Model, Checkpoint), CheckpointError> {
    let ck = load(path)?;
    Ok((Model::from_checkpoint(&ck)?, ck))
}
