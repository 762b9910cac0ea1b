//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! "SSPC" | u32 version
//! u32 n_meta  | n_meta × (u32 len, key utf-8, u32 len, value utf-8)
//! u32 n_param | n_param × (u32 len, name utf-8, u8 dtype, u8 flags,
//!                          u32 rank, rank × u64 extent, f32 data)
//! ```
//!
//! dtype 0 is f32; flag bit 0 marks a trainable parameter (clear for
//! buffers such as batch-norm running statistics).

use std::fs;
use std::io;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::models::{Detector, DetectorSpec};

use super::HarnessError;

pub const MAGIC: &[u8; 4] = b"SSPC";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;
const FLAG_TRAINABLE: u8 = 1;
const MAX_RANK: u32 = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor<f32>,
    pub trainable: bool,
}

/// Training metadata stored alongside the parameters.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epoch: u64,
    /// JSON of the full training configuration.
    pub config: String,
    /// JSON of the [`DetectorSpec`] needed to rebuild the networks.
    pub spec: String,
}

impl CheckpointMeta {
    /// Hex SHA-256 of `config`.
    pub fn config_digest(&self) -> String {
        Sha256::digest(self.config.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: Vec<ParamEntry>,
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let meta = [
        ("seed", ckpt.meta.seed.to_string()),
        ("epoch", ckpt.meta.epoch.to_string()),
        ("config", ckpt.meta.config.clone()),
        ("config_digest", ckpt.meta.config_digest()),
        ("spec", ckpt.meta.spec.clone()),
    ];
    buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    for (k, v) in &meta {
        put_str(&mut buf, k);
        put_str(&mut buf, v);
    }
    buf.extend_from_slice(&(ckpt.params.len() as u32).to_le_bytes());
    for p in &ckpt.params {
        put_str(&mut buf, &p.name);
        buf.push(DTYPE_F32);
        buf.push(if p.trainable { FLAG_TRAINABLE } else { 0 });
        buf.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &e in p.value.shape() {
            buf.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> io::Result<&'a [u8]> {
        if self.0.len() < n {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "checkpoint is truncated"));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn u8(&mut self) -> io::Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> io::Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> io::Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, DecodeError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| DecodeError::Format("invalid UTF-8".into()))
    }
}

enum DecodeError {
    Io(io::Error),
    Format(String),
    Header(HarnessError),
}

impl From<io::Error> for DecodeError {
    fn from(e: io::Error) -> Self {
        DecodeError::Io(e)
    }
}

fn decode_inner(bytes: &[u8]) -> Result<Checkpoint, DecodeError> {
    let mut r = Reader(bytes);
    if r.take(4)? != MAGIC {
        return Err(DecodeError::Header(HarnessError::BadMagic));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(DecodeError::Header(HarnessError::VersionMismatch { found: version, expected: CHECKPOINT_VERSION }));
    }
    let mut meta = CheckpointMeta::default();
    let mut digest = None;
    for _ in 0..r.u32()? {
        let (k, v) = (r.string()?, r.string()?);
        let num = |v: &str| v.parse::<u64>().map_err(|_| DecodeError::Format(format!("bad {k} value {v:?}")));
        match k.as_str() {
            "seed" => meta.seed = num(&v)?,
            "epoch" => meta.epoch = num(&v)?,
            "config" => meta.config = v,
            "config_digest" => digest = Some(v),
            "spec" => meta.spec = v,
            _ => {}
        }
    }
    if digest.is_some_and(|d| d != meta.config_digest()) {
        return Err(DecodeError::Format("config digest does not match config".into()));
    }
    let n = r.u32()?;
    let mut params = Vec::new();
    for _ in 0..n {
        let name = r.string()?;
        let dtype = r.u8()?;
        if dtype != DTYPE_F32 {
            return Err(DecodeError::Format(format!("{name}: unsupported dtype {dtype}")));
        }
        let flags = r.u8()?;
        let rank = r.u32()?;
        if rank > MAX_RANK {
            return Err(DecodeError::Format(format!("{name}: rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let count = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
        let count = count.filter(|&c| c.checked_mul(4).is_some()).ok_or_else(|| DecodeError::Format(format!("{name}: extents overflow")))?;
        let raw = r.take(count * 4)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let value = Tensor::new(shape, data).map_err(|e| DecodeError::Format(e.to_string()))?;
        params.push(ParamEntry { name, value, trainable: flags & FLAG_TRAINABLE != 0 });
    }
    if !r.0.is_empty() {
        return Err(DecodeError::Format(format!("{} trailing bytes", r.0.len())));
    }
    Ok(Checkpoint { meta, params })
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint, HarnessError> {
    decode_inner(bytes).map_err(|e| match e {
        DecodeError::Io(e) => HarnessError::io(path, e),
        DecodeError::Format(m) => HarnessError::Checkpoint(m),
        DecodeError::Header(h) => h,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(ckpt)).map_err(|e| HarnessError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, HarnessError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// Checkpoint holding every parameter and buffer of `det`.
pub fn detector_checkpoint(det: &Detector, seed: u64, epoch: u64, config: String) -> Checkpoint {
    let params = det
        .store
        .iter()
        .map(|(_, p)| ParamEntry { name: p.name.clone(), value: p.value.clone(), trainable: p.trainable })
        .collect();
    let spec = serde_json::to_string(&det.spec()).expect("spec serializes");
    Checkpoint { meta: CheckpointMeta { seed, epoch, config, spec }, params }
}

pub fn save_detector(det: &Detector, meta: &CheckpointMeta, path: impl AsRef<Path>) -> Result<(), HarnessError> {
    save_checkpoint(&detector_checkpoint(det, meta.seed, meta.epoch, meta.config.clone()), path)
}

/// Rebuilds the networks described by the stored spec and fills in every
/// parameter; missing, extra or misshapen entries are errors.
pub fn detector_from_checkpoint(ckpt: &Checkpoint) -> Result<Detector, HarnessError> {
    let spec: DetectorSpec =
        serde_json::from_str(&ckpt.meta.spec).map_err(|e| HarnessError::Checkpoint(format!("spec: {e}")))?;
    let mut det = Detector::new(&spec, ckpt.meta.seed)?;
    if ckpt.params.len() != det.store.len() {
        return Err(HarnessError::Checkpoint(format!(
            "{} parameters stored, architecture has {}",
            ckpt.params.len(),
            det.store.len()
        )));
    }
    for p in &ckpt.params {
        let id = det.store.id(&p.name).ok_or_else(|| HarnessError::Checkpoint(format!("unexpected parameter {}", p.name)))?;
        let slot = det.store.get_mut(id);
        if slot.value.shape() != p.value.shape() || slot.trainable != p.trainable {
            return Err(HarnessError::Checkpoint(format!("parameter {} does not match the architecture", p.name)));
        }
        slot.value = p.value.clone();
    }
    Ok(det)
}

pub fn load_detector(path: impl AsRef<Path>) -> Result<(Detector, CheckpointMeta), HarnessError> {
    let ckpt = load_checkpoint(path)?;
    let det = detector_from_checkpoint(&ckpt)?;
    Ok((det, ckpt.meta))
}
