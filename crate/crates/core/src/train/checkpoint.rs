//! Binary checkpoint files.
//!
//! ```text
//! magic "LSEGCKPT" | version u32 | kind u8 | meta_len u64 | meta (JSON)
//! | count u64 | count x (name_len u32 | name | rank u32 | dims u64.. | f64..)
//! | crc32 u32 over every preceding byte
//! ```
//!
//! All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamParams, OptimizerKind, OptimizerState, Plateau, TrainConfig, TrainLog};
use crate::error::{Error, Result};
use crate::model::{build, ArchConfig, NetworkGraph};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"LSEGCKPT";
pub const FORMAT_VERSION: u32 = 1;
const KIND_PARAMS: u8 = 1;
const KIND_STATE: u8 = 2;
const MOMENT1: &str = "adam.m/";
const MOMENT2: &str = "adam.v/";

/// Complete resumable training state.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub params: ParamStore,
    pub optimizer: OptimizerState,
    pub plateau: Option<Plateau>,
    pub log: TrainLog,
    pub best_val_loss: Option<f64>,
    pub best_epoch: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct ParamsMeta {
    arch: ArchConfig,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    config: TrainConfig,
    epoch: usize,
    optimizer_kind: OptimizerKind,
    optimizer_lr: f64,
    optimizer_adam: AdamParams,
    optimizer_step: u64,
    plateau: Option<Plateau>,
    log: TrainLog,
    best_val_loss: Option<f64>,
    best_epoch: Option<usize>,
}

struct CrcWriter<W> {
    inner: W,
    hasher: crc32fast::Hasher,
}

impl<W: Write> Write for CrcWriter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

struct CrcReader<R> {
    inner: R,
    hasher: crc32fast::Hasher,
    consumed: u64,
}

impl<R: Read> Read for CrcReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.hasher.update(&buf[..n]);
        self.consumed += n as u64;
        Ok(n)
    }
}

fn corrupt(what: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("corrupt file: {what}"))
}

fn write_file(path: &Path, kind: u8, meta: &[u8], tensors: &[(String, &Tensor)]) -> Result<()> {
    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut w = CrcWriter {
            inner: BufWriter::new(File::create(&tmp)?),
            hasher: crc32fast::Hasher::new(),
        };
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&[kind])?;
        w.write_all(&(meta.len() as u64).to_le_bytes())?;
        w.write_all(meta)?;
        w.write_all(&(tensors.len() as u64).to_le_bytes())?;
        for (name, t) in tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        let crc = w.hasher.clone().finalize();
        let mut inner = w.inner;
        inner.write_all(&crc.to_le_bytes())?;
        inner.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Parsed {
    kind: u8,
    meta: Vec<u8>,
    tensors: Vec<(String, Tensor)>,
}

fn read_file(path: &Path) -> Result<Parsed> {
    let file = File::open(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let len = file.metadata()?.len();
    let mut r = CrcReader {
        inner: BufReader::new(file),
        hasher: crc32fast::Hasher::new(),
        consumed: 0,
    };
    let remaining = |r: &CrcReader<_>| len.saturating_sub(r.consumed + 4);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| corrupt("truncated header"))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    let mut kind = [0u8];
    r.read_exact(&mut kind).map_err(|_| corrupt("truncated header"))?;
    let meta_len = read_u64(&mut r)?;
    if meta_len > remaining(&r) {
        return Err(corrupt("metadata length exceeds file size"));
    }
    let mut meta = vec![0u8; meta_len as usize];
    r.read_exact(&mut meta).map_err(|_| corrupt("truncated metadata"))?;
    let count = read_u64(&mut r)?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as u64;
        if name_len > remaining(&r) {
            return Err(corrupt("name length exceeds file size"));
        }
        let mut name = vec![0u8; name_len as usize];
        r.read_exact(&mut name).map_err(|_| corrupt("truncated tensor name"))?;
        let name = String::from_utf8(name).map_err(|_| corrupt("tensor name is not UTF-8"))?;
        let rank = read_u32(&mut r)? as u64;
        if rank * 8 > remaining(&r) {
            return Err(corrupt("rank exceeds file size"));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1u64, |a, &d| a.checked_mul(d as u64))
            .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= remaining(&r)))
            .ok_or_else(|| corrupt(format!("tensor `{name}` is larger than the file")))?;
        let mut bytes = vec![0u8; numel as usize * 8];
        r.read_exact(&mut bytes).map_err(|_| corrupt("truncated tensor data"))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| corrupt(e))?;
        tensors.push((name, t));
    }
    let expected = r.hasher.clone().finalize();
    let mut crc = [0u8; 4];
    r.inner.read_exact(&mut crc).map_err(|_| corrupt("missing checksum"))?;
    let mut rest = Vec::new();
    r.inner.read_to_end(&mut rest)?;
    if u32::from_le_bytes(crc) != expected || !rest.is_empty() {
        return Err(Error::Checkpoint(format!("checksum mismatch in {}", path.display())));
    }
    Ok(Parsed {
        kind: kind[0],
        meta,
        tensors,
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| corrupt("truncated"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| corrupt("truncated"))?;
    Ok(u64::from_le_bytes(b))
}

fn expect_kind(p: &Parsed, kind: u8, path: &Path) -> Result<()> {
    if p.kind != kind {
        let what = |k| if k == KIND_PARAMS { "model weights" } else { "training state" };
        return Err(Error::Checkpoint(format!(
            "{} holds {}, expected {}",
            path.display(),
            what(p.kind),
            what(kind)
        )));
    }
    Ok(())
}

fn meta_json<T: Serialize>(m: &T) -> Vec<u8> {
    serde_json::to_vec(m).expect("metadata is serializable")
}

fn parse_meta<'a, T: Deserialize<'a>>(bytes: &'a [u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| corrupt(format!("metadata: {e}")))
}

fn named(store: &ParamStore) -> Vec<(String, &Tensor)> {
    store.iter().map(|(_, n, t)| (n.to_string(), t)).collect()
}

/// Writes model weights with the architecture needed to rebuild the graph.
pub fn save_params(path: &Path, arch: &ArchConfig, store: &ParamStore) -> Result<()> {
    let meta = meta_json(&ParamsMeta { arch: arch.clone() });
    write_file(path, KIND_PARAMS, &meta, &named(store))
}

pub fn load_params(path: &Path) -> Result<(ArchConfig, ParamStore)> {
    let p = read_file(path)?;
    expect_kind(&p, KIND_PARAMS, path)?;
    let meta: ParamsMeta = parse_meta(&p.meta)?;
    let mut store = ParamStore::new();
    for (name, t) in p.tensors {
        store.insert(name, t).map_err(|e| corrupt(e))?;
    }
    Ok((meta.arch, store))
}

/// Rebuilds the recorded architecture and installs the saved weights.
pub fn load_model(path: &Path) -> Result<NetworkGraph> {
    let (arch, store) = load_params(path)?;
    let mut graph = build(&arch)?;
    graph.params_mut().assign_from(&store)?;
    Ok(graph)
}

pub fn save_state(path: &Path, state: &TrainState) -> Result<()> {
    let opt = &state.optimizer;
    let meta = meta_json(&StateMeta {
        config: state.config.clone(),
        epoch: state.epoch,
        optimizer_kind: opt.kind,
        optimizer_lr: opt.lr,
        optimizer_adam: opt.adam,
        optimizer_step: opt.step,
        plateau: state.plateau.clone(),
        log: state.log.clone(),
        best_val_loss: state.best_val_loss,
        best_epoch: state.best_epoch,
    });
    let mut tensors = named(&state.params);
    for (prefix, moments) in [(MOMENT1, &opt.m), (MOMENT2, &opt.v)] {
        for ((_, n, _), t) in state.params.iter().zip(moments) {
            tensors.push((format!("{prefix}{n}"), t));
        }
    }
    write_file(path, KIND_STATE, &meta, &tensors)
}

pub fn load_state(path: &Path) -> Result<TrainState> {
    let p = read_file(path)?;
    expect_kind(&p, KIND_STATE, path)?;
    let meta: StateMeta = parse_meta(&p.meta)?;
    let mut params = ParamStore::new();
    let (mut m, mut v) = (Vec::new(), Vec::new());
    for (name, t) in p.tensors {
        if name.starts_with(MOMENT1) {
            m.push(t);
        } else if name.starts_with(MOMENT2) {
            v.push(t);
        } else {
            params.insert(name, t).map_err(|e| corrupt(e))?;
        }
    }
    if m.len() != v.len() || (!m.is_empty() && m.len() != params.len()) {
        return Err(corrupt("optimizer moments do not match parameters"));
    }
    Ok(TrainState {
        config: meta.config,
        epoch: meta.epoch,
        params,
        optimizer: OptimizerState {
            kind: meta.optimizer_kind,
            lr: meta.optimizer_lr,
            adam: meta.optimizer_adam,
            step: meta.optimizer_step,
            m,
            v,
        },
        plateau: meta.plateau,
        log: meta.log,
        best_val_loss: meta.best_val_loss,
        best_epoch: meta.best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ArchConfig;
    use crate::train::{EpochRecord, PlateauConfig, Preset};

    fn small_arch() -> ArchConfig {
        ArchConfig::simple_unet(32).with_base(2).with_seed(5)
    }

    #[test]
    fn params_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let g = build(&small_arch()).unwrap();
        save_params(&path, &g.config, g.params()).unwrap();
        let (arch, store) = load_params(&path).unwrap();
        assert_eq!(arch, g.config);
        for ((_, a, x), (_, b, y)) in store.iter().zip(g.params().iter()) {
            assert_eq!(a, b);
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(x), bits(y));
        }
        let back = load_model(&path).unwrap();
        assert_eq!(back.params(), g.params());
    }

    #[test]
    fn flipped_byte_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let g = build(&small_arch()).unwrap();
        save_params(&path, &g.config, g.params()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        std::fs::write(&path, &bytes).unwrap();
        let err = load_params(&path).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    }

    #[test]
    fn version_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let g = build(&small_arch()).unwrap();
        save_params(&path, &g.config, g.params()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 9;
        std::fs::write(&path, &bytes).unwrap();
        let msg = load_params(&path).unwrap_err().to_string();
        assert!(msg.contains("version 9"), "{msg}");
    }

    #[test]
    fn mismatched_architecture_is_a_shape_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let g = build(&small_arch()).unwrap();
        save_params(&path, &g.config, g.params()).unwrap();
        let (_, store) = load_params(&path).unwrap();
        let mut other = build(&small_arch().with_kernel(5)).unwrap();
        let err = other.params_mut().assign_from(&store).unwrap_err();
        assert!(matches!(err, Error::CheckpointShape { .. }), "{err}");
    }

    #[test]
    fn state_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ckpt");
        let g = build(&small_arch()).unwrap();
        let mut opt = OptimizerState::new(OptimizerKind::Adam, 1e-3, AdamParams::default(), g.params());
        opt.step = 7;
        for (k, t) in opt.m.iter_mut().enumerate() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.1 / (k + 1) as f64);
        }
        let mut plateau = Plateau::new(PlateauConfig::default(), 1e-3);
        plateau.update(0.3);
        plateau.update(0.31);
        let mut log = TrainLog::default();
        log.push(EpochRecord {
            epoch: 1,
            train_loss: 0.7,
            train_dice: 1.0 / 3.0,
            val_loss: 0.3,
            val_dice: 0.1,
            lr: 1e-3,
        })
        .unwrap();
        let state = TrainState {
            config: TrainConfig::preset(Preset::Exp1),
            epoch: 1,
            params: g.params().clone(),
            optimizer: opt,
            plateau: Some(plateau),
            log,
            best_val_loss: Some(0.3),
            best_epoch: Some(1),
        };
        save_state(&path, &state).unwrap();
        assert_eq!(load_state(&path).unwrap(), state);
        assert!(load_params(&path).is_err());
    }
}
