//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "WUEDCKPT"
//! version  u32
//! hlen     u64      length of the JSON header
//! header   hlen bytes of UTF-8 JSON
//! tensors  f64 values, row-major, in the order the header lists them
//! ```
//!
//! The header holds the training config, the encoder (vocabularies), the
//! tensor index and, for resumable checkpoints, the loop state. Tensor
//! groups are `best/` (selected parameters) and, when resumable, `last/`,
//! `adam.m/` and `adam.v/`.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RunHistory, TrainConfig, TrainState};
use crate::data::Encoder;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numerics::{Matrix, Rng};
use crate::optim::{AdamState, ParamSet};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"WUEDCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub encoder: Encoder,
    /// Selected parameters.
    pub params: ModelParams,
    pub state: Option<TrainState>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct ResumeMeta {
    epoch: usize,
    adam_t: u64,
    shuffle_rng: Rng,
    best_accuracy: Option<f64>,
    stale_epochs: usize,
    history: RunHistory,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    encoder: Encoder,
    tensors: Vec<TensorEntry>,
    resume: Option<ResumeMeta>,
}

impl Checkpoint {
    pub fn from_state(config: &TrainConfig, encoder: &Encoder, state: &TrainState) -> Self {
        Checkpoint {
            config: config.clone(),
            encoder: encoder.clone(),
            params: state.best_params.clone(),
            state: Some(state.clone()),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors: Vec<(String, &Matrix)> = Vec::new();
        tensors.extend(group("best", &self.params));
        let resume = match &self.state {
            Some(s) => {
                tensors.extend(group("last", &s.params));
                let names: Vec<String> = s.params.named_tensors().into_iter().map(|(n, _)| n).collect();
                for (n, m) in names.iter().zip(&s.adam.m) {
                    tensors.push((format!("adam.m/{n}"), m));
                }
                for (n, v) in names.iter().zip(&s.adam.v) {
                    tensors.push((format!("adam.v/{n}"), v));
                }
                Some(ResumeMeta {
                    epoch: s.epoch,
                    adam_t: s.adam.t,
                    shuffle_rng: s.shuffle_rng.clone(),
                    best_accuracy: s.best_accuracy.is_finite().then_some(s.best_accuracy),
                    stale_epochs: s.stale_epochs,
                    history: s.history.clone(),
                })
            }
            None => None,
        };
        let header = Header {
            config: self.config.clone(),
            encoder: self.encoder.clone(),
            tensors: tensors
                .iter()
                .map(|(n, m)| TensorEntry {
                    name: n.clone(),
                    rows: m.rows(),
                    cols: m.cols(),
                })
                .collect(),
            resume,
        };
        let json = serde_json::to_vec(&header)?;
        let values: usize = tensors.iter().map(|(_, m)| m.len()).sum();
        let mut out = Vec::with_capacity(20 + json.len() + 8 * values);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, m) in &tensors {
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let hlen = usize::try_from(hlen).map_err(|_| Error::Format("header length overflow".into()))?;
        let header: Header = serde_json::from_slice(r.take(hlen)?)
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        header.config.validate()?;

        let cfg = &header.config.model;
        let words = header.encoder.words.len();
        let tags = header.encoder.tags.len();
        let read_group = |prefix: &str, r: &mut Reader, entries: &mut std::slice::Iter<TensorEntry>| {
            let mut p = ModelParams::zeros(cfg, words, tags);
            p.word_table.trainable = cfg.embeddings_trainable;
            let names: Vec<String> = p.named_tensors().into_iter().map(|(n, _)| n).collect();
            for (name, t) in names.iter().zip(p.tensors_mut()) {
                read_tensor(r, entries, &format!("{prefix}/{name}"), t)?;
            }
            Ok::<_, Error>(p)
        };
        let mut entries = header.tensors.iter();
        let params = read_group("best", &mut r, &mut entries)?;
        let state = match header.resume {
            Some(meta) => {
                let last = read_group("last", &mut r, &mut entries)?;
                let names: Vec<String> = last.named_tensors().into_iter().map(|(n, _)| n).collect();
                let mut m: Vec<Matrix> = last.tensors().into_iter().map(Matrix::zeros_like).collect();
                let mut v = m.clone();
                for (n, t) in names.iter().zip(m.iter_mut()) {
                    read_tensor(&mut r, &mut entries, &format!("adam.m/{n}"), t)?;
                }
                for (n, t) in names.iter().zip(v.iter_mut()) {
                    read_tensor(&mut r, &mut entries, &format!("adam.v/{n}"), t)?;
                }
                Some(TrainState {
                    epoch: meta.epoch,
                    params: last,
                    adam: AdamState { m, v, t: meta.adam_t },
                    shuffle_rng: meta.shuffle_rng,
                    best_params: params.clone(),
                    best_accuracy: meta.best_accuracy.unwrap_or(f64::NEG_INFINITY),
                    stale_epochs: meta.stale_epochs,
                    history: meta.history,
                })
            }
            None => None,
        };
        if entries.next().is_some() {
            return Err(Error::Format("checkpoint lists unexpected tensors".into()));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after tensor data",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            config: header.config,
            encoder: header.encoder,
            params,
            state,
        })
    }

    /// Writes to a temporary sibling first so a failed write never leaves
    /// a truncated checkpoint at `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, path)
        };
        write().map_err(|e| {
            let _ = fs::remove_file(&tmp);
            Error::io(path, e)
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

fn group<'a>(prefix: &str, p: &'a ModelParams) -> Vec<(String, &'a Matrix)> {
    p.named_tensors().into_iter().map(|(n, m)| (format!("{prefix}/{n}"), m)).collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

fn read_tensor(
    r: &mut Reader,
    entries: &mut std::slice::Iter<TensorEntry>,
    name: &str,
    into: &mut Matrix,
) -> Result<()> {
    let e = entries
        .next()
        .ok_or_else(|| Error::Format(format!("checkpoint is missing tensor {name}")))?;
    if e.name != name || (e.rows, e.cols) != into.shape() {
        return Err(Error::Contract(format!(
            "checkpoint tensor {} {:?} does not match expected {name} {:?}",
            e.name,
            (e.rows, e.cols),
            into.shape()
        )));
    }
    let raw = r.take(8 * into.len())?;
    for (dst, chunk) in into.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
        *dst = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
    }
    Ok(())
}
