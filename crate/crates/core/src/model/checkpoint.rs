//! Binary parameter file plus JSON metadata sidecar.
//!
//! Binary layout (little endian): magic `BLURFLD\0`, `u32` format version,
//! `u32` tensor count, then per tensor a `u64` length and that many `f32`s.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::arch::ArchitectureConfig;
use super::network::Network;
use super::train::{EpochLog, TrainingConfig};
use super::Predictor;
use crate::dataset::{stable_hash, Labels};
use crate::error::{Error, Result};
use crate::image::Image;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"BLURFLD\0";

// Predictions are kept this far inside (0, 1) so they always denormalize.
const LABEL_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub format_version: u32,
    pub arch: ArchitectureConfig,
    /// Equals the largest scheduled patch size.
    pub n_max: usize,
    pub schedule: Vec<usize>,
    pub epochs_run: usize,
    pub final_loss: f64,
    pub converged: bool,
    pub seed: u64,
    pub config: Option<TrainingConfig>,
    pub history: Vec<EpochLog>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub network: Network<f32>,
    pub meta: TrainingMeta,
}

/// `model.bin` -> `model.bin.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl ModelCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let params = self.network.params();
        let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
        write(MAGIC)?;
        write(&CHECKPOINT_VERSION.to_le_bytes())?;
        write(&(params.len() as u32).to_le_bytes())?;
        for t in params {
            write(&(t.len() as u64).to_le_bytes())?;
            let mut buf = Vec::with_capacity(t.len() * 4);
            for v in t {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            write(&buf)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        let json = serde_json::to_string_pretty(&self.meta)?;
        fs::write(&side, json + "\n").map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let side = sidecar_path(path);
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: TrainingMeta = serde_json::from_str(&text)?;
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        if meta.format_version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported metadata version {}", meta.format_version)));
        }
        if meta.schedule.iter().max() != Some(&meta.n_max) {
            return Err(bad("recorded N_max differs from the schedule maximum".into()));
        }

        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(8).ok_or_else(|| bad("truncated header".into()))? != MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let version = cur.u32().ok_or_else(|| bad("truncated header".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let count = cur.u32().ok_or_else(|| bad("truncated header".into()))? as usize;
        let mut network = Network::<f32>::new(meta.arch, 0)?;
        let lengths = network.param_lengths();
        if count != lengths.len() {
            return Err(bad(format!("expected {} tensors, found {count}", lengths.len())));
        }
        let mut params = Vec::with_capacity(count);
        for want in lengths {
            let len = cur.u64().ok_or_else(|| bad("truncated tensor header".into()))? as usize;
            if len != want {
                return Err(bad(format!("tensor length {len}, architecture expects {want}")));
            }
            let raw = cur.take(len * 4).ok_or_else(|| bad("truncated tensor data".into()))?;
            params.push(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                    .collect(),
            );
        }
        if cur.pos != bytes.len() {
            return Err(bad("trailing bytes".into()));
        }
        network.set_params(params)?;
        Ok(ModelCheckpoint { network, meta })
    }

    /// Normalized labels for one patch.
    pub fn predict(&self, patch: &Image) -> Result<Labels> {
        Ok(self.predict_labels(std::slice::from_ref(patch))?[0])
    }
}

impl Predictor for ModelCheckpoint {
    fn n_max(&self) -> usize {
        self.meta.n_max
    }

    fn min_patch(&self) -> usize {
        self.meta.arch.min_input()
    }

    fn predict_labels(&self, patches: &[Image]) -> Result<Vec<Labels>> {
        let x = self.network.input_tensor(patches)?;
        let z = self.network.logits(x);
        let batch = z.batch;
        let squash = |v: f32| (1.0 / (1.0 + (-f64::from(v)).exp())).clamp(LABEL_MARGIN, 1.0 - LABEL_MARGIN);
        Ok((0..batch)
            .map(|b| Labels::new(squash(z.data[b]), squash(z.data[batch + b])))
            .collect())
    }

    fn id(&self) -> String {
        let mut bytes = Vec::new();
        for t in self.network.params() {
            for v in t {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        format!("{:016x}", stable_hash(&[&bytes]))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}
