//! Binary checkpoint files.
//!
//! Layout: the magic bytes `DFLW`, a little-endian `u32` format version, a
//! little-endian `u64` header length, the JSON header, then every tensor as
//! raw little-endian `f64` values in directory order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CurveRecord, ModelHeader, Optimizer, OptimizerKind, SegmentationModel, TrainConfig, TrainRun};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DFLW";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset from the start of the data section.
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model: ModelHeader,
    train_config: TrainConfig,
    step: u64,
    optimizer: OptimizerKind,
    optimizer_updates: u64,
    curve: Vec<CurveRecord>,
    tensors: Vec<TensorEntry>,
}

fn layout<T: Scalar, M: SegmentationModel<T>>(run: &TrainRun<T, M>) -> Vec<(String, &Tensor<T>)> {
    let names = run.model.param_names();
    let mut out: Vec<(String, &Tensor<T>)> = names
        .iter()
        .zip(run.model.params())
        .map(|(n, p)| (format!("param/{n}"), p))
        .collect();
    for (prefix, moments) in [("adam_m", &run.optimizer.m), ("adam_v", &run.optimizer.v)] {
        out.extend(names.iter().zip(moments).map(|(n, t)| (format!("{prefix}/{n}"), t)));
    }
    out
}

pub fn save_checkpoint<T: Scalar, M: SegmentationModel<T>>(run: &TrainRun<T, M>, path: &Path) -> Result<()> {
    let tensors = layout(run);
    let mut offset = 0u64;
    let entries = tensors
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += 8 * t.len() as u64;
            e
        })
        .collect();
    let header = Header {
        model: run.model.header(),
        train_config: run.config.clone(),
        step: run.step,
        optimizer: run.optimizer.kind,
        optimizer_updates: run.optimizer.t,
        curve: run.curve.clone(),
        tensors: entries,
    };
    let json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(16 + json.len() + offset as usize);
    bytes.extend_from_slice(&CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for (_, t) in &tensors {
        for v in t.data() {
            bytes.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    let end = at
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Checkpoint(format!("file truncated while reading {what}")))?;
    let s = &bytes[*at..end];
    *at = end;
    Ok(s)
}

pub fn load_checkpoint<T: Scalar, M: SegmentationModel<T>>(path: &Path) -> Result<TrainRun<T, M>> {
    let bytes = fs::read(path)?;
    let mut at = 0;
    let magic = take(&bytes, &mut at, 4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::CheckpointVersion(format!(
            "bad magic bytes {magic:?}, not a checkpoint of this format"
        )));
    }
    let version = u32::from_le_bytes(take(&bytes, &mut at, 4, "version")?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion(format!(
            "format version {version}, this build reads {CHECKPOINT_VERSION}"
        )));
    }
    let len = u64::from_le_bytes(take(&bytes, &mut at, 8, "header length")?.try_into().expect("8 bytes"));
    let len = usize::try_from(len).map_err(|_| Error::Checkpoint("header length overflows".into()))?;
    let header: Header = serde_json::from_slice(take(&bytes, &mut at, len, "header")?)?;
    let data = &bytes[at..];

    header.train_config.validate()?;
    let mut model = M::from_header(&header.model)?;
    let names = model.param_names();
    let n = names.len();
    let mut optimizer = Optimizer::new(header.optimizer, &model.params());
    optimizer.t = header.optimizer_updates;
    let moments = if optimizer.m.is_empty() { 0 } else { 2 };
    if header.tensors.len() != n * (1 + moments) {
        return Err(Error::Checkpoint(format!(
            "directory lists {} tensors, the declared model and optimizer need {}",
            header.tensors.len(),
            n * (1 + moments)
        )));
    }

    let mut expected_end = 0u64;
    let mut read = |entry: &TensorEntry, want_name: &str, dst: &mut Tensor<T>| -> Result<()> {
        if entry.name != want_name || entry.shape != dst.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` {:?} disagrees with the declared config (`{want_name}` {:?})",
                entry.name,
                entry.shape,
                dst.shape()
            )));
        }
        if entry.offset != expected_end {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` at unexpected offset {}",
                entry.name, entry.offset
            )));
        }
        let mut pos = usize::try_from(entry.offset).map_err(|_| Error::Checkpoint("offset overflows".into()))?;
        let raw = take(data, &mut pos, 8 * dst.len(), &entry.name)?;
        for (v, chunk) in dst.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *v = T::lit(f64::from_le_bytes(chunk.try_into().expect("8 bytes")));
        }
        expected_end += raw.len() as u64;
        Ok(())
    };
    let mut entries = header.tensors.iter();
    for (name, p) in names.iter().zip(model.params_mut()) {
        read(entries.next().expect("count checked"), &format!("param/{name}"), p)?;
    }
    if moments > 0 {
        for (idx, name) in names.iter().enumerate() {
            read(
                entries.next().expect("count checked"),
                &format!("adam_m/{name}"),
                &mut optimizer.m[idx],
            )?;
        }
        for (idx, name) in names.iter().enumerate() {
            read(
                entries.next().expect("count checked"),
                &format!("adam_v/{name}"),
                &mut optimizer.v[idx],
            )?;
        }
    }
    if expected_end != data.len() as u64 {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the last tensor",
            data.len() as u64 - expected_end
        )));
    }
    if header.curve.windows(2).any(|w| w[0].step >= w[1].step) {
        return Err(Error::Checkpoint("curve steps are not strictly increasing".into()));
    }
    Ok(TrainRun {
        model,
        config: header.train_config,
        optimizer,
        step: header.step,
        curve: header.curve,
    })
}
