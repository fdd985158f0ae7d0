//! Binary checkpoint file.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header, then little-endian tensor data. The header lists every tensor
//! with its group, slot, name, shape and byte offset into the data section.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::numeric::{Adam, ParamStore, Precision, RngState, Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"GRAFFECK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
}

/// Full training state after `epoch` completed epochs.
#[derive(Debug, Clone)]
pub struct Checkpoint<S> {
    pub config: TrainConfig,
    pub in_dim: usize,
    pub classes: usize,
    pub epoch: usize,
    pub rng: RngState,
    pub loss_trace: Vec<EpochLoss>,
    pub enc: ParamStore<S>,
    pub dec: ParamStore<S>,
    pub enc_opt: Adam<S>,
    pub dec_opt: Adam<S>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    group: String,
    slot: String,
    name: String,
    shape: [usize; 2],
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    precision: Precision,
    config: serde_json::Value,
    encoder_lr_overridden: bool,
    in_dim: usize,
    classes: usize,
    epoch: usize,
    rng: RngState,
    loss_trace: Vec<EpochLoss>,
    encoder_steps: u64,
    decoder_steps: u64,
    tensors: Vec<TensorEntry>,
}

fn bad(path: &Path, msg: impl Into<String>) -> Error {
    Error::Checkpoint { path: path.to_path_buf(), msg: msg.into() }
}

/// Reads only the precision tag of a checkpoint file.
pub fn read_precision(path: impl AsRef<Path>) -> Result<Precision> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_header(path, &bytes)?.0.precision)
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<(Header, usize)> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad(path, "not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(path, format!("unsupported format version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let end = 20usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[20..end]).map_err(|e| bad(path, format!("header: {e}")))?;
    Ok((header, end))
}

impl<S: Scalar> Checkpoint<S> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut data = Vec::new();
        let mut tensors = Vec::new();
        let mut push = |group: &str, slot: &str, name: &str, t: &Tensor<S>, data: &mut Vec<u8>| {
            tensors.push(TensorEntry {
                group: group.into(),
                slot: slot.into(),
                name: name.into(),
                shape: t.shape(),
                offset: data.len(),
            });
            t.data().iter().for_each(|v| v.write_le(data));
        };
        for (group, store) in [("encoder", &self.enc), ("decoder", &self.dec)] {
            store.iter().for_each(|p| push(group, "value", &p.name, &p.value, &mut data));
        }
        for (group, store, opt) in [("encoder", &self.enc, &self.enc_opt), ("decoder", &self.dec, &self.dec_opt)] {
            for (i, p) in store.iter().enumerate() {
                push(group, "adam_m", &p.name, &opt.m[i], &mut data);
                push(group, "adam_v", &p.name, &opt.v[i], &mut data);
            }
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            precision: S::PRECISION,
            config: serde_json::to_value(&self.config).expect("config serializes"),
            encoder_lr_overridden: self.config.trainer.lr_encoder.is_some(),
            in_dim: self.in_dim,
            classes: self.classes,
            epoch: self.epoch,
            rng: self.rng,
            loss_trace: self.loss_trace.clone(),
            encoder_steps: self.enc_opt.step,
            decoder_steps: self.dec_opt.step,
            tensors,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&data);
        out
    }

    /// Writes atomically through a temporary file in the same directory.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        let write = || -> std::io::Result<()> {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
            std::fs::rename(&tmp, path)
        };
        write().map_err(|e| Error::io(path, e))
    }

    /// Parses a checkpoint. `build` recreates empty stores with the right
    /// names and shapes from the stored configuration.
    pub fn from_bytes(
        path: &Path,
        bytes: &[u8],
        build: impl FnOnce(&TrainConfig, usize, usize) -> Result<(ParamStore<S>, ParamStore<S>)>,
    ) -> Result<Self> {
        let (header, start) = parse_header(path, bytes)?;
        if header.precision != S::PRECISION {
            return Err(bad(path, format!("stored at {}, requested {}", header.precision.name(), S::PRECISION.name())));
        }
        let config: TrainConfig =
            serde_json::from_value(header.config.clone()).map_err(|e| bad(path, format!("config: {e}")))?;
        let (mut enc, mut dec) = build(&config, header.in_dim, header.classes)?;
        let data = &bytes[start..];
        let width = S::PRECISION.byte_width();
        let mut entries = header.tensors.iter();
        let mut read = |group: &str, slot: &str, name: &str, shape: [usize; 2]| -> Result<Tensor<S>> {
            let e = entries.next().ok_or_else(|| bad(path, "tensor manifest is too short"))?;
            if e.group != group || e.slot != slot || e.name != name || e.shape != shape {
                return Err(bad(
                    path,
                    format!(
                        "expected {group}/{slot}/{name} {shape:?}, found {}/{}/{} {:?}",
                        e.group, e.slot, e.name, e.shape
                    ),
                ));
            }
            let len = shape[0] * shape[1] * width;
            let raw = data.get(e.offset..e.offset + len).ok_or_else(|| bad(path, "truncated tensor data"))?;
            let values = raw.chunks_exact(width).map(S::read_le).collect();
            Ok(Tensor::from_vec(shape[0], shape[1], values).expect("shape checked"))
        };
        let mut load_values = |group: &str, store: &mut ParamStore<S>| -> Result<()> {
            let mut values = Vec::with_capacity(store.len());
            for p in store.iter() {
                values.push((p.name.clone(), read(group, "value", &p.name, p.value.shape())?));
            }
            store.load_values(values).map_err(|e| bad(path, e.to_string()))
        };
        load_values("encoder", &mut enc)?;
        load_values("decoder", &mut dec)?;
        let mut load_opt = |group: &str, store: &ParamStore<S>, steps: u64| -> Result<Adam<S>> {
            let mut opt = Adam::new(config.trainer.optimizer, store);
            for (i, p) in store.iter().enumerate() {
                opt.m[i] = read(group, "adam_m", &p.name, p.value.shape())?;
                opt.v[i] = read(group, "adam_v", &p.name, p.value.shape())?;
            }
            opt.step = steps;
            Ok(opt)
        };
        let enc_opt = load_opt("encoder", &enc, header.encoder_steps)?;
        let dec_opt = load_opt("decoder", &dec, header.decoder_steps)?;
        if entries.next().is_some() {
            return Err(bad(path, "tensor manifest lists unexpected tensors"));
        }
        Ok(Self {
            config,
            in_dim: header.in_dim,
            classes: header.classes,
            epoch: header.epoch,
            rng: header.rng,
            loss_trace: header.loss_trace,
            enc,
            dec,
            enc_opt,
            dec_opt,
        })
    }

    pub fn load(
        path: impl AsRef<Path>,
        build: impl FnOnce(&TrainConfig, usize, usize) -> Result<(ParamStore<S>, ParamStore<S>)>,
    ) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(path, &bytes, build)
    }

    /// Hex SHA-256 of the parameter values of both groups.
    pub fn identifier(&self) -> String {
        format!("{}:{}", &self.enc.digest()[..16], &self.dec.digest()[..16])
    }
}

/// `epoch,loss` rows.
pub fn loss_csv(trace: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,loss\n");
    for e in trace {
        s.push_str(&format!("{},{:e}\n", e.epoch, e.loss));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_floats_round_trip_exactly() {
        // Needs correctly rounded float parsing in the JSON header.
        let trace = vec![EpochLoss { epoch: 2, loss: 1.0804494619369507 }];
        let text = serde_json::to_string(&trace).unwrap();
        let back: Vec<EpochLoss> = serde_json::from_str(&text).unwrap();
        assert_eq!(back[0].loss.to_bits(), trace[0].loss.to_bits());
    }
}
