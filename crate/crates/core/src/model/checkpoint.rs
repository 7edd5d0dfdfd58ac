//! `NICM` checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"NICM"  u32 version
//! u32 entry count, then per entry: u32 name length, name, u8 kind (0 = u32, 1 = f64), value
//! u32 tensor count, then per tensor: the numerics tensor encoding
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{ModelConfig, NicParams};
use crate::error::{Error, Result};
use crate::numerics::{read_exact, read_u32, Tensor};

const MAGIC: &[u8; 4] = b"NICM";
const VERSION: u32 = 1;

const KIND_U32: u8 = 0;
const KIND_F64: u8 = 1;

/// Model parameters plus the number of epochs already trained.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: NicParams,
    pub epochs_completed: usize,
}

enum Entry {
    U32(u32),
    F64(f64),
}

fn entries(config: &ModelConfig, epochs_completed: usize) -> Vec<(&'static str, Entry)> {
    vec![
        ("feature_dim", Entry::U32(config.feature_dim as u32)),
        ("embed_dim", Entry::U32(config.embed_dim as u32)),
        ("hidden_dim", Entry::U32(config.hidden_dim as u32)),
        ("vocab_size", Entry::U32(config.vocab_size as u32)),
        ("max_caption_len", Entry::U32(config.max_caption_len as u32)),
        ("classifier_hidden_1", Entry::U32(config.classifier_hidden.0 as u32)),
        ("classifier_hidden_2", Entry::U32(config.classifier_hidden.1 as u32)),
        ("dropout_rate", Entry::F64(config.dropout_rate)),
        ("loss_weight_lambda", Entry::F64(config.loss_weight_lambda)),
        ("epochs_completed", Entry::U32(epochs_completed as u32)),
    ]
}

fn write_name<W: Write>(out: &mut W, name: &str) -> std::io::Result<()> {
    out.write_all(&(name.len() as u32).to_le_bytes())?;
    out.write_all(name.as_bytes())
}

pub fn write_checkpoint<W: Write>(
    out: &mut W,
    params: &NicParams,
    epochs_completed: usize,
) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    let entries = entries(params.config(), epochs_completed);
    out.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, value) in entries {
        write_name(out, name)?;
        match value {
            Entry::U32(v) => {
                out.write_all(&[KIND_U32])?;
                out.write_all(&v.to_le_bytes())?;
            }
            Entry::F64(v) => {
                out.write_all(&[KIND_F64])?;
                out.write_all(&v.to_le_bytes())?;
            }
        }
    }
    let tensors = params.parameters();
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for p in tensors {
        p.value.write_named(&p.name, out)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<Checkpoint> {
    let mut magic = [0u8; 4];
    read_exact(input, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let version = read_u32(input)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }

    let mut config = ModelConfig::new(0);
    let mut epochs_completed = 0;
    let mut seen = Vec::new();
    let count = read_u32(input)?;
    for _ in 0..count {
        let len = read_u32(input)? as usize;
        if len > 256 {
            return Err(Error::Format(format!("entry name length {len}")));
        }
        let mut name = vec![0u8; len];
        read_exact(input, &mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("entry name is not UTF-8".into()))?;
        let mut kind = [0u8; 1];
        read_exact(input, &mut kind)?;
        let value = match kind[0] {
            KIND_U32 => Entry::U32(read_u32(input)?),
            KIND_F64 => {
                let mut b = [0u8; 8];
                read_exact(input, &mut b)?;
                Entry::F64(f64::from_le_bytes(b))
            }
            k => return Err(Error::Format(format!("entry {name}: unknown kind {k}"))),
        };
        match (name.as_str(), value) {
            ("feature_dim", Entry::U32(v)) => config.feature_dim = v as usize,
            ("embed_dim", Entry::U32(v)) => config.embed_dim = v as usize,
            ("hidden_dim", Entry::U32(v)) => config.hidden_dim = v as usize,
            ("vocab_size", Entry::U32(v)) => config.vocab_size = v as usize,
            ("max_caption_len", Entry::U32(v)) => config.max_caption_len = v as usize,
            ("classifier_hidden_1", Entry::U32(v)) => config.classifier_hidden.0 = v as usize,
            ("classifier_hidden_2", Entry::U32(v)) => config.classifier_hidden.1 = v as usize,
            ("dropout_rate", Entry::F64(v)) => config.dropout_rate = v,
            ("loss_weight_lambda", Entry::F64(v)) => config.loss_weight_lambda = v,
            ("epochs_completed", Entry::U32(v)) => epochs_completed = v as usize,
            (other, _) => {
                return Err(Error::Format(format!(
                    "unknown or mistyped checkpoint entry {other}"
                )))
            }
        }
        seen.push(name);
    }
    for (name, _) in entries(&config, 0) {
        if !seen.iter().any(|s| s == name) {
            return Err(Error::Format(format!("checkpoint lacks entry {name}")));
        }
    }
    config
        .validate()
        .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;

    let mut params = NicParams::zeros(&config)?;
    let tensor_count = read_u32(input)? as usize;
    let expected = params.parameters().len();
    if tensor_count != expected {
        return Err(Error::Format(format!(
            "checkpoint has {tensor_count} tensors, expected {expected}"
        )));
    }
    let mut loaded = vec![false; expected];
    for _ in 0..tensor_count {
        let (name, tensor) = Tensor::read_named(input)?;
        let mut slots = params.parameters_mut();
        let (slot, param) = slots
            .iter_mut()
            .enumerate()
            .find(|(_, p)| p.name == name)
            .ok_or_else(|| Error::Format(format!("unknown tensor {name}")))?;
        if loaded[slot] {
            return Err(Error::Format(format!("duplicate tensor {name}")));
        }
        if tensor.shape() != param.value.shape() {
            return Err(Error::Shape(format!(
                "tensor {name} has shape {:?}, config implies {:?}",
                tensor.shape(),
                param.value.shape()
            )));
        }
        param.value = tensor;
        loaded[slot] = true;
    }
    Ok(Checkpoint {
        params,
        epochs_completed,
    })
}

/// Writes to a sibling temporary file and renames it into place.
pub fn save_checkpoint(path: &Path, params: &NicParams, epochs_completed: usize) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, params, epochs_completed).map_err(|e| Error::io(&tmp, e))?;
    std::fs::write(&tmp, &buf).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut bytes.as_slice())
}
