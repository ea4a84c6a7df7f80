//! `VFM1` model files.
//!
//! Layout, little-endian:
//!
//! ```text
//! "VFM1" | u16 version | u32 n | n bytes JSON header
//! repeated until EOF:
//!   u16 name_len | name | u8 dtype (0 = f32, 1 = i8) | u8 rank | rank x u32 dims
//!   | (i8 only) f32 scale | raw values
//! ```
//!
//! The JSON header carries the network config and, for training
//! checkpoints, the optimizer step. Optimizer moments are stored as extra
//! f32 records prefixed `opt.`.

use std::collections::HashMap;
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masknet::{MaskNetConfig, MaskNetParams, ParamRef, Tensor, Weight};
use crate::quant::QuantTensor;

const MAGIC: &[u8; 4] = b"VFM1";
pub const VERSION: u16 = 1;
pub const OPT_PREFIX: &str = "opt.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub config: MaskNetConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_state: Option<TrainState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    pub seed: u64,
}

/// Everything read from a model file.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: ModelHeader,
    pub params: MaskNetParams,
    /// Optimizer tensors keyed by name without the `opt.` prefix.
    pub optimizer: HashMap<String, Tensor>,
}

fn put_record(buf: &mut Vec<u8>, name: &str, shape: &[usize], dtype: u8) {
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(dtype);
    buf.push(shape.len() as u8);
    for &d in shape {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
}

fn put_float(buf: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_record(buf, name, &t.shape, 0);
    for v in &t.data {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

pub fn encode(
    cfg: &MaskNetConfig,
    params: &MaskNetParams,
    train_state: Option<TrainState>,
    optimizer: &[(String, &Tensor)],
) -> Result<Vec<u8>> {
    params.check(cfg)?;
    let header = serde_json::to_vec(&ModelHeader {
        config: cfg.clone(),
        train_state,
    })?;
    let mut buf = Vec::with_capacity(params.num_params() * 4 + header.len() + 64);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for (name, p) in params.entries() {
        match p {
            ParamRef::Float(t) => put_float(&mut buf, &name, t),
            ParamRef::Quant(q) => {
                put_record(&mut buf, &name, &q.shape, 1);
                buf.extend_from_slice(&q.scale.to_le_bytes());
                buf.extend(q.values.iter().map(|&v| v as u8));
            }
        }
    }
    for (name, t) in optimizer {
        put_float(&mut buf, &format!("{OPT_PREFIX}{name}"), t);
    }
    Ok(buf)
}

pub fn save_model(path: impl AsRef<Path>, cfg: &MaskNetConfig, params: &MaskNetParams) -> Result<()> {
    fs::write(path, encode(cfg, params, None, &[])?)?;
    Ok(())
}

fn read_exact_vec(r: &mut Cursor<&[u8]>, n: usize) -> Result<Vec<u8>> {
    let remaining = r.get_ref().len() - r.position() as usize;
    if n > remaining {
        return Err(Error::Format("truncated VFM1 record".into()));
    }
    let mut v = vec![0u8; n];
    r.read_exact(&mut v)?;
    Ok(v)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Cursor::new(bytes);
    let head = read_exact_vec(&mut r, 10)
        .map_err(|_| Error::Format("file too short for a VFM1 header".into()))?;
    if &head[..4] != MAGIC {
        return Err(Error::Format("missing VFM1 magic".into()));
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported VFM1 version {version}")));
    }
    let json_len = u32::from_le_bytes(head[6..10].try_into().unwrap()) as usize;
    let header: ModelHeader = serde_json::from_slice(&read_exact_vec(&mut r, json_len)?)?;
    header.config.validate()?;
    let mut named = HashMap::new();
    let mut optimizer = HashMap::new();
    while (r.position() as usize) < bytes.len() {
        let n = read_exact_vec(&mut r, 2)?;
        let name_len = u16::from_le_bytes([n[0], n[1]]) as usize;
        let name = String::from_utf8(read_exact_vec(&mut r, name_len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let meta = read_exact_vec(&mut r, 2)?;
        let (dtype, rank) = (meta[0], meta[1] as usize);
        let dims = read_exact_vec(&mut r, 4 * rank)?;
        let shape: Vec<usize> = dims
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let count: usize = shape.iter().product();
        let weight = match dtype {
            0 => {
                let raw = read_exact_vec(&mut r, 4 * count)?;
                let data = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect();
                Weight::Float(Tensor { shape, data })
            }
            1 => {
                let s = read_exact_vec(&mut r, 4)?;
                let scale = f32::from_le_bytes(s.try_into().unwrap());
                let values = read_exact_vec(&mut r, count)?
                    .into_iter()
                    .map(|b| b as i8)
                    .collect();
                Weight::Quant(QuantTensor {
                    shape,
                    values,
                    scale,
                })
            }
            d => return Err(Error::Format(format!("unknown dtype {d} for {name}"))),
        };
        if let Some(opt) = name.strip_prefix(OPT_PREFIX) {
            match weight {
                Weight::Float(t) => optimizer.insert(opt.to_string(), t),
                Weight::Quant(_) => {
                    return Err(Error::Format(format!("optimizer tensor {name} must be float")))
                }
            };
        } else if named.insert(name.clone(), weight).is_some() {
            return Err(Error::Format(format!("duplicate tensor {name}")));
        }
    }
    let params = MaskNetParams::from_named(&header.config, named)?;
    Ok(Checkpoint {
        header,
        params,
        optimizer,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(MaskNetConfig, MaskNetParams)> {
    let c = load_checkpoint(path)?;
    Ok((c.header.config, c.params))
}
