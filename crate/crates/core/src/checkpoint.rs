//! `SEFW1` parameter files: `SEFW`, u32 version, u32-length JSON metadata,
//! then little-endian parameter payloads in declaration order.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EquiNetwork, ModelConfig};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"SEFW";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    /// `"f32"` or `"f64"`.
    pub scalar: String,
    pub params: Vec<ParamInfo>,
    pub config: ModelConfig,
}

pub fn encode<T: Scalar>(net: &EquiNetwork<T>) -> Result<Vec<u8>> {
    let params = net.params();
    let meta = Metadata {
        scalar: T::NAME.into(),
        params: params
            .iter()
            .map(|(name, t)| ParamInfo { name: name.clone(), shape: t.shape().to_vec() })
            .collect(),
        config: net.config.clone(),
    };
    let json = serde_json::to_vec(&meta).map_err(|e| Error::invalid(e.to_string()))?;
    let payload: usize = params.iter().map(|(_, t)| t.len() * T::BYTES).sum();
    let mut out = Vec::with_capacity(12 + json.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in params {
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::parse(at, "truncated header"))
}

/// Parses metadata and payloads, converting to `T` if the file uses the
/// other scalar width.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<EquiNetwork<T>> {
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(Error::parse(0, "bad magic, expected SEFW"));
    }
    let version = read_u32(bytes, 4)?;
    if version != VERSION {
        return Err(Error::parse(4, format!("unsupported version {version}")));
    }
    let len = read_u32(bytes, 8)? as usize;
    let json = bytes.get(12..12 + len).ok_or_else(|| Error::parse(12, "truncated metadata"))?;
    let meta: Metadata = serde_json::from_slice(json).map_err(|e| Error::parse(12, e.to_string()))?;
    let mut at = 12 + len;
    let mut params = HashMap::new();
    for p in &meta.params {
        let count: usize = p.shape.iter().product();
        let t = match meta.scalar.as_str() {
            "f64" => read_payload::<f64>(bytes, &mut at, &p.shape, count)?.cast::<T>(),
            "f32" => read_payload::<f32>(bytes, &mut at, &p.shape, count)?.cast::<T>(),
            other => return Err(Error::parse(12, format!("unknown scalar `{other}`"))),
        };
        params.insert(p.name.clone(), t);
    }
    if at != bytes.len() {
        return Err(Error::parse(at, format!("{} trailing bytes", bytes.len() - at)));
    }
    EquiNetwork::from_params(meta.config, params)
}

fn read_payload<S: Scalar>(bytes: &[u8], at: &mut usize, shape: &[usize], count: usize) -> Result<Tensor<S>> {
    let end = *at + count * S::BYTES;
    let raw = bytes.get(*at..end).ok_or_else(|| Error::parse(*at, "truncated payload"))?;
    let data = raw.chunks_exact(S::BYTES).map(S::read_le).collect();
    *at = end;
    Tensor::new(shape.to_vec(), data)
}

pub fn save<T: Scalar>(net: &EquiNetwork<T>, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode(net)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<EquiNetwork<T>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// Scalar width recorded in a checkpoint.
pub fn scalar_name(bytes: &[u8]) -> Result<String> {
    let len = read_u32(bytes, 8)? as usize;
    let json = bytes.get(12..12 + len).ok_or_else(|| Error::parse(12, "truncated metadata"))?;
    let meta: Metadata = serde_json::from_slice(json).map_err(|e| Error::parse(12, e.to_string()))?;
    Ok(meta.scalar)
}
