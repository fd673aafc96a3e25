//! Parameter checkpoints.
//!
//! Layout: the 8-byte magic `SP3DPARM`, a little-endian `u32` format
//! version, a little-endian `u64` header length, the UTF-8 JSON header, then
//! the payload of little-endian `f64` values. The header carries the model
//! kind, its configuration, and a manifest of `(name, dims, offset)` entries
//! whose byte offsets are relative to the start of the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::discriminator::{Discriminator, DiscriminatorConfig};
use super::generator::{EUFormerConfig, Generator};
use super::params::ParamSet;
use crate::error::{Error, Result};
use crate::imageio::write_atomic;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 8] = b"SP3DPARM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    /// `[n, h, w, c]`
    pub dims: [usize; 4],
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: String,
    pub config: serde_json::Value,
    pub params: Vec<ManifestEntry>,
}

pub fn encode(kind: &str, config: serde_json::Value, params: &ParamSet) -> Result<Vec<u8>> {
    let mut offset = 0u64;
    let mut manifest = Vec::with_capacity(params.len());
    for (name, t) in params.iter() {
        manifest.push(ManifestEntry {
            name: name.to_string(),
            dims: t.shape().dims(),
            offset,
        });
        offset += 8 * t.numel() as u64;
    }
    let header = serde_json::to_vec(&Header {
        kind: kind.to_string(),
        config,
        params: manifest,
    })?;
    let mut out = Vec::with_capacity(20 + header.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(Header, ParamSet)> {
    let bad = |detail: String| Error::format("checkpoint", detail);
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let header_bytes = bytes
        .get(20..20 + header_len)
        .ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(header_bytes)?;
    let payload = &bytes[20 + header_len..];
    let mut params = ParamSet::new();
    for entry in &header.params {
        let [n, h, w, c] = entry.dims;
        let shape = Shape::new(n, h, w, c);
        let start = entry.offset as usize;
        let end = start + 8 * shape.numel();
        let raw = payload
            .get(start..end)
            .ok_or_else(|| bad(format!("{} runs past the payload", entry.name)))?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        params.push(entry.name.clone(), Tensor::new(shape, data)?);
    }
    Ok((header, params))
}

pub fn save_generator(path: &Path, generator: &Generator) -> Result<()> {
    let config = serde_json::to_value(generator.config())?;
    write_atomic(path, &encode("generator", config, generator.params())?)
}

pub fn load_generator(path: &Path) -> Result<Generator> {
    let (header, params) = decode(&fs::read(path)?)?;
    if header.kind != "generator" {
        return Err(Error::format("checkpoint", format!("expected a generator, found {}", header.kind)));
    }
    let config: EUFormerConfig = serde_json::from_value(header.config)?;
    Generator::from_params(config, params)
}

pub fn save_discriminator(path: &Path, discriminator: &Discriminator) -> Result<()> {
    let config = serde_json::to_value(discriminator.config())?;
    write_atomic(path, &encode("discriminator", config, discriminator.params())?)
}

pub fn load_discriminator(path: &Path) -> Result<Discriminator> {
    let (header, params) = decode(&fs::read(path)?)?;
    if header.kind != "discriminator" {
        return Err(Error::format(
            "checkpoint",
            format!("expected a discriminator, found {}", header.kind),
        ));
    }
    let config: DiscriminatorConfig = serde_json::from_value(header.config)?;
    Discriminator::from_params(config, params)
}
