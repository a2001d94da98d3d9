//! Portable checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "DNKDCKPT"
//! version      u32      FORMAT_VERSION
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON
//! payload      IEEE-754 f64 values, little-endian, tensor after tensor
//! ```
//!
//! The JSON header carries `format_version`, the architecture (`kind` plus
//! `architecture`), free-form `provenance` strings, the tensor manifest
//! (`name`, `shape`, `offset` and `len` in values) and the payload length
//! and SHA-256.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::bottleneck::{BottleneckAdapter, BottleneckSpec};
use super::config::ModelConfig;
use super::params::{hex, ParamSet};
use super::unet::UNetModel;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"DNKDCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "architecture", rename_all = "lowercase")]
pub enum Architecture {
    Unet(ModelConfig),
    Bottleneck(BottleneckSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    #[serde(flatten)]
    architecture: Architecture,
    provenance: BTreeMap<String, String>,
    tensors: Vec<TensorEntry>,
    payload_len: usize,
    payload_sha256: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub architecture: Architecture,
    pub params: ParamSet,
    pub provenance: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn from_unet(model: &UNetModel, provenance: BTreeMap<String, String>) -> Self {
        Self {
            architecture: Architecture::Unet(model.config().clone()),
            params: model.params().clone(),
            provenance,
        }
    }

    pub fn from_bottleneck(adapter: &BottleneckAdapter, provenance: BTreeMap<String, String>) -> Self {
        Self {
            architecture: Architecture::Bottleneck(adapter.spec().clone()),
            params: adapter.params().clone(),
            provenance,
        }
    }

    pub fn into_unet(self) -> Result<UNetModel> {
        match self.architecture {
            Architecture::Unet(cfg) => UNetModel::from_params(cfg, self.params),
            Architecture::Bottleneck(_) => Err(Error::Checkpoint("expected a unet checkpoint, found a bottleneck".into())),
        }
    }

    pub fn into_bottleneck(self) -> Result<BottleneckAdapter> {
        match self.architecture {
            Architecture::Bottleneck(spec) => BottleneckAdapter::from_params(spec, self.params),
            Architecture::Unet(_) => Err(Error::Checkpoint("expected a bottleneck checkpoint, found a unet".into())),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::with_capacity(self.params.numel() * 8);
        let mut tensors = Vec::with_capacity(self.params.len());
        let mut offset = 0;
        for e in self.params.entries() {
            for v in e.tensor.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            tensors.push(TensorEntry {
                name: e.name.clone(),
                shape: e.tensor.shape().to_vec(),
                offset,
                len: e.tensor.len(),
            });
            offset += e.tensor.len();
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            architecture: self.architecture.clone(),
            provenance: self.provenance.clone(),
            tensors,
            payload_len: offset,
            payload_sha256: hex(&Sha256::digest(&payload)),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(format!("encoding header: {e}")))?;
        let mut out = Vec::with_capacity(20 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("missing DNKDCKPT magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (this build reads {FORMAT_VERSION})"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("header length {header_len} exceeds file size {}", bytes.len())))?;
        let header: Header = serde_json::from_slice(&bytes[20..header_end])
            .map_err(|e| Error::Checkpoint(format!("malformed header: {e}")))?;
        if header.format_version != version {
            return Err(Error::Checkpoint(format!(
                "header format_version {} disagrees with preamble {version}",
                header.format_version
            )));
        }
        let payload = &bytes[header_end..];
        if payload.len() != header.payload_len * 8 {
            return Err(Error::Checkpoint(format!(
                "manifest declares {} values ({} bytes) but the payload holds {} bytes",
                header.payload_len,
                header.payload_len * 8,
                payload.len()
            )));
        }
        let digest = hex(&Sha256::digest(payload));
        if digest != header.payload_sha256 {
            return Err(Error::Checkpoint(format!(
                "payload sha256 {digest} does not match manifest {}",
                header.payload_sha256
            )));
        }
        let mut params = ParamSet::new();
        let mut expected_offset = 0;
        for t in &header.tensors {
            let numel: usize = t.shape.iter().product();
            if t.len != numel || t.offset != expected_offset || t.offset + t.len > header.payload_len {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}`: shape {:?} / offset {} / len {} is inconsistent with the manifest",
                    t.name, t.shape, t.offset, t.len
                )));
            }
            let data = payload[t.offset * 8..(t.offset + t.len) * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.push(t.name.clone(), Tensor::new(&t.shape, data)?);
            expected_offset += t.len;
        }
        if expected_offset != header.payload_len {
            return Err(Error::Checkpoint(format!(
                "tensors cover {expected_offset} values but the payload holds {}",
                header.payload_len
            )));
        }
        Ok(Self {
            architecture: header.architecture,
            params,
            provenance: header.provenance,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::config::LatentShape;

    fn sample() -> Checkpoint {
        let model = UNetModel::new(ModelConfig::s2(), 3).unwrap();
        let mut prov = BTreeMap::new();
        prov.insert("seed".to_string(), "3".to_string());
        Checkpoint::from_unet(&model, prov)
    }

    #[test]
    fn round_trip_is_exact() {
        let ckpt = sample();
        let back = Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.clone().into_unet().unwrap().params().digest(), ckpt.params.digest());
    }

    #[test]
    fn bottleneck_round_trip() {
        let a = BottleneckAdapter::new(LatentShape::new(8, 6, 5), LatentShape::new(4, 2, 5), 1).unwrap();
        let back = Checkpoint::from_bytes(&Checkpoint::from_bottleneck(&a, BTreeMap::new()).to_bytes().unwrap())
            .unwrap()
            .into_bottleneck()
            .unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn corruption_is_reported() {
        let bytes = sample().to_bytes().unwrap();
        let mut flipped = bytes.clone();
        *flipped.last_mut().unwrap() ^= 1;
        let err = Checkpoint::from_bytes(&flipped).unwrap_err().to_string();
        assert!(err.contains("sha256"), "{err}");
        let truncated = &bytes[..bytes.len() - 8];
        let err = Checkpoint::from_bytes(truncated).unwrap_err().to_string();
        assert!(err.contains("payload"), "{err}");
        assert!(Checkpoint::from_bytes(b"NOTACKPT").is_err());
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        assert!(sample().into_bottleneck().is_err());
    }
}
