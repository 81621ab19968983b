//! Single-file checkpoints: config echo, named float32 tensors, probe hash.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "CRSPCKPT" | u32 version | u32 json_len | json {encoder, extra}
//! u32 tensor_count | per tensor: u32 name_len, name, u32 ndim, u32 dims.., f32 data..
//! [u8; 32] probe hash
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Encoder, EncoderConfig, EncoderError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CRSPCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    encoder: EncoderConfig,
    extra: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub encoder: EncoderConfig,
    /// Free-form metadata (training step, seeds, optimizer settings).
    pub extra: serde_json::Value,
    pub tensors: Vec<CheckpointTensor>,
    pub probe_hash: [u8; 32],
}

impl Checkpoint {
    pub fn from_encoder(encoder: &Encoder, extra: serde_json::Value, extra_tensors: Vec<CheckpointTensor>) -> Self {
        let mut tensors: Vec<CheckpointTensor> = encoder
            .param_infos()
            .into_iter()
            .map(|info| CheckpointTensor {
                data: encoder.params()[info.offset..info.offset + info.len()].to_vec(),
                name: info.name,
                shape: info.shape,
            })
            .collect();
        tensors.extend(extra_tensors);
        Self {
            encoder: encoder.config().clone(),
            extra,
            tensors,
            probe_hash: encoder.probe_hash(),
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&CheckpointTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let header = serde_json::to_vec(&Header { encoder: self.encoder.clone(), extra: self.extra.clone() })
            .expect("checkpoint header serializes");
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.probe_hash);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EncoderError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let json_len = r.u32()? as usize;
        let header: Header =
            serde_json::from_slice(r.take(json_len)?).map_err(|e| corrupt(&format!("header: {e}")))?;
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| corrupt("tensor name is not UTF-8"))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let len: usize = shape.iter().product();
            let raw = r.take(len.checked_mul(4).ok_or_else(|| corrupt("tensor too large"))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            tensors.push(CheckpointTensor { name, shape, data });
        }
        let probe_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self { encoder: header.encoder, extra: header.extra, tensors, probe_hash })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), EncoderError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes())
            .map_err(|e| EncoderError::CorruptCheckpoint(format!("cannot write {}: {e}", path.display())))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, EncoderError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)
            .map_err(|e| EncoderError::CorruptCheckpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    /// Rebuilds the encoder, checking the architecture against `expected`
    /// and the probe output against the stored hash.
    pub fn to_encoder(&self, expected: Option<&EncoderConfig>) -> Result<Encoder, EncoderError> {
        if let Some(exp) = expected {
            if !exp.same_architecture(&self.encoder) {
                return Err(EncoderError::ConfigMismatch(format!(
                    "checkpoint has C={} backbone={:?} frame={}x{}, expected C={} backbone={:?} frame={}x{}",
                    self.encoder.feature_channels,
                    self.encoder.backbone,
                    self.encoder.frame.height,
                    self.encoder.frame.width,
                    exp.feature_channels,
                    exp.backbone,
                    exp.frame.height,
                    exp.frame.width,
                )));
            }
        }
        let template = Encoder::new(self.encoder.clone()).map_err(|e| corrupt(&e.to_string()))?;
        let mut params = vec![0.0f32; template.n_params()];
        for info in template.param_infos() {
            let t = self.tensor(&info.name).ok_or_else(|| corrupt(&format!("missing tensor {}", info.name)))?;
            if t.shape != info.shape {
                return Err(corrupt(&format!("tensor {} has shape {:?}, expected {:?}", info.name, t.shape, info.shape)));
            }
            params[info.offset..info.offset + info.len()].copy_from_slice(&t.data);
        }
        let encoder = Encoder::from_parts(self.encoder.clone(), params)?;
        if encoder.probe_hash() != self.probe_hash {
            return Err(corrupt("probe output hash does not match"));
        }
        Ok(encoder)
    }
}

fn corrupt(msg: &str) -> EncoderError {
    EncoderError::CorruptCheckpoint(msg.to_string())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EncoderError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| corrupt("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, EncoderError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

impl Encoder {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EncoderError> {
        Checkpoint::from_encoder(self, serde_json::Value::Null, Vec::new()).write(path)
    }

    pub fn load(path: impl AsRef<Path>, expected: Option<&EncoderConfig>) -> Result<Self, EncoderError> {
        Checkpoint::read(path)?.to_encoder(expected)
    }
}
