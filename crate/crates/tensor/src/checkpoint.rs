//! Named-tensor checkpoint container.
//!
//! ```text
//! HEIGHTBINS-CHECKPOINT 1
//! meta <key> <value to end of line>
//! tensor <name> <d0>x<d1>x... <byte offset> <byte length>
//! end
//! <payload: little-endian f64 values>
//! ```
//!
//! Shapes of rank zero are written as `scalar`. Offsets are relative to the
//! first payload byte, immediately after the `end` line.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::tensor::{numel, Params, Tensor};

const MAGIC_LINE: &str = "HEIGHTBINS-CHECKPOINT 1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint header line {line}: {msg}")]
    Header { line: usize, msg: String },
    #[error("checkpoint payload: {0}")]
    Payload(String),
}

/// Parameters plus free-form string metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: Params,
}

impl Checkpoint {
    pub fn new(params: Params) -> Self {
        Checkpoint {
            meta: BTreeMap::new(),
            params,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        let mut header = String::new();
        header.push_str(MAGIC_LINE);
        header.push('\n');
        for (k, v) in &self.meta {
            if k.is_empty() || k.chars().any(char::is_whitespace) || v.contains('\n') {
                return Err(CheckpointError::Payload(format!(
                    "metadata entry {k:?} cannot be encoded"
                )));
            }
            header.push_str(&format!("meta {k} {v}\n"));
        }
        let mut offset = 0usize;
        for (_, name, t) in self.params.iter() {
            let shape = if t.shape().is_empty() {
                "scalar".to_string()
            } else {
                t.shape()
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join("x")
            };
            let len = t.len() * 8;
            header.push_str(&format!("tensor {name} {shape} {offset} {len}\n"));
            offset += len;
        }
        header.push_str("end\n");

        let mut out = header.into_bytes();
        out.reserve(offset);
        for (_, _, t) in self.params.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut meta = BTreeMap::new();
        let mut entries = Vec::new();
        let mut pos = 0usize;
        let mut line_no = 0usize;
        let mut ended = false;
        while pos < bytes.len() {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .map(|i| pos + i)
                .ok_or_else(|| CheckpointError::Header {
                    line: line_no + 1,
                    msg: "unterminated header".into(),
                })?;
            line_no += 1;
            let line = std::str::from_utf8(&bytes[pos..end]).map_err(|_| {
                CheckpointError::Header {
                    line: line_no,
                    msg: "header is not UTF-8".into(),
                }
            })?;
            pos = end + 1;
            let bad = |msg: &str| CheckpointError::Header {
                line: line_no,
                msg: msg.to_string(),
            };
            if line_no == 1 {
                if line != MAGIC_LINE {
                    return Err(bad("missing checkpoint magic"));
                }
                continue;
            }
            if line == "end" {
                ended = true;
                break;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                meta.insert(k.to_string(), v.to_string());
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let fields: Vec<&str> = rest.split(' ').collect();
                let [name, shape, offset, len] = fields[..] else {
                    return Err(bad("tensor line needs name, shape, offset, length"));
                };
                let shape: Vec<usize> = if shape == "scalar" {
                    vec![]
                } else {
                    shape
                        .split('x')
                        .map(str::parse)
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad("malformed shape"))?
                };
                let offset: usize = offset.parse().map_err(|_| bad("malformed offset"))?;
                let len: usize = len.parse().map_err(|_| bad("malformed length"))?;
                if len != numel(&shape) * 8 {
                    return Err(bad("byte length disagrees with shape"));
                }
                entries.push((name.to_string(), shape, offset, len));
            } else {
                return Err(bad("unknown header record"));
            }
        }
        if !ended {
            return Err(CheckpointError::Header {
                line: line_no,
                msg: "missing `end` record".into(),
            });
        }

        let payload = &bytes[pos..];
        let mut params = Params::new();
        let mut expected_offset = 0;
        for (name, shape, offset, len) in entries {
            if offset != expected_offset || offset + len > payload.len() {
                return Err(CheckpointError::Payload(format!(
                    "tensor `{name}` at bytes {offset}..{} exceeds or misaligns a {}-byte payload",
                    offset + len,
                    payload.len()
                )));
            }
            let data = payload[offset..offset + len]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Payload(e.to_string()))?;
            params
                .insert(name, t)
                .map_err(|e| CheckpointError::Payload(e.to_string()))?;
            expected_offset += len;
        }
        if expected_offset != payload.len() {
            return Err(CheckpointError::Payload(format!(
                "{} trailing payload bytes",
                payload.len() - expected_offset
            )));
        }
        Ok(Checkpoint { meta, params })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
