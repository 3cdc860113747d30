//! HMR1 raster container.
//!
//! ```text
//! offset 0     8 bytes   magic  48 4D 52 31 0D 0A 1A 0A  ("HMR1\r\n\x1a\n")
//! offset 8     4 bytes   header length L, u32 little-endian
//! offset 12    L bytes   UTF-8 JSON header
//! offset 12+L  n bytes   payload, f32 little-endian, row-major, channel-major
//! trailer      4 bytes   CRC-32 (IEEE) of every preceding byte, little-endian
//! ```
//!
//! Header keys: `width`, `height`, `channels`, `gsd`, `kind`
//! (`image` | `height` | `footprint`), `dtype` (always `"f32"`) and
//! `byte_length` (= n = width·height·channels·4).

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: [u8; 8] = *b"HMR1\r\n\x1a\n";
const PREFIX: usize = 12;
const MAX_HEADER: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RasterKind {
    Image,
    Height,
    Footprint,
}

/// A single-band or multi-band raster. Values are row-major within a band,
/// bands stored one after another.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterPatch {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub gsd: f64,
    pub kind: RasterKind,
    pub values: Vec<f32>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("bad_magic at byte 0: not an HMR1 raster")]
    BadMagic,
    #[error("truncated_header at byte {offset}: need {needed} bytes, have {available}")]
    TruncatedHeader {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("invalid_header at byte {offset}: {reason}")]
    InvalidHeader { offset: usize, reason: String },
    #[error("truncated_payload at byte {offset}: header declares {expected} payload bytes, {available} present")]
    TruncatedPayload {
        offset: usize,
        expected: usize,
        available: usize,
    },
    #[error("trailing_bytes at byte {offset}: {extra} unexpected bytes after checksum")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("checksum_mismatch at byte {offset}: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch {
        offset: usize,
        stored: u32,
        computed: u32,
    },
    #[error("invalid_value at byte {offset}: {reason}")]
    InvalidValue { offset: usize, reason: String },
    #[error("io: {0}")]
    Io(String),
}

impl RasterError {
    pub fn code(&self) -> &'static str {
        match self {
            RasterError::BadMagic => "bad_magic",
            RasterError::TruncatedHeader { .. } => "truncated_header",
            RasterError::InvalidHeader { .. } => "invalid_header",
            RasterError::TruncatedPayload { .. } => "truncated_payload",
            RasterError::TrailingBytes { .. } => "trailing_bytes",
            RasterError::ChecksumMismatch { .. } => "checksum_mismatch",
            RasterError::InvalidValue { .. } => "invalid_value",
            RasterError::Io(_) => "io",
        }
    }

    /// Byte offset the error refers to, when there is one.
    pub fn offset(&self) -> Option<usize> {
        match self {
            RasterError::BadMagic => Some(0),
            RasterError::TruncatedHeader { offset, .. }
            | RasterError::InvalidHeader { offset, .. }
            | RasterError::TruncatedPayload { offset, .. }
            | RasterError::TrailingBytes { offset, .. }
            | RasterError::ChecksumMismatch { offset, .. }
            | RasterError::InvalidValue { offset, .. } => Some(*offset),
            RasterError::Io(_) => None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    width: usize,
    height: usize,
    channels: usize,
    gsd: f64,
    kind: RasterKind,
    dtype: String,
    byte_length: usize,
}

impl RasterPatch {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        gsd: f64,
        kind: RasterKind,
        values: Vec<f32>,
    ) -> Result<Self, RasterError> {
        let p = RasterPatch {
            width,
            height,
            channels,
            gsd,
            kind,
            values,
        };
        p.validate(PREFIX)?;
        Ok(p)
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    fn validate(&self, payload_offset: usize) -> Result<(), RasterError> {
        let bad = |reason: String| RasterError::InvalidHeader {
            offset: PREFIX,
            reason,
        };
        if self.width == 0 || self.height == 0 || self.channels == 0 {
            return Err(bad("width, height and channels must be positive".into()));
        }
        if !(self.gsd.is_finite() && self.gsd > 0.0) {
            return Err(bad(format!("gsd {} is not a positive number", self.gsd)));
        }
        if self.kind != RasterKind::Image && self.channels != 1 {
            return Err(bad(format!("{:?} rasters have one channel", self.kind)));
        }
        let n = self
            .width
            .checked_mul(self.height)
            .and_then(|v| v.checked_mul(self.channels))
            .ok_or_else(|| bad("extent overflow".into()))?;
        if self.values.len() != n {
            return Err(bad(format!(
                "{} values for {}x{}x{}",
                self.values.len(),
                self.width,
                self.height,
                self.channels
            )));
        }
        for (i, &v) in self.values.iter().enumerate() {
            let ok = match self.kind {
                RasterKind::Image => v.is_finite(),
                RasterKind::Height => v.is_finite() && v >= 0.0,
                RasterKind::Footprint => v == 0.0 || v == 1.0,
            };
            if !ok {
                return Err(RasterError::InvalidValue {
                    offset: payload_offset + 4 * i,
                    reason: format!("{v} is not a valid {:?} value", self.kind),
                });
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            width: self.width,
            height: self.height,
            channels: self.channels,
            gsd: self.gsd,
            kind: self.kind,
            dtype: "f32".into(),
            byte_length: self.values.len() * 4,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(PREFIX + json.len() + header.byte_length + 4);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RasterError> {
        if bytes.len() < MAGIC.len() || bytes[..MAGIC.len()] != MAGIC {
            return Err(RasterError::BadMagic);
        }
        if bytes.len() < PREFIX {
            return Err(RasterError::TruncatedHeader {
                offset: MAGIC.len(),
                needed: 4,
                available: bytes.len() - MAGIC.len(),
            });
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        if hlen == 0 || hlen > MAX_HEADER {
            return Err(RasterError::InvalidHeader {
                offset: 8,
                reason: format!("header length {hlen} outside 1..={MAX_HEADER}"),
            });
        }
        if bytes.len() < PREFIX + hlen {
            return Err(RasterError::TruncatedHeader {
                offset: PREFIX,
                needed: hlen,
                available: bytes.len() - PREFIX,
            });
        }
        let header: Header = serde_json::from_slice(&bytes[PREFIX..PREFIX + hlen]).map_err(|e| {
            RasterError::InvalidHeader {
                offset: PREFIX + e.column().saturating_sub(1).min(hlen.saturating_sub(1)),
                reason: e.to_string(),
            }
        })?;
        if header.dtype != "f32" {
            return Err(RasterError::InvalidHeader {
                offset: PREFIX,
                reason: format!("unsupported dtype {:?}", header.dtype),
            });
        }
        let n = header
            .width
            .checked_mul(header.height)
            .and_then(|v| v.checked_mul(header.channels))
            .and_then(|v| v.checked_mul(4));
        if n != Some(header.byte_length) {
            return Err(RasterError::InvalidHeader {
                offset: PREFIX,
                reason: format!(
                    "byte_length {} disagrees with {}x{}x{} f32",
                    header.byte_length, header.width, header.height, header.channels
                ),
            });
        }
        let payload_at = PREFIX + hlen;
        let crc_at = payload_at + header.byte_length;
        let available = bytes.len() - payload_at;
        if available < header.byte_length + 4 {
            return Err(RasterError::TruncatedPayload {
                offset: payload_at,
                expected: header.byte_length,
                available: available.saturating_sub(4),
            });
        }
        if bytes.len() > crc_at + 4 {
            return Err(RasterError::TrailingBytes {
                offset: crc_at + 4,
                extra: bytes.len() - crc_at - 4,
            });
        }
        let stored = u32::from_le_bytes(bytes[crc_at..crc_at + 4].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(&bytes[..crc_at]);
        if stored != computed {
            return Err(RasterError::ChecksumMismatch {
                offset: crc_at,
                stored,
                computed,
            });
        }
        let values = bytes[payload_at..crc_at]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let patch = RasterPatch {
            width: header.width,
            height: header.height,
            channels: header.channels,
            gsd: header.gsd,
            kind: header.kind,
            values,
        };
        patch.validate(payload_at)?;
        Ok(patch)
    }
}

pub fn write_raster(patch: &RasterPatch, path: &Path) -> Result<(), RasterError> {
    std::fs::write(path, patch.to_bytes())
        .map_err(|e| RasterError::Io(format!("{}: {e}", path.display())))
}

pub fn read_raster(path: &Path) -> Result<RasterPatch, RasterError> {
    let bytes =
        std::fs::read(path).map_err(|e| RasterError::Io(format!("{}: {e}", path.display())))?;
    RasterPatch::from_bytes(&bytes)
}
