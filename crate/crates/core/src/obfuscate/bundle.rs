//! The OBFB kernel bundle: the runtime-side sidecar that resolves every
//! custom operator name to its real kernel.
//!
//! ```text
//! magic "OBFB" | version u32 = 1 | record count u32
//! record: custom_name (u32 len + UTF-8), real_builtin_code u16,
//!         options (u32 len + bytes), true inputs (u32 n + u32*),
//!         weights u32 n, { dtype u8, rank u32, dims u32*, data (u64 len + bytes) }*
//! ```
//!
//! Records are written in ascending name order.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::format::{element_count, DType};
use crate::interpreter::TensorValue;
use crate::wire::{Reader, WireError, Writer};

pub const BUNDLE_MAGIC: &[u8; 4] = b"OBFB";
pub const BUNDLE_VERSION: u32 = 1;

/// Real-code marker for injected extra layers. Appears only in bundle and
/// plan records; the options of such a record hold the decoy output shape.
pub const DECOY_CODE: u16 = 0xFFFE;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("bad magic: expected \"OBFB\"")]
    BadMagic,
    #[error("unsupported bundle version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated section: {0}")]
    TruncatedSection(#[from] WireError),
    #[error("record `{name}`: {message}")]
    BadRecord { name: String, message: String },
    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundleRecord {
    pub real_builtin_code: u16,
    pub real_options: Vec<u8>,
    /// Positions into the operator's declared input list that carry real
    /// activations, in kernel argument order.
    pub true_input_positions: Vec<u32>,
    /// Encapsulated constants, appended after the true inputs.
    pub weights: Vec<TensorValue>,
}

impl BundleRecord {
    pub fn is_decoy(&self) -> bool {
        self.real_builtin_code == DECOY_CODE
    }

    pub fn weight_bytes(&self) -> usize {
        self.weights.iter().map(TensorValue::byte_size).sum()
    }
}

/// Encodes a decoy output shape as record options.
pub fn encode_decoy_shape(shape: &[u32]) -> Vec<u8> {
    let mut w = Writer::new();
    w.u32_list(shape);
    w.finish()
}

pub fn decode_decoy_shape(options: &[u8]) -> Option<Vec<u32>> {
    let mut r = Reader::new(options);
    let shape = r.u32_list("decoy shape").ok()?;
    (r.remaining() == 0 && !shape.is_empty() && shape.iter().all(|&d| d >= 1)).then_some(shape)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KernelBundle {
    pub records: BTreeMap<String, BundleRecord>,
}

impl KernelBundle {
    pub fn get(&self, name: &str) -> Option<&BundleRecord> {
        self.records.get(name)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn weight_bytes(&self) -> usize {
        self.records.values().map(BundleRecord::weight_bytes).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(BUNDLE_MAGIC);
        w.u32(BUNDLE_VERSION);
        w.len_u32(self.records.len());
        for (name, rec) in &self.records {
            w.str(name);
            w.u16(rec.real_builtin_code);
            w.len_u32(rec.real_options.len());
            w.bytes(&rec.real_options);
            w.u32_list(&rec.true_input_positions);
            w.len_u32(rec.weights.len());
            for t in &rec.weights {
                w.u8(t.dtype().to_u8());
                w.u32_list(&t.shape);
                let data = t.to_le_bytes();
                w.u64(data.len() as u64);
                w.bytes(&data);
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BundleError> {
        if bytes.len() < 4 || &bytes[..4] != BUNDLE_MAGIC {
            return Err(BundleError::BadMagic);
        }
        let mut r = Reader::new(&bytes[4..]);
        let version = r.u32("bundle header")?;
        if version != BUNDLE_VERSION {
            return Err(BundleError::UnsupportedVersion(version));
        }
        let n = r.count(18, "bundle records")?;
        let mut records = BTreeMap::new();
        for _ in 0..n {
            let name = r.str("bundle records")?;
            let bad = |message: String| BundleError::BadRecord {
                name: name.clone(),
                message,
            };
            let real_builtin_code = r.u16("bundle records")?;
            let len = r.u32("bundle records")? as u64;
            let real_options = r.take(len, "bundle records")?.to_vec();
            let true_input_positions = r.u32_list("bundle records")?;
            let nw = r.count(13, "bundle weights")?;
            let mut weights = Vec::with_capacity(nw);
            for _ in 0..nw {
                let raw = r.u8("bundle weights")?;
                let dtype = DType::from_u8(raw).ok_or_else(|| bad(format!("unknown dtype {raw}")))?;
                let shape = r.u32_list("bundle weights")?;
                let len = r.u64("bundle weights")?;
                let data = r.take(len, "bundle weights")?;
                let t = TensorValue::from_le_bytes(dtype, &shape, data).ok_or_else(|| {
                    bad(format!(
                        "weight of shape {shape:?} needs {} bytes, found {len}",
                        element_count(&shape) * dtype.size()
                    ))
                })?;
                weights.push(t);
            }
            let rec = BundleRecord {
                real_builtin_code,
                real_options,
                true_input_positions,
                weights,
            };
            if records.insert(name.clone(), rec).is_some() {
                return Err(bad("duplicate record name".into()));
            }
        }
        if r.remaining() != 0 {
            return Err(BundleError::TrailingBytes(r.remaining()));
        }
        Ok(Self { records })
    }
}
