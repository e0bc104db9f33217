//! NNT1 tensor files used by the command line.
//!
//! A 24-byte header `{magic "NNT1", dtype u8, rank u8, pad u16, dims 4 x u32}`
//! with unused dims set to 0, followed by little-endian element data.

use thiserror::Error;

use crate::format::{element_count, DType};

use super::TensorValue;

pub const NNT_MAGIC: &[u8; 4] = b"NNT1";
pub const NNT_HEADER_LEN: usize = 24;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TensorFileError {
    #[error("bad magic: expected \"NNT1\"")]
    BadMagic,
    #[error("file shorter than the {NNT_HEADER_LEN}-byte header")]
    ShortHeader,
    #[error("unknown dtype {0}")]
    BadDtype(u8),
    #[error("rank {0} outside 0..=4")]
    BadRank(u8),
    #[error("dimension {index} is {value}; used dims must be >= 1 and unused dims 0")]
    BadDim { index: usize, value: u32 },
    #[error("payload is {actual} bytes, shape needs {expected}")]
    Length { expected: usize, actual: usize },
}

pub fn encode_tensor(t: &TensorValue) -> Result<Vec<u8>, TensorFileError> {
    if t.shape.len() > 4 {
        return Err(TensorFileError::BadRank(t.shape.len() as u8));
    }
    let mut out = Vec::with_capacity(NNT_HEADER_LEN + t.byte_size());
    out.extend_from_slice(NNT_MAGIC);
    out.push(t.dtype().to_u8());
    out.push(t.shape.len() as u8);
    out.extend_from_slice(&[0, 0]);
    for i in 0..4 {
        out.extend_from_slice(&t.shape.get(i).copied().unwrap_or(0).to_le_bytes());
    }
    out.extend_from_slice(&t.to_le_bytes());
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<TensorValue, TensorFileError> {
    if bytes.len() >= 4 && &bytes[..4] != NNT_MAGIC {
        return Err(TensorFileError::BadMagic);
    }
    if bytes.len() < NNT_HEADER_LEN {
        return Err(TensorFileError::ShortHeader);
    }
    let dtype = DType::from_u8(bytes[4]).ok_or(TensorFileError::BadDtype(bytes[4]))?;
    let rank = bytes[5];
    if rank > 4 {
        return Err(TensorFileError::BadRank(rank));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    for i in 0..4 {
        let at = 8 + 4 * i;
        let d = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let used = i < rank as usize;
        if used != (d != 0) {
            return Err(TensorFileError::BadDim { index: i, value: d });
        }
        if used {
            shape.push(d);
        }
    }
    let payload = &bytes[NNT_HEADER_LEN..];
    let expected = element_count(&shape) * dtype.size();
    TensorValue::from_le_bytes(dtype, &shape, payload).ok_or(TensorFileError::Length {
        expected,
        actual: payload.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let t = TensorValue::f32([1, 2, 3], (0..6).map(|i| i as f32 * 0.5).collect());
        let bytes = encode_tensor(&t).unwrap();
        assert_eq!(bytes.len(), 24 + 24);
        assert_eq!(&bytes[..8], &[b'N', b'N', b'T', b'1', 0, 3, 0, 0]);
        assert_eq!(&bytes[20..24], &[0, 0, 0, 0]);
        assert!(decode_tensor(&bytes).unwrap().bit_eq(&t));
    }

    #[test]
    fn rejects_corruption() {
        let t = TensorValue::i32([2], vec![1, 2]);
        let bytes = encode_tensor(&t).unwrap();
        assert_eq!(decode_tensor(b"NNM1"), Err(TensorFileError::BadMagic));
        assert_eq!(decode_tensor(&bytes[..10]), Err(TensorFileError::ShortHeader));
        assert!(matches!(decode_tensor(&bytes[..27]), Err(TensorFileError::Length { .. })));
        let mut b = bytes.clone();
        b[16] = 1;
        assert!(matches!(decode_tensor(&b), Err(TensorFileError::BadDim { index: 2, .. })));
        assert!(encode_tensor(&TensorValue::f32([1, 1, 1, 1, 1], vec![0.0])).is_err());
    }
}
