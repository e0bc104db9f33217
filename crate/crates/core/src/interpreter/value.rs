use crate::format::{element_count, DType};

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I32(Vec<i32>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::I32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::I32(_) => DType::I32,
            TensorData::U8(_) => DType::U8,
        }
    }
}

/// A runtime tensor: shape plus row-major data (NHWC for rank 4).
#[derive(Debug, Clone, PartialEq)]
pub struct TensorValue {
    pub shape: Vec<u32>,
    pub data: TensorData,
}

impl TensorValue {
    pub fn f32(shape: impl Into<Vec<u32>>, data: Vec<f32>) -> Self {
        let shape = shape.into();
        assert_eq!(element_count(&shape), data.len(), "data length must match shape");
        Self {
            shape,
            data: TensorData::F32(data),
        }
    }

    pub fn i32(shape: impl Into<Vec<u32>>, data: Vec<i32>) -> Self {
        let shape = shape.into();
        assert_eq!(element_count(&shape), data.len(), "data length must match shape");
        Self {
            shape,
            data: TensorData::I32(data),
        }
    }

    pub fn zeros(dtype: DType, shape: impl Into<Vec<u32>>) -> Self {
        let shape = shape.into();
        let n = element_count(&shape);
        let data = match dtype {
            DType::F32 => TensorData::F32(vec![0.0; n]),
            DType::I32 => TensorData::I32(vec![0; n]),
            DType::U8 => TensorData::U8(vec![0; n]),
        };
        Self { shape, data }
    }

    /// Decodes little-endian bytes. Returns `None` if the length does not
    /// match the shape.
    pub fn from_le_bytes(dtype: DType, shape: &[u32], bytes: &[u8]) -> Option<Self> {
        let n = element_count(shape);
        if bytes.len() != n * dtype.size() {
            return None;
        }
        let data = match dtype {
            DType::F32 => TensorData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::I32 => TensorData::I32(
                bytes
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::U8 => TensorData::U8(bytes.to_vec()),
        };
        Some(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        match &self.data {
            TensorData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            TensorData::I32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            TensorData::U8(v) => v.clone(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn byte_size(&self) -> usize {
        self.len() * self.dtype().size()
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i32(&self) -> Option<&[i32]> {
        match &self.data {
            TensorData::I32(v) => Some(v),
            _ => None,
        }
    }

    /// Bitwise equality, so that `-0.0 != 0.0` and NaN payloads are compared
    /// exactly.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.to_le_bytes() == other.to_le_bytes()
    }
}
