//! Fixed-layout builtin option structs.
//!
//! Every struct is little-endian and packed:
//!
//! | kernel                      | layout                                                   |
//! |-----------------------------|----------------------------------------------------------|
//! | Conv2D / DepthwiseConv2D    | stride_w u16, stride_h u16, padding u8, activation u8    |
//! | MaxPool2D / AvgPool2D       | filter_w u16, filter_h u16, stride_w u16, stride_h u16, padding u8 |
//! | Dense                       | activation u8                                            |
//! | Concat                      | axis i32                                                 |
//! | everything else             | empty                                                    |

use serde_json::{json, Value};
use thiserror::Error;

use super::BuiltinKind;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OptionsError {
    #[error("{kind} options must be {expected} bytes, got {actual}")]
    Length {
        kind: BuiltinKind,
        expected: usize,
        actual: usize,
    },
    #[error("invalid {field} value {value} in {kind} options")]
    Value {
        kind: BuiltinKind,
        field: &'static str,
        value: u8,
    },
    #[error("{kind} options have a zero stride or filter size")]
    ZeroWindow { kind: BuiltinKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Padding {
    Valid,
    Same,
}

impl Padding {
    fn from_u8(v: u8, kind: BuiltinKind) -> Result<Self, OptionsError> {
        match v {
            0 => Ok(Padding::Valid),
            1 => Ok(Padding::Same),
            _ => Err(OptionsError::Value { kind, field: "padding", value: v }),
        }
    }

    fn as_u8(self) -> u8 {
        match self {
            Padding::Valid => 0,
            Padding::Same => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Padding::Valid => "VALID",
            Padding::Same => "SAME",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    None,
    Relu,
    Relu6,
}

impl Activation {
    fn from_u8(v: u8, kind: BuiltinKind) -> Result<Self, OptionsError> {
        match v {
            0 => Ok(Activation::None),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Relu6),
            _ => Err(OptionsError::Value { kind, field: "activation", value: v }),
        }
    }

    fn as_u8(self) -> u8 {
        match self {
            Activation::None => 0,
            Activation::Relu => 1,
            Activation::Relu6 => 2,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::None => "NONE",
            Activation::Relu => "RELU",
            Activation::Relu6 => "RELU6",
        }
    }

    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::None => x,
            Activation::Relu => x.max(0.0),
            Activation::Relu6 => x.clamp(0.0, 6.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvOptions {
    pub stride_w: u16,
    pub stride_h: u16,
    pub padding: Padding,
    pub activation: Activation,
}

impl ConvOptions {
    pub fn new(stride: u16, padding: Padding, activation: Activation) -> Self {
        Self {
            stride_w: stride,
            stride_h: stride,
            padding,
            activation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PoolOptions {
    pub filter_w: u16,
    pub filter_h: u16,
    pub stride_w: u16,
    pub stride_h: u16,
    pub padding: Padding,
}

impl PoolOptions {
    pub fn new(filter: u16, stride: u16, padding: Padding) -> Self {
        Self {
            filter_w: filter,
            filter_h: filter,
            stride_w: stride,
            stride_h: stride,
            padding,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DenseOptions {
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConcatOptions {
    pub axis: i32,
}

/// Decoded option struct of one builtin operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BuiltinOptions {
    Conv(ConvOptions),
    Pool(PoolOptions),
    Dense(DenseOptions),
    Concat(ConcatOptions),
    None,
}

impl BuiltinOptions {
    pub fn encoded_len(kind: BuiltinKind) -> usize {
        match kind {
            BuiltinKind::Conv2D | BuiltinKind::DepthwiseConv2D => 6,
            BuiltinKind::MaxPool2D | BuiltinKind::AvgPool2D => 9,
            BuiltinKind::Dense => 1,
            BuiltinKind::Concat => 4,
            _ => 0,
        }
    }

    pub fn decode(kind: BuiltinKind, bytes: &[u8]) -> Result<Self, OptionsError> {
        let expected = Self::encoded_len(kind);
        if bytes.len() != expected {
            return Err(OptionsError::Length {
                kind,
                expected,
                actual: bytes.len(),
            });
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        Ok(match kind {
            BuiltinKind::Conv2D | BuiltinKind::DepthwiseConv2D => {
                let o = ConvOptions {
                    stride_w: u16_at(0),
                    stride_h: u16_at(2),
                    padding: Padding::from_u8(bytes[4], kind)?,
                    activation: Activation::from_u8(bytes[5], kind)?,
                };
                if o.stride_w == 0 || o.stride_h == 0 {
                    return Err(OptionsError::ZeroWindow { kind });
                }
                BuiltinOptions::Conv(o)
            }
            BuiltinKind::MaxPool2D | BuiltinKind::AvgPool2D => {
                let o = PoolOptions {
                    filter_w: u16_at(0),
                    filter_h: u16_at(2),
                    stride_w: u16_at(4),
                    stride_h: u16_at(6),
                    padding: Padding::from_u8(bytes[8], kind)?,
                };
                if o.filter_w == 0 || o.filter_h == 0 || o.stride_w == 0 || o.stride_h == 0 {
                    return Err(OptionsError::ZeroWindow { kind });
                }
                BuiltinOptions::Pool(o)
            }
            BuiltinKind::Dense => BuiltinOptions::Dense(DenseOptions {
                activation: Activation::from_u8(bytes[0], kind)?,
            }),
            BuiltinKind::Concat => BuiltinOptions::Concat(ConcatOptions {
                axis: i32::from_le_bytes(bytes.try_into().unwrap()),
            }),
            _ => BuiltinOptions::None,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            BuiltinOptions::Conv(o) => {
                out.extend_from_slice(&o.stride_w.to_le_bytes());
                out.extend_from_slice(&o.stride_h.to_le_bytes());
                out.push(o.padding.as_u8());
                out.push(o.activation.as_u8());
            }
            BuiltinOptions::Pool(o) => {
                for v in [o.filter_w, o.filter_h, o.stride_w, o.stride_h] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.push(o.padding.as_u8());
            }
            BuiltinOptions::Dense(o) => out.push(o.activation.as_u8()),
            BuiltinOptions::Concat(o) => out.extend_from_slice(&o.axis.to_le_bytes()),
            BuiltinOptions::None => {}
        }
        out
    }

    /// Flat attribute map, used by both the JSON dump and the converter.
    pub fn attributes(&self) -> Vec<(&'static str, Value)> {
        match self {
            BuiltinOptions::Conv(o) => vec![
                ("stride_w", json!(o.stride_w)),
                ("stride_h", json!(o.stride_h)),
                ("padding", json!(o.padding.name())),
                ("fused_activation_function", json!(o.activation.name())),
            ],
            BuiltinOptions::Pool(o) => vec![
                ("filter_width", json!(o.filter_w)),
                ("filter_height", json!(o.filter_h)),
                ("stride_w", json!(o.stride_w)),
                ("stride_h", json!(o.stride_h)),
                ("padding", json!(o.padding.name())),
            ],
            BuiltinOptions::Dense(o) => {
                vec![("fused_activation_function", json!(o.activation.name()))]
            }
            BuiltinOptions::Concat(o) => vec![("axis", json!(o.axis))],
            BuiltinOptions::None => vec![],
        }
    }
}
