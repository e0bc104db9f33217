//! Builtin F32 kernels.
//!
//! Every reduction accumulates into an `f32` starting at `0.0`, visiting the
//! window in row-major order with the channel loop innermost; bias is added
//! after the reduction and the fused activation last. Reusing this order in
//! every execution path is what makes obfuscated and plain runs bit-identical.

use crate::format::{element_count, Activation, BuiltinKind, BuiltinOptions, DType, Padding};

use super::value::{TensorData, TensorValue};
use super::ExecError;

fn mismatch(kind: BuiltinKind, detail: impl Into<String>) -> ExecError {
    ExecError::ShapeMismatch {
        kernel: kind,
        detail: detail.into(),
    }
}

fn f32_data(kind: BuiltinKind, t: &TensorValue) -> Result<&[f32], ExecError> {
    t.as_f32().ok_or(ExecError::UnsupportedDtype {
        kernel: kind,
        dtype: t.dtype(),
    })
}

fn arity(kind: BuiltinKind, got: usize, min: usize, max: usize) -> Result<(), ExecError> {
    if got < min || got > max {
        return Err(ExecError::Arity {
            kernel: kind,
            expected: if min == max {
                format!("{min}")
            } else {
                format!("{min}..={max}")
            },
            got,
        });
    }
    Ok(())
}

/// Output extent and leading pad of one spatial axis.
fn window_axis(
    kind: BuiltinKind,
    input: u32,
    filter: u32,
    stride: u32,
    padding: Padding,
) -> Result<(u32, u32), ExecError> {
    match padding {
        Padding::Valid => {
            if input < filter {
                return Err(mismatch(
                    kind,
                    format!("VALID window {filter} larger than input extent {input}"),
                ));
            }
            Ok(((input - filter) / stride + 1, 0))
        }
        Padding::Same => Ok((input.div_ceil(stride), (filter - 1) / 2)),
    }
}

fn rank4(kind: BuiltinKind, shape: &[u32], what: &str) -> Result<[u32; 4], ExecError> {
    shape
        .try_into()
        .map_err(|_| mismatch(kind, format!("{what} must be rank 4, got {shape:?}")))
}

/// Resolves a reshape target against the input element count. At most one
/// entry may be -1.
pub fn reshape_target(input_elems: usize, target: &[i32]) -> Result<Vec<u32>, ExecError> {
    let kind = BuiltinKind::Reshape;
    let mut unknown = None;
    let mut known = 1usize;
    for (i, &d) in target.iter().enumerate() {
        match d {
            -1 if unknown.is_none() => unknown = Some(i),
            d if d >= 1 => known *= d as usize,
            _ => return Err(mismatch(kind, format!("invalid target dimension {d}"))),
        }
    }
    let mut out: Vec<u32> = target.iter().map(|&d| d.max(0) as u32).collect();
    if let Some(i) = unknown {
        if known == 0 || input_elems % known != 0 {
            return Err(mismatch(kind, format!("cannot infer -1 for {input_elems} elements")));
        }
        out[i] = (input_elems / known) as u32;
    }
    if element_count(&out) != input_elems {
        return Err(mismatch(
            kind,
            format!("target {target:?} does not hold {input_elems} elements"),
        ));
    }
    Ok(out)
}

/// Static output shape of a builtin kernel. `reshape` carries the target
/// values of a Reshape operator's shape operand when they are known.
pub fn infer_output_shape(
    kind: BuiltinKind,
    options: &BuiltinOptions,
    inputs: &[&[u32]],
    reshape: Option<&[i32]>,
) -> Result<Vec<u32>, ExecError> {
    use BuiltinKind as K;
    match kind {
        K::Relu | K::Relu6 | K::Softmax => {
            arity(kind, inputs.len(), 1, 1)?;
            if kind == K::Softmax && inputs[0].is_empty() {
                return Err(mismatch(kind, "softmax needs rank >= 1"));
            }
            Ok(inputs[0].to_vec())
        }
        K::Add => {
            arity(kind, inputs.len(), 2, 2)?;
            if inputs[0] != inputs[1] {
                return Err(mismatch(kind, format!("{:?} vs {:?}", inputs[0], inputs[1])));
            }
            Ok(inputs[0].to_vec())
        }
        K::Conv2D | K::DepthwiseConv2D => {
            arity(kind, inputs.len(), 2, 3)?;
            let BuiltinOptions::Conv(o) = options else {
                return Err(mismatch(kind, "missing conv options"));
            };
            let [n, h, w, c] = rank4(kind, inputs[0], "input")?;
            let [wo, kh, kw, wc] = rank4(kind, inputs[1], "filter")?;
            let out_c = if kind == K::Conv2D {
                if wc != c {
                    return Err(mismatch(kind, format!("filter channels {wc} != input channels {c}")));
                }
                wo
            } else {
                if wo != 1 || wc % c != 0 {
                    return Err(mismatch(kind, format!("depthwise filter {:?} vs {c} channels", inputs[1])));
                }
                wc
            };
            if let Some(b) = inputs.get(2) {
                if *b != [out_c] {
                    return Err(mismatch(kind, format!("bias {b:?} for {out_c} channels")));
                }
            }
            let (oh, _) = window_axis(kind, h, kh, o.stride_h as u32, o.padding)?;
            let (ow, _) = window_axis(kind, w, kw, o.stride_w as u32, o.padding)?;
            Ok(vec![n, oh, ow, out_c])
        }
        K::MaxPool2D | K::AvgPool2D => {
            arity(kind, inputs.len(), 1, 1)?;
            let BuiltinOptions::Pool(o) = options else {
                return Err(mismatch(kind, "missing pool options"));
            };
            let [n, h, w, c] = rank4(kind, inputs[0], "input")?;
            let (oh, _) = window_axis(kind, h, o.filter_h as u32, o.stride_h as u32, o.padding)?;
            let (ow, _) = window_axis(kind, w, o.filter_w as u32, o.stride_w as u32, o.padding)?;
            Ok(vec![n, oh, ow, c])
        }
        K::Dense => {
            arity(kind, inputs.len(), 2, 3)?;
            let [units, k]: [u32; 2] = inputs[1]
                .try_into()
                .map_err(|_| mismatch(kind, format!("weights must be rank 2, got {:?}", inputs[1])))?;
            let total = element_count(inputs[0]);
            if k == 0 || total % k as usize != 0 {
                return Err(mismatch(kind, format!("{total} input elements not divisible by {k}")));
            }
            if let Some(b) = inputs.get(2) {
                if *b != [units] {
                    return Err(mismatch(kind, format!("bias {b:?} for {units} units")));
                }
            }
            Ok(vec![(total / k as usize) as u32, units])
        }
        K::Concat => {
            if inputs.is_empty() {
                return Err(ExecError::Arity {
                    kernel: kind,
                    expected: ">=1".into(),
                    got: 0,
                });
            }
            let BuiltinOptions::Concat(o) = options else {
                return Err(mismatch(kind, "missing concat options"));
            };
            let rank = inputs[0].len();
            let axis = normalize_axis(o.axis, rank).ok_or_else(|| mismatch(kind, format!("axis {} for rank {rank}", o.axis)))?;
            let mut out = inputs[0].to_vec();
            for s in &inputs[1..] {
                if s.len() != rank || s.iter().zip(&out).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                    return Err(mismatch(kind, format!("{s:?} vs {:?} on axis {axis}", inputs[0])));
                }
                out[axis] += s[axis];
            }
            Ok(out)
        }
        K::Reshape => {
            arity(kind, inputs.len(), 2, 2)?;
            let target = reshape.ok_or_else(|| mismatch(kind, "target shape unknown"))?;
            reshape_target(element_count(inputs[0]), target)
        }
        K::Flatten => {
            arity(kind, inputs.len(), 1, 1)?;
            let s = inputs[0];
            if s.is_empty() {
                return Err(mismatch(kind, "cannot flatten a scalar"));
            }
            Ok(vec![s[0], element_count(&s[1..]) as u32])
        }
    }
}

fn normalize_axis(axis: i32, rank: usize) -> Option<usize> {
    let r = rank as i32;
    let a = if axis < 0 { axis + r } else { axis };
    (0..r).contains(&a).then_some(a as usize)
}

/// Executes one builtin kernel on concrete values.
pub fn execute_builtin(
    kind: BuiltinKind,
    inputs: &[&TensorValue],
    options: &BuiltinOptions,
) -> Result<Vec<TensorValue>, ExecError> {
    use BuiltinKind as K;
    let shapes: Vec<&[u32]> = inputs.iter().map(|t| t.shape.as_slice()).collect();
    let reshape = if kind == K::Reshape && inputs.len() == 2 {
        Some(inputs[1].as_i32().ok_or(ExecError::UnsupportedDtype {
            kernel: kind,
            dtype: inputs[1].dtype(),
        })?)
    } else {
        None
    };
    let out_shape = infer_output_shape(kind, options, &shapes, reshape)?;

    // Shape-only kernels work on every dtype.
    match kind {
        K::Reshape | K::Flatten => {
            return Ok(vec![TensorValue {
                shape: out_shape,
                data: inputs[0].data.clone(),
            }])
        }
        K::Concat => return concat(inputs, &out_shape, options).map(|v| vec![v]),
        _ => {}
    }

    let x = f32_data(kind, inputs[0])?;
    let data = match (kind, options) {
        (K::Relu, _) => x.iter().map(|&v| Activation::Relu.apply(v)).collect(),
        (K::Relu6, _) => x.iter().map(|&v| Activation::Relu6.apply(v)).collect(),
        (K::Softmax, _) => softmax(x, *inputs[0].shape.last().unwrap() as usize),
        (K::Add, _) => {
            let y = f32_data(kind, inputs[1])?;
            x.iter().zip(y).map(|(a, b)| a + b).collect()
        }
        (K::Conv2D, BuiltinOptions::Conv(o)) => {
            let w = f32_data(kind, inputs[1])?;
            let b = inputs.get(2).map(|t| f32_data(kind, t)).transpose()?;
            conv2d(x, &inputs[0].shape, w, &inputs[1].shape, b, o, &out_shape)
        }
        (K::DepthwiseConv2D, BuiltinOptions::Conv(o)) => {
            let w = f32_data(kind, inputs[1])?;
            let b = inputs.get(2).map(|t| f32_data(kind, t)).transpose()?;
            depthwise(x, &inputs[0].shape, w, &inputs[1].shape, b, o, &out_shape)
        }
        (K::MaxPool2D | K::AvgPool2D, BuiltinOptions::Pool(o)) => {
            pool(kind == K::MaxPool2D, x, &inputs[0].shape, o, &out_shape)
        }
        (K::Dense, BuiltinOptions::Dense(o)) => {
            let w = f32_data(kind, inputs[1])?;
            let b = inputs.get(2).map(|t| f32_data(kind, t)).transpose()?;
            dense(x, w, &inputs[1].shape, b, o.activation)
        }
        _ => return Err(mismatch(kind, "options do not match kernel")),
    };
    Ok(vec![TensorValue::f32(out_shape, data)])
}

fn softmax(x: &[f32], axis_len: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(axis_len) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let start = out.len();
        let mut sum = 0.0f32;
        for &v in row {
            let e = (v - max).exp();
            sum += e;
            out.push(e);
        }
        for v in &mut out[start..] {
            *v /= sum;
        }
    }
    out
}

fn conv2d(
    x: &[f32],
    xs: &[u32],
    w: &[f32],
    ws: &[u32],
    bias: Option<&[f32]>,
    o: &crate::format::ConvOptions,
    out_shape: &[u32],
) -> Vec<f32> {
    let (h, wd, c) = (xs[1] as isize, xs[2] as isize, xs[3] as usize);
    let (kh, kw) = (ws[1] as usize, ws[2] as usize);
    let (n, oh, ow, oc) = (out_shape[0] as usize, out_shape[1], out_shape[2], out_shape[3] as usize);
    let (pad_h, pad_w) = same_pad(o.padding, kh, kw);
    let mut out = Vec::with_capacity(element_count(out_shape));
    for b in 0..n {
        let xb = &x[b * (h as usize) * (wd as usize) * c..];
        for oy in 0..oh as isize {
            for ox in 0..ow as isize {
                for f in 0..oc {
                    let mut acc = 0.0f32;
                    for ky in 0..kh {
                        let iy = oy * o.stride_h as isize + ky as isize - pad_h;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = ox * o.stride_w as isize + kx as isize - pad_w;
                            if ix < 0 || ix >= wd {
                                continue;
                            }
                            let xi = (iy as usize * wd as usize + ix as usize) * c;
                            let wi = ((f * kh + ky) * kw + kx) * c;
                            for ic in 0..c {
                                acc += xb[xi + ic] * w[wi + ic];
                            }
                        }
                    }
                    if let Some(bias) = bias {
                        acc += bias[f];
                    }
                    out.push(o.activation.apply(acc));
                }
            }
        }
    }
    out
}

fn depthwise(
    x: &[f32],
    xs: &[u32],
    w: &[f32],
    ws: &[u32],
    bias: Option<&[f32]>,
    o: &crate::format::ConvOptions,
    out_shape: &[u32],
) -> Vec<f32> {
    let (h, wd, c) = (xs[1] as isize, xs[2] as isize, xs[3] as usize);
    let (kh, kw) = (ws[1] as usize, ws[2] as usize);
    let (n, oh, ow, oc) = (out_shape[0] as usize, out_shape[1], out_shape[2], out_shape[3] as usize);
    let mult = oc / c;
    let (pad_h, pad_w) = same_pad(o.padding, kh, kw);
    let mut out = Vec::with_capacity(element_count(out_shape));
    for b in 0..n {
        let xb = &x[b * (h as usize) * (wd as usize) * c..];
        for oy in 0..oh as isize {
            for ox in 0..ow as isize {
                for f in 0..oc {
                    let ic = f / mult;
                    let mut acc = 0.0f32;
                    for ky in 0..kh {
                        let iy = oy * o.stride_h as isize + ky as isize - pad_h;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = ox * o.stride_w as isize + kx as isize - pad_w;
                            if ix < 0 || ix >= wd {
                                continue;
                            }
                            acc += xb[(iy as usize * wd as usize + ix as usize) * c + ic]
                                * w[(ky * kw + kx) * oc + f];
                        }
                    }
                    if let Some(bias) = bias {
                        acc += bias[f];
                    }
                    out.push(o.activation.apply(acc));
                }
            }
        }
    }
    out
}

fn same_pad(padding: Padding, kh: usize, kw: usize) -> (isize, isize) {
    match padding {
        Padding::Valid => (0, 0),
        Padding::Same => (((kh - 1) / 2) as isize, ((kw - 1) / 2) as isize),
    }
}

fn pool(
    is_max: bool,
    x: &[f32],
    xs: &[u32],
    o: &crate::format::PoolOptions,
    out_shape: &[u32],
) -> Vec<f32> {
    let (h, wd, c) = (xs[1] as isize, xs[2] as isize, xs[3] as usize);
    let (kh, kw) = (o.filter_h as usize, o.filter_w as usize);
    let (n, oh, ow) = (out_shape[0] as usize, out_shape[1], out_shape[2]);
    let (pad_h, pad_w) = same_pad(o.padding, kh, kw);
    let mut out = Vec::with_capacity(element_count(out_shape));
    for b in 0..n {
        let xb = &x[b * (h as usize) * (wd as usize) * c..];
        for oy in 0..oh as isize {
            for ox in 0..ow as isize {
                for ch in 0..c {
                    let mut acc = if is_max { f32::NEG_INFINITY } else { 0.0 };
                    let mut count = 0u32;
                    for ky in 0..kh {
                        let iy = oy * o.stride_h as isize + ky as isize - pad_h;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = ox * o.stride_w as isize + kx as isize - pad_w;
                            if ix < 0 || ix >= wd {
                                continue;
                            }
                            let v = xb[(iy as usize * wd as usize + ix as usize) * c + ch];
                            if is_max {
                                acc = acc.max(v);
                            } else {
                                acc += v;
                            }
                            count += 1;
                        }
                    }
                    out.push(if is_max { acc } else { acc / count as f32 });
                }
            }
        }
    }
    out
}

fn dense(x: &[f32], w: &[f32], ws: &[u32], bias: Option<&[f32]>, act: Activation) -> Vec<f32> {
    let (units, k) = (ws[0] as usize, ws[1] as usize);
    let mut out = Vec::with_capacity(x.len() / k * units);
    for row in x.chunks_exact(k) {
        for u in 0..units {
            let wr = &w[u * k..(u + 1) * k];
            let mut acc = 0.0f32;
            for i in 0..k {
                acc += row[i] * wr[i];
            }
            if let Some(bias) = bias {
                acc += bias[u];
            }
            out.push(act.apply(acc));
        }
    }
    out
}

fn concat(inputs: &[&TensorValue], out_shape: &[u32], options: &BuiltinOptions) -> Result<TensorValue, ExecError> {
    let kind = BuiltinKind::Concat;
    let BuiltinOptions::Concat(o) = options else {
        return Err(mismatch(kind, "missing concat options"));
    };
    let dtype = inputs[0].dtype();
    if let Some(t) = inputs.iter().find(|t| t.dtype() != dtype) {
        return Err(ExecError::UnsupportedDtype {
            kernel: kind,
            dtype: t.dtype(),
        });
    }
    let axis = normalize_axis(o.axis, out_shape.len()).expect("checked by shape inference");
    let outer: usize = element_count(&out_shape[..axis]);
    let inner: usize = element_count(&out_shape[axis + 1..]);

    fn gather<T: Copy>(parts: &[(&[T], usize)], outer: usize, inner: usize) -> Vec<T> {
        let mut out = Vec::new();
        for o in 0..outer {
            for (data, len) in parts {
                let chunk = len * inner;
                out.extend_from_slice(&data[o * chunk..(o + 1) * chunk]);
            }
        }
        out
    }

    let lens = inputs.iter().map(|t| t.shape[axis] as usize);
    let data = match dtype {
        DType::F32 => {
            let parts: Vec<_> = inputs.iter().map(|t| t.as_f32().unwrap()).zip(lens).collect();
            TensorData::F32(gather(&parts, outer, inner))
        }
        DType::I32 => {
            let parts: Vec<_> = inputs.iter().map(|t| t.as_i32().unwrap()).zip(lens).collect();
            TensorData::I32(gather(&parts, outer, inner))
        }
        DType::U8 => {
            let parts: Vec<_> = inputs
                .iter()
                .map(|t| match &t.data {
                    TensorData::U8(v) => v.as_slice(),
                    _ => unreachable!(),
                })
                .zip(lens)
                .collect();
            TensorData::U8(gather(&parts, outer, inner))
        }
    };
    Ok(TensorValue {
        shape: out_shape.to_vec(),
        data,
    })
}
