//! Functional execution of quantized networks.
//!
//! Uniform filters run as integer multiply-accumulates on zero-point
//! corrected codes; APoT filters run as shift-and-add. Both accumulate in a
//! 32-bit [`WideAccumulator`] and are requantized with full-precision scales.
//! A 64-bit float path serves as the reference.

mod network;
mod ops;

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netgraph::{Activation, LayerId, LayerKind, LayerSpec, NetworkGraph, Shape};
use crate::quant::{
    quantize_apot_with_scale, APoTCode, FilterQuant, LayerPlan, PoTCode, QuantParams, QuantPlan,
    APOT_P_MIN,
};

pub use network::{
    build_plan, calibrate, collect_filters, depthwise_output_mse, depthwise_roundtrip,
    plan_from_stats, reference_forward, run_network, synthetic_input, CalibrationStats, NetworkRun,
};
pub use ops::elementwise;

/// Dense real tensor, row-major over its [`Shape`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::Config(format!(
                "{} values for shape {shape:?}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            })
    }

    /// Writes a JSON header next to a little-endian `f32` blob `<stem>.bin`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let blob_name = format!(
            "{}.bin",
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "tensor".into())
        );
        let header = TensorHeader {
            shape: self.shape,
            blob: blob_name.clone(),
            offset: 0,
            length: self.len() as u64,
        };
        let text = serde_json::to_string_pretty(&header).expect("header serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
        let bytes: Vec<u8> = self
            .data
            .iter()
            .flat_map(|&v| (v as f32).to_le_bytes())
            .collect();
        let blob_path = path.with_file_name(blob_name);
        fs::write(&blob_path, bytes).map_err(|e| Error::io(&blob_path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let header: TensorHeader = serde_json::from_str(&text).map_err(|source| Error::Parse {
            context: path.display().to_string(),
            source,
        })?;
        let blob_path = path.with_file_name(&header.blob);
        let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        let (start, len) = (header.offset as usize * 4, header.length as usize * 4);
        let slice = bytes.get(start..start + len).ok_or_else(|| {
            Error::Config(format!(
                "{}: tensor runs past the blob",
                blob_path.display()
            ))
        })?;
        let data = slice
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        Tensor::new(header.shape, data)
    }
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    shape: Shape,
    blob: String,
    offset: u64,
    length: u64,
}

/// Quantized activations.
#[derive(Clone, Debug, PartialEq)]
pub struct IntTensor {
    pub shape: Shape,
    pub codes: Vec<u8>,
    pub params: QuantParams,
}

impl IntTensor {
    pub fn quantize(t: &Tensor, params: QuantParams) -> Self {
        IntTensor {
            shape: t.shape,
            codes: t.data.iter().map(|&x| params.quantize(x)).collect(),
            params,
        }
    }

    pub fn dequantize(&self) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self
                .codes
                .iter()
                .map(|&c| self.params.dequantize(c))
                .collect(),
        }
    }

    /// Codes with the zero point removed.
    fn signed(&self) -> Vec<i32> {
        self.codes
            .iter()
            .map(|&c| c as i32 - self.params.zero_point)
            .collect()
    }
}

/// Fixed-point partial sum: the real value is `value · 2^fixed_point_shift`
/// in units of the operand scales.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WideAccumulator {
    pub value: i32,
    pub fixed_point_shift: i32,
}

impl WideAccumulator {
    pub fn to_f64(self) -> f64 {
        self.value as f64 * 2f64.powi(self.fixed_point_shift)
    }
}

/// `a · s · (2^p1 + 2^p2)` as `s · ((a << (p1 - p_min)) + (a << (p2 - p_min)))`
/// with `fixed_point_shift = p_min`.
#[inline]
pub fn shift_multiply(a: i32, code: APoTCode) -> WideAccumulator {
    let value = if code.zero_flag {
        0
    } else {
        let t = (a << (code.p1 as i32 - APOT_P_MIN)) + (a << (code.p2 as i32 - APOT_P_MIN));
        if code.sign < 0 {
            -t
        } else {
            t
        }
    };
    WideAccumulator {
        value,
        fixed_point_shift: APOT_P_MIN,
    }
}

/// Single-term variant for power-of-two codes: `s · (a << (p - p_min))`.
pub fn shift_multiply_pot(a: i32, code: PoTCode, p_min: i32) -> WideAccumulator {
    let t = a << (code.exponent - p_min);
    WideAccumulator {
        value: if code.sign < 0 { -t } else { t },
        fixed_point_shift: p_min,
    }
}

/// Per-layer quantization error of the quantized path against the float reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerError {
    pub layer_id: LayerId,
    #[serde(default)]
    pub name: String,
    pub mse: f64,
    pub max_abs: f64,
}

impl LayerError {
    pub fn between(layer: &LayerSpec, quantized: &Tensor, reference: &Tensor) -> Self {
        let (mut sum, mut max_abs) = (0.0f64, 0.0f64);
        for (a, b) in quantized.data.iter().zip(&reference.data) {
            let d = (a - b).abs();
            sum += d * d;
            max_abs = max_abs.max(d);
        }
        let n = quantized.len().max(1) as f64;
        LayerError {
            layer_id: layer.id,
            name: layer.name.clone(),
            mse: sum / n,
            max_abs,
        }
    }
}

/// Quantized weights of one filter, zero points removed.
enum QFilter {
    Uniform {
        w: Vec<i32>,
        scale: f64,
        zero_max: i64,
    },
    Apot {
        w: Vec<APoTCode>,
        scale: f64,
    },
}

impl QFilter {
    fn new(values: &[f64], q: &FilterQuant) -> Self {
        match q {
            FilterQuant::Uniform(p) => QFilter::Uniform {
                w: values
                    .iter()
                    .map(|&x| p.quantize(x) as i32 - p.zero_point)
                    .collect(),
                scale: p.scale,
                zero_max: max_offset(p),
            },
            FilterQuant::Apot { scale } => QFilter::Apot {
                w: quantize_apot_with_scale(values, *scale),
                scale: *scale,
            },
        }
    }

    /// Largest possible |weight| in accumulator units.
    fn max_units(&self) -> i64 {
        match self {
            QFilter::Uniform { zero_max, .. } => *zero_max,
            QFilter::Apot { .. } => (1 << -APOT_P_MIN) + (1 << (-4 - APOT_P_MIN)),
        }
    }
}

/// Largest |code - Z| for the parameters.
fn max_offset(p: &QuantParams) -> i64 {
    p.zero_point.max(p.qmax() - p.zero_point) as i64
}

/// Worst-case |partial sum| of a layer: max activation offset × max weight
/// units × filter length.
pub fn accumulator_bound(layer: &LayerSpec, plan: &LayerPlan) -> Result<u64> {
    let input = plan.input.ok_or_else(|| uncalibrated(layer.id))?;
    let w = plan
        .filters
        .iter()
        .map(|f| match f {
            FilterQuant::Uniform(p) => max_offset(p),
            FilterQuant::Apot { .. } => (1 << -APOT_P_MIN) + (1 << (-4 - APOT_P_MIN)),
        })
        .max()
        .unwrap_or(0);
    Ok(max_offset(&input) as u64 * w as u64 * layer.filter_len() as u64)
}

/// Static accumulator-capacity check over every compute layer.
pub fn check_accumulators(graph: &NetworkGraph, plan: &QuantPlan) -> Result<()> {
    for layer in graph.compute_layers() {
        let entry = plan
            .layer(layer.id)
            .ok_or(Error::MissingPlanEntry(layer.id))?;
        let worst = accumulator_bound(layer, entry)?;
        if worst > i32::MAX as u64 {
            return Err(Error::AccumulatorBound {
                layer: layer.id,
                worst,
                capacity: i32::MAX as u64,
            });
        }
    }
    Ok(())
}

fn uncalibrated(layer: LayerId) -> Error {
    Error::PlanMismatch(format!(
        "layer {layer} has no calibrated activation parameters"
    ))
}

/// Per-filter column vectors of a MatMul's right operand `[g, k, n]`,
/// ordered batch-major.
pub fn matmul_columns(rhs: &Tensor) -> Vec<Vec<f64>> {
    let [g, k, n] = rhs.shape;
    (0..g)
        .flat_map(|b| {
            (0..n).map(move |j| (0..k).map(|t| rhs.data[b * k * n + t * n + j]).collect())
        })
        .collect()
}

/// Sums of `mul(x[i], weight index)` for every output position of filter `f`.
#[inline]
fn filter_sums<T, M>(layer: &LayerSpec, x: &[T], f: usize, mul: M) -> Vec<T>
where
    T: Copy + Default + std::ops::AddAssign,
    M: Fn(T, usize) -> T,
{
    let [c, h, w] = layer.input_shape;
    let [_, ho, wo] = layer.output_shape();
    let s = layer.stride;
    match layer.kind {
        LayerKind::DWConv => {
            let [kh, kw] = layer.kernel;
            let (ph, pw) = (kh / 2, kw / 2);
            let plane = &x[f * h * w..(f + 1) * h * w];
            let mut out = vec![T::default(); ho * wo];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = T::default();
                    for i in 0..kh {
                        let Some(iy) = (oy * s + i).checked_sub(ph).filter(|&v| v < h) else {
                            continue;
                        };
                        for j in 0..kw {
                            let Some(ix) = (ox * s + j).checked_sub(pw).filter(|&v| v < w) else {
                                continue;
                            };
                            acc += mul(plane[iy * w + ix], i * kw + j);
                        }
                    }
                    out[oy * wo + ox] = acc;
                }
            }
            out
        }
        LayerKind::PWConv => {
            let groups = layer.groups.max(1);
            let (cin_g, f_g) = (c / groups, layer.filters / groups);
            let base = (f / f_g) * cin_g;
            let mut out = vec![T::default(); ho * wo];
            for ci in 0..cin_g {
                let plane = &x[(base + ci) * h * w..(base + ci + 1) * h * w];
                for oy in 0..ho {
                    for ox in 0..wo {
                        out[oy * wo + ox] += mul(plane[oy * s * w + ox * s], ci);
                    }
                }
            }
            out
        }
        LayerKind::MatMul => {
            let [_, m, k] = layer.input_shape;
            let b = f / layer.filters;
            (0..m)
                .map(|i| {
                    let row = &x[b * m * k + i * k..b * m * k + (i + 1) * k];
                    let mut acc = T::default();
                    for (t, &v) in row.iter().enumerate() {
                        acc += mul(v, t);
                    }
                    acc
                })
                .collect()
        }
        LayerKind::Elementwise => Vec::new(),
    }
}

/// Scatters per-filter results into a tensor of the layer's output shape.
fn assemble<T: Copy + Default>(layer: &LayerSpec, per_filter: Vec<Vec<T>>) -> Vec<T> {
    let shape = layer.output_shape();
    if layer.kind != LayerKind::MatMul {
        return per_filter.concat();
    }
    let [_, m, n] = shape;
    let mut out = vec![T::default(); shape.iter().product()];
    for (f, col) in per_filter.into_iter().enumerate() {
        let (b, j) = (f / n, f % n);
        for (i, v) in col.into_iter().enumerate() {
            out[b * m * n + i * n + j] = v;
        }
    }
    out
}

fn check_operands(
    layer: &LayerSpec,
    plan: &LayerPlan,
    filters: &[Vec<f64>],
    input: Shape,
) -> Result<()> {
    if plan.layer_id != layer.id {
        return Err(Error::MissingPlanEntry(layer.id));
    }
    if !layer.is_compute() {
        return Err(Error::NotQuantizable {
            layer: layer.id,
            kind: layer.kind,
        });
    }
    if input != layer.input_shape {
        return Err(Error::ShapeMismatch {
            layer: layer.id,
            detail: format!("input {input:?}, expected {:?}", layer.input_shape),
        });
    }
    let n = layer.filter_count();
    if filters.len() != n
        || plan.filters.len() != n
        || filters.iter().any(|f| f.len() != layer.filter_len())
    {
        return Err(Error::ShapeMismatch {
            layer: layer.id,
            detail: format!(
                "{} weight vectors / {} plan filters for {n} filters of length {}",
                filters.len(),
                plan.filters.len(),
                layer.filter_len()
            ),
        });
    }
    Ok(())
}

/// Integer execution of one compute layer.
///
/// `filters` are the real weights per filter (for a MatMul, the columns of the
/// right operand, see [`matmul_columns`]); they are quantized with the plan's
/// per-filter parameters. Output codes use the plan's output parameters.
pub fn execute_layer(
    layer: &LayerSpec,
    plan: &LayerPlan,
    filters: &[Vec<f64>],
    input: &IntTensor,
) -> Result<IntTensor> {
    let out_params = plan.output.ok_or_else(|| uncalibrated(layer.id))?;
    let relu = layer.activation == Activation::Relu;
    let codes = integer_outputs(layer, plan, filters, input, |acc, unit| {
        requantize(acc, unit, relu, &out_params)
    })?;
    Ok(IntTensor {
        shape: layer.output_shape(),
        codes,
        params: out_params,
    })
}

/// Like [`execute_layer`] but stops before requantization, returning the
/// rescaled (and activated) accumulator values.
pub fn execute_layer_real(
    layer: &LayerSpec,
    plan: &LayerPlan,
    filters: &[Vec<f64>],
    input: &IntTensor,
) -> Result<Tensor> {
    let relu = layer.activation == Activation::Relu;
    let data = integer_outputs(layer, plan, filters, input, |acc, unit| {
        rescale(acc, unit, relu)
    })?;
    Tensor::new(layer.output_shape(), data)
}

fn integer_outputs<T, F>(
    layer: &LayerSpec,
    plan: &LayerPlan,
    filters: &[Vec<f64>],
    input: &IntTensor,
    finish: F,
) -> Result<Vec<T>>
where
    T: Copy + Default + Send,
    F: Fn(i32, f64) -> T + Sync,
{
    check_operands(layer, plan, filters, input.shape)?;
    if plan.input.is_some_and(|p| p != input.params) {
        return Err(Error::PlanMismatch(format!(
            "layer {}: input quantized with foreign parameters",
            layer.id
        )));
    }
    let worst = max_offset(&input.params) as u64 * layer.filter_len() as u64;
    let x = input.signed();
    let sa = input.params.scale;

    let per_filter: Vec<Vec<T>> = filters
        .par_iter()
        .zip(plan.filters.par_iter())
        .enumerate()
        .map(|(f, (values, q))| {
            let qf = QFilter::new(values, q);
            let bound = worst * qf.max_units() as u64;
            if bound > i32::MAX as u64 {
                return Err(Error::AccumulatorBound {
                    layer: layer.id,
                    worst: bound,
                    capacity: i32::MAX as u64,
                });
            }
            let (sums, unit) = match &qf {
                QFilter::Uniform { w, scale, .. } => {
                    (filter_sums(layer, &x, f, |a, i| a * w[i]), sa * scale)
                }
                QFilter::Apot { w, scale } => (
                    filter_sums(layer, &x, f, |a, i| shift_multiply(a, w[i]).value),
                    sa * scale * 2f64.powi(APOT_P_MIN),
                ),
            };
            Ok(sums.into_iter().map(|acc| finish(acc, unit)).collect())
        })
        .collect::<Result<_>>()?;
    Ok(assemble(layer, per_filter))
}

/// Accumulator to real value: `acc · unit`, then the activation.
#[inline]
pub fn rescale(acc: i32, unit: f64, relu: bool) -> f64 {
    let y = acc as f64 * unit;
    if relu && y < 0.0 {
        0.0
    } else {
        y
    }
}

/// Accumulator to output code: rescale, activation, rounding.
#[inline]
pub fn requantize(acc: i32, unit: f64, relu: bool, out: &QuantParams) -> u8 {
    out.quantize(rescale(acc, unit, relu))
}

/// Float reference of one compute layer. `inputs` is the activation (and the
/// right operand for a MatMul, already expressed through `filters`).
pub fn reference_layer(layer: &LayerSpec, filters: &[Vec<f64>], input: &Tensor) -> Result<Tensor> {
    if !layer.is_compute() {
        return Err(Error::NotQuantizable {
            layer: layer.id,
            kind: layer.kind,
        });
    }
    if input.shape != layer.input_shape || filters.len() != layer.filter_count() {
        return Err(Error::ShapeMismatch {
            layer: layer.id,
            detail: format!("input {:?} / {} filters", input.shape, filters.len()),
        });
    }
    let relu = layer.activation == Activation::Relu;
    let per_filter: Vec<Vec<f64>> = filters
        .par_iter()
        .enumerate()
        .map(|(f, w)| {
            let mut sums = filter_sums(layer, &input.data, f, |a, i| a * w[i]);
            if relu {
                sums.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            sums
        })
        .collect();
    Tensor::new(layer.output_shape(), assemble(layer, per_filter))
}
