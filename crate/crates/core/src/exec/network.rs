use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    check_accumulators, elementwise, execute_layer, execute_layer_real, matmul_columns,
    reference_layer, IntTensor, LayerError, Tensor,
};
use crate::error::{Error, Result};
use crate::netgraph::{LayerId, LayerKind, LayerSpec, NetworkGraph, Shape, WeightStore};
use crate::quant::{
    assign_m2q, calibrate_affine, calibrate_range, mse, Granularity, M2qConfig, QuantPlan, ACT_BITS,
};

/// Seeded standard-normal tensor.
pub fn synthetic_input(shape: Shape, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor {
        shape,
        data: (0..n).map(|_| StandardNormal.sample(&mut rng)).collect(),
    }
}

/// Per-filter weight vectors of every convolution layer.
pub fn collect_filters(
    graph: &NetworkGraph,
    weights: &WeightStore,
) -> Result<BTreeMap<LayerId, Vec<Vec<f64>>>> {
    graph
        .layers
        .iter()
        .filter(|l| matches!(l.kind, LayerKind::DWConv | LayerKind::PWConv))
        .map(|l| Ok((l.id, weights.filters(l)?)))
        .collect()
}

/// Index of the last layer reading each tensor.
fn last_uses(graph: &NetworkGraph) -> HashMap<LayerId, usize> {
    let mut last = HashMap::new();
    for (i, l) in graph.layers.iter().enumerate() {
        for p in &l.producer_ids {
            last.insert(*p, i);
        }
    }
    last
}

fn gather<'a>(
    layer: &LayerSpec,
    live: &'a HashMap<LayerId, Tensor>,
    input: &'a Tensor,
) -> Result<Vec<&'a Tensor>> {
    if layer.producer_ids.is_empty() {
        return Ok(vec![input]);
    }
    layer
        .producer_ids
        .iter()
        .map(|p| {
            live.get(p).ok_or_else(|| {
                Error::Config(format!("layer {}: producer {p} not available", layer.id))
            })
        })
        .collect()
}

/// Filters of a compute layer: static weights, or the right operand's columns.
fn operands<'a>(
    layer: &LayerSpec,
    static_filters: &'a BTreeMap<LayerId, Vec<Vec<f64>>>,
    inputs: &[&Tensor],
) -> Result<std::borrow::Cow<'a, [Vec<f64>]>> {
    if layer.kind == LayerKind::MatMul {
        let rhs = inputs
            .get(1)
            .ok_or_else(|| Error::Config(format!("layer {}: MatMul needs two inputs", layer.id)))?;
        Ok(std::borrow::Cow::Owned(matmul_columns(rhs)))
    } else {
        let f = static_filters.get(&layer.id).ok_or_else(|| {
            Error::Config(format!(
                "no weights for layer {} ({})",
                layer.id, layer.name
            ))
        })?;
        Ok(std::borrow::Cow::Borrowed(f.as_slice()))
    }
}

fn release(
    graph: &NetworkGraph,
    idx: usize,
    last: &HashMap<LayerId, usize>,
    live: &mut HashMap<LayerId, Tensor>,
) {
    for p in &graph.layers[idx].producer_ids {
        if last.get(p) == Some(&idx) {
            live.remove(p);
        }
    }
}

/// Float forward pass. `visit` sees every layer with its inputs and output.
pub fn reference_forward<F>(
    graph: &NetworkGraph,
    weights: &WeightStore,
    input: &Tensor,
    mut visit: F,
) -> Result<Tensor>
where
    F: FnMut(&LayerSpec, &[&Tensor], &Tensor),
{
    if input.shape != graph.input_shape() {
        return Err(Error::Config(format!(
            "input shape {:?}, network expects {:?}",
            input.shape,
            graph.input_shape()
        )));
    }
    let filters = collect_filters(graph, weights)?;
    let last = last_uses(graph);
    let mut live: HashMap<LayerId, Tensor> = HashMap::new();
    let mut output = input.clone();
    for (idx, layer) in graph.layers.iter().enumerate() {
        let inputs = gather(layer, &live, input)?;
        let out = if layer.is_compute() {
            reference_layer(layer, &operands(layer, &filters, &inputs)?, inputs[0])?
        } else {
            elementwise(layer, &inputs)?
        };
        visit(layer, &inputs, &out);
        release(graph, idx, &last, &mut live);
        if idx + 1 == graph.layers.len() {
            output = out;
        } else {
            live.insert(layer.id, out);
        }
    }
    Ok(output)
}

/// Activation ranges and MatMul operand samples gathered on calibration inputs.
#[derive(Clone, Debug, Default)]
pub struct CalibrationStats {
    pub input_range: BTreeMap<LayerId, (f64, f64)>,
    pub output_range: BTreeMap<LayerId, (f64, f64)>,
    /// Right-operand columns of every MatMul, pooled over all inputs.
    pub columns: BTreeMap<LayerId, Vec<Vec<f64>>>,
}

fn widen(r: &mut BTreeMap<LayerId, (f64, f64)>, id: LayerId, (lo, hi): (f64, f64)) {
    let e = r.entry(id).or_insert((f64::INFINITY, f64::NEG_INFINITY));
    e.0 = e.0.min(lo);
    e.1 = e.1.max(hi);
}

pub fn calibrate(
    graph: &NetworkGraph,
    weights: &WeightStore,
    inputs: &[Tensor],
) -> Result<CalibrationStats> {
    if inputs.is_empty() {
        return Err(Error::Config("calibration needs at least one input".into()));
    }
    let mut stats = CalibrationStats::default();
    for x in inputs {
        reference_forward(graph, weights, x, |layer, ins, out| {
            if !layer.is_compute() {
                return;
            }
            widen(&mut stats.input_range, layer.id, ins[0].min_max());
            widen(&mut stats.output_range, layer.id, out.min_max());
            if layer.kind == LayerKind::MatMul {
                let cols = matmul_columns(ins[1]);
                let pooled = stats
                    .columns
                    .entry(layer.id)
                    .or_insert_with(|| vec![Vec::new(); cols.len()]);
                for (p, c) in pooled.iter_mut().zip(cols) {
                    p.extend(c);
                }
            }
        })?;
    }
    Ok(stats)
}

/// Calibrates on `calib_inputs`, assigns schemes and fills in the 8-bit
/// layer-wise activation parameters.
pub fn build_plan(
    graph: &NetworkGraph,
    weights: &WeightStore,
    calib_inputs: &[Tensor],
    cfg: &M2qConfig,
) -> Result<QuantPlan> {
    let stats = calibrate(graph, weights, calib_inputs)?;
    plan_from_stats(graph, weights, &stats, cfg)
}

/// [`build_plan`] with calibration statistics gathered beforehand, so that
/// several configurations can share one calibration pass.
pub fn plan_from_stats(
    graph: &NetworkGraph,
    weights: &WeightStore,
    stats: &CalibrationStats,
    cfg: &M2qConfig,
) -> Result<QuantPlan> {
    let mut filters = collect_filters(graph, weights)?;
    filters.extend(stats.columns.clone());
    let mut plan = assign_m2q(graph, &filters, cfg)?;
    for lp in &mut plan.layers {
        let id = lp.layer_id;
        let missing = || Error::Config(format!("no calibration statistics for layer {id}"));
        let (lo, hi) = *stats.input_range.get(&id).ok_or_else(missing)?;
        lp.input = Some(calibrate_range(lo, hi, ACT_BITS, Granularity::PerLayer)?);
        let (lo, hi) = *stats.output_range.get(&id).ok_or_else(missing)?;
        lp.output = Some(calibrate_range(lo, hi, ACT_BITS, Granularity::PerLayer)?);
    }
    check_accumulators(graph, &plan)?;
    Ok(plan)
}

/// Result of one quantized inference next to its float reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkRun {
    pub output: Tensor,
    pub reference: Tensor,
    /// One entry per compute layer, in graph order.
    pub errors: Vec<LayerError>,
    /// Mean squared error of the final output.
    pub output_mse: f64,
}

impl NetworkRun {
    pub fn mean_layer_mse(&self) -> f64 {
        if self.errors.is_empty() {
            return 0.0;
        }
        self.errors.iter().map(|e| e.mse).sum::<f64>() / self.errors.len() as f64
    }
}

/// Quantized inference with the float reference run in lockstep.
pub fn run_network(
    graph: &NetworkGraph,
    plan: &QuantPlan,
    weights: &WeightStore,
    input: &Tensor,
) -> Result<NetworkRun> {
    if input.shape != graph.input_shape() {
        return Err(Error::Config(format!(
            "input shape {:?}, network expects {:?}",
            input.shape,
            graph.input_shape()
        )));
    }
    plan.check_against(graph)?;
    check_accumulators(graph, plan)?;
    let filters = collect_filters(graph, weights)?;
    let last = last_uses(graph);
    let mut refs: HashMap<LayerId, Tensor> = HashMap::new();
    let mut quant: HashMap<LayerId, Tensor> = HashMap::new();
    let mut errors = Vec::new();
    let (mut out_q, mut out_r) = (input.clone(), input.clone());

    for (idx, layer) in graph.layers.iter().enumerate() {
        let rin = gather(layer, &refs, input)?;
        let qin = gather(layer, &quant, input)?;
        let (r, q) = if layer.is_compute() {
            let entry = plan
                .layer(layer.id)
                .ok_or(Error::MissingPlanEntry(layer.id))?;
            let r = reference_layer(layer, &operands(layer, &filters, &rin)?, rin[0])?;
            let in_params = entry.input.ok_or_else(|| super::uncalibrated(layer.id))?;
            let x = IntTensor::quantize(qin[0], in_params);
            let ops = operands(layer, &filters, &qin)?;
            let q = if layer.kind == LayerKind::MatMul {
                execute_layer_real(layer, entry, &ops, &x)?
            } else {
                execute_layer(layer, entry, &ops, &x)?.dequantize()
            };
            errors.push(LayerError::between(layer, &q, &r));
            (r, q)
        } else {
            (elementwise(layer, &rin)?, elementwise(layer, &qin)?)
        };
        release(graph, idx, &last, &mut refs);
        release(graph, idx, &last, &mut quant);
        if idx + 1 == graph.layers.len() {
            (out_r, out_q) = (r, q);
        } else {
            refs.insert(layer.id, r);
            quant.insert(layer.id, q);
        }
    }
    let output_mse = mse(&out_q.data, &out_r.data);
    Ok(NetworkRun {
        output: out_q,
        reference: out_r,
        errors,
        output_mse,
    })
}

/// Copy of `weights` with every depthwise filter replaced by its `bits`-bit
/// filter-wise uniform round trip. Other layers keep full precision.
pub fn depthwise_roundtrip(
    graph: &NetworkGraph,
    weights: &WeightStore,
    bits: u32,
) -> Result<WeightStore> {
    let mut out = weights.clone();
    for layer in graph.layers.iter().filter(|l| l.kind == LayerKind::DWConv) {
        let mut q = Vec::with_capacity(layer.filter_count() * layer.filter_len());
        for f in weights.filters(layer)? {
            let p = calibrate_affine([f.as_slice()], bits, Granularity::PerFilter)?;
            q.extend(f.iter().map(|&x| p.dequantize(p.quantize(x)) as f32));
        }
        out.insert(layer.id, q);
    }
    Ok(out)
}

/// Mean output MSE over `inputs` when only depthwise weights are quantized
/// to `bits`, everything else in full precision.
pub fn depthwise_output_mse(
    graph: &NetworkGraph,
    weights: &WeightStore,
    bits: u32,
    inputs: &[Tensor],
) -> Result<f64> {
    let quantized = depthwise_roundtrip(graph, weights, bits)?;
    let mut total = 0.0;
    for x in inputs {
        let r = reference_forward(graph, weights, x, |_, _, _| {})?;
        let q = reference_forward(graph, &quantized, x, |_, _, _| {})?;
        total += mse(&q.data, &r.data);
    }
    Ok(total / inputs.len().max(1) as f64)
}
