use std::fs;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ensure_dir, report::sweep_csv, Format, RunConfig, SweepAxis};
use crate::accel::{simulate, CostReport, ScheduleTrace};
use crate::error::{Error, Result};
use crate::exec::{
    calibrate, check_accumulators, depthwise_output_mse, plan_from_stats, run_network,
    synthetic_input, CalibrationStats, LayerError, NetworkRun, Tensor,
};
use crate::netgraph::{NetworkGraph, WeightStore};
use crate::quant::{M2qConfig, QuantPlan};

/// Offset separating the held-out evaluation input from calibration inputs.
const EVAL_SEED_OFFSET: u64 = 1 << 32;

fn calibration_inputs(graph: &NetworkGraph, run: &RunConfig) -> Vec<Tensor> {
    (0..run.calibration_samples as u64)
        .map(|i| synthetic_input(graph.input_shape(), run.seed.wrapping_add(i + 1)))
        .collect()
}

fn evaluation_input(graph: &NetworkGraph, run: &RunConfig) -> Tensor {
    synthetic_input(graph.input_shape(), run.seed.wrapping_add(EVAL_SEED_OFFSET))
}

fn write(path: &std::path::Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_rows<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

fn load_plan(run: &RunConfig, graph: &NetworkGraph) -> Result<Option<QuantPlan>> {
    let Some(p) = &run.plan else { return Ok(None) };
    let plan = QuantPlan::load(p)?;
    plan.check_against(graph)?;
    Ok(Some(plan))
}

/// Per-layer errors of one quantized inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub network: String,
    pub output_mse: f64,
    pub mean_layer_mse: f64,
    /// Variance of the float output, for scale.
    pub reference_variance: f64,
    pub layers: Vec<LayerError>,
}

impl ErrorReport {
    pub fn from_run(network: &str, run: &NetworkRun) -> Self {
        let r = &run.reference.data;
        let mean = r.iter().sum::<f64>() / r.len().max(1) as f64;
        let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / r.len().max(1) as f64;
        ErrorReport {
            network: network.to_string(),
            output_mse: run.output_mse,
            mean_layer_mse: run.mean_layer_mse(),
            reference_variance: var,
            layers: run.errors.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizeOutcome {
    pub plan: QuantPlan,
    pub errors: ErrorReport,
}

/// Writes `plan.json` and `layer_errors.{json,csv}` to the output directory.
pub fn cmd_quantize(run: &RunConfig) -> Result<QuantizeOutcome> {
    let (graph, weights) = run.load_model()?;
    let stats = calibrate(&graph, &weights, &calibration_inputs(&graph, run))?;
    let plan = plan_from_stats(&graph, &weights, &stats, &run.quant)?;
    let result = run_network(&graph, &plan, &weights, &evaluation_input(&graph, run))?;
    let errors = ErrorReport::from_run(&graph.name, &result);
    ensure_dir(&run.out)?;
    plan.save(&run.out.join("plan.json"))?;
    let text = match run.format {
        Format::Json => serde_json::to_string_pretty(&errors).expect("errors serialize"),
        Format::Csv => csv_rows(&errors.layers)?,
    };
    write(&run.out_file("layer_errors"), &text)?;
    Ok(QuantizeOutcome { plan, errors })
}

fn plan_for(run: &RunConfig, graph: &NetworkGraph) -> Result<QuantPlan> {
    if let Some(plan) = load_plan(run, graph)? {
        return Ok(plan);
    }
    let (_, weights) = run.load_model()?;
    let stats = calibrate(graph, &weights, &calibration_inputs(graph, run))?;
    plan_from_stats(graph, &weights, &stats, &run.quant)
}

/// Writes `cost_report` and `schedule` in the chosen format.
pub fn cmd_simulate(run: &RunConfig) -> Result<(ScheduleTrace, CostReport)> {
    let (graph, _) = run.load_graph()?;
    let plan = plan_for(run, &graph)?;
    let (trace, report) = simulate(&graph, &plan, &run.hardware, run.pipelined)?;
    ensure_dir(&run.out)?;
    let csv = run.format == Format::Csv;
    report.save(&run.out_file("cost_report"), csv)?;
    trace.save(&run.out_file("schedule"), csv)?;
    Ok((trace, report))
}

/// One sweep setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub setting: String,
    /// Output MSE against the float reference. Depthwise bit sweeps quantize
    /// only the depthwise weights; other axes run the full plan.
    pub error_proxy: f64,
    pub energy: f64,
    pub latency: f64,
    pub edp: f64,
    pub compute_energy: f64,
    pub dw_weight_buffer_energy: f64,
    pub apot_fraction: f64,
}

impl SweepRow {
    fn new(setting: String, error_proxy: f64, plan: &QuantPlan, r: &CostReport) -> Self {
        SweepRow {
            setting,
            error_proxy,
            energy: r.energy_j,
            latency: r.latency_s,
            edp: r.edp_js,
            compute_energy: r.energy.compute(),
            dw_weight_buffer_energy: r.energy.dw_weight_buffer,
            apot_fraction: plan.achieved_apot_fraction,
        }
    }
}

fn integral(v: f64, what: &str) -> Result<usize> {
    if v.fract() != 0.0 || v < 0.0 || !v.is_finite() {
        return Err(Error::Config(format!(
            "{what} setting {v} is not a non-negative integer"
        )));
    }
    Ok(v as usize)
}

struct SweepContext<'a> {
    run: &'a RunConfig,
    graph: NetworkGraph,
    weights: WeightStore,
    stats: CalibrationStats,
    eval: Tensor,
}

impl SweepContext<'_> {
    fn plan(&self, cfg: &M2qConfig) -> Result<QuantPlan> {
        plan_from_stats(&self.graph, &self.weights, &self.stats, cfg)
    }

    fn full_error(&self, plan: &QuantPlan) -> Result<f64> {
        Ok(run_network(&self.graph, plan, &self.weights, &self.eval)?.output_mse)
    }

    fn point(&self, axis: SweepAxis, v: f64, base: Option<&(QuantPlan, f64)>) -> Result<SweepRow> {
        let run = self.run;
        let (setting, plan, err, hw) = match axis {
            SweepAxis::DwBits => {
                let bits = integral(v, "dw-bits")? as u32;
                let plan = self.plan(&M2qConfig {
                    bits_dw: bits,
                    ..run.quant
                })?;
                let err = depthwise_output_mse(
                    &self.graph,
                    &self.weights,
                    bits,
                    std::slice::from_ref(&self.eval),
                )?;
                (format!("dw_bits={bits}"), plan, err, run.hardware)
            }
            SweepAxis::Ratio => {
                let plan = self.plan(&M2qConfig {
                    target_ratio: v,
                    ..run.quant
                })?;
                let err = self.full_error(&plan)?;
                (format!("ratio={v}"), plan, err, run.hardware)
            }
            SweepAxis::Hw(p) => {
                let value = integral(v, "hardware")?;
                let hw = p.apply(&run.hardware, value);
                hw.validate()?;
                let (plan, err) = base.expect("hardware sweeps share one plan").clone();
                (format!("{p:?}={value}"), plan, err, hw)
            }
        };
        let (_, report) = simulate(&self.graph, &plan, &hw, run.pipelined)?;
        Ok(SweepRow::new(setting, err, &plan, &report))
    }
}

/// Evaluates every setting (concurrently) and writes `sweep.csv` in axis
/// order.
pub fn cmd_sweep(run: &RunConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config(format!("empty sweep axis {axis:?}")));
    }
    let (graph, weights) = run.load_model()?;
    let stats = calibrate(&graph, &weights, &calibration_inputs(&graph, run))?;
    let eval = evaluation_input(&graph, run);
    let ctx = SweepContext {
        run,
        graph,
        weights,
        stats,
        eval,
    };
    let base = match axis {
        SweepAxis::Hw(_) => {
            let plan = match load_plan(run, &ctx.graph)? {
                Some(p) => p,
                None => ctx.plan(&run.quant)?,
            };
            let err = ctx.full_error(&plan)?;
            Some((plan, err))
        }
        _ => None,
    };
    let rows = values
        .par_iter()
        .map(|&v| ctx.point(axis, v, base.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    ensure_dir(&run.out)?;
    write(&run.out.join("sweep.csv"), &sweep_csv(&rows)?)?;
    Ok(rows)
}

/// Headline numbers of one simulated plan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SideSummary {
    pub energy_j: f64,
    pub compute_energy_j: f64,
    pub buffer_energy_j: f64,
    pub latency_s: f64,
    pub throughput_ops: f64,
    pub edp_js: f64,
}

impl From<&CostReport> for SideSummary {
    fn from(r: &CostReport) -> Self {
        SideSummary {
            energy_j: r.energy_j,
            compute_energy_j: r.energy.compute(),
            buffer_energy_j: r.energy.buffers(),
            latency_s: r.latency_s,
            throughput_ops: r.throughput_ops,
            edp_js: r.edp_js,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub network: String,
    pub mixed: SideSummary,
    /// All filters uniform, depthwise at 8 bits.
    pub baseline: SideSummary,
    pub compute_energy_ratio: f64,
    pub energy_ratio: f64,
    pub latency_ratio: f64,
    pub edp_ratio: f64,
    /// Mixed minus baseline.
    pub delta: SideSummary,
}

fn ratio(a: f64, b: f64) -> f64 {
    if a == b {
        1.0
    } else {
        a / b
    }
}

/// Mixed plan against the uniform 8-bit baseline; writes `compare.{json,csv}`.
pub fn cmd_compare(run: &RunConfig) -> Result<CompareReport> {
    let (graph, weights) = run.load_model()?;
    let stats = calibrate(&graph, &weights, &calibration_inputs(&graph, run))?;
    let mixed = match load_plan(run, &graph)? {
        Some(p) => p,
        None => plan_from_stats(&graph, &weights, &stats, &run.quant)?,
    };
    let baseline_cfg = M2qConfig {
        target_ratio: 0.0,
        bits_dw: 8,
        ..run.quant
    };
    let baseline = plan_from_stats(&graph, &weights, &stats, &baseline_cfg)?;
    let (_, m) = simulate(&graph, &mixed, &run.hardware, run.pipelined)?;
    let (_, b) = simulate(&graph, &baseline, &run.hardware, run.pipelined)?;
    let (m, b) = (SideSummary::from(&m), SideSummary::from(&b));
    let report = CompareReport {
        network: graph.name.clone(),
        mixed: m,
        baseline: b,
        compute_energy_ratio: ratio(m.compute_energy_j, b.compute_energy_j),
        energy_ratio: ratio(m.energy_j, b.energy_j),
        latency_ratio: ratio(m.latency_s, b.latency_s),
        edp_ratio: ratio(m.edp_js, b.edp_js),
        delta: SideSummary {
            energy_j: m.energy_j - b.energy_j,
            compute_energy_j: m.compute_energy_j - b.compute_energy_j,
            buffer_energy_j: m.buffer_energy_j - b.buffer_energy_j,
            latency_s: m.latency_s - b.latency_s,
            throughput_ops: m.throughput_ops - b.throughput_ops,
            edp_js: m.edp_js - b.edp_js,
        },
    };
    ensure_dir(&run.out)?;
    let text = match run.format {
        Format::Json => serde_json::to_string_pretty(&report).expect("report serializes"),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([
                "side",
                "energy_j",
                "compute_energy_j",
                "buffer_energy_j",
                "latency_s",
                "throughput_ops",
                "edp_js",
            ])?;
            for (side, s) in [("mixed", m), ("baseline", b), ("delta", report.delta)] {
                let v = [
                    s.energy_j,
                    s.compute_energy_j,
                    s.buffer_energy_j,
                    s.latency_s,
                    s.throughput_ops,
                    s.edp_js,
                ];
                w.write_record(
                    std::iter::once(side.to_string()).chain(v.iter().map(f64::to_string)),
                )?;
            }
            let bytes = w
                .into_inner()
                .map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
            String::from_utf8(bytes).expect("csv is utf-8")
        }
    };
    write(&run.out_file("compare"), &text)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub network: String,
    pub layers: usize,
    pub compute_layers: usize,
    pub total_macs: u64,
    pub plan_checked: bool,
}

/// Checks the model (and the plan and hardware config when given). Nothing
/// is written.
pub fn cmd_validate(run: &RunConfig) -> Result<ValidationReport> {
    let (graph, _) = run.load_graph()?;
    let graph = graph.validated()?;
    run.hardware.validate()?;
    let plan = load_plan(run, &graph)?;
    if let Some(p) = &plan {
        if p.layers.iter().all(|l| l.input.is_some()) {
            check_accumulators(&graph, p)?;
        }
    }
    Ok(ValidationReport {
        network: graph.name.clone(),
        layers: graph.layers.len(),
        compute_layers: graph.compute_layers().count(),
        total_macs: graph.total_macs(),
        plan_checked: plan.is_some(),
    })
}
