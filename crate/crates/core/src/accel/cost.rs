use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Engine, EngineMode, HardwareConfig, ScheduleTrace, TraceRecord};
use crate::error::{Error, Result};
use crate::netgraph::{LayerId, LayerKind};

/// Energy of one image, in joules.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub multipliers: f64,
    pub shifters: f64,
    pub weight_buffer: f64,
    /// Weight-buffer share of the depthwise layers.
    pub dw_weight_buffer: f64,
    pub activation_buffer: f64,
}

impl EnergyBreakdown {
    /// Arithmetic units only.
    pub fn compute(&self) -> f64 {
        self.multipliers + self.shifters
    }

    pub fn buffers(&self) -> f64 {
        self.weight_buffer + self.activation_buffer
    }

    pub fn total(&self) -> f64 {
        self.compute() + self.buffers()
    }

    fn add(&mut self, o: &EnergyBreakdown) {
        self.multipliers += o.multipliers;
        self.shifters += o.shifters;
        self.weight_buffer += o.weight_buffer;
        self.dw_weight_buffer += o.dw_weight_buffer;
        self.activation_buffer += o.activation_buffer;
    }
}

/// Cost of one trace record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordCost {
    pub layer_id: LayerId,
    pub name: String,
    pub engine: Engine,
    pub mode: EngineMode,
    pub start_cycle: u64,
    pub end_cycle: u64,
    pub busy_cycles: u64,
    pub mac_count: u64,
    pub shift_op_count: u64,
    pub compute_j: f64,
    pub weight_buffer_j: f64,
    pub activation_buffer_j: f64,
    pub energy_j: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub network: String,
    pub cores: usize,
    pub frequency_hz: f64,
    pub pipelined: bool,
    /// Cycles for one batch of `cores` images, one image per core.
    pub makespan_cycles: u64,
    pub batch_latency_s: f64,
    /// Batch latency divided by the batch size.
    pub latency_s: f64,
    pub mac_count: u64,
    pub shift_op_count: u64,
    /// Two ops per multiply-accumulate, per image.
    pub ops: u64,
    pub energy_j: f64,
    pub energy: EnergyBreakdown,
    pub throughput_ops: f64,
    pub peak_ops: f64,
    pub utilization: f64,
    pub energy_efficiency_ops_per_j: f64,
    pub edp_js: f64,
    pub records: Vec<RecordCost>,
}

fn record_energy(r: &TraceRecord, cfg: &HardwareConfig) -> EnergyBreakdown {
    let e = &cfg.unit_energy;
    let mul = match r.mode {
        EngineMode::Single => e.e_mul_4x8,
        _ => e.e_mul_8x8,
    };
    let word = if r.engine == Engine::Sat {
        e.e_buf_apot
    } else {
        e.weight_access(r.weight_bits)
    };
    let weight_buffer = r.weight_reads as f64 * word;
    EnergyBreakdown {
        multipliers: r.mac_count as f64 * mul,
        shifters: r.shift_op_count as f64 * e.e_shift_unit,
        weight_buffer,
        dw_weight_buffer: if r.kind == LayerKind::DWConv {
            weight_buffer
        } else {
            0.0
        },
        activation_buffer: r.act_reads as f64 * e.e_act_buf,
    }
}

/// Energy, latency and throughput of a schedule. An empty trace yields an
/// all-zero report.
pub fn cost_report(trace: &ScheduleTrace, cfg: &HardwareConfig) -> Result<CostReport> {
    cfg.validate()?;
    let mut energy = EnergyBreakdown::default();
    let mut records = Vec::with_capacity(trace.records.len());
    for r in &trace.records {
        let e = record_energy(r, cfg);
        energy.add(&e);
        records.push(RecordCost {
            layer_id: r.layer_id,
            name: r.name.clone(),
            engine: r.engine,
            mode: r.mode,
            start_cycle: r.start_cycle,
            end_cycle: r.end_cycle,
            busy_cycles: r.busy_cycles,
            mac_count: r.mac_count,
            shift_op_count: r.shift_op_count,
            compute_j: e.compute(),
            weight_buffer_j: e.weight_buffer,
            activation_buffer_j: e.activation_buffer,
            energy_j: e.total(),
        });
    }
    let mac_count: u64 = trace.records.iter().map(|r| r.mac_count).sum();
    let shift_op_count: u64 = trace.records.iter().map(|r| r.shift_op_count).sum();
    let ops = 2 * (mac_count + shift_op_count);
    let batch_latency_s = trace.makespan as f64 / cfg.frequency_hz;
    let latency_s = batch_latency_s / cfg.l as f64;
    let energy_j = energy.total();
    let throughput_ops = if latency_s > 0.0 {
        ops as f64 / latency_s
    } else {
        0.0
    };
    let peak_ops = cfg.peak_ops();
    Ok(CostReport {
        network: trace.network.clone(),
        cores: cfg.l,
        frequency_hz: cfg.frequency_hz,
        pipelined: trace.pipelined,
        makespan_cycles: trace.makespan,
        batch_latency_s,
        latency_s,
        mac_count,
        shift_op_count,
        ops,
        energy_j,
        energy,
        throughput_ops,
        peak_ops,
        utilization: throughput_ops / peak_ops,
        energy_efficiency_ops_per_j: if energy_j > 0.0 {
            ops as f64 / energy_j
        } else {
            0.0
        },
        edp_js: energy_j * latency_s,
        records,
    })
}

impl CostReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per (layer, engine) record.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    pub fn save(&self, path: &Path, csv: bool) -> Result<()> {
        let text = if csv { self.to_csv()? } else { self.to_json() };
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
