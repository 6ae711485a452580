use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    cycles_mpma_dw_merged, cycles_mpma_merged, cycles_mpma_single, cycles_sat, EngineCost,
    HardwareConfig,
};
use crate::error::{Error, Result};
use crate::netgraph::{LayerId, LayerKind, LayerSpec, NetworkGraph};
use crate::quant::{LayerPlan, QuantPlan, APOT_BITS};

/// Physical engine of a core.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Mpma,
    Sat,
}

/// How a layer maps onto the engines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    /// Depthwise at 4 bits or less.
    MpmaSingle,
    /// Uniform filters only, or depthwise wider than 4 bits.
    MpmaMerged,
    /// APoT filters only.
    Sat,
    /// Uniform filters on the MPMA, APoT filters on the SAT, concurrently.
    Split,
}

/// Operating mode of one trace record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineMode {
    Single,
    Merged,
    Shift,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineAssignment {
    pub layer_id: LayerId,
    pub engine: EngineKind,
    /// Filter indices on the MPMA.
    pub uniform_filters: Vec<usize>,
    /// Filter indices on the SAT.
    pub apot_filters: Vec<usize>,
}

/// One (layer, engine) portion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub layer_id: LayerId,
    pub name: String,
    pub kind: LayerKind,
    pub engine: Engine,
    pub mode: EngineMode,
    pub filters: usize,
    pub start_cycle: u64,
    pub end_cycle: u64,
    pub busy_cycles: u64,
    pub tile_cycles: u64,
    pub mac_count: u64,
    pub shift_op_count: u64,
    /// Width of one weight-buffer word.
    pub weight_bits: u32,
    pub weight_reads: u64,
    pub act_reads: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleTrace {
    pub network: String,
    pub pipelined: bool,
    /// Cycles for one image on one core.
    pub makespan: u64,
    pub records: Vec<TraceRecord>,
}

impl ScheduleTrace {
    /// Busy cycles of one engine.
    pub fn busy(&self, engine: Engine) -> u64 {
        self.records
            .iter()
            .filter(|r| r.engine == engine)
            .map(|r| r.busy_cycles)
            .sum()
    }

    /// Longest portion of every scheduled layer, in trace order.
    pub fn stage_latencies(&self) -> Vec<(LayerId, u64)> {
        let mut out: Vec<(LayerId, u64)> = Vec::new();
        for r in &self.records {
            match out.last_mut() {
                Some((id, c)) if *id == r.layer_id => *c = (*c).max(r.busy_cycles),
                _ => out.push((r.layer_id, r.busy_cycles)),
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

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

fn entry<'a>(plan: &'a QuantPlan, layer: &LayerSpec) -> Result<&'a LayerPlan> {
    let lp = plan
        .layer(layer.id)
        .ok_or(Error::MissingPlanEntry(layer.id))?;
    if lp.filters.len() != layer.filter_count() {
        return Err(Error::PlanMismatch(format!(
            "layer {}: plan has {} filters, layer has {}",
            layer.id,
            lp.filters.len(),
            layer.filter_count()
        )));
    }
    Ok(lp)
}

fn assign(layer: &LayerSpec, lp: &LayerPlan) -> EngineAssignment {
    let (apot, uniform): (Vec<usize>, Vec<usize>) =
        (0..lp.filters.len()).partition(|&i| lp.filters[i].is_apot());
    let engine = match layer.kind {
        LayerKind::DWConv if lp.weight_bits <= 4 => EngineKind::MpmaSingle,
        LayerKind::DWConv => EngineKind::MpmaMerged,
        _ if apot.is_empty() => EngineKind::MpmaMerged,
        _ if uniform.is_empty() => EngineKind::Sat,
        _ => EngineKind::Split,
    };
    EngineAssignment {
        layer_id: layer.id,
        engine,
        uniform_filters: uniform,
        apot_filters: apot,
    }
}

/// Engine mapping of every compute layer, in graph order.
pub fn assign_engines(graph: &NetworkGraph, plan: &QuantPlan) -> Result<Vec<EngineAssignment>> {
    graph
        .compute_layers()
        .map(|l| Ok(assign(l, entry(plan, l)?)))
        .collect()
}

struct Portion {
    engine: Engine,
    mode: EngineMode,
    filters: usize,
    weight_bits: u32,
    cost: EngineCost,
}

fn portions(layer: &LayerSpec, lp: &LayerPlan, cfg: &HardwareConfig) -> Result<Vec<Portion>> {
    let a = assign(layer, lp);
    let mut out = Vec::new();
    if layer.kind == LayerKind::DWConv {
        let (mode, cost) = if a.engine == EngineKind::MpmaSingle {
            (EngineMode::Single, cycles_mpma_single(layer, cfg)?)
        } else {
            (EngineMode::Merged, cycles_mpma_dw_merged(layer, cfg)?)
        };
        out.push(Portion {
            engine: Engine::Mpma,
            mode,
            filters: lp.filters.len(),
            weight_bits: lp.weight_bits,
            cost,
        });
        return Ok(out);
    }
    let counts = lp.group_counts(layer.filter_groups());
    let uniform: Vec<usize> = counts.iter().map(|c| c.0).collect();
    let apot: Vec<usize> = counts.iter().map(|c| c.1).collect();
    if !a.uniform_filters.is_empty() {
        out.push(Portion {
            engine: Engine::Mpma,
            mode: EngineMode::Merged,
            filters: a.uniform_filters.len(),
            weight_bits: lp.weight_bits,
            cost: cycles_mpma_merged(layer, &uniform, cfg)?,
        });
    }
    if !a.apot_filters.is_empty() {
        out.push(Portion {
            engine: Engine::Sat,
            mode: EngineMode::Shift,
            filters: a.apot_filters.len(),
            weight_bits: APOT_BITS,
            cost: cycles_sat(layer, &apot, cfg)?,
        });
    }
    Ok(out)
}

/// Schedules one image on one core.
///
/// Layers are visited in graph order and each engine runs its portions in
/// that order. A portion is a sequence of equal output tiles. With
/// `pipelined`, it may start once every producer has emitted its first tile
/// and hands its own first tile on `tile` cycles later; it completes at
/// `max(start + cycles, producers_last + tile)`. Without it, each
/// layer starts when the previous one has fully finished; the portions of a
/// split layer still overlap.
pub fn schedule_pipeline(
    graph: &NetworkGraph,
    plan: &QuantPlan,
    cfg: &HardwareConfig,
    pipelined: bool,
) -> Result<ScheduleTrace> {
    cfg.validate()?;
    let mut avail: HashMap<LayerId, (u64, u64)> = HashMap::new();
    let mut free: HashMap<Engine, u64> = HashMap::new();
    let mut serial = 0u64;
    let mut records = Vec::new();

    for layer in &graph.layers {
        let (mut pf, mut pl) = (0, 0);
        for p in &layer.producer_ids {
            let (f, l) = avail.get(p).copied().unwrap_or((0, 0));
            pf = pf.max(f);
            pl = pl.max(l);
        }
        if !layer.is_compute() {
            avail.insert(layer.id, (pf, pl));
            continue;
        }
        let lp = entry(plan, layer)?;
        let (mut first, mut last) = (pf, pl);
        let mut layer_end = serial;
        for p in portions(layer, lp, cfg)? {
            let c = p.cost;
            let free_at = free.entry(p.engine).or_insert(0);
            let (start, end) = if pipelined {
                let start = (*free_at).max(pf);
                (start, (start + c.cycles).max(pl + c.tile_cycles))
            } else {
                (serial, serial + c.cycles)
            };
            *free_at = end;
            first = first.max(start + c.tile_cycles);
            last = last.max(end);
            layer_end = layer_end.max(end);
            records.push(TraceRecord {
                layer_id: layer.id,
                name: layer.name.clone(),
                kind: layer.kind,
                engine: p.engine,
                mode: p.mode,
                filters: p.filters,
                start_cycle: start,
                end_cycle: end,
                busy_cycles: c.cycles,
                tile_cycles: c.tile_cycles,
                mac_count: c.macs,
                shift_op_count: c.shift_ops,
                weight_bits: p.weight_bits,
                weight_reads: c.weight_reads,
                act_reads: c.act_reads,
            });
        }
        serial = layer_end;
        avail.insert(layer.id, (first, last));
    }
    let makespan = records.iter().map(|r| r.end_cycle).max().unwrap_or(0);
    Ok(ScheduleTrace {
        network: graph.name.clone(),
        pipelined,
        makespan,
        records,
    })
}
