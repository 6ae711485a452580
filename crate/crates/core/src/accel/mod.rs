//! Cycle, schedule and energy model of the dual-engine accelerator.
//!
//! Each core holds a multiplier array (MPMA) and a shift-and-add array (SAT).
//! The MPMA runs depthwise layers in single (4×8-bit) mode and uniform
//! filters in merged (8×8-bit) mode; the SAT runs APoT filters. Layers whose
//! filters mix both schemes are split across the two engines.

mod config;
mod cost;
mod cycles;
mod schedule;

pub use config::{HardwareConfig, UnitEnergyTable};
pub use cost::{cost_report, CostReport, EnergyBreakdown, RecordCost};
pub use cycles::{
    cycles_mpma_dw_merged, cycles_mpma_merged, cycles_mpma_single, cycles_sat, matrix_dims,
    EngineCost,
};
pub use schedule::{
    assign_engines, schedule_pipeline, Engine, EngineAssignment, EngineKind, EngineMode,
    ScheduleTrace, TraceRecord,
};

use crate::error::Result;
use crate::netgraph::NetworkGraph;
use crate::quant::QuantPlan;

/// Schedule and cost in one step.
pub fn simulate(
    graph: &NetworkGraph,
    plan: &QuantPlan,
    cfg: &HardwareConfig,
    pipelined: bool,
) -> Result<(ScheduleTrace, CostReport)> {
    let trace = schedule_pipeline(graph, plan, cfg, pipelined)?;
    let report = cost_report(&trace, cfg)?;
    Ok((trace, report))
}
