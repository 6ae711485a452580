use serde::{Deserialize, Serialize};

use super::HardwareConfig;
use crate::error::{Error, Result};
use crate::netgraph::{LayerKind, LayerSpec};

/// Work of one layer portion on one engine of one core.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineCost {
    pub cycles: u64,
    /// Cycles to produce the first output tile; the pipeline granule.
    pub tile_cycles: u64,
    /// Multiplier operations.
    pub macs: u64,
    /// Shifter-unit operations.
    pub shift_ops: u64,
    pub weight_reads: u64,
    pub act_reads: u64,
}

fn div_ceil(a: usize, b: usize) -> u64 {
    a.div_ceil(b) as u64
}

/// Matrix view of a PW or MatMul layer: groups, reduction length per group
/// and output pixels (rows).
pub fn matrix_dims(layer: &LayerSpec) -> Result<(usize, usize, usize)> {
    match layer.kind {
        LayerKind::PWConv => {
            let [_, ho, wo] = layer.output_shape();
            Ok((layer.filter_groups(), layer.filter_len(), ho * wo))
        }
        LayerKind::MatMul => {
            let [g, m, k] = layer.input_shape;
            Ok((g, k, m))
        }
        _ => Err(Error::NotQuantizable {
            layer: layer.id,
            kind: layer.kind,
        }),
    }
}

fn depthwise(layer: &LayerSpec, lanes: usize, cfg: &HardwareConfig) -> Result<EngineCost> {
    if layer.kind != LayerKind::DWConv {
        return Err(Error::Config(format!(
            "layer {} is not depthwise",
            layer.id
        )));
    }
    let c = layer.input_shape[0];
    let [_, ho, wo] = layer.output_shape();
    let p = ho * wo;
    let [kh, kw] = layer.kernel;
    if c == 0 || p == 0 {
        return Ok(EngineCost::default());
    }
    let tile = div_ceil(kh, cfg.r) * kw as u64;
    let tiles = p.div_ceil(lanes);
    // a tile's pixels are read as one row; adjacent windows overlap when the
    // stride is below the kernel width
    let step = layer.stride.min(kw);
    let window = |t: usize| (kh * ((t - 1) * step + kw)) as u64;
    let per_channel = (tiles as u64 - 1) * window(lanes) + window(p - (tiles - 1) * lanes);
    Ok(EngineCost {
        cycles: div_ceil(c, cfg.m) * tiles as u64 * tile,
        tile_cycles: tile,
        macs: layer.macs(),
        shift_ops: 0,
        weight_reads: (c * kh * kw) as u64,
        act_reads: c as u64 * per_channel,
    })
}

/// Depthwise layer in single mode: `M` channels by `T` pixels, `R` kernel
/// rows per step, weights held stationary per channel.
pub fn cycles_mpma_single(layer: &LayerSpec, cfg: &HardwareConfig) -> Result<EngineCost> {
    depthwise(layer, cfg.t, cfg)
}

/// Depthwise layer wider than 4 bits: merged mode halves the pixel lanes.
pub fn cycles_mpma_dw_merged(layer: &LayerSpec, cfg: &HardwareConfig) -> Result<EngineCost> {
    depthwise(layer, cfg.t / 2, cfg)
}

/// Shared loop nest of the matrix engines. Per output pixel, every group
/// steps over `ceil(cin/width)` reduction chunks for `ceil(f/lanes)` filter
/// blocks.
fn matrix(
    layer: &LayerSpec,
    group_filters: &[usize],
    width: usize,
    lanes: usize,
) -> Result<(u64, u64, u64, u64)> {
    let (groups, cin, p) = matrix_dims(layer)?;
    if group_filters.len() != groups {
        return Err(Error::Config(format!(
            "layer {}: {} filter groups given, layer has {groups}",
            layer.id,
            group_filters.len()
        )));
    }
    let mut per_pixel = 0;
    let mut act = 0;
    let mut macs = 0;
    for &f in group_filters.iter().filter(|&&f| f > 0) {
        let blocks = div_ceil(f, lanes);
        per_pixel += div_ceil(cin, width) * blocks;
        act += (cin * p) as u64 * blocks;
        macs += (cin * f * p) as u64;
    }
    Ok((
        per_pixel * p as u64,
        if p == 0 { 0 } else { per_pixel },
        macs,
        act,
    ))
}

/// Uniform filters on the merged MPMA: `R·M` inputs by `T/2` filters a cycle.
pub fn cycles_mpma_merged(
    layer: &LayerSpec,
    group_filters: &[usize],
    cfg: &HardwareConfig,
) -> Result<EngineCost> {
    let (cycles, tile, macs, act) = matrix(layer, group_filters, cfg.r * cfg.m, cfg.t / 2)?;
    Ok(EngineCost {
        cycles,
        tile_cycles: tile,
        macs,
        shift_ops: 0,
        weight_reads: macs,
        act_reads: act,
    })
}

/// APoT filters on the SAT: `N` inputs by `S_tiles` filters a cycle.
pub fn cycles_sat(
    layer: &LayerSpec,
    group_filters: &[usize],
    cfg: &HardwareConfig,
) -> Result<EngineCost> {
    let (cycles, tile, macs, act) = matrix(layer, group_filters, cfg.n, cfg.s_tiles)?;
    Ok(EngineCost {
        cycles,
        tile_cycles: tile,
        macs: 0,
        shift_ops: macs,
        weight_reads: macs,
        act_reads: act,
    })
}
