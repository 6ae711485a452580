use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    apot_scale, calibrate_affine, round_half_even, scheme_errors, ApotLayout, Granularity,
    QuantParams, SchemeErrors, ACT_BITS,
};
use crate::error::{Error, Result};
use crate::netgraph::{layer_category, LayerCategory, LayerId, LayerKind, LayerSpec, NetworkGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemeChoice {
    Uniform8,
    APoT,
}

/// Quantizer of one filter. Codes are not stored; they follow from the
/// weights and these parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum FilterQuant {
    Uniform(QuantParams),
    Apot { scale: f64 },
}

impl FilterQuant {
    pub fn choice(&self) -> SchemeChoice {
        match self {
            FilterQuant::Uniform(_) => SchemeChoice::Uniform8,
            FilterQuant::Apot { .. } => SchemeChoice::APoT,
        }
    }

    pub fn is_apot(&self) -> bool {
        matches!(self, FilterQuant::Apot { .. })
    }
}

/// Where the APoT:uniform ratio is enforced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioScope {
    #[default]
    PerLayer,
    Network,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct M2qConfig {
    /// Fraction of computation-intensive filters quantized with APoT.
    pub target_ratio: f64,
    pub bits_dw: u32,
    #[serde(default)]
    pub scope: RatioScope,
}

impl Default for M2qConfig {
    fn default() -> Self {
        M2qConfig {
            target_ratio: 0.5,
            bits_dw: 4,
            scope: RatioScope::PerLayer,
        }
    }
}

impl M2qConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.target_ratio) {
            return Err(Error::Config(format!(
                "APoT ratio {} outside [0, 1]",
                self.target_ratio
            )));
        }
        if !(3..=8).contains(&self.bits_dw) {
            return Err(Error::Config(format!(
                "depthwise bit width {} outside [3, 8]",
                self.bits_dw
            )));
        }
        Ok(())
    }
}

/// Parses `"a:b"` (APoT to uniform) or a plain fraction.
pub fn parse_ratio(text: &str) -> Result<f64> {
    let bad = || {
        Error::Config(format!(
            "cannot parse ratio `{text}` (use a fraction in [0, 1] or `apot:uniform`)"
        ))
    };
    let r = match text.split_once(':') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| bad())?;
            let b: f64 = b.trim().parse().map_err(|_| bad())?;
            if !(a >= 0.0 && b >= 0.0 && a + b > 0.0 && (a + b).is_finite()) {
                return Err(bad());
            }
            a / (a + b)
        }
        None => text.trim().parse().map_err(|_| bad())?,
    };
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Config(format!("APoT ratio {r} outside [0, 1]")));
    }
    Ok(r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub layer_id: LayerId,
    #[serde(default)]
    pub name: String,
    pub kind: LayerKind,
    pub category: LayerCategory,
    /// Width of uniform filters; APoT filters use the layout width.
    pub weight_bits: u32,
    pub filters: Vec<FilterQuant>,
    /// Activation parameters of the (first) input, set by calibration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<QuantParams>,
    /// Requantization parameters of the output, set by calibration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<QuantParams>,
}

impl LayerPlan {
    pub fn apot_count(&self) -> usize {
        self.filters.iter().filter(|f| f.is_apot()).count()
    }

    pub fn uniform_count(&self) -> usize {
        self.filters.len() - self.apot_count()
    }

    /// `(uniform, apot)` filter counts for each of `groups` equal filter groups.
    pub fn group_counts(&self, groups: usize) -> Vec<(usize, usize)> {
        let per = self.filters.len() / groups.max(1);
        self.filters
            .chunks(per.max(1))
            .map(|c| {
                let a = c.iter().filter(|f| f.is_apot()).count();
                (c.len() - a, a)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantPlan {
    pub network: String,
    pub target_ratio: f64,
    pub scope: RatioScope,
    pub bits_dw: u32,
    pub activation_bits: u32,
    pub apot_layout: ApotLayout,
    pub apot_filters: usize,
    pub computation_intensive_filters: usize,
    pub achieved_apot_fraction: f64,
    pub layers: Vec<LayerPlan>,
}

impl QuantPlan {
    pub fn layer(&self, id: LayerId) -> Option<&LayerPlan> {
        self.layers.iter().find(|l| l.layer_id == id)
    }

    pub fn layer_mut(&mut self, id: LayerId) -> Option<&mut LayerPlan> {
        self.layers.iter_mut().find(|l| l.layer_id == id)
    }

    /// Checks that every compute layer of `graph` has an entry with the right filter count.
    pub fn check_against(&self, graph: &NetworkGraph) -> Result<()> {
        for layer in graph.compute_layers() {
            let entry = self
                .layer(layer.id)
                .ok_or(Error::MissingPlanEntry(layer.id))?;
            if entry.kind != layer.kind || entry.filters.len() != layer.filter_count() {
                return Err(Error::PlanMismatch(format!(
                    "layer {} is {:?} with {} filters, plan has {:?} with {}",
                    layer.id,
                    layer.kind,
                    layer.filter_count(),
                    entry.kind,
                    entry.filters.len()
                )));
            }
        }
        if let Some(extra) = self
            .layers
            .iter()
            .find(|l| graph.layer(l.layer_id).is_none_or(|g| !g.is_compute()))
        {
            return Err(Error::PlanMismatch(format!(
                "plan entry for layer {} has no compute layer",
                extra.layer_id
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| Error::Parse {
            context: context.to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    fn refresh_totals(&mut self) {
        let (mut apot, mut total) = (0, 0);
        for l in self
            .layers
            .iter()
            .filter(|l| l.category == LayerCategory::ComputationIntensive)
        {
            apot += l.apot_count();
            total += l.filters.len();
        }
        self.apot_filters = apot;
        self.computation_intensive_filters = total;
        self.achieved_apot_fraction = if total == 0 {
            0.0
        } else {
            apot as f64 / total as f64
        };
    }
}

/// Number of APoT filters for `count` filters at `ratio`.
fn apot_quota(ratio: f64, count: usize) -> usize {
    (round_half_even(ratio * count as f64) as usize).min(count)
}

/// Indices of the `k` largest gains; ties go to the lower index.
fn top_k(gains: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..gains.len()).collect();
    order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Two-level mixed assignment.
///
/// Depthwise filters get `bits_dw`-bit filter-wise uniform quantization.
/// In pointwise and MatMul layers every filter is ranked by how much APoT
/// lowers its error relative to 8-bit uniform, and the top `target_ratio`
/// share becomes APoT. Per-layer scope splits a layer's quota evenly over its
/// filter groups; network scope ranks all such filters together.
///
/// `filters` holds per-filter values for every compute layer: the static
/// weights of convolutions and pooled calibration columns of MatMul operands.
pub fn assign_m2q(
    graph: &NetworkGraph,
    filters: &BTreeMap<LayerId, Vec<Vec<f64>>>,
    cfg: &M2qConfig,
) -> Result<QuantPlan> {
    cfg.validate()?;

    struct Pending<'a> {
        layer: &'a LayerSpec,
        uniform: Vec<QuantParams>,
        errors: Vec<SchemeErrors>,
        scales: Vec<f64>,
    }

    let mut layers = Vec::new();
    let mut pending = Vec::new();
    for layer in graph.compute_layers() {
        let category = layer_category(layer)?;
        let fs = filters.get(&layer.id).ok_or_else(|| {
            Error::Config(format!(
                "no weights for layer {} ({})",
                layer.id, layer.name
            ))
        })?;
        if fs.len() != layer.filter_count() {
            return Err(Error::ShapeMismatch {
                layer: layer.id,
                detail: format!(
                    "{} filters supplied, layer has {}",
                    fs.len(),
                    layer.filter_count()
                ),
            });
        }
        let bits = if category == LayerCategory::MemoryIntensive {
            cfg.bits_dw
        } else {
            ACT_BITS
        };
        let uniform = fs
            .par_iter()
            .map(|f| calibrate_affine([f.as_slice()], bits, Granularity::PerFilter))
            .collect::<Result<Vec<_>>>()?;
        layers.push(LayerPlan {
            layer_id: layer.id,
            name: layer.name.clone(),
            kind: layer.kind,
            category,
            weight_bits: bits,
            filters: uniform.iter().copied().map(FilterQuant::Uniform).collect(),
            input: None,
            output: None,
        });
        if category == LayerCategory::ComputationIntensive && cfg.target_ratio > 0.0 {
            let errors = fs
                .par_iter()
                .map(|f| scheme_errors(f))
                .collect::<Result<Vec<_>>>()?;
            let scales = fs.iter().map(|f| apot_scale(f).unwrap_or(1.0)).collect();
            pending.push((
                layers.len() - 1,
                Pending {
                    layer,
                    uniform,
                    errors,
                    scales,
                },
            ));
        }
    }

    let mut chosen: Vec<(usize, usize)> = Vec::new();
    match cfg.scope {
        RatioScope::PerLayer => {
            for (slot, p) in &pending {
                let groups = p.layer.filter_groups();
                let per = p.errors.len() / groups;
                let k = apot_quota(cfg.target_ratio, p.errors.len());
                for g in 0..groups {
                    let kg = k / groups + usize::from(g < k % groups);
                    let gains: Vec<f64> = p.errors[g * per..(g + 1) * per]
                        .iter()
                        .map(SchemeErrors::gain)
                        .collect();
                    chosen.extend(top_k(&gains, kg).into_iter().map(|i| (*slot, g * per + i)));
                }
            }
        }
        RatioScope::Network => {
            let index: Vec<(usize, usize)> = pending
                .iter()
                .flat_map(|(slot, p)| (0..p.errors.len()).map(move |i| (*slot, i)))
                .collect();
            let gains: Vec<f64> = pending
                .iter()
                .flat_map(|(_, p)| p.errors.iter().map(SchemeErrors::gain))
                .collect();
            let k = apot_quota(cfg.target_ratio, gains.len());
            chosen.extend(top_k(&gains, k).into_iter().map(|i| index[i]));
        }
    }
    let scales: BTreeMap<usize, &Pending> = pending.iter().map(|(s, p)| (*s, p)).collect();
    for (slot, i) in chosen {
        let p = scales[&slot];
        debug_assert!(
            matches!(layers[slot].filters[i], FilterQuant::Uniform(u) if u == p.uniform[i])
        );
        layers[slot].filters[i] = FilterQuant::Apot { scale: p.scales[i] };
    }

    let mut plan = QuantPlan {
        network: graph.name.clone(),
        target_ratio: cfg.target_ratio,
        scope: cfg.scope,
        bits_dw: cfg.bits_dw,
        activation_bits: ACT_BITS,
        apot_layout: ApotLayout::default(),
        apot_filters: 0,
        computation_intensive_filters: 0,
        achieved_apot_fraction: 0.0,
        layers,
    };
    plan.refresh_totals();
    Ok(plan)
}
