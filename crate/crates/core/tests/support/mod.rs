//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

pub mod graphs;
pub mod schema;

use std::collections::{HashMap, HashSet};

use mixq::accel::HardwareConfig;
use mixq::netgraph::{LayerId, LayerKind, LayerSpec, NetworkGraph};
use mixq::quant::{QuantPlan, APOT_MAX_UNITS};
use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A filter drawn from either a uniform or a Gaussian distribution, with a
/// random spread and offset.
pub fn random_filter(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let spread = 10f64.powf(rng.random_range(-3.0..1.0));
    let offset = if rng.random_bool(0.3) {
        rng.random_range(-1.0..1.0) * spread
    } else {
        0.0
    };
    if rng.random_bool(0.5) {
        (0..len)
            .map(|_| offset + rng.random_range(-spread..spread))
            .collect()
    } else {
        let n = Normal::new(offset, spread).unwrap();
        (0..len).map(|_| n.sample(rng)).collect()
    }
}

// ---------------------------------------------------------------- MAC counts

/// Output extent by walking window positions over the padded input.
fn positions(size: usize, k: usize, stride: usize) -> usize {
    let pad = k / 2;
    let mut n = 0;
    let mut start = 0;
    while start + k <= size + 2 * pad {
        n += 1;
        start += stride;
    }
    n
}

/// Multiply-accumulates counted one by one.
pub fn brute_force_macs(layer: &LayerSpec) -> u64 {
    let mut n = 0u64;
    match layer.kind {
        LayerKind::DWConv => {
            let [c, h, w] = layer.input_shape;
            let [kh, kw] = layer.kernel;
            for _ in 0..c {
                for _ in 0..positions(h, kh, layer.stride) {
                    for _ in 0..positions(w, kw, layer.stride) {
                        for _ in 0..kh * kw {
                            n += 1;
                        }
                    }
                }
            }
        }
        LayerKind::PWConv => {
            let [c, h, w] = layer.input_shape;
            let per_group = c / layer.groups;
            for _ in 0..layer.filters {
                for _ in 0..positions(h, 1, layer.stride) * positions(w, 1, layer.stride) {
                    for _ in 0..per_group {
                        n += 1;
                    }
                }
            }
        }
        LayerKind::MatMul => {
            let [g, m, k] = layer.input_shape;
            for _ in 0..g * m * layer.filters {
                for _ in 0..k {
                    n += 1;
                }
            }
        }
        LayerKind::Elementwise => {}
    }
    n
}

// ------------------------------------------------------ uniform calibration

/// Scale and zero point from a sorted copy, with the zero point rounded in
/// exact rational arithmetic.
pub fn oracle_params(values: &[f64], bits: u32) -> (f64, i32) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let (lo, hi) = (v[0], v[v.len() - 1]);
    let qmax = (1i64 << bits) - 1;
    if lo == hi {
        return match lo {
            0.0 => (1.0, 0),
            c if c > 0.0 => (c, 0),
            c => (-c, 1),
        };
    }
    let scale = (hi - lo) / qmax as f64;
    let r = BigRational::from_float(-lo).unwrap() / BigRational::from_float(scale).unwrap();
    let z = round_half_even_rational(&r).clamp(BigInt::from(0), BigInt::from(qmax));
    (scale, i32::try_from(z).unwrap())
}

pub fn round_half_even_rational(r: &BigRational) -> BigInt {
    let floor = r.floor();
    let frac = r - &floor;
    let half = BigRational::new(1.into(), 2.into());
    let f = floor.to_integer();
    if frac > half || (frac == half && (&f % 2) != BigInt::from(0)) {
        f + 1
    } else {
        f
    }
}

pub fn oracle_uniform_roundtrip(x: &[f64], bits: u32) -> Vec<f64> {
    let (s, z) = oracle_params(x, bits);
    let qmax = ((1i64 << bits) - 1) as f64;
    x.iter()
        .map(|&v| {
            let q = ((v / s).round_ties_even() + z as f64).clamp(0.0, qmax);
            s * (q - z as f64)
        })
        .collect()
}

// ---------------------------------------------------------------- codebooks

/// `{0} ∪ {±(2^a + 2^b)}` built from exponent ranges, independent of the
/// library's table.
pub fn apot_levels() -> Vec<f64> {
    let mut v = vec![0.0];
    for a in 0..4 {
        for b in 4..8 {
            let m = 1.0 / (1u32 << a) as f64 + 1.0 / (1u32 << b) as f64;
            v.push(m);
            v.push(-m);
        }
    }
    v.sort_by(f64::total_cmp);
    v
}

/// Nearest level by full scan; ties go to the smaller magnitude.
pub fn nearest_level(x: f64, scale: f64, levels: &[f64]) -> f64 {
    nearest_unit(x, scale, levels) * scale
}

/// The level itself, before scaling.
pub fn nearest_unit(x: f64, scale: f64, levels: &[f64]) -> f64 {
    let mut best = levels[0];
    let mut best_d = f64::INFINITY;
    for &l in levels {
        let d = (x - l * scale).abs();
        if d < best_d || (d == best_d && l.abs() < best.abs()) {
            best = l;
            best_d = d;
        }
    }
    best
}

pub fn oracle_apot_roundtrip(x: &[f64]) -> Option<Vec<f64>> {
    let m = x.iter().fold(0f64, |m, v| m.max(v.abs()));
    if m == 0.0 {
        return None;
    }
    let scale = m / APOT_MAX_UNITS;
    let levels = apot_levels();
    Some(
        x.iter()
            .map(|&v| nearest_level(v, scale, &levels))
            .collect(),
    )
}

pub fn oracle_mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Brute-force scheme choice: `true` for APoT.
pub fn oracle_prefers_apot(x: &[f64]) -> bool {
    let u = oracle_mse(x, &oracle_uniform_roundtrip(x, 8));
    let a = oracle_apot_roundtrip(x)
        .map(|q| oracle_mse(x, &q))
        .unwrap_or(0.0);
    a < u
}

/// `a · sign · (2^p1 + 2^p2)` in exact rationals.
pub fn exact_apot_product(a: i32, sign: i8, p1: i8, p2: i8, zero: bool) -> BigRational {
    if zero {
        return BigRational::from_integer(0.into());
    }
    let pow = |p: i8| BigRational::new(1.into(), BigInt::from(1) << (-(p as i32)) as usize);
    BigRational::from_integer((a * sign as i32).into()) * (pow(p1) + pow(p2))
}

// ------------------------------------------------------------ ranking oracle

/// Repeated selection of the largest remaining gain (lowest index on ties).
pub fn select_top(gains: &[f64], k: usize) -> HashSet<usize> {
    let mut taken = HashSet::new();
    for _ in 0..k.min(gains.len()) {
        let mut best: Option<usize> = None;
        for (i, &g) in gains.iter().enumerate() {
            if taken.contains(&i) {
                continue;
            }
            match best {
                Some(b) if gains[b] >= g => {}
                _ => best = Some(i),
            }
        }
        taken.insert(best.unwrap());
    }
    taken
}

// ---------------------------------------------------- event-driven engines

/// Counts of one engine run, produced by stepping through every issue slot.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EventCounts {
    pub cycles: u64,
    /// Cycles until the first output tile is complete.
    pub first_tile: u64,
    pub products: u64,
    pub weight_reads: u64,
    pub act_reads: u64,
}

/// Depthwise array: per cycle each of `m` blocks takes one channel, each of
/// `lanes` tiles one output pixel, and each of `r` multipliers one kernel
/// row, for one kernel column. Input reads are the distinct positions a
/// tile touches, with the tile's pixels laid out as one row.
pub fn event_depthwise(layer: &LayerSpec, cfg: &HardwareConfig, lanes: usize) -> EventCounts {
    let [c, h, w] = layer.input_shape;
    let [kh, kw] = layer.kernel;
    let p = positions(h, kh, layer.stride) * positions(w, kw, layer.stride);
    let mut ev = EventCounts::default();
    if c == 0 || p == 0 {
        return ev;
    }
    let mut loaded: HashSet<usize> = HashSet::new();
    let mut ch0 = 0;
    while ch0 < c {
        let chans = (c - ch0).min(cfg.m);
        let mut px0 = 0;
        while px0 < p {
            let pixels = (p - px0).min(lanes);
            let mut row0 = 0;
            while row0 < kh {
                let rows = (kh - row0).min(cfg.r);
                for _col in 0..kw {
                    ev.cycles += 1;
                    ev.products += (chans * pixels * rows) as u64;
                }
                row0 += rows;
            }
            if ev.first_tile == 0 {
                ev.first_tile = ev.cycles;
            }
            for ch in ch0..ch0 + chans {
                let mut seen = HashSet::new();
                for j in 0..pixels {
                    for row in 0..kh {
                        for col in 0..kw {
                            seen.insert((row, j * layer.stride + col));
                        }
                    }
                }
                ev.act_reads += seen.len() as u64;
                loaded.insert(ch);
            }
            px0 += pixels;
        }
        ch0 += chans;
    }
    ev.weight_reads = (loaded.len() * kh * kw) as u64;
    ev
}

/// Matrix array: per cycle `lanes` filters each reduce `width` inputs of one
/// output pixel. The pixel loop is outermost.
pub fn event_matrix(
    layer: &LayerSpec,
    group_filters: &[usize],
    width: usize,
    lanes: usize,
) -> EventCounts {
    let (cin, p) = match layer.kind {
        LayerKind::PWConv => {
            let [c, h, w] = layer.input_shape;
            (
                c / layer.groups,
                positions(h, 1, layer.stride) * positions(w, 1, layer.stride),
            )
        }
        LayerKind::MatMul => (layer.input_shape[2], layer.input_shape[1]),
        _ => panic!("not a matrix layer"),
    };
    let mut ev = EventCounts::default();
    for _pixel in 0..p {
        for &f in group_filters {
            let mut f0 = 0;
            while f0 < f {
                let block = (f - f0).min(lanes);
                let mut k0 = 0;
                while k0 < cin {
                    let chunk = (cin - k0).min(width);
                    ev.cycles += 1;
                    ev.products += (block * chunk) as u64;
                    ev.weight_reads += (block * chunk) as u64;
                    ev.act_reads += chunk as u64;
                    k0 += chunk;
                }
                f0 += block;
            }
        }
        if ev.first_tile == 0 {
            ev.first_tile = ev.cycles;
        }
    }
    ev
}

/// Per-group `(uniform, apot)` filter counts read straight from the plan.
pub fn group_split(layer: &LayerSpec, plan: &QuantPlan) -> (Vec<usize>, Vec<usize>) {
    let lp = plan.layer(layer.id).unwrap();
    let groups = match layer.kind {
        LayerKind::PWConv => layer.groups,
        LayerKind::MatMul => layer.input_shape[0],
        _ => 1,
    };
    let per = lp.filters.len() / groups;
    let mut u = vec![0; groups];
    let mut a = vec![0; groups];
    for (i, f) in lp.filters.iter().enumerate() {
        if f.is_apot() {
            a[i / per] += 1;
        } else {
            u[i / per] += 1;
        }
    }
    (u, a)
}

/// One engine portion as the oracles see it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OraclePortion {
    pub layer: LayerId,
    pub sat: bool,
    pub cycles: u64,
    pub tile: u64,
}

pub fn oracle_portions(
    graph: &NetworkGraph,
    plan: &QuantPlan,
    cfg: &HardwareConfig,
) -> Vec<OraclePortion> {
    let mut out = Vec::new();
    for l in graph
        .layers
        .iter()
        .filter(|l| l.kind != LayerKind::Elementwise)
    {
        if l.kind == LayerKind::DWConv {
            let bits = plan.layer(l.id).unwrap().weight_bits;
            let lanes = if bits <= 4 { cfg.t } else { cfg.t / 2 };
            let ev = event_depthwise(l, cfg, lanes);
            if ev.cycles > 0 {
                out.push(OraclePortion {
                    layer: l.id,
                    sat: false,
                    cycles: ev.cycles,
                    tile: ev.first_tile,
                });
            }
            continue;
        }
        let (u, a) = group_split(l, plan);
        let mpma = event_matrix(l, &u, cfg.r * cfg.m, cfg.t / 2);
        let sat = event_matrix(l, &a, cfg.n, cfg.s_tiles);
        if u.iter().any(|&x| x > 0) && mpma.cycles > 0 {
            out.push(OraclePortion {
                layer: l.id,
                sat: false,
                cycles: mpma.cycles,
                tile: mpma.first_tile,
            });
        }
        if a.iter().any(|&x| x > 0) && sat.cycles > 0 {
            out.push(OraclePortion {
                layer: l.id,
                sat: true,
                cycles: sat.cycles,
                tile: sat.first_tile,
            });
        }
    }
    out
}

/// Cycle-stepped pipeline: each engine works through its portions in graph
/// order, one unit of work per cycle. A portion starts once every producer
/// has emitted a first tile and holds its result until every producer has
/// finished plus one of its own tiles. Returns `(layer, sat, start, end)`.
pub fn stepped_schedule(
    graph: &NetworkGraph,
    portions: &[OraclePortion],
) -> Vec<(LayerId, bool, u64, u64)> {
    // resolve producers through zero-cost layers
    let by_id: HashMap<LayerId, &LayerSpec> = graph.layers.iter().map(|l| (l.id, l)).collect();
    fn sources(
        id: LayerId,
        by_id: &HashMap<LayerId, &LayerSpec>,
        has_work: &HashSet<LayerId>,
        out: &mut Vec<LayerId>,
    ) {
        if has_work.contains(&id) {
            out.push(id);
            return;
        }
        for p in &by_id[&id].producer_ids {
            sources(*p, by_id, has_work, out);
        }
    }
    let has_work: HashSet<LayerId> = portions.iter().map(|p| p.layer).collect();
    let deps: Vec<Vec<LayerId>> = portions
        .iter()
        .map(|p| {
            let mut v = Vec::new();
            for q in &by_id[&p.layer].producer_ids {
                sources(*q, &by_id, &has_work, &mut v);
            }
            v
        })
        .collect();

    let n = portions.len();
    let mut start: Vec<Option<u64>> = vec![None; n];
    let mut first: Vec<Option<u64>> = vec![None; n];
    let mut end: Vec<Option<u64>> = vec![None; n];
    let mut work = vec![0u64; n];
    let queue = |sat: bool| -> Vec<usize> { (0..n).filter(|&i| portions[i].sat == sat).collect() };
    let queues = [queue(false), queue(true)];
    let mut head = [0usize; 2];
    let layer_first = |id: LayerId, first: &Vec<Option<u64>>| -> Option<u64> {
        let mut t = 0;
        for (i, p) in portions.iter().enumerate() {
            if p.layer == id {
                t = t.max(first[i]?);
            }
        }
        Some(t)
    };
    let layer_last = |id: LayerId, end: &Vec<Option<u64>>| -> Option<u64> {
        let mut t = 0;
        for (i, p) in portions.iter().enumerate() {
            if p.layer == id {
                t = t.max(end[i]?);
            }
        }
        Some(t)
    };

    let mut t = 0u64;
    while end.iter().any(Option::is_none) {
        // completions
        for e in 0..2 {
            let Some(&i) = queues[e].get(head[e]) else {
                continue;
            };
            if start[i].is_some() && work[i] == portions[i].cycles {
                let last = deps[i]
                    .iter()
                    .map(|d| layer_last(*d, &end))
                    .collect::<Option<Vec<_>>>();
                if let Some(last) = last {
                    let pl = last.into_iter().max().unwrap_or(0);
                    if t >= pl + portions[i].tile {
                        end[i] = Some(t);
                        head[e] += 1;
                    }
                }
            }
        }
        // starts
        for e in 0..2 {
            let Some(&i) = queues[e].get(head[e]) else {
                continue;
            };
            if start[i].is_none() {
                let ready = deps[i]
                    .iter()
                    .all(|d| layer_first(*d, &first).is_some_and(|f| f <= t));
                if ready {
                    start[i] = Some(t);
                }
            }
        }
        // one cycle of work
        for e in 0..2 {
            let Some(&i) = queues[e].get(head[e]) else {
                continue;
            };
            if start[i].is_some() && work[i] < portions[i].cycles {
                work[i] += 1;
                if work[i] == portions[i].tile {
                    first[i] = Some(t + 1);
                }
            }
        }
        t += 1;
        assert!(t < 50_000_000, "stepped schedule did not terminate");
    }
    (0..n)
        .map(|i| {
            (
                portions[i].layer,
                portions[i].sat,
                start[i].unwrap(),
                end[i].unwrap(),
            )
        })
        .collect()
}
