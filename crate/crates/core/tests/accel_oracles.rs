mod support;

use mixq::accel::{
    assign_engines, cost_report, cycles_mpma_dw_merged, cycles_mpma_merged, cycles_mpma_single,
    cycles_sat, schedule_pipeline, simulate, Engine, EngineCost, EngineKind, HardwareConfig,
};
use mixq::netgraph::{LayerKind, NetworkGraph};
use mixq::quant::QuantPlan;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use support::graphs::{random_graph, random_plan};
use support::*;

fn random_cfg(r: &mut ChaCha8Rng) -> HardwareConfig {
    HardwareConfig {
        r: r.random_range(1..=4),
        m: r.random_range(1..=4),
        t: 2 * r.random_range(1..=8),
        n: r.random_range(1..=12),
        s_tiles: r.random_range(1..=10),
        l: r.random_range(1..=4),
        ..Default::default()
    }
}

fn same(ev: EventCounts, c: EngineCost, products: u64) -> bool {
    ev.cycles == c.cycles
        && ev.first_tile == c.tile_cycles
        && ev.products == products
        && ev.weight_reads == c.weight_reads
        && ev.act_reads == c.act_reads
}

#[test]
fn depthwise_cycles_match_event_count() {
    let mut r = rng(31);
    let mut n = 0;
    while n < 400 {
        let g = random_graph(&mut r, 8, 12);
        for l in g.layers.iter().filter(|l| l.kind == LayerKind::DWConv) {
            let cfg = random_cfg(&mut r);
            let single = cycles_mpma_single(l, &cfg).unwrap();
            assert!(
                same(event_depthwise(l, &cfg, cfg.t), single, single.macs),
                "{l:?} {cfg:?}"
            );
            let merged = cycles_mpma_dw_merged(l, &cfg).unwrap();
            assert!(
                same(event_depthwise(l, &cfg, cfg.t / 2), merged, merged.macs),
                "{l:?} {cfg:?}"
            );
            assert_eq!(single.macs, l.macs());
            n += 1;
        }
    }
}

#[test]
fn matrix_cycles_match_event_count() {
    let mut r = rng(32);
    let mut n = 0;
    while n < 400 {
        let g = random_graph(&mut r, 8, 10);
        let ratio = r.random_range(0.0..=1.0);
        let plan = random_plan(&mut r, &g, ratio, 4);
        for l in g
            .layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::PWConv | LayerKind::MatMul))
        {
            let cfg = random_cfg(&mut r);
            let (u, a) = group_split(l, &plan);
            let mpma = cycles_mpma_merged(l, &u, &cfg).unwrap();
            assert!(
                same(
                    event_matrix(l, &u, cfg.r * cfg.m, cfg.t / 2),
                    mpma,
                    mpma.macs
                ),
                "{l:?} {cfg:?}"
            );
            let sat = cycles_sat(l, &a, &cfg).unwrap();
            assert!(
                same(event_matrix(l, &a, cfg.n, cfg.s_tiles), sat, sat.shift_ops),
                "{l:?} {cfg:?}"
            );
            assert_eq!(sat.macs, 0);
            assert_eq!(mpma.macs + sat.shift_ops, l.macs());
            n += 1;
        }
    }
}

#[test]
fn reference_instance_examples() {
    use mixq::netgraph::{Activation, LayerSpec};
    let cfg = HardwareConfig::default();
    let spec = |kind, input_shape, kernel, filters| LayerSpec {
        id: 0,
        name: String::new(),
        kind,
        op: None,
        input_shape,
        kernel,
        filters,
        stride: 1,
        groups: 1,
        producer_ids: vec![],
        activation: Activation::None,
    };
    // 3 channels, 16 pixels, 3 kernel rows: one pass per kernel column
    let dw = spec(LayerKind::DWConv, [3, 4, 4], [3, 3], 3);
    assert_eq!(cycles_mpma_single(&dw, &cfg).unwrap().cycles, 3);
    assert_eq!(cycles_mpma_dw_merged(&dw, &cfg).unwrap().cycles, 6);
    // 9 inputs, 8 filters, 1 pixel: one cycle on either engine
    let pw = spec(LayerKind::PWConv, [9, 1, 1], [1, 1], 8);
    assert_eq!(cycles_mpma_merged(&pw, &[8], &cfg).unwrap().cycles, 1);
    assert_eq!(cycles_sat(&pw, &[8], &cfg).unwrap().cycles, 1);
    assert_eq!(cycles_sat(&pw, &[9], &cfg).unwrap().cycles, 2);
}

#[test]
fn pipeline_matches_cycle_stepped_simulation() {
    let mut r = rng(33);
    for case in 0..250 {
        let g = random_graph(&mut r, 6, 8);
        let (ratio, bits) = (r.random_range(0.0..=1.0), r.random_range(3..=8));
        let plan = random_plan(&mut r, &g, ratio, bits);
        let cfg = random_cfg(&mut r);
        let trace = schedule_pipeline(&g, &plan, &cfg, true).unwrap();
        let want = stepped_schedule(&g, &oracle_portions(&g, &plan, &cfg));
        let got: Vec<_> = trace
            .records
            .iter()
            .map(|x| {
                (
                    x.layer_id,
                    x.engine == Engine::Sat,
                    x.start_cycle,
                    x.end_cycle,
                )
            })
            .collect();
        assert_eq!(got, want, "case {case}");
    }
}

#[test]
fn serialized_makespan_is_sum_of_stage_latencies() {
    let mut r = rng(34);
    for case in 0..300 {
        let g = random_graph(&mut r, 6, 8);
        let (ratio, bits) = (r.random_range(0.0..=1.0), r.random_range(3..=8));
        let plan = random_plan(&mut r, &g, ratio, bits);
        let cfg = random_cfg(&mut r);
        let mut stages: Vec<(mixq::netgraph::LayerId, u64)> = Vec::new();
        for p in oracle_portions(&g, &plan, &cfg) {
            match stages.last_mut() {
                Some((id, c)) if *id == p.layer => *c = (*c).max(p.cycles),
                _ => stages.push((p.layer, p.cycles)),
            }
        }
        let trace = schedule_pipeline(&g, &plan, &cfg, false).unwrap();
        assert_eq!(
            trace.makespan,
            stages.iter().map(|s| s.1).sum::<u64>(),
            "case {case}"
        );
        assert_eq!(trace.stage_latencies(), stages);
    }
}

/// Every counted event times its unit energy.
fn oracle_energy(g: &NetworkGraph, plan: &QuantPlan, cfg: &HardwareConfig) -> f64 {
    let e = &cfg.unit_energy;
    let mut total = 0.0;
    for l in g.compute_layers() {
        let bits = plan.layer(l.id).unwrap().weight_bits;
        if l.kind == LayerKind::DWConv {
            let (lanes, mul) = if bits <= 4 {
                (cfg.t, e.e_mul_4x8)
            } else {
                (cfg.t / 2, e.e_mul_8x8)
            };
            let ev = event_depthwise(l, cfg, lanes);
            total += ev.products as f64 * mul
                + ev.weight_reads as f64 * e.e_buf_8bit * bits as f64 / 8.0
                + ev.act_reads as f64 * e.e_act_buf;
            continue;
        }
        let (u, a) = group_split(l, plan);
        let m = event_matrix(l, &u, cfg.r * cfg.m, cfg.t / 2);
        let s = event_matrix(l, &a, cfg.n, cfg.s_tiles);
        total += m.products as f64 * e.e_mul_8x8
            + m.weight_reads as f64 * e.e_buf_8bit
            + m.act_reads as f64 * e.e_act_buf;
        total += s.products as f64 * e.e_shift_unit
            + s.weight_reads as f64 * e.e_buf_apot
            + s.act_reads as f64 * e.e_act_buf;
    }
    total
}

#[test]
fn energy_matches_event_oracle() {
    let mut r = rng(35);
    for case in 0..200 {
        let g = random_graph(&mut r, 6, 8);
        let (ratio, bits) = (r.random_range(0.0..=1.0), r.random_range(3..=8));
        let plan = random_plan(&mut r, &g, ratio, bits);
        let cfg = random_cfg(&mut r);
        let (_, report) = simulate(&g, &plan, &cfg, true).unwrap();
        let want = oracle_energy(&g, &plan, &cfg);
        assert!(
            (report.energy_j - want).abs() <= 1e-12 * want,
            "case {case}: {} vs {want}",
            report.energy_j
        );
    }
}

#[test]
fn reference_buffer_energy_ratio() {
    let e = HardwareConfig::default().unit_energy;
    assert_eq!(e.e_buf_4bit * 2.0, e.e_buf_8bit);
    assert_eq!(e.e_mul_4x8 * 2.0, e.e_mul_8x8);
    assert_eq!(HardwareConfig::default().peak_ops(), 2304e9);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut r = rng(36);
    let g = random_graph(&mut r, 3, 6);
    let plan = random_plan(&mut r, &g, 0.5, 4);
    for bad in [
        HardwareConfig {
            r: 0,
            ..Default::default()
        },
        HardwareConfig {
            t: 15,
            ..Default::default()
        },
        HardwareConfig {
            s_tiles: 0,
            ..Default::default()
        },
        HardwareConfig {
            l: 0,
            ..Default::default()
        },
        HardwareConfig {
            frequency_hz: 0.0,
            ..Default::default()
        },
        HardwareConfig {
            frequency_hz: f64::NAN,
            ..Default::default()
        },
    ] {
        assert!(schedule_pipeline(&g, &plan, &bad, true).is_err(), "{bad:?}");
    }
}

#[test]
fn empty_network_costs_nothing() {
    let g = NetworkGraph {
        name: "empty".into(),
        input_resolution: [4, 4],
        input_channels: 3,
        layers: vec![],
    };
    let plan = random_plan(&mut rng(37), &g, 0.5, 4);
    let (trace, report) = simulate(&g, &plan, &HardwareConfig::default(), true).unwrap();
    assert_eq!(trace.makespan, 0);
    assert_eq!(report.energy_j, 0.0);
    assert_eq!(report.edp_js, 0.0);
    assert_eq!(report.throughput_ops, 0.0);
}

// ----------------------------------------------------------------- properties

#[derive(Debug, Clone)]
struct Case {
    graph: NetworkGraph,
    plan: QuantPlan,
    cfg: HardwareConfig,
}

fn case() -> impl Strategy<Value = Case> {
    (any::<u64>(), 0.0f64..=1.0, 3u32..=8).prop_map(|(seed, ratio, bits)| {
        let mut r = rng(seed);
        let graph = random_graph(&mut r, 4, 6);
        let plan = random_plan(&mut r, &graph, ratio, bits);
        let cfg = random_cfg(&mut r);
        Case { graph, plan, cfg }
    })
}

fn latency(c: &Case, cfg: &HardwareConfig) -> f64 {
    simulate(&c.graph, &c.plan, cfg, true).unwrap().1.latency_s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn more_hardware_never_slows_down(c in case(), which in 0usize..6) {
        let base = c.cfg;
        let mut more = base;
        match which {
            0 => more.r += 1,
            1 => more.m += 1,
            2 => more.t += 2,
            3 => more.n += 1,
            4 => more.s_tiles += 1,
            _ => more.l += 1,
        }
        prop_assert!(latency(&c, &more) <= latency(&c, &base));
    }

    #[test]
    fn work_is_conserved(c in case(), pipelined in any::<bool>()) {
        let (trace, report) = simulate(&c.graph, &c.plan, &c.cfg, pipelined).unwrap();
        prop_assert_eq!(report.mac_count + report.shift_op_count, c.graph.total_macs());
        prop_assert_eq!(report.ops, 2 * c.graph.total_macs());
        let busy: u64 = trace.records.iter().map(|r| r.busy_cycles).sum();
        prop_assert_eq!(busy, trace.busy(Engine::Mpma) + trace.busy(Engine::Sat));
    }

    #[test]
    fn pipelining_stays_within_bounds(c in case()) {
        let piped = schedule_pipeline(&c.graph, &c.plan, &c.cfg, true).unwrap();
        let serial = schedule_pipeline(&c.graph, &c.plan, &c.cfg, false).unwrap();
        let longest = serial.stage_latencies().iter().map(|s| s.1).max().unwrap_or(0);
        prop_assert!(piped.makespan <= serial.makespan);
        prop_assert!(piped.makespan >= longest);
        prop_assert!(piped.makespan >= piped.busy(Engine::Mpma).max(piped.busy(Engine::Sat)));
        for r in &piped.records {
            prop_assert!(r.end_cycle >= r.start_cycle + r.busy_cycles);
        }
        // no engine runs two portions at once
        for e in [Engine::Mpma, Engine::Sat] {
            let mut v: Vec<_> = piped.records.iter().filter(|r| r.engine == e).map(|r| (r.start_cycle, r.end_cycle)).collect();
            v.sort();
            for w in v.windows(2) {
                prop_assert!(w[0].1 <= w[1].0);
            }
        }
    }

    #[test]
    fn edp_is_energy_times_latency(c in case(), pipelined in any::<bool>()) {
        let (_, r) = simulate(&c.graph, &c.plan, &c.cfg, pipelined).unwrap();
        prop_assert!((r.edp_js - r.energy_j * r.latency_s).abs() <= 1e-15 * r.edp_js.abs());
        prop_assert!((r.energy.total() - r.energy_j).abs() <= 1e-12 * r.energy_j);
        prop_assert!((r.latency_s * r.cores as f64 * r.frequency_hz - r.makespan_cycles as f64).abs() <= 1e-6);
    }

    #[test]
    fn energy_scales_with_unit_energy(c in case(), e in 0i32..6) {
        let k = 2f64.powi(e - 2);
        let scaled = HardwareConfig { unit_energy: c.cfg.unit_energy.scaled(k), ..c.cfg };
        let trace = schedule_pipeline(&c.graph, &c.plan, &c.cfg, true).unwrap();
        let a = cost_report(&trace, &c.cfg).unwrap();
        let b = cost_report(&trace, &scaled).unwrap();
        prop_assert_eq!(b.energy_j, a.energy_j * k);
        prop_assert_eq!(b.latency_s, a.latency_s);
    }

    #[test]
    fn every_compute_layer_gets_an_engine(c in case()) {
        let assignment = assign_engines(&c.graph, &c.plan).unwrap();
        let compute: Vec<_> = c.graph.compute_layers().collect();
        prop_assert_eq!(assignment.len(), compute.len());
        for (a, l) in assignment.iter().zip(compute) {
            prop_assert_eq!(a.layer_id, l.id);
            let mut all: Vec<usize> = a.uniform_filters.iter().chain(&a.apot_filters).copied().collect();
            all.sort();
            prop_assert_eq!(all, (0..l.filter_count()).collect::<Vec<_>>());
            let expect = match (l.kind, a.uniform_filters.is_empty(), a.apot_filters.is_empty()) {
                (LayerKind::DWConv, _, _) => if c.plan.bits_dw <= 4 { EngineKind::MpmaSingle } else { EngineKind::MpmaMerged },
                (_, _, true) => EngineKind::MpmaMerged,
                (_, true, _) => EngineKind::Sat,
                _ => EngineKind::Split,
            };
            prop_assert_eq!(a.engine, expect);
        }
    }

    #[test]
    fn simulation_is_deterministic(c in case()) {
        let a = simulate(&c.graph, &c.plan, &c.cfg, true).unwrap();
        let b = simulate(&c.graph, &c.plan, &c.cfg, true).unwrap();
        prop_assert_eq!(a.0.to_json(), b.0.to_json());
        prop_assert_eq!(a.1.to_json(), b.1.to_json());
    }
}

fn layer(
    id: u32,
    kind: LayerKind,
    input_shape: [usize; 3],
    kernel: usize,
    filters: usize,
    producers: Vec<u32>,
) -> mixq::netgraph::LayerSpec {
    mixq::netgraph::LayerSpec {
        id,
        name: format!("l{id}"),
        kind,
        op: None,
        input_shape,
        kernel: [kernel, kernel],
        filters,
        stride: 1,
        groups: 1,
        producer_ids: producers,
        activation: mixq::netgraph::Activation::Relu,
    }
}

fn chain(layers: Vec<mixq::netgraph::LayerSpec>, input: [usize; 3]) -> NetworkGraph {
    NetworkGraph {
        name: "chain".into(),
        input_resolution: [input[1], input[2]],
        input_channels: input[0],
        layers,
    }
    .validated()
    .unwrap()
}

#[test]
fn single_layer_makespan_is_its_cycles() {
    let mut r = rng(38);
    for _ in 0..50 {
        let c = r.random_range(1..20);
        let g = chain(
            vec![layer(0, LayerKind::DWConv, [c, 7, 7], 3, c, vec![])],
            [c, 7, 7],
        );
        let plan = random_plan(&mut r, &g, 0.5, 4);
        let cfg = random_cfg(&mut r);
        let t = schedule_pipeline(&g, &plan, &cfg, true).unwrap();
        assert_eq!(
            t.makespan,
            cycles_mpma_single(&g.layers[0], &cfg).unwrap().cycles
        );
    }
}

#[test]
fn depthwise_overlaps_apot_successor() {
    // 24 channels on 2x2, 16 filters: both stages take 24 cycles
    let cfg = HardwareConfig::default();
    let g = chain(
        vec![
            layer(0, LayerKind::DWConv, [24, 2, 2], 3, 24, vec![]),
            layer(1, LayerKind::PWConv, [24, 2, 2], 1, 16, vec![0]),
        ],
        [24, 2, 2],
    );
    let plan = random_plan(&mut rng(39), &g, 1.0, 4);
    let trace = schedule_pipeline(&g, &plan, &cfg, true).unwrap();
    let c = trace.records[0].busy_cycles;
    assert_eq!(c, 24);
    assert_eq!(trace.records[1].engine, Engine::Sat);
    assert_eq!(trace.records[1].busy_cycles, c);
    assert!(
        trace.makespan < 2 * c && trace.makespan >= c,
        "{} vs {c}",
        trace.makespan
    );
    assert!(trace.records[1].start_cycle < trace.records[0].end_cycle);
    let serial = schedule_pipeline(&g, &plan, &cfg, false).unwrap();
    assert_eq!(serial.makespan, 2 * c);
}

#[test]
fn split_layer_portions_overlap() {
    let g = chain(
        vec![layer(0, LayerKind::PWConv, [18, 6, 6], 1, 16, vec![])],
        [18, 6, 6],
    );
    let plan = random_plan(&mut rng(40), &g, 0.5, 4);
    for pipelined in [true, false] {
        let t = schedule_pipeline(&g, &plan, &HardwareConfig::default(), pipelined).unwrap();
        assert_eq!(t.records.len(), 2);
        let (a, b) = (&t.records[0], &t.records[1]);
        assert_ne!(a.engine, b.engine);
        assert!(a.start_cycle < b.end_cycle && b.start_cycle < a.end_cycle);
    }
}
