//! Small random networks that pass validation.

use std::collections::BTreeMap;

use mixq::netgraph::{
    Activation, ElementwiseOp, LayerId, LayerKind, LayerSpec, NetworkGraph, Shape,
};
use mixq::quant::{assign_m2q, M2qConfig, QuantPlan};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::random_filter;

#[derive(Clone, Copy)]
struct T {
    id: Option<LayerId>,
    shape: Shape,
}

struct B {
    layers: Vec<LayerSpec>,
    input: Shape,
}

impl B {
    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        kind: LayerKind,
        op: Option<ElementwiseOp>,
        ins: &[T],
        k: usize,
        filters: usize,
        stride: usize,
        groups: usize,
    ) -> T {
        let id = self.layers.len() as LayerId;
        let spec = LayerSpec {
            id,
            name: format!("l{id}"),
            kind,
            op,
            input_shape: ins[0].shape,
            kernel: [k, k],
            filters,
            stride,
            groups,
            producer_ids: ins.iter().filter_map(|t| t.id).collect(),
            activation: if kind == LayerKind::MatMul {
                Activation::None
            } else {
                Activation::Relu
            },
        };
        let shape = spec.output_shape();
        self.layers.push(spec);
        T {
            id: Some(id),
            shape,
        }
    }

    fn dw(&mut self, x: T, k: usize, stride: usize) -> T {
        self.push(LayerKind::DWConv, None, &[x], k, x.shape[0], stride, 1)
    }

    fn pw(&mut self, x: T, filters: usize, groups: usize) -> T {
        self.push(LayerKind::PWConv, None, &[x], 1, filters, 1, groups)
    }

    fn ew(&mut self, op: ElementwiseOp, ins: &[T]) -> T {
        let filters = if op == ElementwiseOp::Concat {
            ins.iter().map(|t| t.shape[0]).sum()
        } else {
            0
        };
        self.push(LayerKind::Elementwise, Some(op), ins, 1, filters, 1, 1)
    }

    fn attention(&mut self, x: T, heads: usize, dim: usize) -> T {
        let [c, h, w] = x.shape;
        let qkv = self.pw(x, 3 * heads * dim, 1);
        let q = self.ew(ElementwiseOp::HeadsQuery { dim }, &[qkv]);
        let kt = self.ew(ElementwiseOp::HeadsKeyT { dim }, &[qkv]);
        let v = self.ew(ElementwiseOp::HeadsValueOnes { dim }, &[qkv]);
        let kv = self.push(LayerKind::MatMul, None, &[kt, v], 1, v.shape[2], 1, 1);
        let out = self.push(LayerKind::MatMul, None, &[q, kv], 1, kv.shape[2], 1, 1);
        let merged = self.ew(
            ElementwiseOp::AttnMerge {
                dim,
                height: h,
                width: w,
            },
            &[out],
        );
        let proj = self.pw(merged, c, 1);
        self.ew(ElementwiseOp::Add, &[proj, x])
    }
}

fn divisors(n: usize) -> Vec<usize> {
    (1..=n).filter(|d| n.is_multiple_of(*d)).collect()
}

/// A chain of 1–`max_blocks` random blocks: depthwise, (grouped) pointwise,
/// inverted residual, or linear attention.
pub fn random_graph(rng: &mut ChaCha8Rng, max_blocks: usize, max_extent: usize) -> NetworkGraph {
    let input = [
        rng.random_range(1..=6),
        rng.random_range(2..=max_extent),
        rng.random_range(2..=max_extent),
    ];
    let mut b = B {
        layers: Vec::new(),
        input,
    };
    let mut x = T {
        id: None,
        shape: input,
    };
    // the first layer reads the network input directly
    x = b.pw(x, rng.random_range(2..=12), 1);
    for _ in 0..rng.random_range(1..=max_blocks) {
        x = match rng.random_range(0..5) {
            0 => {
                let k = [1, 3, 5][rng.random_range(0..3)];
                let s = rng.random_range(1..=2);
                b.dw(x, k, s)
            }
            1 => {
                let c = x.shape[0];
                let ds = divisors(c);
                let groups = if rng.random_bool(0.3) {
                    ds[rng.random_range(0..ds.len())]
                } else {
                    1
                };
                let f = groups * rng.random_range(1..=4);
                b.pw(x, f, groups)
            }
            2 => {
                let e = b.pw(x, x.shape[0] * rng.random_range(1..=3), 1);
                let d = b.dw(e, 3, 1);
                let p = b.pw(d, x.shape[0], 1);
                b.ew(ElementwiseOp::Add, &[p, x])
            }
            3 => {
                let heads = rng.random_range(1..=2);
                let dim = rng.random_range(1..=4);
                b.attention(x, heads, dim)
            }
            _ => {
                let y = b.pw(x, rng.random_range(1..=8), 1);
                b.ew(ElementwiseOp::Concat, &[y, x])
            }
        };
    }
    let g = NetworkGraph {
        name: "random".into(),
        input_resolution: [input[1], input[2]],
        input_channels: input[0],
        layers: b.layers,
    };
    g.validated().expect("generated graph is valid")
}

/// Random per-filter values for every compute layer (MatMul columns included).
pub fn random_filters(
    rng: &mut ChaCha8Rng,
    graph: &NetworkGraph,
) -> BTreeMap<LayerId, Vec<Vec<f64>>> {
    graph
        .compute_layers()
        .map(|l| {
            (
                l.id,
                (0..l.filter_count())
                    .map(|_| random_filter(rng, l.filter_len()))
                    .collect(),
            )
        })
        .collect()
}

pub fn random_plan(
    rng: &mut ChaCha8Rng,
    graph: &NetworkGraph,
    ratio: f64,
    bits_dw: u32,
) -> QuantPlan {
    let filters = random_filters(rng, graph);
    assign_m2q(
        graph,
        &filters,
        &M2qConfig {
            target_ratio: ratio,
            bits_dw,
            ..Default::default()
        },
    )
    .unwrap()
}

/// One linear-attention block on a `[channels, h, w]` input.
pub fn attention_graph(
    channels: usize,
    h: usize,
    w: usize,
    heads: usize,
    dim: usize,
) -> NetworkGraph {
    let input = [channels, h, w];
    let mut b = B {
        layers: Vec::new(),
        input,
    };
    let x = b.pw(
        T {
            id: None,
            shape: input,
        },
        channels,
        1,
    );
    b.attention(x, heads, dim);
    NetworkGraph {
        name: "attention".into(),
        input_resolution: [h, w],
        input_channels: channels,
        layers: b.layers,
    }
    .validated()
    .expect("attention block is valid")
}
