//! Layer-graph representation of convolution-transformer hybrid networks.
//!
//! A [`NetworkGraph`] is a topologically ordered list of [`LayerSpec`]s. Four
//! layer kinds exist: depthwise convolutions, pointwise (1×1) convolutions,
//! matrix multiplications and zero-cost elementwise/data-movement layers.
//!
//! Every tensor is described by a rank-3 [`Shape`]. Feature maps use
//! `[channels, height, width]`; matrix operands use `[batch, rows, cols]`,
//! where the batch dimension carries attention heads.

mod efficientvit;
mod manifest;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use efficientvit::{build_efficientvit, build_efficientvit_at, EfficientVitConfig, Variant};
pub use manifest::{synthesize_weights, BlobRef, ManifestLayer, NetworkManifest, WeightStore};

pub type LayerId = u32;

/// `[d0, d1, d2]`: `[C, H, W]` for feature maps, `[batch, rows, cols]` for matrices.
pub type Shape = [usize; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LayerKind {
    DWConv,
    PWConv,
    MatMul,
    Elementwise,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    None,
    Relu,
}

/// Zero-cost layers kept in the graph for shape integrity.
///
/// The attention helpers take the concatenated multi-scale `qkv` feature map,
/// laid out as consecutive groups of `3·dim` channels (`q`, `k`, `v` per
/// group), and produce the matrix operands of the linear-attention chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ElementwiseOp {
    /// Sum of two equally shaped producers.
    Add,
    /// Channel concatenation; `filters` holds the output channel count.
    Concat,
    GlobalAvgPool,
    /// Unfolds `kernel×kernel` patches (zero padded by `kernel/2`) into channels.
    Im2Col {
        kernel: usize,
        stride: usize,
    },
    /// `[G·3·dim, H, W]` → `[G, H·W, dim]` holding the query slice.
    HeadsQuery {
        dim: usize,
    },
    /// `[G·3·dim, H, W]` → `[G, dim, H·W]` holding the transposed key slice.
    HeadsKeyT {
        dim: usize,
    },
    /// `[G·3·dim, H, W]` → `[G, H·W, dim+1]`: the value slice padded with a
    /// column of ones, so the following product also yields the normalizer.
    HeadsValueOnes {
        dim: usize,
    },
    /// `[G, N, dim+1]` → `[G·dim, height, width]`, dividing each row by its
    /// last column.
    AttnMerge {
        dim: usize,
        height: usize,
        width: usize,
    },
}

/// Denominator guard of the attention merge.
pub const ATTN_EPS: f64 = 1e-15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub id: LayerId,
    #[serde(default)]
    pub name: String,
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op: Option<ElementwiseOp>,
    pub input_shape: Shape,
    #[serde(default = "one_by_one")]
    pub kernel: [usize; 2],
    pub filters: usize,
    #[serde(default = "one")]
    pub stride: usize,
    /// Channel groups of a pointwise convolution. Always 1 for other kinds.
    #[serde(default = "one")]
    pub groups: usize,
    #[serde(default)]
    pub producer_ids: Vec<LayerId>,
    #[serde(default)]
    pub activation: Activation,
}

fn one() -> usize {
    1
}

fn one_by_one() -> [usize; 2] {
    [1, 1]
}

impl LayerSpec {
    pub fn output_shape(&self) -> Shape {
        let [c, h, w] = self.input_shape;
        match self.kind {
            LayerKind::DWConv => {
                let [kh, kw] = self.kernel;
                [
                    c,
                    conv_out(h, kh, self.stride),
                    conv_out(w, kw, self.stride),
                ]
            }
            LayerKind::PWConv => [
                self.filters,
                conv_out(h, 1, self.stride),
                conv_out(w, 1, self.stride),
            ],
            LayerKind::MatMul => [c, h, self.filters],
            LayerKind::Elementwise => match self.op {
                Some(ElementwiseOp::Concat) => [self.filters, h, w],
                Some(ElementwiseOp::GlobalAvgPool) => [c, 1, 1],
                Some(ElementwiseOp::Im2Col { kernel, stride }) => [
                    c * kernel * kernel,
                    conv_out(h, kernel, stride),
                    conv_out(w, kernel, stride),
                ],
                Some(ElementwiseOp::HeadsQuery { dim }) => [c / (3 * dim).max(1), h * w, dim],
                Some(ElementwiseOp::HeadsKeyT { dim }) => [c / (3 * dim).max(1), dim, h * w],
                Some(ElementwiseOp::HeadsValueOnes { dim }) => {
                    [c / (3 * dim).max(1), h * w, dim + 1]
                }
                Some(ElementwiseOp::AttnMerge { dim, height, width }) => [c * dim, height, width],
                Some(ElementwiseOp::Add) | None => self.input_shape,
            },
        }
    }

    /// Shape of the second (weight-role) operand of a MatMul: `[batch, k, n]`.
    pub fn matmul_rhs_shape(&self) -> Shape {
        let [g, _, k] = self.input_shape;
        [g, k, self.filters]
    }

    /// Multiply-accumulate count from the shape formula. Zero for elementwise layers.
    ///
    /// Convolutions count every kernel tap of every output pixel, including
    /// taps that fall on zero padding.
    pub fn macs(&self) -> u64 {
        let [_, ho, wo] = self.output_shape();
        let [kh, kw] = self.kernel;
        match self.kind {
            LayerKind::DWConv => (self.input_shape[0] * kh * kw * ho * wo) as u64,
            LayerKind::PWConv => {
                let cin_g = self.input_shape[0] / self.groups.max(1);
                (cin_g * self.filters * ho * wo) as u64
            }
            LayerKind::MatMul => {
                let [g, m, k] = self.input_shape;
                (g * m * k * self.filters) as u64
            }
            LayerKind::Elementwise => 0,
        }
    }

    /// Number of independently quantized filters (output channels, or
    /// operand columns across all batches for a MatMul).
    pub fn filter_count(&self) -> usize {
        match self.kind {
            LayerKind::DWConv => self.input_shape[0],
            LayerKind::PWConv => self.filters,
            LayerKind::MatMul => self.input_shape[0] * self.filters,
            LayerKind::Elementwise => 0,
        }
    }

    /// Length of one filter's weight vector.
    pub fn filter_len(&self) -> usize {
        match self.kind {
            LayerKind::DWConv => self.kernel[0] * self.kernel[1],
            LayerKind::PWConv => self.input_shape[0] / self.groups.max(1),
            LayerKind::MatMul => self.input_shape[2],
            LayerKind::Elementwise => 0,
        }
    }

    /// Independent filter groups: channel groups for PWConv, batches for
    /// MatMul, 1 otherwise.
    pub fn filter_groups(&self) -> usize {
        match self.kind {
            LayerKind::PWConv => self.groups.max(1),
            LayerKind::MatMul => self.input_shape[0],
            _ => 1,
        }
    }

    pub fn is_compute(&self) -> bool {
        self.kind != LayerKind::Elementwise
    }
}

/// Output extent of a same-padded convolution (padding `k/2`).
pub(crate) fn conv_out(size: usize, k: usize, stride: usize) -> usize {
    let padded = size + 2 * (k / 2);
    if padded < k || stride == 0 {
        return 0;
    }
    (padded - k) / stride + 1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerCategory {
    ComputationIntensive,
    MemoryIntensive,
}

/// Classifies a layer by operation intensity.
pub fn layer_category(layer: &LayerSpec) -> Result<LayerCategory> {
    match layer.kind {
        LayerKind::PWConv | LayerKind::MatMul => Ok(LayerCategory::ComputationIntensive),
        LayerKind::DWConv => Ok(LayerCategory::MemoryIntensive),
        LayerKind::Elementwise => Err(Error::NotQuantizable {
            layer: layer.id,
            kind: layer.kind,
        }),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkGraph {
    pub name: String,
    pub input_resolution: [usize; 2],
    #[serde(default = "three")]
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
}

fn three() -> usize {
    3
}

impl NetworkGraph {
    pub fn input_shape(&self) -> Shape {
        let [h, w] = self.input_resolution;
        [self.input_channels, h, w]
    }

    pub fn total_macs(&self) -> u64 {
        self.layers.iter().map(LayerSpec::macs).sum()
    }

    pub fn layer(&self, id: LayerId) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.id == id)
    }

    /// Position of every layer id in `layers`.
    pub fn index(&self) -> HashMap<LayerId, usize> {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| (l.id, i))
            .collect()
    }

    pub fn compute_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().filter(|l| l.is_compute())
    }

    pub fn output_shape(&self) -> Shape {
        self.layers
            .last()
            .map(LayerSpec::output_shape)
            .unwrap_or_else(|| self.input_shape())
    }

    /// Validates and returns the graph, or every violation found.
    pub fn validated(self) -> Result<Self> {
        let violations = validate_graph(&self);
        if violations.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidGraph(violations))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    DuplicateId,
    /// Unknown producer, or a producer that does not precede its consumer.
    Order,
    ShapeMismatch,
    KernelMismatch,
    DepthwiseMismatch,
    Arity,
    InvalidParameter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub layer: LayerId,
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "layer {}: {:?}: {}", self.layer, self.kind, self.message)
    }
}

/// Checks every structural invariant and returns all violations (empty when ok).
pub fn validate_graph(graph: &NetworkGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen: HashMap<LayerId, Shape> = HashMap::new();

    for layer in &graph.layers {
        let mut push = |kind, message: String| {
            out.push(Violation {
                layer: layer.id,
                kind,
                message,
            })
        };

        if seen.contains_key(&layer.id) {
            push(
                ViolationKind::DuplicateId,
                format!("id {} already used", layer.id),
            );
        }
        if layer.stride == 0 {
            push(
                ViolationKind::InvalidParameter,
                "stride must be positive".into(),
            );
        }
        if layer.kernel.contains(&0) {
            push(
                ViolationKind::InvalidParameter,
                "kernel extents must be positive".into(),
            );
        }
        if layer.input_shape.contains(&0) {
            push(
                ViolationKind::InvalidParameter,
                format!("empty input shape {:?}", layer.input_shape),
            );
        }
        if layer.groups == 0 || (layer.groups != 1 && layer.kind != LayerKind::PWConv) {
            push(
                ViolationKind::InvalidParameter,
                format!("groups = {} not allowed for {:?}", layer.groups, layer.kind),
            );
        }
        if (layer.kind == LayerKind::Elementwise) != layer.op.is_some() {
            push(
                ViolationKind::InvalidParameter,
                "elementwise layers need exactly one op; others none".into(),
            );
        }

        // Producers: known and earlier in the list.
        let mut producer_shapes = Vec::new();
        for pid in &layer.producer_ids {
            match seen.get(pid) {
                Some(shape) => producer_shapes.push(*shape),
                None => push(
                    ViolationKind::Order,
                    format!("producer {pid} is unknown or does not precede its consumer"),
                ),
            }
        }
        let order_ok = producer_shapes.len() == layer.producer_ids.len();
        let first_in = if layer.producer_ids.is_empty() {
            Some(graph.input_shape())
        } else {
            producer_shapes.first().copied()
        };

        let arity_ok = match (layer.kind, layer.op) {
            (LayerKind::MatMul, _) => layer.producer_ids.len() == 2,
            (LayerKind::Elementwise, Some(ElementwiseOp::Add)) => layer.producer_ids.len() == 2,
            (LayerKind::Elementwise, Some(ElementwiseOp::Concat)) => layer.producer_ids.len() >= 2,
            _ => layer.producer_ids.len() <= 1,
        };
        if !arity_ok {
            push(
                ViolationKind::Arity,
                format!(
                    "{} producer(s) for {:?}",
                    layer.producer_ids.len(),
                    layer.kind
                ),
            );
        }

        match layer.kind {
            LayerKind::PWConv => {
                if layer.kernel != [1, 1] {
                    push(
                        ViolationKind::KernelMismatch,
                        format!("pointwise conv with kernel {:?}", layer.kernel),
                    );
                }
                let g = layer.groups.max(1);
                if layer.input_shape[0] % g != 0 || layer.filters % g != 0 {
                    push(
                        ViolationKind::InvalidParameter,
                        format!("channels not divisible into {g} groups"),
                    );
                }
            }
            LayerKind::DWConv => {
                if layer.filters != layer.input_shape[0] {
                    push(
                        ViolationKind::DepthwiseMismatch,
                        format!(
                            "{} filters for {} input channels",
                            layer.filters, layer.input_shape[0]
                        ),
                    );
                }
            }
            LayerKind::MatMul if order_ok && layer.producer_ids.len() == 2 => {
                let rhs = producer_shapes[1];
                if rhs != layer.matmul_rhs_shape() {
                    push(
                        ViolationKind::ShapeMismatch,
                        format!(
                            "right operand {:?}, expected {:?}",
                            rhs,
                            layer.matmul_rhs_shape()
                        ),
                    );
                }
            }
            LayerKind::Elementwise if order_ok => match layer.op {
                Some(ElementwiseOp::Add) => {
                    if producer_shapes.iter().any(|s| *s != layer.input_shape) {
                        push(
                            ViolationKind::ShapeMismatch,
                            format!("add operands {producer_shapes:?}"),
                        );
                    }
                }
                Some(ElementwiseOp::Concat) => {
                    let [_, h, w] = layer.input_shape;
                    let channels: usize = producer_shapes.iter().map(|s| s[0]).sum();
                    if producer_shapes.iter().any(|s| s[1] != h || s[2] != w)
                        || channels != layer.filters
                    {
                        push(
                            ViolationKind::ShapeMismatch,
                            format!("concat operands {producer_shapes:?}"),
                        );
                    }
                }
                Some(
                    ElementwiseOp::HeadsQuery { dim }
                    | ElementwiseOp::HeadsKeyT { dim }
                    | ElementwiseOp::HeadsValueOnes { dim },
                ) => {
                    if dim == 0 || layer.input_shape[0] % (3 * dim) != 0 {
                        push(
                            ViolationKind::InvalidParameter,
                            format!(
                                "{} channels do not split into q/k/v of dim {dim}",
                                layer.input_shape[0]
                            ),
                        );
                    }
                }
                Some(ElementwiseOp::AttnMerge { dim, height, width }) => {
                    let [_, n, cols] = layer.input_shape;
                    if cols != dim + 1 || n != height * width {
                        push(
                            ViolationKind::ShapeMismatch,
                            format!("attention merge input {:?}", layer.input_shape),
                        );
                    }
                }
                _ => {}
            },
            _ => {}
        }

        if let Some(shape) = first_in {
            if order_ok && shape != layer.input_shape {
                push(
                    ViolationKind::ShapeMismatch,
                    format!(
                        "input shape {:?} but producer yields {:?}",
                        layer.input_shape, shape
                    ),
                );
            }
        }

        seen.entry(layer.id).or_insert_with(|| layer.output_shape());
    }
    out
}
