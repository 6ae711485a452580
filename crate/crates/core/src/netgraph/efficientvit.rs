//! EfficientViT-B1/B2 graph builders.
//!
//! The per-stage widths and depths below are a reconstruction, not the
//! released checkpoints: they reproduce the published multiply-accumulate
//! totals (0.52 G for B1 at 224², 1.6 G for B2 at 224²) but hardswish is
//! modelled as ReLU and normalization layers are folded away.

use serde::{Deserialize, Serialize};

use super::{Activation, ElementwiseOp, LayerId, LayerKind, LayerSpec, NetworkGraph, Shape};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    B1,
    B2,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "b1" => Ok(Variant::B1),
            "b2" => Ok(Variant::B2),
            other => Err(Error::Config(format!(
                "unknown variant `{other}` (expected b1 or b2)"
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::B1 => "B1",
            Variant::B2 => "B2",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EfficientVitConfig {
    /// Stem width followed by the four stage widths.
    pub widths: [usize; 5],
    /// Stem residual blocks followed by blocks per stage.
    pub depths: [usize; 5],
    /// Per-head dimension of the linear attention.
    pub head_dim: usize,
    pub expand_ratio: usize,
    /// Multi-scale aggregation kernel of the attention module.
    pub aggregation_kernel: usize,
    pub classifier_widths: [usize; 2],
    pub classes: usize,
}

impl EfficientVitConfig {
    pub fn for_variant(variant: Variant) -> Self {
        match variant {
            Variant::B1 => EfficientVitConfig {
                widths: [16, 32, 64, 128, 256],
                depths: [1, 2, 3, 3, 4],
                head_dim: 16,
                expand_ratio: 4,
                aggregation_kernel: 5,
                classifier_widths: [1536, 1600],
                classes: 1000,
            },
            Variant::B2 => EfficientVitConfig {
                widths: [24, 48, 96, 192, 384],
                depths: [1, 3, 4, 4, 6],
                head_dim: 32,
                expand_ratio: 4,
                aggregation_kernel: 5,
                classifier_widths: [2304, 2560],
                classes: 1000,
            },
        }
    }
}

/// Builds one of the variant/resolution pairs evaluated for the accelerator:
/// B1 at 224, 256 or 288 and B2 at 224.
pub fn build_efficientvit(variant: Variant, resolution: usize) -> Result<NetworkGraph> {
    let listed = matches!(
        (variant, resolution),
        (Variant::B1, 224 | 256 | 288) | (Variant::B2, 224)
    );
    if !listed {
        return Err(Error::Config(format!(
            "EfficientViT-{variant} at resolution {resolution} is not a supported configuration"
        )));
    }
    build_efficientvit_at(variant, resolution)
}

/// Same as [`build_efficientvit`] for any resolution that is a positive
/// multiple of 32. Handy for small desk-scale experiments.
pub fn build_efficientvit_at(variant: Variant, resolution: usize) -> Result<NetworkGraph> {
    if resolution == 0 || !resolution.is_multiple_of(32) {
        return Err(Error::Config(format!(
            "resolution {resolution} is not a positive multiple of 32"
        )));
    }
    let cfg = EfficientVitConfig::for_variant(variant);
    let mut b = Builder::new([3, resolution, resolution]);

    // Input stem: 3×3/2 convolution expressed as patch unfolding + pointwise.
    let x = b.elementwise(
        "stem.im2col",
        ElementwiseOp::Im2Col {
            kernel: 3,
            stride: 2,
        },
        &[b.input()],
        Activation::None,
    );
    let mut x = b.pw("stem.conv", x, cfg.widths[0], 1, Activation::Relu);
    for i in 0..cfg.depths[0] {
        let dw = b.dw(&format!("stem.ds{i}.dw"), x, 3, 1, Activation::Relu);
        let pw = b.pw(
            &format!("stem.ds{i}.pw"),
            dw,
            cfg.widths[0],
            1,
            Activation::None,
        );
        x = b.add(&format!("stem.ds{i}.add"), pw, x);
    }

    for stage in 1..3 {
        for i in 0..cfg.depths[stage] {
            let stride = if i == 0 { 2 } else { 1 };
            x = b.mbconv(
                &format!("s{stage}.b{i}"),
                x,
                cfg.widths[stage],
                cfg.expand_ratio,
                stride,
            );
        }
    }
    for stage in 3..5 {
        x = b.mbconv(
            &format!("s{stage}.down"),
            x,
            cfg.widths[stage],
            cfg.expand_ratio,
            2,
        );
        for i in 0..cfg.depths[stage] {
            x = b.lite_mla(
                &format!("s{stage}.b{i}.attn"),
                x,
                cfg.head_dim,
                cfg.aggregation_kernel,
            );
            x = b.mbconv(
                &format!("s{stage}.b{i}.mb"),
                x,
                cfg.widths[stage],
                cfg.expand_ratio,
                1,
            );
        }
    }

    let x = b.pw(
        "head.conv",
        x,
        cfg.classifier_widths[0],
        1,
        Activation::Relu,
    );
    let x = b.elementwise(
        "head.pool",
        ElementwiseOp::GlobalAvgPool,
        &[x],
        Activation::None,
    );
    let x = b.pw("head.fc1", x, cfg.classifier_widths[1], 1, Activation::Relu);
    b.pw("head.fc2", x, cfg.classes, 1, Activation::None);

    Ok(NetworkGraph {
        name: format!(
            "efficientvit-{}-r{resolution}",
            variant.to_string().to_lowercase()
        ),
        input_resolution: [resolution, resolution],
        input_channels: 3,
        layers: b.layers,
    })
}

/// Handle to a tensor in the graph under construction.
#[derive(Clone, Copy)]
struct Tensor {
    producer: Option<LayerId>,
    shape: Shape,
}

struct Builder {
    layers: Vec<LayerSpec>,
    input: Shape,
}

impl Builder {
    fn new(input: Shape) -> Self {
        Builder {
            layers: Vec::new(),
            input,
        }
    }

    fn input(&self) -> Tensor {
        Tensor {
            producer: None,
            shape: self.input,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        name: &str,
        kind: LayerKind,
        op: Option<ElementwiseOp>,
        inputs: &[Tensor],
        kernel: [usize; 2],
        filters: usize,
        stride: usize,
        groups: usize,
        activation: Activation,
    ) -> Tensor {
        let id = self.layers.len() as LayerId;
        let spec = LayerSpec {
            id,
            name: name.to_string(),
            kind,
            op,
            input_shape: inputs[0].shape,
            kernel,
            filters,
            stride,
            groups,
            producer_ids: inputs.iter().filter_map(|t| t.producer).collect(),
            activation,
        };
        let shape = spec.output_shape();
        self.layers.push(spec);
        Tensor {
            producer: Some(id),
            shape,
        }
    }

    fn pw(
        &mut self,
        name: &str,
        x: Tensor,
        filters: usize,
        groups: usize,
        act: Activation,
    ) -> Tensor {
        self.push(
            name,
            LayerKind::PWConv,
            None,
            &[x],
            [1, 1],
            filters,
            1,
            groups,
            act,
        )
    }

    fn dw(&mut self, name: &str, x: Tensor, k: usize, stride: usize, act: Activation) -> Tensor {
        self.push(
            name,
            LayerKind::DWConv,
            None,
            &[x],
            [k, k],
            x.shape[0],
            stride,
            1,
            act,
        )
    }

    fn matmul(&mut self, name: &str, lhs: Tensor, rhs: Tensor) -> Tensor {
        self.push(
            name,
            LayerKind::MatMul,
            None,
            &[lhs, rhs],
            [1, 1],
            rhs.shape[2],
            1,
            1,
            Activation::None,
        )
    }

    fn elementwise(
        &mut self,
        name: &str,
        op: ElementwiseOp,
        inputs: &[Tensor],
        act: Activation,
    ) -> Tensor {
        let filters = match op {
            ElementwiseOp::Concat => inputs.iter().map(|t| t.shape[0]).sum(),
            _ => 0,
        };
        self.push(
            name,
            LayerKind::Elementwise,
            Some(op),
            inputs,
            [1, 1],
            filters,
            1,
            1,
            act,
        )
    }

    fn add(&mut self, name: &str, a: Tensor, b: Tensor) -> Tensor {
        self.elementwise(name, ElementwiseOp::Add, &[a, b], Activation::None)
    }

    /// PWConv → DWConv → PWConv with a residual when the shape is preserved.
    fn mbconv(
        &mut self,
        name: &str,
        x: Tensor,
        out: usize,
        expand: usize,
        stride: usize,
    ) -> Tensor {
        let mid = x.shape[0] * expand;
        let e = self.pw(&format!("{name}.expand"), x, mid, 1, Activation::Relu);
        let d = self.dw(&format!("{name}.dw"), e, 3, stride, Activation::Relu);
        let p = self.pw(&format!("{name}.project"), d, out, 1, Activation::None);
        if stride == 1 && x.shape[0] == out {
            self.add(&format!("{name}.add"), p, x)
        } else {
            p
        }
    }

    /// Lightweight multi-scale ReLU linear attention with residual.
    fn lite_mla(&mut self, name: &str, x: Tensor, dim: usize, agg_kernel: usize) -> Tensor {
        let [c, h, w] = x.shape;
        let heads = c / dim;
        let total = heads * dim;

        let qkv = self.pw(&format!("{name}.qkv"), x, 3 * total, 1, Activation::None);
        let agg_dw = self.dw(
            &format!("{name}.agg.dw"),
            qkv,
            agg_kernel,
            1,
            Activation::None,
        );
        let agg_pw = self.pw(
            &format!("{name}.agg.pw"),
            agg_dw,
            3 * total,
            3 * heads,
            Activation::None,
        );
        let cat = self.elementwise(
            &format!("{name}.concat"),
            ElementwiseOp::Concat,
            &[qkv, agg_pw],
            Activation::None,
        );

        let q = self.elementwise(
            &format!("{name}.q"),
            ElementwiseOp::HeadsQuery { dim },
            &[cat],
            Activation::Relu,
        );
        let kt = self.elementwise(
            &format!("{name}.kt"),
            ElementwiseOp::HeadsKeyT { dim },
            &[cat],
            Activation::Relu,
        );
        let v = self.elementwise(
            &format!("{name}.v"),
            ElementwiseOp::HeadsValueOnes { dim },
            &[cat],
            Activation::None,
        );

        let kv = self.matmul(&format!("{name}.kv"), kt, v);
        let qkv_out = self.matmul(&format!("{name}.qkv_out"), q, kv);
        let merged = self.elementwise(
            &format!("{name}.merge"),
            ElementwiseOp::AttnMerge {
                dim,
                height: h,
                width: w,
            },
            &[qkv_out],
            Activation::None,
        );
        let proj = self.pw(&format!("{name}.proj"), merged, c, 1, Activation::None);
        self.add(&format!("{name}.add"), proj, x)
    }
}
