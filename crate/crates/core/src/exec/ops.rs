use super::Tensor;
use crate::error::{Error, Result};
use crate::netgraph::{Activation, ElementwiseOp, LayerKind, LayerSpec, ATTN_EPS};

/// Float evaluation of a data-movement layer, shared by both paths.
pub fn elementwise(layer: &LayerSpec, inputs: &[&Tensor]) -> Result<Tensor> {
    let (LayerKind::Elementwise, Some(op)) = (layer.kind, layer.op) else {
        return Err(Error::Config(format!(
            "layer {} is not an elementwise layer",
            layer.id
        )));
    };
    let x = inputs
        .first()
        .ok_or_else(|| Error::Config(format!("layer {} has no input", layer.id)))?;
    if x.shape != layer.input_shape {
        return Err(Error::ShapeMismatch {
            layer: layer.id,
            detail: format!("input {:?}", x.shape),
        });
    }
    let out_shape = layer.output_shape();
    let [c, h, w] = x.shape;
    let mut out = match op {
        ElementwiseOp::Add => {
            let y = inputs.get(1).ok_or_else(|| {
                Error::Config(format!("layer {}: add needs two inputs", layer.id))
            })?;
            if y.shape != x.shape {
                return Err(Error::ShapeMismatch {
                    layer: layer.id,
                    detail: format!("add {:?} + {:?}", x.shape, y.shape),
                });
            }
            x.data.iter().zip(&y.data).map(|(a, b)| a + b).collect()
        }
        ElementwiseOp::Concat => inputs.iter().flat_map(|t| t.data.iter().copied()).collect(),
        ElementwiseOp::GlobalAvgPool => x
            .data
            .chunks(h * w)
            .map(|p| p.iter().sum::<f64>() / (h * w) as f64)
            .collect(),
        ElementwiseOp::Im2Col { kernel, stride } => {
            let [_, ho, wo] = out_shape;
            let pad = kernel / 2;
            let mut v = vec![0.0; out_shape.iter().product()];
            for ch in 0..c {
                for i in 0..kernel {
                    for j in 0..kernel {
                        let oc = ch * kernel * kernel + i * kernel + j;
                        for oy in 0..ho {
                            let Some(iy) = (oy * stride + i).checked_sub(pad).filter(|&v| v < h)
                            else {
                                continue;
                            };
                            for ox in 0..wo {
                                let Some(ix) =
                                    (ox * stride + j).checked_sub(pad).filter(|&v| v < w)
                                else {
                                    continue;
                                };
                                v[(oc * ho + oy) * wo + ox] = x.data[(ch * h + iy) * w + ix];
                            }
                        }
                    }
                }
            }
            v
        }
        ElementwiseOp::HeadsQuery { dim } | ElementwiseOp::HeadsValueOnes { dim } => {
            let offset = if matches!(op, ElementwiseOp::HeadsQuery { .. }) {
                0
            } else {
                2 * dim
            };
            let [g, n, cols] = out_shape;
            let mut v = vec![1.0; g * n * cols];
            for gi in 0..g {
                for d in 0..dim {
                    let ch = gi * 3 * dim + offset + d;
                    for p in 0..n {
                        v[(gi * n + p) * cols + d] = x.data[ch * h * w + p];
                    }
                }
            }
            v
        }
        ElementwiseOp::HeadsKeyT { dim } => {
            let [g, _, n] = out_shape;
            let mut v = vec![0.0; g * dim * n];
            for gi in 0..g {
                for d in 0..dim {
                    let ch = gi * 3 * dim + dim + d;
                    v[(gi * dim + d) * n..(gi * dim + d + 1) * n]
                        .copy_from_slice(&x.data[ch * h * w..(ch + 1) * h * w]);
                }
            }
            v
        }
        ElementwiseOp::AttnMerge { dim, .. } => {
            let [g, n, cols] = x.shape;
            let mut v = vec![0.0; g * dim * n];
            for gi in 0..g {
                for p in 0..n {
                    let row = &x.data[(gi * n + p) * cols..(gi * n + p + 1) * cols];
                    let denom = row[dim] + ATTN_EPS;
                    for d in 0..dim {
                        v[(gi * dim + d) * n + p] = row[d] / denom;
                    }
                }
            }
            v
        }
    };
    if layer.activation == Activation::Relu {
        out.iter_mut().for_each(|v: &mut f64| *v = v.max(0.0));
    }
    Tensor::new(out_shape, out)
}
