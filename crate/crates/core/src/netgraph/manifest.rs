//! JSON network manifests, the little-endian `f32` weight blob, and seeded
//! weight synthesis.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Activation, LayerId, LayerKind, LayerSpec, NetworkGraph};
use crate::error::{Error, Result};

/// Static weights by layer id. Pointwise weights are stored filter-major as
/// `[filters][C_in/groups]`, depthwise weights as `[channels][kh·kw]`.
/// MatMul layers have no static weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStore {
    tensors: BTreeMap<LayerId, Vec<f32>>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, layer: LayerId, weights: Vec<f32>) {
        self.tensors.insert(layer, weights);
    }

    pub fn get(&self, layer: LayerId) -> Option<&[f32]> {
        self.tensors.get(&layer).map(Vec::as_slice)
    }

    pub fn get_mut(&mut self, layer: LayerId) -> Option<&mut Vec<f32>> {
        self.tensors.get_mut(&layer)
    }

    pub fn iter(&self) -> impl Iterator<Item = (LayerId, &[f32])> {
        self.tensors.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    /// Per-filter weight vectors of a convolution layer, widened to `f64`.
    pub fn filters(&self, layer: &LayerSpec) -> Result<Vec<Vec<f64>>> {
        let w = self.get(layer.id).ok_or_else(|| {
            Error::Config(format!(
                "no weights for layer {} ({})",
                layer.id, layer.name
            ))
        })?;
        let len = layer.filter_len();
        if w.len() != len * layer.filter_count() {
            return Err(Error::ShapeMismatch {
                layer: layer.id,
                detail: format!(
                    "{} weights, expected {}",
                    w.len(),
                    len * layer.filter_count()
                ),
            });
        }
        Ok(w.chunks(len)
            .map(|c| c.iter().map(|&v| v as f64).collect())
            .collect())
    }
}

/// Seeded synthetic weights for every convolution layer.
///
/// Each filter draws independently from either a uniform or a Gaussian
/// distribution (even odds), mirroring the two filter populations observed in
/// trained pointwise layers. The standard deviation is `sqrt(gain / fan_in)`
/// with gain 2 ahead of a ReLU and 1 otherwise.
pub fn synthesize_weights(graph: &NetworkGraph, seed: u64) -> WeightStore {
    let mut store = WeightStore::new();
    for layer in graph
        .layers
        .iter()
        .filter(|l| matches!(l.kind, LayerKind::PWConv | LayerKind::DWConv))
    {
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed ^ (layer.id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let fan_in = layer.filter_len();
        let gain = if layer.activation == Activation::Relu {
            2.0
        } else {
            1.0
        };
        let std = (gain / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let half_width = std * 3f64.sqrt();

        let mut w = Vec::with_capacity(fan_in * layer.filter_count());
        for _ in 0..layer.filter_count() {
            let gaussian: bool = rng.random();
            for _ in 0..fan_in {
                let v = if gaussian {
                    normal.sample(&mut rng)
                } else {
                    rng.random_range(-half_width..half_width)
                };
                w.push(v as f32);
            }
        }
        store.insert(layer.id, w);
    }
    store
}

/// Location of a layer's weights in the blob, in `f32` elements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobRef {
    pub offset: u64,
    pub length: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestLayer {
    #[serde(flatten)]
    pub spec: LayerSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<BlobRef>,
}

/// On-disk network description: the graph plus an optional sidecar blob of
/// little-endian `f32` weights (path relative to the manifest).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkManifest {
    pub name: String,
    pub input_resolution: [usize; 2],
    #[serde(default = "three")]
    pub input_channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_blob: Option<String>,
    pub layers: Vec<ManifestLayer>,
}

fn three() -> usize {
    3
}

impl NetworkManifest {
    /// Manifest without weights; readers synthesize them from a seed.
    pub fn from_graph(graph: &NetworkGraph) -> Self {
        NetworkManifest {
            name: graph.name.clone(),
            input_resolution: graph.input_resolution,
            input_channels: graph.input_channels,
            weights_blob: None,
            layers: graph
                .layers
                .iter()
                .map(|l| ManifestLayer {
                    spec: l.clone(),
                    weights: None,
                })
                .collect(),
        }
    }

    /// Manifest plus blob bytes holding `weights`, referenced as `blob_name`.
    pub fn with_weights(
        graph: &NetworkGraph,
        weights: &WeightStore,
        blob_name: &str,
    ) -> (Self, Vec<u8>) {
        let mut manifest = Self::from_graph(graph);
        manifest.weights_blob = Some(blob_name.to_string());
        let mut blob = Vec::new();
        let mut offset = 0u64;
        for layer in &mut manifest.layers {
            if let Some(w) = weights.get(layer.spec.id) {
                layer.weights = Some(BlobRef {
                    offset,
                    length: w.len() as u64,
                });
                offset += w.len() as u64;
                for v in w {
                    blob.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        (manifest, blob)
    }

    pub fn graph(&self) -> NetworkGraph {
        NetworkGraph {
            name: self.name.clone(),
            input_resolution: self.input_resolution,
            input_channels: self.input_channels,
            layers: self.layers.iter().map(|l| l.spec.clone()).collect(),
        }
    }

    pub fn parse(text: &str, context: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| Error::Parse {
            context: context.to_string(),
            source,
        })
    }

    /// Reads a manifest, validates its graph and loads the blob if one is referenced.
    pub fn load(path: &Path) -> Result<(NetworkGraph, Option<WeightStore>)> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest = Self::parse(&text, &path.display().to_string())?;
        let graph = manifest.graph().validated()?;
        let weights = match &manifest.weights_blob {
            None => None,
            Some(name) => {
                let blob_path = path
                    .parent()
                    .map(|p| p.join(name))
                    .unwrap_or_else(|| PathBuf::from(name));
                let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
                Some(manifest.weights_from_blob(&bytes)?)
            }
        };
        Ok((graph, weights))
    }

    pub fn weights_from_blob(&self, bytes: &[u8]) -> Result<WeightStore> {
        if !bytes.len().is_multiple_of(4) {
            return Err(Error::Config(format!(
                "weight blob length {} is not a multiple of 4",
                bytes.len()
            )));
        }
        let floats: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let mut store = WeightStore::new();
        for layer in &self.layers {
            let Some(r) = layer.weights else { continue };
            let (start, end) = (r.offset as usize, (r.offset + r.length) as usize);
            if end > floats.len() {
                return Err(Error::Config(format!(
                    "layer {}: weights [{start}, {end}) run past the blob ({} floats)",
                    layer.spec.id,
                    floats.len()
                )));
            }
            let expected = layer.spec.filter_len() * layer.spec.filter_count();
            if r.length as usize != expected {
                return Err(Error::ShapeMismatch {
                    layer: layer.spec.id,
                    detail: format!("blob holds {} weights, layer needs {expected}", r.length),
                });
            }
            store.insert(layer.spec.id, floats[start..end].to_vec());
        }
        Ok(store)
    }

    /// Writes the manifest (and the blob next to it when given).
    pub fn save(&self, path: &Path, blob: Option<&[u8]>) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
        if let (Some(bytes), Some(name)) = (blob, &self.weights_blob) {
            let blob_path = path
                .parent()
                .map(|p| p.join(name))
                .unwrap_or_else(|| PathBuf::from(name));
            fs::write(&blob_path, bytes).map_err(|e| Error::io(&blob_path, e))?;
        }
        Ok(())
    }
}
