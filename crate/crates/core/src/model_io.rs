//! JSON containers for models and datasets.
//!
//! Tensors are stored as `{"shape": [...], "data": "<base64>"}` with
//! little-endian element bytes. Files written by [`save_model`] and
//! [`save_dataset`] are canonical: loading and saving again reproduces
//! them byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ConvParams, LayerKind, LayerSpec, ModelSpec, PoolSpec};
use crate::quant::{Lut, Shift};
use crate::tensor::{Element, QuantTensor, TensorI8};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorJson {
    pub shape: Vec<usize>,
    pub data: String,
}

impl TensorJson {
    pub fn encode<T: Element>(t: &QuantTensor<T>) -> Self {
        TensorJson {
            shape: t.shape().to_vec(),
            data: B64.encode(t.to_le_bytes()),
        }
    }

    pub fn decode<T: Element>(&self) -> std::result::Result<QuantTensor<T>, String> {
        let bytes = B64
            .decode(self.data.as_bytes())
            .map_err(|e| format!("invalid base64: {e}"))?;
        QuantTensor::from_le_bytes(self.shape.clone(), &bytes).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct PoolJson {
    kind: String,
    window: [usize; 2],
    stride: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerJson {
    #[serde(rename = "type")]
    kind: String,
    in_shape: Vec<usize>,
    out_shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stride: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    padding: Option<[usize; 2]>,
    weights: TensorJson,
    bias: TensorJson,
    shift: u32,
    nlf: TensorJson,
    pool: Option<PoolJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MetadataJson {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    claimed_accuracy: Option<f64>,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelJson {
    format_version: u32,
    metadata: MetadataJson,
    layers: Vec<LayerJson>,
}

fn layer_to_json(layer: &LayerSpec) -> LayerJson {
    let (stride, padding) = match layer.kind {
        LayerKind::Fc => (None, None),
        LayerKind::Conv2d(p) => (Some(p.stride), Some(p.padding)),
    };
    LayerJson {
        kind: layer.kind.name().to_string(),
        in_shape: layer.in_shape.clone(),
        out_shape: layer.out_shape.clone(),
        stride,
        padding,
        weights: TensorJson::encode(&layer.weights),
        bias: TensorJson::encode(&layer.bias),
        shift: layer.shift.get(),
        nlf: TensorJson::encode(&TensorI8::from_vec(layer.nlf.table().to_vec())),
        pool: layer.pool.map(|p| PoolJson {
            kind: "max".into(),
            window: p.window,
            stride: p.stride,
        }),
    }
}

fn layer_from_json(index: usize, j: &LayerJson) -> Result<LayerSpec> {
    let err = |msg: String| Error::layer(index, msg);
    let weights: TensorI8 = j.weights.decode().map_err(|e| err(format!("weights: {e}")))?;
    let bias = j.bias.decode().map_err(|e| err(format!("bias: {e}")))?;
    let nlf_tensor: TensorI8 = j.nlf.decode().map_err(|e| err(format!("nlf: {e}")))?;
    let nlf = Lut::from_slice(nlf_tensor.data()).map_err(|e| err(format!("nlf: {e}")))?;
    let shift = Shift::new(j.shift).map_err(|e| err(e.to_string()))?;
    let kind = match j.kind.as_str() {
        "fc" => {
            if j.stride.is_some() || j.padding.is_some() {
                return Err(err("fc layers take no stride or padding".into()));
            }
            LayerKind::Fc
        }
        "conv2d" => {
            let ws = weights.shape();
            if ws.len() != 4 {
                return Err(err(format!("conv2d weights must be 4-d, got {ws:?}")));
            }
            LayerKind::Conv2d(ConvParams {
                kernel: [ws[2], ws[3]],
                stride: j.stride.unwrap_or([1, 1]),
                padding: j.padding.unwrap_or([0, 0]),
            })
        }
        other => return Err(err(format!("unknown layer type '{other}'"))),
    };
    let pool = match &j.pool {
        None => None,
        Some(p) if p.kind == "max" => Some(PoolSpec {
            window: p.window,
            stride: p.stride,
        }),
        Some(p) => return Err(err(format!("unsupported pool kind '{}'", p.kind))),
    };
    Ok(LayerSpec {
        kind,
        in_shape: j.in_shape.clone(),
        out_shape: j.out_shape.clone(),
        weights,
        bias,
        shift,
        nlf,
        pool,
    })
}

pub fn model_to_json(model: &ModelSpec) -> Result<String> {
    let doc = ModelJson {
        format_version: FORMAT_VERSION,
        metadata: MetadataJson {
            name: model.name.clone(),
            claimed_accuracy: model.claimed_accuracy,
            extra: model.extra.clone(),
        },
        layers: model.layers.iter().map(layer_to_json).collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc)?;
    s.push('\n');
    Ok(s)
}

/// Parses and fully validates a model document.
pub fn model_from_json(text: &str) -> Result<ModelSpec> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    match value.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => {
            return Err(Error::Model(format!(
                "unsupported format_version {v} (expected {FORMAT_VERSION})"
            )))
        }
        None => return Err(Error::Model("missing format_version".into())),
    }
    let doc: ModelJson = serde_json::from_value(value)?;
    let layers = doc
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| layer_from_json(i, l))
        .collect::<Result<Vec<_>>>()?;
    let model = ModelSpec {
        name: doc.metadata.name,
        claimed_accuracy: doc.metadata.claimed_accuracy,
        extra: doc.metadata.extra,
        layers,
    };
    model.validate()?;
    Ok(model)
}

pub fn load_model(path: &Path) -> Result<ModelSpec> {
    model_from_json(&fs::read_to_string(path)?)
}

pub fn save_model(model: &ModelSpec, path: &Path) -> Result<()> {
    model.validate()?;
    fs::write(path, model_to_json(model)?)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetImage {
    pub label: i64,
    pub image: TensorI8,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub images: Vec<DatasetImage>,
}

impl Dataset {
    /// Checks that every image fits the model input: same shape for conv
    /// inputs, same length for fc inputs.
    pub fn check_against(&self, model: &ModelSpec) -> Result<()> {
        let want = model.input_shape();
        let flat = matches!(model.layers.first().map(|l| l.kind), Some(LayerKind::Fc));
        for (i, img) in self.images.iter().enumerate() {
            let fits = if flat {
                img.image.len() == want.iter().product::<usize>()
            } else {
                img.image.shape() == want
            };
            if !fits {
                return Err(Error::Dataset(format!(
                    "image {i} has shape {:?}, model expects {want:?}",
                    img.image.shape()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ImageJson {
    label: i64,
    shape: Vec<usize>,
    data: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct DatasetJson {
    images: Vec<ImageJson>,
}

pub fn dataset_to_json(ds: &Dataset) -> Result<String> {
    let doc = DatasetJson {
        images: ds
            .images
            .iter()
            .map(|img| ImageJson {
                label: img.label,
                shape: img.image.shape().to_vec(),
                data: B64.encode(img.image.to_le_bytes()),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc)?;
    s.push('\n');
    Ok(s)
}

pub fn dataset_from_json(text: &str) -> Result<Dataset> {
    let doc: DatasetJson = serde_json::from_str(text)?;
    let images = doc
        .images
        .into_iter()
        .enumerate()
        .map(|(i, img)| {
            let t = TensorJson {
                shape: img.shape,
                data: img.data,
            };
            let image = t
                .decode()
                .map_err(|e| Error::Dataset(format!("image {i}: {e}")))?;
            Ok(DatasetImage {
                label: img.label,
                image,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Dataset { images })
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    dataset_from_json(&fs::read_to_string(path)?)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, dataset_to_json(ds)?)?;
    Ok(())
}
