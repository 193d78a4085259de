//! In-memory description of a quantized network: one [`LayerSpec`] per
//! accelerator pass.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::lowering::ConvGeometry;
use crate::quant::{Lut, Shift};
use crate::tensor::{TensorI32, TensorI8};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    pub padding: [usize; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Fc,
    Conv2d(ConvParams),
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Fc => "fc",
            LayerKind::Conv2d(_) => "conv2d",
        }
    }
}

/// 2x2 max pooling with stride 2 is the only window the pool unit supports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub window: [usize; 2],
    pub stride: [usize; 2],
}

impl Default for PoolSpec {
    fn default() -> Self {
        PoolSpec {
            window: [2, 2],
            stride: [2, 2],
        }
    }
}

/// One layer as stored in a model container.
///
/// Weight layouts: `fc` is `[in_features, out_features]`; `conv2d` is
/// `[out_channels, in_channels, k_h, k_w]`. Activations are `[C, H, W]`
/// row-major; `fc` inputs are flattened in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub weights: TensorI8,
    pub bias: TensorI32,
    pub shift: Shift,
    pub nlf: Lut,
    pub pool: Option<PoolSpec>,
}

impl LayerSpec {
    pub fn in_len(&self) -> usize {
        self.in_shape.iter().product()
    }

    pub fn out_len(&self) -> usize {
        self.out_shape.iter().product()
    }

    /// Number of output neurons / channels (the matmul `N`).
    pub fn out_features(&self) -> usize {
        match self.kind {
            LayerKind::Fc => self.weights.shape().get(1).copied().unwrap_or(0),
            LayerKind::Conv2d(_) => self.weights.shape().first().copied().unwrap_or(0),
        }
    }

    pub fn conv_geometry(&self) -> Option<ConvGeometry> {
        let LayerKind::Conv2d(p) = self.kind else {
            return None;
        };
        let ws = self.weights.shape();
        if self.in_shape.len() != 3 || ws.len() != 4 {
            return None;
        }
        Some(ConvGeometry {
            in_channels: self.in_shape[0],
            in_h: self.in_shape[1],
            in_w: self.in_shape[2],
            out_channels: ws[0],
            k_h: p.kernel[0],
            k_w: p.kernel[1],
            stride_h: p.stride[0],
            stride_w: p.stride[1],
            pad_h: p.padding[0],
            pad_w: p.padding[1],
        })
    }

    /// Checks every internal shape relation of the layer; `index` is only
    /// used to label errors.
    pub fn validate(&self, index: usize) -> Result<()> {
        let err = |msg: String| Error::layer(index, msg);
        let n = self.out_features();
        if self.bias.shape() != [n] {
            return Err(err(format!(
                "bias shape {:?} does not match {n} output features",
                self.bias.shape()
            )));
        }
        match self.kind {
            LayerKind::Fc => {
                let ws = self.weights.shape();
                if ws.len() != 2 || ws[0] != self.in_len() {
                    return Err(err(format!(
                        "fc weights {ws:?} incompatible with input {:?}",
                        self.in_shape
                    )));
                }
                if self.pool.is_some() {
                    return Err(err("pooling is only supported after conv2d".into()));
                }
                if self.out_shape != [n] {
                    return Err(err(format!("fc out_shape {:?} != [{n}]", self.out_shape)));
                }
            }
            LayerKind::Conv2d(p) => {
                if self.weights.shape().len() != 4 || self.in_shape.len() != 3 {
                    return Err(err("conv2d needs [C,H,W] input and 4-d weights".into()));
                }
                let ws = self.weights.shape();
                if ws[1] != self.in_shape[0] || ws[2] != p.kernel[0] || ws[3] != p.kernel[1] {
                    return Err(err(format!(
                        "conv2d weights {ws:?} incompatible with input {:?} / kernel {:?}",
                        self.in_shape, p.kernel
                    )));
                }
                let g = self.conv_geometry().expect("checked above");
                g.validate().map_err(|e| err(e.to_string()))?;
                let (mut oh, mut ow) = (g.out_h(), g.out_w());
                if let Some(pool) = self.pool {
                    if pool != PoolSpec::default() {
                        return Err(err("only 2x2/2 max pooling is supported".into()));
                    }
                    if oh % 2 != 0 || ow % 2 != 0 {
                        return Err(err(format!("cannot pool odd conv output {oh}x{ow}")));
                    }
                    oh /= 2;
                    ow /= 2;
                }
                if self.out_shape != [n, oh, ow] {
                    return Err(err(format!(
                        "conv2d out_shape {:?} != [{n}, {oh}, {ow}]",
                        self.out_shape
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub claimed_accuracy: Option<f64>,
    /// Free-form metadata carried through load/save untouched.
    pub extra: BTreeMap<String, serde_json::Value>,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn new(name: impl Into<String>, layers: Vec<LayerSpec>) -> Self {
        ModelSpec {
            name: name.into(),
            claimed_accuracy: None,
            extra: BTreeMap::new(),
            layers,
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        self.layers.first().map(|l| l.in_shape.as_slice()).unwrap_or(&[])
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map(|l| l.out_len()).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Model("model has no layers".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate(i)?;
            if i > 0 {
                let prev = &self.layers[i - 1];
                let chained = match layer.kind {
                    LayerKind::Fc => prev.out_len() == layer.in_len(),
                    LayerKind::Conv2d(_) => prev.out_shape == layer.in_shape,
                };
                if !chained {
                    return Err(Error::layer(
                        i,
                        format!(
                            "input {:?} does not chain from previous output {:?}",
                            layer.in_shape, prev.out_shape
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn has_conv(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l.kind, LayerKind::Conv2d(_)))
    }
}
