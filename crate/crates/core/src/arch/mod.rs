//! Declarative sequential CNN specifications.
//!
//! An [`ArchitectureSpec`] is an ordered list of [`LayerSpec`]s over a fixed
//! input shape. It serializes to JSON as
//!
//! ```json
//! {"name": "logisticnet", "input_shape": {"channels": 3, "height": 227, "width": 227},
//!  "layers": [{"kind": "conv", "kernel_size": 3, "stride": 1, "padding": 1, "filters": 64},
//!             {"kind": "relu"}, {"kind": "maxpool", "pool_size": 3, "stride": 2}, ...]}
//! ```

mod logisticnet;
mod receptive;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{conv_output_extent, pool_output_extent};

pub use logisticnet::{build_logisticnet, LogisticNetConfig, DEFAULT_RESOLUTION};
pub use receptive::{
    receptive_field, ReceptiveFieldRow, HIGH_RESOLUTION_CAP, INCEPTION_V3_MAX_RECEPTIVE_FIELD,
    RESNET101_MAX_RECEPTIVE_FIELD,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv { kernel_size: usize, stride: usize, padding: usize, filters: usize },
    Batchnorm,
    Maxpool { pool_size: usize, stride: usize },
    Flatten,
    Dense { width: usize },
    Dropout { rate: f64 },
    Relu,
}

impl LayerSpec {
    pub fn conv(kernel_size: usize, filters: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::Conv { kernel_size, stride, padding, filters }
    }

    pub fn maxpool(pool_size: usize, stride: usize) -> Self {
        LayerSpec::Maxpool { pool_size, stride }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Batchnorm => "batchnorm",
            LayerSpec::Maxpool { .. } => "maxpool",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Relu => "relu",
        }
    }

    fn check_fields(&self) -> std::result::Result<(), String> {
        match *self {
            LayerSpec::Conv { kernel_size, stride, filters, .. } => {
                if kernel_size == 0 || stride == 0 || filters == 0 {
                    return Err("conv kernel size, stride and filters must be >= 1".into());
                }
            }
            LayerSpec::Maxpool { pool_size, stride } => {
                if pool_size == 0 || stride == 0 {
                    return Err("pool size and stride must be >= 1".into());
                }
            }
            LayerSpec::Dense { width } if width == 0 => return Err("dense width must be >= 1".into()),
            LayerSpec::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                return Err(format!("dropout rate {rate} is outside [0, 1)"));
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Activation shape after a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Spatial { channels: usize, height: usize, width: usize },
    Flat(usize),
}

impl Shape {
    pub fn numel(&self) -> usize {
        match *self {
            Shape::Spatial { channels, height, width } => channels * height * width,
            Shape::Flat(n) => n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub name: String,
    pub input_shape: InputShape,
    pub layers: Vec<LayerSpec>,
}

/// Trainable parameter count plus non-trainable batchnorm buffers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParamCount {
    pub trainable: usize,
    pub buffers: usize,
}

impl ArchitectureSpec {
    pub fn new(name: impl Into<String>, input_shape: InputShape, layers: Vec<LayerSpec>) -> Self {
        ArchitectureSpec { name: name.into(), input_shape, layers }
    }

    /// Number of output classes, i.e. the width of the last dense layer.
    pub fn num_classes(&self) -> Option<usize> {
        match self.layers.iter().rev().find(|l| !matches!(l, LayerSpec::Dropout { .. } | LayerSpec::Relu)) {
            Some(LayerSpec::Dense { width }) => Some(*width),
            _ => None,
        }
    }

    /// Full classifier check: per-layer fields, shape propagation, exactly
    /// one flatten with no conv/pool/batchnorm after it, ending in a dense layer.
    pub fn validate(&self) -> Result<()> {
        self.output_shape()?;
        let flats: Vec<usize> = self
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Flatten))
            .map(|(i, _)| i)
            .collect();
        if flats.len() != 1 {
            return Err(Error::Architecture {
                layer: flats.get(1).copied().unwrap_or(self.layers.len()),
                reason: format!("expected exactly one flatten, found {}", flats.len()),
            });
        }
        if self.num_classes().is_none() {
            return Err(Error::Architecture {
                layer: self.layers.len().saturating_sub(1),
                reason: "classifier must end in a dense layer".into(),
            });
        }
        Ok(())
    }

    /// Applies the conv/pool shape formulas layer by layer. Returns the shape
    /// after each layer.
    pub fn output_shape(&self) -> Result<Vec<Shape>> {
        let InputShape { channels, height, width } = self.input_shape;
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Architecture { layer: 0, reason: "input extents must be positive".into() });
        }
        let mut cur = Shape::Spatial { channels, height, width };
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let fail = |reason: String| Error::Architecture { layer: i, reason };
            layer.check_fields().map_err(fail)?;
            cur = match (layer, cur) {
                (&LayerSpec::Conv { kernel_size, stride, padding, filters }, Shape::Spatial { height, width, .. }) => {
                    let h = conv_output_extent(height, kernel_size, stride, padding);
                    let w = conv_output_extent(width, kernel_size, stride, padding);
                    match (h, w) {
                        (Some(h), Some(w)) => Shape::Spatial { channels: filters, height: h, width: w },
                        _ => {
                            return Err(fail(format!(
                                "{kernel_size}x{kernel_size} kernel (padding {padding}) does not fit {height}x{width}"
                            )))
                        }
                    }
                }
                (&LayerSpec::Maxpool { pool_size, stride }, Shape::Spatial { channels, height, width }) => {
                    match (pool_output_extent(height, pool_size, stride), pool_output_extent(width, pool_size, stride)) {
                        (Some(h), Some(w)) => Shape::Spatial { channels, height: h, width: w },
                        _ => return Err(fail(format!("pool window {pool_size} does not fit {height}x{width}"))),
                    }
                }
                (LayerSpec::Batchnorm, s @ Shape::Spatial { .. }) => s,
                (LayerSpec::Flatten, s @ Shape::Spatial { .. }) => Shape::Flat(s.numel()),
                (&LayerSpec::Dense { width }, Shape::Flat(_)) => Shape::Flat(width),
                (LayerSpec::Relu | LayerSpec::Dropout { .. }, s) => s,
                (l, s) => return Err(fail(format!("{} layer cannot follow shape {s:?}", l.kind()))),
            };
            shapes.push(cur);
        }
        Ok(shapes)
    }

    pub fn param_count(&self) -> Result<ParamCount> {
        let shapes = self.output_shape()?;
        let mut count = ParamCount::default();
        let mut prev = Shape::Spatial {
            channels: self.input_shape.channels,
            height: self.input_shape.height,
            width: self.input_shape.width,
        };
        for (layer, &shape) in self.layers.iter().zip(&shapes) {
            match (layer, prev) {
                (&LayerSpec::Conv { kernel_size, filters, .. }, Shape::Spatial { channels, .. }) => {
                    count.trainable += kernel_size * kernel_size * channels * filters + filters;
                }
                (&LayerSpec::Dense { width }, Shape::Flat(n)) => count.trainable += n * width + width,
                (LayerSpec::Batchnorm, Shape::Spatial { channels, .. }) => {
                    count.trainable += 2 * channels;
                    count.buffers += 2 * channels;
                }
                _ => {}
            }
            prev = shape;
        }
        Ok(count)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("architecture specs always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Shape after every layer of `spec`.
pub fn output_shape(spec: &ArchitectureSpec) -> Result<Vec<Shape>> {
    spec.output_shape()
}

pub fn param_count(spec: &ArchitectureSpec) -> Result<ParamCount> {
    spec.param_count()
}
