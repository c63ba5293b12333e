use serde::{Deserialize, Serialize};

use crate::error::NetError;

/// One layer of a feed-forward network. Weighted layers carry no bias.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Linear {
        in_dim: usize,
        out_dim: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    Flatten,
    /// Non-overlapping average pooling (stride equals the window).
    AvgPool2d {
        kernel: usize,
    },
}

impl LayerSpec {
    pub fn linear(in_dim: usize, out_dim: usize) -> Self {
        LayerSpec::Linear { in_dim, out_dim }
    }

    pub fn conv2d(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Linear { .. } => "linear",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::Flatten => "flatten",
            LayerSpec::AvgPool2d { .. } => "avgpool2d",
        }
    }

    pub fn is_weighted(&self) -> bool {
        matches!(self, LayerSpec::Linear { .. } | LayerSpec::Conv2d { .. })
    }

    /// Weight tensor shape: `[out, in]` for linear, `[out, in, kh, kw]` for conv.
    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Linear { in_dim, out_dim } => Some(vec![out_dim, in_dim]),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                ..
            } => Some(vec![out_channels, in_channels, kernel_h, kernel_w]),
            _ => None,
        }
    }

    /// Number of weights `d_l`; zero for parameter-free layers.
    pub fn weight_count(&self) -> usize {
        self.weight_shape().map_or(0, |s| s.iter().product())
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Linear { in_dim, .. } => in_dim,
            LayerSpec::Conv2d {
                in_channels,
                kernel_h,
                kernel_w,
                ..
            } => in_channels * kernel_h * kernel_w,
            _ => 0,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        match *self {
            LayerSpec::Linear { in_dim, out_dim } => {
                if in_dim == 0 || out_dim == 0 {
                    return Err("linear dimensions must be >= 1".into());
                }
                if input != [in_dim] {
                    return Err(format!("linear expects input [{in_dim}], got {input:?}"));
                }
                Ok(vec![out_dim])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
            } => {
                if in_channels == 0 || out_channels == 0 || kernel_h == 0 || kernel_w == 0 || stride == 0 {
                    return Err("conv2d channels, kernel and stride must be >= 1".into());
                }
                let &[c, h, w] = input else {
                    return Err(format!("conv2d expects [channels, h, w], got {input:?}"));
                };
                if c != in_channels {
                    return Err(format!("conv2d expects {in_channels} input channels, got {c}"));
                }
                let (hp, wp) = (h + 2 * padding, w + 2 * padding);
                if hp < kernel_h || wp < kernel_w {
                    return Err(format!(
                        "kernel {kernel_h}x{kernel_w} larger than padded input {hp}x{wp}"
                    ));
                }
                Ok(vec![
                    out_channels,
                    (hp - kernel_h) / stride + 1,
                    (wp - kernel_w) / stride + 1,
                ])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::AvgPool2d { kernel } => {
                let &[c, h, w] = input else {
                    return Err(format!("avgpool2d expects [channels, h, w], got {input:?}"));
                };
                if kernel == 0 || h < kernel || w < kernel {
                    return Err(format!("pool window {kernel} does not fit {h}x{w}"));
                }
                Ok(vec![c, h / kernel, w / kernel])
            }
        }
    }
}

/// A validated layer sequence with static shape information.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawNetworkSpec", into = "RawNetworkSpec")]
pub struct NetworkSpec {
    layers: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    classes: usize,
    /// `shapes[l]` is the per-sample input shape of layer `l`; the final entry
    /// is the output shape.
    shapes: Vec<Vec<usize>>,
    weighted: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RawNetworkSpec {
    layers: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    classes: usize,
}

impl TryFrom<RawNetworkSpec> for NetworkSpec {
    type Error = NetError;
    fn try_from(raw: RawNetworkSpec) -> Result<Self, NetError> {
        NetworkSpec::new(raw.layers, raw.input_shape, raw.classes)
    }
}

impl From<NetworkSpec> for RawNetworkSpec {
    fn from(spec: NetworkSpec) -> Self {
        RawNetworkSpec {
            layers: spec.layers,
            input_shape: spec.input_shape,
            classes: spec.classes,
        }
    }
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>, input_shape: Vec<usize>, classes: usize) -> Result<Self, NetError> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(NetError::InvalidLayer {
                layer: 0,
                reason: format!("invalid input shape {input_shape:?}"),
            });
        }
        let mut shapes = Vec::with_capacity(layers.len() + 1);
        shapes.push(input_shape.clone());
        for (i, layer) in layers.iter().enumerate() {
            let next = layer
                .output_shape(&shapes[i])
                .map_err(|reason| NetError::InvalidLayer { layer: i, reason })?;
            shapes.push(next);
        }
        let out = shapes.last().expect("at least the input shape");
        if out != &[classes] {
            return Err(NetError::InvalidLayer {
                layer: layers.len().saturating_sub(1),
                reason: format!("network output {out:?} does not match [{classes}] classes"),
            });
        }
        let weighted = layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_weighted())
            .map(|(i, _)| i)
            .collect();
        Ok(Self {
            layers,
            input_shape,
            classes,
            shapes,
            weighted,
        })
    }

    /// Bias-free MLP with ReLU between linear layers, e.g. `[784, 256, 256, 10]`.
    pub fn mlp(dims: &[usize]) -> Result<Self, NetError> {
        if dims.len() < 2 {
            return Err(NetError::InvalidLayer {
                layer: 0,
                reason: "an MLP needs at least input and output dimensions".into(),
            });
        }
        let mut layers = Vec::new();
        for (i, pair) in dims.windows(2).enumerate() {
            if i > 0 {
                layers.push(LayerSpec::Relu);
            }
            layers.push(LayerSpec::linear(pair[0], pair[1]));
        }
        Self::new(layers, vec![dims[0]], dims[dims.len() - 1])
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Per-sample input shape of layer `l`.
    pub fn layer_input_shape(&self, l: usize) -> &[usize] {
        &self.shapes[l]
    }

    /// Indices (into `layers()`) of the layers that carry weights.
    pub fn weighted_layers(&self) -> &[usize] {
        &self.weighted
    }

    pub fn weighted_specs(&self) -> impl Iterator<Item = &LayerSpec> + '_ {
        self.weighted.iter().map(|&i| &self.layers[i])
    }

    pub fn weight_shapes(&self) -> Vec<Vec<usize>> {
        self.weighted_specs().filter_map(LayerSpec::weight_shape).collect()
    }

    /// `d_l` for every weighted layer, in order.
    pub fn weight_counts(&self) -> Vec<usize> {
        self.weighted_specs().map(LayerSpec::weight_count).collect()
    }

    /// Total weight count `p`.
    pub fn parameter_count(&self) -> usize {
        self.weight_counts().iter().sum()
    }
}
