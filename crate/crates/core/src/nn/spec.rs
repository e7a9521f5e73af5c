use serde::{Deserialize, Serialize};

use crate::data::CHANNELS;
use crate::error::{Error, Result};

/// Activation shape: `channels × len`, stored channel-major. Vectors use `len = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub len: usize,
}

impl Shape {
    pub const fn new(channels: usize, len: usize) -> Self {
        Self { channels, len }
    }

    pub const fn vector(n: usize) -> Self {
        Self {
            channels: n,
            len: 1,
        }
    }

    pub const fn size(&self) -> usize {
        self.channels * self.len
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}x{})", self.channels, self.len)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    ConvTranspose1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    /// Fully connected; flattens its input.
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    Sigmoid,
    /// Non-overlapping max pooling; a trailing remainder shorter than `size` is dropped.
    MaxPool {
        size: usize,
    },
    /// Nearest-neighbour upsampling along time.
    Upsample {
        factor: usize,
    },
    GlobalAvgPool,
    /// Subtracts each channel's mean over time, per sample.
    CenterChannels,
    /// Keeps the `keep` largest activations of the flattened input and zeroes the rest.
    /// Ties go to the lowest index.
    WinnerTakeAll {
        keep: usize,
    },
    Reshape {
        channels: usize,
        len: usize,
    },
    L2Normalize,
}

impl LayerSpec {
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let bad = |what: &str| Err(Error::shape(what, input));
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if input.channels != in_channels || input.len < kernel || kernel == 0 || stride == 0
                {
                    return bad(&format!(
                        "conv1d input with {in_channels} channels and len >= {kernel}"
                    ));
                }
                Ok(Shape::new(out_channels, (input.len - kernel) / stride + 1))
            }
            LayerSpec::ConvTranspose1d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if input.channels != in_channels || input.len == 0 || kernel == 0 || stride == 0 {
                    return bad(&format!(
                        "conv_transpose1d input with {in_channels} channels"
                    ));
                }
                Ok(Shape::new(out_channels, (input.len - 1) * stride + kernel))
            }
            LayerSpec::Dense { inputs, outputs } => {
                if input.size() != inputs {
                    return bad(&format!("dense input of size {inputs}"));
                }
                Ok(Shape::vector(outputs))
            }
            LayerSpec::Relu | LayerSpec::Sigmoid | LayerSpec::L2Normalize => Ok(input),
            LayerSpec::MaxPool { size } => {
                if size == 0 || input.len < size {
                    return bad(&format!("max-pool input with len >= {size}"));
                }
                Ok(Shape::new(input.channels, input.len / size))
            }
            LayerSpec::Upsample { factor } => {
                if factor == 0 {
                    return bad("upsample factor >= 1");
                }
                Ok(Shape::new(input.channels, input.len * factor))
            }
            LayerSpec::GlobalAvgPool => Ok(Shape::vector(input.channels)),
            LayerSpec::CenterChannels => Ok(input),
            LayerSpec::WinnerTakeAll { keep } => {
                if keep == 0 || keep > input.size() {
                    return bad(&format!("winner-take-all input with at least {keep} units"));
                }
                Ok(input)
            }
            LayerSpec::Reshape { channels, len } => {
                if channels * len != input.size() {
                    return bad(&format!("reshape input of size {}", channels * len));
                }
                Ok(Shape::new(channels, len))
            }
        }
    }

    /// `(weight_len, bias_len)` for parameterized layers.
    pub fn param_lens(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            }
            | LayerSpec::ConvTranspose1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((in_channels * out_channels * kernel, out_channels)),
            LayerSpec::Dense { inputs, outputs } => Some((inputs * outputs, outputs)),
            _ => None,
        }
    }

    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some(vec![out_channels, in_channels, kernel]),
            LayerSpec::ConvTranspose1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some(vec![in_channels, out_channels, kernel]),
            LayerSpec::Dense { inputs, outputs } => Some(vec![outputs, inputs]),
            _ => None,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                kernel,
                ..
            } => in_channels * kernel,
            LayerSpec::ConvTranspose1d {
                in_channels,
                kernel,
                stride,
                ..
            } => (in_channels * kernel / stride).max(1),
            LayerSpec::Dense { inputs, .. } => inputs,
            _ => 1,
        }
    }

    pub(crate) fn init_bound(&self) -> f64 {
        (6.0 / self.fan_in() as f64).sqrt()
    }
}

/// Ordered layer stack plus its input shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// Input shape followed by every layer's output shape.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut shapes = Vec::with_capacity(self.layers.len() + 1);
        shapes.push(self.input);
        for layer in &self.layers {
            let next = layer.output_shape(*shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output(&self) -> Result<Shape> {
        Ok(*self.shapes()?.last().unwrap())
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(LayerSpec::param_lens)
            .map(|(w, b)| w + b)
            .sum()
    }

    /// Shared convolutional trunk: conv(3→8,k5) → relu → maxpool2 → conv(8→16,k5) → relu.
    pub fn conv_trunk() -> Vec<LayerSpec> {
        vec![
            LayerSpec::Conv1d {
                in_channels: CHANNELS,
                out_channels: 8,
                kernel: 5,
                stride: 1,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::Conv1d {
                in_channels: 8,
                out_channels: 16,
                kernel: 5,
                stride: 1,
            },
            LayerSpec::Relu,
        ]
    }

    /// Anomaly classifier: per-sample channel centering → trunk → global average pool →
    /// dense(16→2) logits.
    pub fn classifier(window: usize) -> Self {
        let mut layers = vec![LayerSpec::CenterChannels];
        layers.extend(Self::conv_trunk());
        layers.push(LayerSpec::GlobalAvgPool);
        layers.push(LayerSpec::Dense {
            inputs: 16,
            outputs: 2,
        });
        Self {
            input: Shape::new(CHANNELS, window),
            layers,
        }
    }

    /// Similarity model: trunk → global average pool → dense(16→dim) → L2 normalization.
    pub fn embedding(window: usize, dim: usize) -> Self {
        let mut layers = Self::conv_trunk();
        layers.push(LayerSpec::GlobalAvgPool);
        layers.push(LayerSpec::Dense {
            inputs: 16,
            outputs: dim,
        });
        layers.push(LayerSpec::L2Normalize);
        Self {
            input: Shape::new(CHANNELS, window),
            layers,
        }
    }
}
