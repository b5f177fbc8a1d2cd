use std::collections::HashMap;
use std::fmt;

use super::kernels::{ConvGeom, K};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// No padding; a 3x3 kernel shrinks each spatial side by 2.
    Valid,
    /// One pixel of zero padding; spatial size is preserved.
    Same,
}

impl Padding {
    pub fn pixels(self) -> usize {
        match self {
            Padding::Valid => 0,
            Padding::Same => 1,
        }
    }
}

/// One layer of a feed-forward network. All convolutions use 3x3 kernels
/// with stride 1.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        groups: usize,
        padding: Padding,
    },
    /// Adjoint of `Conv2d`; the weight has shape
    /// `[in_channels, out_channels / groups, 3, 3]`.
    Conv2dTranspose {
        in_channels: usize,
        out_channels: usize,
        groups: usize,
        padding: Padding,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    BatchNorm {
        channels: usize,
        momentum: f64,
        eps: f64,
    },
    Relu,
    LeakyRelu {
        slope: f64,
    },
    Tanh,
    Sigmoid,
    Dropout {
        rate: f64,
    },
    /// Marks the concatenation of per-group feature stacks produced by a
    /// grouped convolution. Identity on data; checks the channel layout.
    ConcatGrouped {
        groups: usize,
        per_group: usize,
    },
    Flatten,
}

/// Default batchnorm running-average momentum.
pub const BN_MOMENTUM: f64 = 0.99;
/// Default batchnorm variance epsilon.
pub const BN_EPS: f64 = 1e-7;

impl LayerSpec {
    pub fn batchnorm(channels: usize) -> Self {
        LayerSpec::BatchNorm {
            channels,
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Conv2dTranspose { .. } => "conv2d_transpose",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::Relu => "relu",
            LayerSpec::LeakyRelu { .. } => "leaky_relu",
            LayerSpec::Tanh => "tanh",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::ConcatGrouped { .. } => "concat_grouped",
            LayerSpec::Flatten => "flatten",
        }
    }

    /// Per-item output shape for a per-item input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |what: &str| Error::Spec(format!("{} {what}; input shape {input:?}", self.kind()));
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                groups,
                padding,
            }
            | LayerSpec::Conv2dTranspose {
                in_channels,
                out_channels,
                groups,
                padding,
            } => {
                if input.len() != 3 || input[0] != in_channels {
                    return Err(bad(&format!("expects [{in_channels}, H, W]")));
                }
                if groups == 0 || in_channels % groups != 0 || out_channels % groups != 0 || out_channels == 0 {
                    return Err(bad(&format!("channels {in_channels}->{out_channels} not divisible into {groups} groups")));
                }
                let p = padding.pixels();
                let (h, w) = if matches!(self, LayerSpec::Conv2d { .. }) {
                    let g = ConvGeom::new(input[1], input[2], p).ok_or_else(|| bad("input smaller than kernel"))?;
                    (g.dst_h, g.dst_w)
                } else {
                    let h = (input[1] + K - 1).checked_sub(2 * p).filter(|&v| v > 0);
                    let w = (input[2] + K - 1).checked_sub(2 * p).filter(|&v| v > 0);
                    (h.ok_or_else(|| bad("empty output"))?, w.ok_or_else(|| bad("empty output"))?)
                };
                Ok(vec![out_channels, h, w])
            }
            LayerSpec::Dense { inputs, outputs } => {
                if input != [inputs] {
                    return Err(bad(&format!("expects [{inputs}]")));
                }
                Ok(vec![outputs])
            }
            LayerSpec::BatchNorm { channels, .. } => {
                if input.first() != Some(&channels) {
                    return Err(bad(&format!("expects {channels} channels")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::ConcatGrouped { groups, per_group } => {
                if input.first() != Some(&(groups * per_group)) {
                    return Err(bad(&format!("expects {} channels", groups * per_group)));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dropout { rate } if !(0.0..1.0).contains(&rate) => Err(bad("rate must be in [0, 1)")),
            _ => Ok(input.to_vec()),
        }
    }

    /// Shapes of the trainable tensors, in storage order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                groups,
                ..
            } => vec![vec![out_channels, in_channels / groups, K, K], vec![out_channels]],
            LayerSpec::Conv2dTranspose {
                in_channels,
                out_channels,
                groups,
                ..
            } => vec![vec![in_channels, out_channels / groups, K, K], vec![out_channels]],
            LayerSpec::Dense { inputs, outputs } => vec![vec![outputs, inputs], vec![outputs]],
            LayerSpec::BatchNorm { channels, .. } => vec![vec![channels], vec![channels]],
            _ => Vec::new(),
        }
    }

    /// Shapes of non-trainable state (batchnorm running statistics).
    pub fn buffer_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::BatchNorm { channels, .. } => vec![vec![channels], vec![channels]],
            _ => Vec::new(),
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            LayerSpec::Conv2d { .. } | LayerSpec::Conv2dTranspose { .. } | LayerSpec::Dense { .. } => &["weight", "bias"],
            LayerSpec::BatchNorm { .. } => &["gamma", "beta"],
            _ => &[],
        }
    }

    fn parse(line: &str) -> Result<Self> {
        let mut parts = line.split_whitespace();
        let kind = parts.next().ok_or_else(|| Error::Spec("empty layer line".into()))?;
        let kv: HashMap<&str, &str> = parts
            .map(|p| p.split_once('=').ok_or_else(|| Error::Spec(format!("bad token `{p}` in `{line}`"))))
            .collect::<Result<_>>()?;
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| Error::Spec(format!("`{line}` lacks `{k}`")));
        let usize_of = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Spec(format!("`{k}` in `{line}` is not an integer")))
        };
        let f64_of = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Spec(format!("`{k}` in `{line}` is not a number")))
        };
        let padding = || -> Result<Padding> {
            match get("padding")? {
                "same" => Ok(Padding::Same),
                "valid" => Ok(Padding::Valid),
                p => Err(Error::Spec(format!("unknown padding `{p}`"))),
            }
        };
        Ok(match kind {
            "conv2d" => LayerSpec::Conv2d {
                in_channels: usize_of("in")?,
                out_channels: usize_of("out")?,
                groups: usize_of("groups")?,
                padding: padding()?,
            },
            "conv2d_transpose" => LayerSpec::Conv2dTranspose {
                in_channels: usize_of("in")?,
                out_channels: usize_of("out")?,
                groups: usize_of("groups")?,
                padding: padding()?,
            },
            "dense" => LayerSpec::Dense {
                inputs: usize_of("in")?,
                outputs: usize_of("out")?,
            },
            "batchnorm" => LayerSpec::BatchNorm {
                channels: usize_of("channels")?,
                momentum: f64_of("momentum")?,
                eps: f64_of("eps")?,
            },
            "relu" => LayerSpec::Relu,
            "leaky_relu" => LayerSpec::LeakyRelu { slope: f64_of("slope")? },
            "tanh" => LayerSpec::Tanh,
            "sigmoid" => LayerSpec::Sigmoid,
            "dropout" => LayerSpec::Dropout { rate: f64_of("rate")? },
            "concat_grouped" => LayerSpec::ConcatGrouped {
                groups: usize_of("groups")?,
                per_group: usize_of("per_group")?,
            },
            "flatten" => LayerSpec::Flatten,
            k => return Err(Error::Spec(format!("unknown layer kind `{k}`"))),
        })
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pad = |p: &Padding| match p {
            Padding::Same => "same",
            Padding::Valid => "valid",
        };
        match self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                groups,
                padding,
            }
            | LayerSpec::Conv2dTranspose {
                in_channels,
                out_channels,
                groups,
                padding,
            } => write!(
                f,
                "{} in={in_channels} out={out_channels} groups={groups} padding={}",
                self.kind(),
                pad(padding)
            ),
            LayerSpec::Dense { inputs, outputs } => write!(f, "dense in={inputs} out={outputs}"),
            LayerSpec::BatchNorm { channels, momentum, eps } => {
                write!(f, "batchnorm channels={channels} momentum={momentum:?} eps={eps:?}")
            }
            LayerSpec::LeakyRelu { slope } => write!(f, "leaky_relu slope={slope:?}"),
            LayerSpec::Dropout { rate } => write!(f, "dropout rate={rate:?}"),
            LayerSpec::ConcatGrouped { groups, per_group } => {
                write!(f, "concat_grouped groups={groups} per_group={per_group}")
            }
            other => f.write_str(other.kind()),
        }
    }
}

/// Ordered layer list plus the per-item input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(input: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = Self { input, layers };
        spec.shapes()?;
        Ok(spec)
    }

    /// Per-item shapes: `shapes()[i]` is layer `i`'s input, the last entry is
    /// the network output.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input.is_empty() || self.input.contains(&0) {
            return Err(Error::Spec(format!("invalid input shape {:?}", self.input)));
        }
        let mut shapes = vec![self.input.clone()];
        for (i, l) in self.layers.iter().enumerate() {
            let next = l
                .output_shape(shapes.last().unwrap())
                .map_err(|e| Error::Spec(format!("layer {i}: {e}")))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.shapes().map(|mut s| s.pop().unwrap()).unwrap_or_default()
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.param_shapes())
            .map(|s| s.iter().product::<usize>())
            .sum()
    }

    /// Canonical text form: an `input` line then one line per layer.
    pub fn to_text(&self) -> String {
        let mut s = String::from("input");
        for d in &self.input {
            s.push_str(&format!(" {d}"));
        }
        s.push('\n');
        for l in &self.layers {
            s.push_str(&l.to_string());
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let first = lines.next().ok_or_else(|| Error::Spec("empty network spec".into()))?;
        let mut it = first.split_whitespace();
        if it.next() != Some("input") {
            return Err(Error::Spec(format!("expected `input ...`, got `{first}`")));
        }
        let input = it
            .map(|d| d.parse().map_err(|_| Error::Spec(format!("bad input dim `{d}`"))))
            .collect::<Result<Vec<usize>>>()?;
        let layers = lines.map(LayerSpec::parse).collect::<Result<Vec<_>>>()?;
        Self::new(input, layers)
    }
}
