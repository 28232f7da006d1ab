use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::ops::{self, ConvParams};
use crate::tensor::Float;

use super::params::ForwardCtx;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    ConvBias,
    BnGamma,
    BnBeta,
}

impl ParamKind {
    /// Only convolution weights receive weight decay.
    pub fn decays(self) -> bool {
        self == ParamKind::ConvWeight
    }
}

/// A trainable tensor declared by a layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamDecl {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    /// Fan-in for weight initialization; zero for non-weights.
    pub fan_in: usize,
}

impl ParamDecl {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// One primitive layer of a sequential path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layer {
    Conv { name: String, params: ConvParams },
    BatchNorm { name: String, channels: usize },
    Relu,
}

impl Layer {
    pub fn conv(name: impl Into<String>, params: ConvParams) -> Self {
        Layer::Conv {
            name: name.into(),
            params,
        }
    }

    pub fn bn(name: impl Into<String>, channels: usize) -> Self {
        Layer::BatchNorm {
            name: name.into(),
            channels,
        }
    }

    pub fn params(&self) -> Vec<ParamDecl> {
        match self {
            Layer::Conv { name, params } => {
                let mut out = vec![ParamDecl {
                    name: format!("{name}.weight"),
                    shape: params.weight_shape().to_vec(),
                    kind: ParamKind::ConvWeight,
                    fan_in: params.in_channels * params.kernel.0 * params.kernel.1,
                }];
                if params.has_bias {
                    out.push(ParamDecl {
                        name: format!("{name}.bias"),
                        shape: vec![params.out_channels],
                        kind: ParamKind::ConvBias,
                        fan_in: 0,
                    });
                }
                out
            }
            Layer::BatchNorm { name, channels } => vec![
                ParamDecl {
                    name: format!("{name}.gamma"),
                    shape: vec![*channels],
                    kind: ParamKind::BnGamma,
                    fan_in: 0,
                },
                ParamDecl {
                    name: format!("{name}.beta"),
                    shape: vec![*channels],
                    kind: ParamKind::BnBeta,
                    fan_in: 0,
                },
            ],
            Layer::Relu => Vec::new(),
        }
    }

    /// `[C, H, W]` after this layer.
    pub fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let [c, h, w] = input;
        match self {
            Layer::Conv { name, params } => {
                if params.in_channels != c {
                    return Err(Error::Config(format!(
                        "{name}: expects {} input channels, got {c}",
                        params.in_channels
                    )));
                }
                let (oh, ow) = params.output_extent(h, w)?;
                Ok([params.out_channels, oh, ow])
            }
            Layer::BatchNorm { name, channels } => {
                if *channels != c {
                    return Err(Error::Config(format!("{name}: expects {channels} channels, got {c}")));
                }
                Ok(input)
            }
            Layer::Relu => Ok(input),
        }
    }

    pub(crate) fn forward<'t, T: Float>(&self, x: Var<'t, T>, ctx: &mut ForwardCtx<'_, 't, T>) -> Result<Var<'t, T>> {
        match self {
            Layer::Conv { name, params } => {
                let w = ctx.param(&format!("{name}.weight"))?;
                let b = if params.has_bias {
                    Some(ctx.param(&format!("{name}.bias"))?)
                } else {
                    None
                };
                ops::conv2d(x, w, b, *params)
            }
            Layer::BatchNorm { name, .. } => ctx.batchnorm(name, x),
            Layer::Relu => ops::relu(x),
        }
    }
}

pub(crate) fn forward_seq<'t, T: Float>(
    layers: &[Layer],
    mut x: Var<'t, T>,
    ctx: &mut ForwardCtx<'_, 't, T>,
) -> Result<Var<'t, T>> {
    for layer in layers {
        x = layer.forward(x, ctx)?;
    }
    Ok(x)
}

pub(crate) fn seq_output_shape(layers: &[Layer], mut shape: [usize; 3]) -> Result<[usize; 3]> {
    for layer in layers {
        shape = layer.output_shape(shape)?;
    }
    Ok(shape)
}
