use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::ops::{self, ConvParams};
use crate::tensor::Float;

use super::cost::LayerCost;
use super::layer::{forward_seq, seq_output_shape, Layer, ParamDecl};
use super::params::ForwardCtx;

/// Channel groups of the shuffle at the exit of every residual unit: one per
/// split branch.
pub const SHUFFLE_GROUPS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SsNbtSpec {
    pub channels: usize,
    pub dilation: usize,
}

/// Split-shuffle-non-bottleneck residual unit.
///
/// The input is split into two channel halves. Each half goes through a
/// factorized 3×1 / 1×3 stack whose second pair is dilated; branch A starts
/// with 3×1 and branch B with 1×3. The halves are concatenated, added to the
/// input, passed through ReLU and shuffled with two groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SsNbt {
    pub name: String,
    pub channels: usize,
    pub dilation: usize,
    pub branch_a: Vec<Layer>,
    pub branch_b: Vec<Layer>,
}

fn factorized_branch(prefix: &str, width: usize, dilation: usize, vertical_first: bool) -> Vec<Layer> {
    let vertical = |d: usize| ConvParams::new(width, width, (3, 1)).same(d, 1);
    let horizontal = |d: usize| ConvParams::new(width, width, (1, 3)).same(1, d);
    let pair = |d: usize| {
        if vertical_first {
            (vertical(d), horizontal(d))
        } else {
            (horizontal(d), vertical(d))
        }
    };
    let (c1, c2) = pair(1);
    let (c3, c4) = pair(dilation);
    vec![
        Layer::conv(format!("{prefix}.conv1"), c1),
        Layer::Relu,
        Layer::conv(format!("{prefix}.conv2"), c2),
        Layer::bn(format!("{prefix}.bn1"), width),
        Layer::Relu,
        Layer::conv(format!("{prefix}.conv3"), c3),
        Layer::Relu,
        Layer::conv(format!("{prefix}.conv4"), c4),
        Layer::bn(format!("{prefix}.bn2"), width),
    ]
}

pub fn build_ssnbt(name: &str, spec: SsNbtSpec) -> Result<SsNbt> {
    if spec.channels == 0 || !spec.channels.is_multiple_of(2) {
        return Err(Error::Split { channels: spec.channels });
    }
    if spec.dilation == 0 {
        return Err(Error::Config(format!("{name}: dilation must be at least 1")));
    }
    let width = spec.channels / 2;
    Ok(SsNbt {
        name: name.to_string(),
        channels: spec.channels,
        dilation: spec.dilation,
        branch_a: factorized_branch(&format!("{name}.a"), width, spec.dilation, true),
        branch_b: factorized_branch(&format!("{name}.b"), width, spec.dilation, false),
    })
}

impl SsNbt {
    /// Layers of both transform branches.
    pub fn transform_layers(&self) -> impl Iterator<Item = &Layer> {
        self.branch_a.iter().chain(&self.branch_b)
    }

    fn forward<'t, T: Float>(&self, x: Var<'t, T>, ctx: &mut ForwardCtx<'_, 't, T>) -> Result<Var<'t, T>> {
        let (left, right) = ops::channel_split(x)?;
        let left = forward_seq(&self.branch_a, left, ctx)?;
        let right = forward_seq(&self.branch_b, right, ctx)?;
        let merged = ops::channel_concat(left, right)?;
        let y = ops::relu(ops::add(merged, x)?)?;
        ops::channel_shuffle(y, SHUFFLE_GROUPS)
    }
}

/// Concatenation of a stride-2 3×3 convolution producing `cout − cin`
/// channels with a 2×2 max-pool of the input, then BN and ReLU.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Downsampler {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub conv: Layer,
    pub bn: Layer,
}

pub fn build_downsampler(name: &str, cin: usize, cout: usize) -> Result<Downsampler> {
    if cin == 0 || cout <= cin {
        return Err(Error::Config(format!(
            "{name}: downsampler needs cout > cin, got {cin} -> {cout}"
        )));
    }
    let conv = ConvParams::new(cin, cout - cin, (3, 3)).stride(2, 2).padding(1, 1);
    Ok(Downsampler {
        name: name.to_string(),
        cin,
        cout,
        conv: Layer::conv(format!("{name}.conv"), conv),
        bn: Layer::bn(format!("{name}.bn"), cout),
    })
}

impl Downsampler {
    fn forward<'t, T: Float>(&self, x: Var<'t, T>, ctx: &mut ForwardCtx<'_, 't, T>) -> Result<Var<'t, T>> {
        let conv = self.conv.forward(x, ctx)?;
        let pool = ops::maxpool2d(x)?;
        let y = self.bn.forward(ops::channel_concat(conv, pool)?, ctx)?;
        ops::relu(y)
    }
}

/// Attention pyramid decoder.
///
/// A stride-2 pyramid of 7×7, 5×5 and 3×3 convolutions (each with BN and
/// ReLU) is fused coarse-to-fine by ×2 upsampling and addition, upsampled
/// once more to the input resolution and multiplied into a 1×1 projection of
/// the input. A global-average-pooled 1×1 projection is added on top.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Apn {
    pub name: String,
    pub cin: usize,
    pub classes: usize,
    pub pyramid: [Vec<Layer>; 3],
    pub trunk: Layer,
    pub global: Layer,
}

pub fn build_apn(name: &str, cin: usize, classes: usize) -> Result<Apn> {
    if cin == 0 || classes == 0 {
        return Err(Error::Config(format!("{name}: channels and classes must be positive")));
    }
    let level = |i: usize, cin: usize, k: usize| {
        let p = ConvParams::new(cin, classes, (k, k)).stride(2, 2).padding(k / 2, k / 2);
        vec![
            Layer::conv(format!("{name}.down{i}"), p),
            Layer::bn(format!("{name}.down{i}_bn"), classes),
            Layer::Relu,
        ]
    };
    Ok(Apn {
        name: name.to_string(),
        cin,
        classes,
        pyramid: [level(1, cin, 7), level(2, classes, 5), level(3, classes, 3)],
        trunk: Layer::conv(format!("{name}.trunk"), ConvParams::new(cin, classes, (1, 1)).bias(true)),
        global: Layer::conv(format!("{name}.global"), ConvParams::new(cin, classes, (1, 1)).bias(true)),
    })
}

impl Apn {
    fn check_extent(&self, h: usize, w: usize) -> Result<()> {
        if !h.is_multiple_of(8) || !w.is_multiple_of(8) {
            return Err(Error::InvalidShape {
                shape: vec![h, w],
                reason: format!("{}: the pyramid needs extents divisible by 8", self.name),
            });
        }
        Ok(())
    }

    fn forward<'t, T: Float>(&self, x: Var<'t, T>, ctx: &mut ForwardCtx<'_, 't, T>) -> Result<Var<'t, T>> {
        let (_, _, h, w) = x.value().dims4("apn")?;
        self.check_extent(h, w)?;
        let d1 = forward_seq(&self.pyramid[0], x, ctx)?;
        let d2 = forward_seq(&self.pyramid[1], d1, ctx)?;
        let d3 = forward_seq(&self.pyramid[2], d2, ctx)?;
        let f2 = ops::add(ops::upsample_bilinear(d3, 2)?, d2)?;
        let f1 = ops::add(ops::upsample_bilinear(f2, 2)?, d1)?;
        let attention = ops::upsample_bilinear(f1, 2)?;
        let trunk = self.trunk.forward(x, ctx)?;
        let attended = ops::mul(trunk, attention)?;
        let global = self.global.forward(ops::global_avg_pool(x)?, ctx)?;
        ops::add(attended, global)
    }
}

/// One row of the network's stage list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stage {
    Downsample(Downsampler),
    SsNbt(SsNbt),
    Apn(Apn),
    Upsample { scale: usize },
}

impl Stage {
    /// Row label in the architecture table.
    pub fn label(&self) -> String {
        match self {
            Stage::Downsample(_) => "Downsampling Unit".into(),
            Stage::SsNbt(u) => format!("SS-nbt Unit (dilated r = {})", u.dilation),
            Stage::Apn(_) => "APN Module".into(),
            Stage::Upsample { scale } => format!("Upsampling Unit (x{scale})"),
        }
    }

    pub fn layers(&self) -> Vec<&Layer> {
        match self {
            Stage::Downsample(d) => vec![&d.conv, &d.bn],
            Stage::SsNbt(u) => u.transform_layers().collect(),
            Stage::Apn(a) => a.pyramid.iter().flatten().chain([&a.trunk, &a.global]).collect(),
            Stage::Upsample { .. } => Vec::new(),
        }
    }

    pub fn params(&self) -> Vec<ParamDecl> {
        self.layers().into_iter().flat_map(Layer::params).collect()
    }

    /// `(name, channels)` of every batch-norm layer.
    pub fn bn_layers(&self) -> Vec<(String, usize)> {
        self.layers()
            .into_iter()
            .filter_map(|l| match l {
                Layer::BatchNorm { name, channels } => Some((name.clone(), *channels)),
                _ => None,
            })
            .collect()
    }

    pub fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let [c, h, w] = input;
        match self {
            Stage::Downsample(d) => {
                let [cc, oh, ow] = d.conv.output_shape(input)?;
                if (oh, ow) != (h.div_ceil(2), w.div_ceil(2)) {
                    return Err(Error::Config(format!("{}: conv and pool extents disagree", d.name)));
                }
                Ok([cc + c, oh, ow])
            }
            Stage::SsNbt(u) => {
                if c != u.channels {
                    return Err(Error::Config(format!("{}: expects {} channels, got {c}", u.name, u.channels)));
                }
                let half = [c / 2, h, w];
                let a = seq_output_shape(&u.branch_a, half)?;
                let b = seq_output_shape(&u.branch_b, half)?;
                if a != half || b != half {
                    return Err(Error::Config(format!("{}: branches must preserve shape", u.name)));
                }
                Ok(input)
            }
            Stage::Apn(a) => {
                if c != a.cin {
                    return Err(Error::Config(format!("{}: expects {} channels, got {c}", a.name, a.cin)));
                }
                a.check_extent(h, w)?;
                Ok([a.classes, h, w])
            }
            Stage::Upsample { scale } => Ok([c, h * scale, w * scale]),
        }
    }

    pub(crate) fn forward<'t, T: Float>(&self, x: Var<'t, T>, ctx: &mut ForwardCtx<'_, 't, T>) -> Result<Var<'t, T>> {
        match self {
            Stage::Downsample(d) => d.forward(x, ctx),
            Stage::SsNbt(u) => u.forward(x, ctx),
            Stage::Apn(a) => a.forward(x, ctx),
            Stage::Upsample { scale } => ops::upsample_bilinear(x, *scale),
        }
    }

    /// Per-layer costs for one image of shape `input`.
    pub fn costs(&self, input: [usize; 3]) -> Result<Vec<LayerCost>> {
        let numel = |s: [usize; 3]| (s[0] * s[1] * s[2]) as u64;
        let mut rows = Vec::new();
        match self {
            Stage::Downsample(d) => {
                let out = self.output_shape(input)?;
                rows.push(LayerCost::of_layer(&d.conv, input)?);
                rows.push(LayerCost::elementwise(format!("{}.pool", d.name), "maxpool", numel(input)));
                rows.push(LayerCost::of_layer(&d.bn, out)?);
                rows.push(LayerCost::elementwise(format!("{}.relu", d.name), "relu", numel(out)));
            }
            Stage::SsNbt(u) => {
                let half = [input[0] / 2, input[1], input[2]];
                for (branch, tag) in [(&u.branch_a, "a"), (&u.branch_b, "b")] {
                    let mut shape = half;
                    for (i, layer) in branch.iter().enumerate() {
                        let mut row = LayerCost::of_layer(layer, shape)?;
                        if row.name.is_empty() {
                            row.name = format!("{}.{tag}.relu{i}", u.name);
                        }
                        rows.push(row);
                        shape = layer.output_shape(shape)?;
                    }
                }
                rows.push(LayerCost::elementwise(format!("{}.residual", u.name), "add+relu", 2 * numel(input)));
            }
            Stage::Apn(a) => {
                let mut shape = input;
                let mut levels = Vec::new();
                for level in &a.pyramid {
                    for layer in level {
                        let mut row = LayerCost::of_layer(layer, shape)?;
                        if row.name.is_empty() {
                            row.name = format!("{}.relu{}", a.name, levels.len() + 1);
                        }
                        rows.push(row);
                        shape = layer.output_shape(shape)?;
                    }
                    levels.push(shape);
                }
                let fused = 2 * (numel(levels[1]) + numel(levels[0]));
                rows.push(LayerCost::elementwise(format!("{}.fuse", a.name), "upsample+add", fused));
                let full = [a.classes, input[1], input[2]];
                rows.push(LayerCost::elementwise(format!("{}.upsample", a.name), "upsample", numel(full)));
                rows.push(LayerCost::of_layer(&a.trunk, input)?);
                rows.push(LayerCost::elementwise(format!("{}.attention", a.name), "mul", numel(full)));
                rows.push(LayerCost::elementwise(format!("{}.pool", a.name), "global_avg_pool", numel(input)));
                rows.push(LayerCost::of_layer(&a.global, [input[0], 1, 1])?);
                rows.push(LayerCost::elementwise(format!("{}.context", a.name), "add", numel(full)));
            }
            Stage::Upsample { .. } => {
                let out = self.output_shape(input)?;
                rows.push(LayerCost::elementwise("decoder.upsample", "upsample", numel(out)));
            }
        }
        Ok(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ssnbt_layer_order() {
        let u = build_ssnbt("u", SsNbtSpec { channels: 8, dilation: 5 }).unwrap();
        let kernels = |b: &[Layer]| {
            b.iter()
                .filter_map(|l| match l {
                    Layer::Conv { params, .. } => Some((params.kernel, params.dilation, params.padding)),
                    _ => None,
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(
            kernels(&u.branch_a),
            vec![
                ((3, 1), (1, 1), (1, 0)),
                ((1, 3), (1, 1), (0, 1)),
                ((3, 1), (5, 1), (5, 0)),
                ((1, 3), (1, 5), (0, 5)),
            ]
        );
        assert_eq!(
            kernels(&u.branch_b),
            vec![
                ((1, 3), (1, 1), (0, 1)),
                ((3, 1), (1, 1), (1, 0)),
                ((1, 3), (1, 5), (0, 5)),
                ((3, 1), (5, 1), (5, 0)),
            ]
        );
        assert!(u.transform_layers().all(|l| match l {
            Layer::Conv { params, .. } => params.in_channels == 4 && params.out_channels == 4 && !params.has_bias,
            _ => true,
        }));
    }

    #[test]
    fn odd_channels_rejected() {
        assert!(matches!(
            build_ssnbt("u", SsNbtSpec { channels: 7, dilation: 1 }),
            Err(Error::Split { channels: 7 })
        ));
    }

    #[test]
    fn downsampler_widths() {
        let d = build_downsampler("d", 3, 32).unwrap();
        match &d.conv {
            Layer::Conv { params, .. } => assert_eq!(params.out_channels, 29),
            _ => unreachable!(),
        }
        assert_eq!(Stage::Downsample(d).output_shape([3, 512, 1024]).unwrap(), [32, 256, 512]);
        assert!(build_downsampler("d", 32, 32).is_err());
        assert!(build_downsampler("d", 64, 32).is_err());
    }

    #[test]
    fn apn_pyramid_shapes() {
        let apn = build_apn("apn", 128, 20).unwrap();
        let mut shape = [128, 64, 128];
        let mut levels = Vec::new();
        for level in &apn.pyramid {
            shape = seq_output_shape(level, shape).unwrap();
            levels.push((shape[1], shape[2]));
        }
        assert_eq!(levels, vec![(32, 64), (16, 32), (8, 16)]);
        let stage = Stage::Apn(apn);
        assert_eq!(stage.output_shape([128, 64, 128]).unwrap(), [20, 64, 128]);
        assert!(stage.output_shape([128, 60, 128]).is_err());
    }
}
