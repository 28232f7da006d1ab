use crate::error::Result;
use crate::ops::ConvParams;

use super::blocks::{build_ssnbt, SsNbtSpec, Stage};
use super::layer::Layer;
use super::network::NetworkSpec;

/// Cost of one layer for a single image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub kind: String,
    pub params: usize,
    pub macs: u64,
    /// Non-MAC work (normalization, activation, pooling, resampling, adds).
    pub elem_ops: u64,
    /// True for 1×1 convolutions.
    pub pointwise: bool,
}

impl LayerCost {
    pub(crate) fn of_layer(layer: &Layer, input: [usize; 3]) -> Result<Self> {
        let numel = (input[0] * input[1] * input[2]) as u64;
        Ok(match layer {
            Layer::Conv { name, params } => {
                let mut kind = format!("conv{}x{}", params.kernel.0, params.kernel.1);
                if params.stride != (1, 1) {
                    kind.push_str(&format!("/s{}", params.stride.0));
                }
                let d = params.dilation.0.max(params.dilation.1);
                if d > 1 {
                    kind.push_str(&format!(" r={d}"));
                }
                Self {
                    name: name.clone(),
                    kind,
                    params: params.param_count(),
                    macs: params.macs(input[1], input[2])?,
                    elem_ops: 0,
                    pointwise: params.is_pointwise(),
                }
            }
            Layer::BatchNorm { name, channels } => Self {
                name: name.clone(),
                kind: "batchnorm".into(),
                params: 2 * channels,
                macs: 0,
                elem_ops: numel,
                pointwise: false,
            },
            Layer::Relu => Self::elementwise(String::new(), "relu", numel),
        })
    }

    pub(crate) fn elementwise(name: impl Into<String>, kind: &str, elem_ops: u64) -> Self {
        Self {
            name: name.into(),
            kind: kind.into(),
            params: 0,
            macs: 0,
            elem_ops,
            pointwise: false,
        }
    }
}

/// Per-layer and total parameter and compute counts at one input size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    /// Input `[C, H, W]` the MACs were counted at.
    pub input: [usize; 3],
    pub rows: Vec<LayerCost>,
    pub total_params: usize,
    pub total_macs: u64,
    pub total_elem_ops: u64,
}

impl CostReport {
    fn from_rows(input: [usize; 3], rows: Vec<LayerCost>) -> Self {
        Self {
            input,
            total_params: rows.iter().map(|r| r.params).sum(),
            total_macs: rows.iter().map(|r| r.macs).sum(),
            total_elem_ops: rows.iter().map(|r| r.elem_ops).sum(),
            rows,
        }
    }
}

fn report(spec: &NetworkSpec, input: [usize; 3]) -> Result<CostReport> {
    let mut rows = Vec::new();
    let mut shape = input;
    for stage in spec.stages() {
        rows.extend(stage.costs(shape)?);
        shape = stage.output_shape(shape)?;
    }
    Ok(CostReport::from_rows(input, rows))
}

/// Costs at the network's own input size.
pub fn count_params(spec: &NetworkSpec) -> Result<CostReport> {
    report(spec, [3, spec.height(), spec.width()])
}

/// Costs for a `3×H×W` input.
pub fn count_macs(spec: &NetworkSpec, height: usize, width: usize) -> Result<CostReport> {
    report(spec, [3, height, width])
}

/// Cost summary of one residual-module variant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleCost {
    pub name: &'static str,
    pub params: usize,
    pub macs: u64,
    /// MACs spent in 1×1 convolutions of the transform path.
    pub pointwise_macs: u64,
    pub input: [usize; 3],
    pub output: [usize; 3],
}

/// A convolution in a cost-only module description. `groups` covers the
/// grouped and depthwise convolutions that the trainable op set lacks.
struct CostConv {
    cin: usize,
    cout: usize,
    kernel: (usize, usize),
    groups: usize,
}

impl CostConv {
    fn dense(cin: usize, cout: usize, kernel: (usize, usize)) -> Self {
        Self {
            cin,
            cout,
            kernel,
            groups: 1,
        }
    }

    fn params(&self) -> usize {
        self.cout * (self.cin / self.groups) * self.kernel.0 * self.kernel.1
    }
}

fn module_cost(name: &'static str, convs: &[CostConv], bn_channels: &[usize], c: usize, h: usize, w: usize) -> ModuleCost {
    let plane = (h * w) as u64;
    let macs = |cv: &CostConv| cv.params() as u64 * plane;
    ModuleCost {
        name,
        params: convs.iter().map(CostConv::params).sum::<usize>() + 2 * bn_channels.iter().sum::<usize>(),
        macs: convs.iter().map(macs).sum(),
        pointwise_macs: convs.iter().filter(|cv| cv.kernel == (1, 1)).map(macs).sum(),
        input: [c, h, w],
        output: [c, h, w],
    }
}

/// Analytic costs of four residual designs at equal input/output width:
///
/// * `bottleneck`: 1×1 reduce to C/4, 3×3, 1×1 expand, BN after each.
/// * `non-bt-1D`: two 3×1/1×3 pairs at full width, BN after each pair.
/// * `shuffle-unit`: grouped (g=2) 1×1 reduce to C/4 (rounded up to even),
///   3×3 depthwise, grouped 1×1 expand, BN after each.
/// * `SS-nbt`: the unit produced by [`build_ssnbt`].
///
/// All convolutions are bias-free and stride 1.
pub fn compare_modules(channels: usize, height: usize, width: usize) -> Result<Vec<ModuleCost>> {
    let c = channels;
    let (h, w) = (height, width);
    let mid = (c / 4).max(1);
    let bottleneck = module_cost(
        "bottleneck",
        &[
            CostConv::dense(c, mid, (1, 1)),
            CostConv::dense(mid, mid, (3, 3)),
            CostConv::dense(mid, c, (1, 1)),
        ],
        &[mid, mid, c],
        c,
        h,
        w,
    );
    let non_bt = module_cost(
        "non-bt-1D",
        &[
            CostConv::dense(c, c, (3, 1)),
            CostConv::dense(c, c, (1, 3)),
            CostConv::dense(c, c, (3, 1)),
            CostConv::dense(c, c, (1, 3)),
        ],
        &[c, c],
        c,
        h,
        w,
    );
    let shuffle_mid = (c / 4).div_ceil(2).max(1) * 2;
    let shuffle = module_cost(
        "shuffle-unit",
        &[
            CostConv {
                cin: c,
                cout: shuffle_mid,
                kernel: (1, 1),
                groups: 2,
            },
            CostConv {
                cin: shuffle_mid,
                cout: shuffle_mid,
                kernel: (3, 3),
                groups: shuffle_mid,
            },
            CostConv {
                cin: shuffle_mid,
                cout: c,
                kernel: (1, 1),
                groups: 2,
            },
        ],
        &[shuffle_mid, shuffle_mid, c],
        c,
        h,
        w,
    );

    let unit = build_ssnbt("cmp", SsNbtSpec { channels: c, dilation: 1 })?;
    let convs: Vec<ConvParams> = unit
        .transform_layers()
        .filter_map(|l| match l {
            Layer::Conv { params, .. } => Some(*params),
            _ => None,
        })
        .collect();
    let bn: Vec<usize> = unit
        .transform_layers()
        .filter_map(|l| match l {
            Layer::BatchNorm { channels, .. } => Some(*channels),
            _ => None,
        })
        .collect();
    let stage = Stage::SsNbt(unit);
    let rows = stage.costs([c, h, w])?;
    let ssnbt = ModuleCost {
        name: "SS-nbt",
        params: rows.iter().map(|r| r.params).sum(),
        macs: rows.iter().map(|r| r.macs).sum(),
        pointwise_macs: rows.iter().filter(|r| r.pointwise).map(|r| r.macs).sum(),
        input: [c, h, w],
        output: stage.output_shape([c, h, w])?,
    };
    debug_assert_eq!(
        ssnbt.params,
        convs.iter().map(ConvParams::param_count).sum::<usize>() + 2 * bn.iter().sum::<usize>()
    );
    Ok(vec![bottleneck, non_bt, shuffle, ssnbt])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn module_table_at_64_channels() {
        let rows = compare_modules(64, 64, 128).unwrap();
        let names: Vec<_> = rows.iter().map(|r| r.name).collect();
        assert_eq!(names, ["bottleneck", "non-bt-1D", "shuffle-unit", "SS-nbt"]);
        let non_bt = &rows[1];
        assert_eq!(non_bt.params - 2 * 2 * 64, 49_152);
        let ss = &rows[3];
        assert_eq!(ss.params, 24_576 + 4 * 2 * 32);
        assert_eq!(ss.params - 256, (non_bt.params - 256) / 2);
        assert!(rows.iter().all(|r| r.input == [64, 64, 128] && r.output == [64, 64, 128]));
        assert_eq!(ss.pointwise_macs, 0);
        assert!(rows[0].pointwise_macs > 0 && rows[2].pointwise_macs > 0);
    }
}
