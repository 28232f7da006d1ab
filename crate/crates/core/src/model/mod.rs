//! The LEDNet network: a declarative description of every stage, builders
//! for the residual, downsampling and attention-pyramid units, a forward
//! pass over the autograd tape, and analytic cost accounting.

mod blocks;
mod cost;
mod layer;
mod network;
mod params;

pub use blocks::{build_apn, build_downsampler, build_ssnbt, Apn, Downsampler, SsNbt, SsNbtSpec, Stage};
pub use cost::{compare_modules, count_macs, count_params, CostReport, LayerCost, ModuleCost};
pub use layer::{Layer, ParamDecl, ParamKind};
pub use network::{
    build_encoder, build_encoder_with, build_lednet, build_lednet_with, table1_expectation, Network, NetworkSpec, ShapeRow, ENCODER_DILATIONS,
};
pub use params::{Bound, ParamStore, StatsStore};
