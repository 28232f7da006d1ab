use std::fmt;
use std::path::Path;

use crate::autograd::{Tape, Var};
use crate::checkpoint::{self, Entry};
use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::ops::{BatchNormConfig, BnMode, RunningStats};
use crate::tensor::{Float, Tensor};

use super::blocks::{build_apn, build_downsampler, build_ssnbt, SsNbtSpec, Stage};
use super::layer::ParamDecl;
use super::params::{Bound, ForwardCtx, ParamStore, StatsStore};

/// Dilation rates of the eight SS-nbt units at 1/8 resolution.
pub const ENCODER_DILATIONS: [usize; 8] = [1, 2, 5, 9, 2, 5, 9, 17];

/// Output stride of the encoder.
const ENCODER_STRIDE: usize = 8;

/// The attention pyramid halves the encoder output three more times.
const INPUT_MULTIPLE: usize = ENCODER_STRIDE * 8;

/// Input image channels.
const INPUT_CHANNELS: usize = 3;

/// One line of a per-stage shape trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeRow {
    pub label: String,
    /// `[C, H, W]`.
    pub shape: [usize; 3],
}

impl fmt::Display for ShapeRow {
    /// Sizes print as `W × H × C`, the usual layout of architecture tables.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [c, h, w] = self.shape;
        write!(f, "{:<32} {w} x {h} x {c}", self.label)
    }
}

/// The reference layout at 512×1024 for `classes` output channels.
pub fn table1_expectation(classes: usize) -> Vec<ShapeRow> {
    let row = |label: String, w: usize, h: usize, c: usize| ShapeRow { label, shape: [c, h, w] };
    let ss = |r: usize| format!("SS-nbt Unit (dilated r = {r})");
    let mut rows = vec![row("Downsampling Unit".into(), 512, 256, 32)];
    rows.extend((0..3).map(|_| row(ss(1), 512, 256, 32)));
    rows.push(row("Downsampling Unit".into(), 256, 128, 64));
    rows.extend((0..2).map(|_| row(ss(1), 256, 128, 64)));
    rows.push(row("Downsampling Unit".into(), 128, 64, 128));
    rows.extend(ENCODER_DILATIONS.iter().map(|&r| row(ss(r), 128, 64, 128)));
    rows.push(row("APN Module".into(), 128, 64, classes));
    rows.push(row("Upsampling Unit (x8)".into(), 1024, 512, classes));
    rows
}

/// Encoder stages with the standard dilation schedule.
pub fn build_encoder() -> Result<Vec<Stage>> {
    build_encoder_with(&ENCODER_DILATIONS)
}

/// Encoder stages with custom dilations for the eight 128-channel units.
pub fn build_encoder_with(dilations: &[usize; 8]) -> Result<Vec<Stage>> {
    let mut stages = Vec::new();
    let mut unit = 0;
    let mut push_units = |stages: &mut Vec<Stage>, channels: usize, rates: &[usize]| -> Result<()> {
        for &dilation in rates {
            let name = format!("encoder.ssnbt{unit}");
            stages.push(Stage::SsNbt(build_ssnbt(&name, SsNbtSpec { channels, dilation })?));
            unit += 1;
        }
        Ok(())
    };
    stages.push(Stage::Downsample(build_downsampler("encoder.down0", 3, 32)?));
    push_units(&mut stages, 32, &[1; 3])?;
    stages.push(Stage::Downsample(build_downsampler("encoder.down1", 32, 64)?));
    push_units(&mut stages, 64, &[1; 2])?;
    stages.push(Stage::Downsample(build_downsampler("encoder.down2", 64, 128)?));
    push_units(&mut stages, 128, dilations)?;
    Ok(stages)
}

/// Complete network description: encoder, attention decoder, ×8 upsampling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    num_classes: usize,
    height: usize,
    width: usize,
    stages: Vec<Stage>,
    encoder_len: usize,
}

pub fn build_lednet(num_classes: usize, height: usize, width: usize) -> Result<NetworkSpec> {
    build_lednet_with(num_classes, height, width, &ENCODER_DILATIONS)
}

pub fn build_lednet_with(
    num_classes: usize,
    height: usize,
    width: usize,
    dilations: &[usize; 8],
) -> Result<NetworkSpec> {
    if num_classes == 0 {
        return Err(Error::Config("number of classes must be positive".into()));
    }
    check_extent(height, width)?;
    let mut stages = build_encoder_with(dilations)?;
    let encoder_len = stages.len();
    stages.push(Stage::Apn(build_apn("decoder.apn", 128, num_classes)?));
    stages.push(Stage::Upsample { scale: ENCODER_STRIDE });
    Ok(NetworkSpec {
        num_classes,
        height,
        width,
        stages,
        encoder_len,
    })
}

fn check_extent(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || !h.is_multiple_of(INPUT_MULTIPLE) || !w.is_multiple_of(INPUT_MULTIPLE) {
        return Err(Error::InvalidShape {
            shape: vec![h, w],
            reason: format!("height and width must be positive multiples of {INPUT_MULTIPLE}"),
        });
    }
    Ok(())
}

impl NetworkSpec {
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn encoder(&self) -> &[Stage] {
        &self.stages[..self.encoder_len]
    }

    pub fn decoder(&self) -> &[Stage] {
        &self.stages[self.encoder_len..]
    }

    /// Dilations of the SS-nbt units after the last downsampler.
    pub fn dilation_schedule(&self) -> Vec<usize> {
        let last_down = self
            .encoder()
            .iter()
            .rposition(|s| matches!(s, Stage::Downsample(_)))
            .map_or(0, |i| i + 1);
        self.encoder()[last_down..]
            .iter()
            .filter_map(|s| match s {
                Stage::SsNbt(u) => Some(u.dilation),
                _ => None,
            })
            .collect()
    }

    pub fn params(&self) -> Vec<ParamDecl> {
        self.stages.iter().flat_map(Stage::params).collect()
    }

    pub fn bn_layers(&self) -> Vec<(String, usize)> {
        self.stages.iter().flat_map(Stage::bn_layers).collect()
    }

    /// `(name, shape)` of every trainable tensor, in checkpoint order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        self.params().into_iter().map(|d| (d.name, d.shape)).collect()
    }

    fn stats_layout(&self) -> Vec<(String, Vec<usize>)> {
        self.bn_layers()
            .into_iter()
            .flat_map(|(n, c)| [(format!("{n}.running_mean"), vec![c]), (format!("{n}.running_var"), vec![c])])
            .collect()
    }

    /// Output shape of every stage for one `3×H×W` image.
    pub fn shape_trace(&self, height: usize, width: usize) -> Result<Vec<ShapeRow>> {
        check_extent(height, width)?;
        let mut shape = [INPUT_CHANNELS, height, width];
        self.stages
            .iter()
            .map(|stage| {
                shape = stage.output_shape(shape)?;
                Ok(ShapeRow {
                    label: stage.label(),
                    shape,
                })
            })
            .collect()
    }
}

/// A network description with its parameters and batch-norm statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    spec: NetworkSpec,
    params: ParamStore<T>,
    stats: StatsStore<T>,
    bn: BatchNormConfig,
}

fn stats_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".bnstats");
    s.into()
}

impl<T: Float> Network<T> {
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let params = ParamStore::init(spec.params(), seed)?;
        let stats = StatsStore::new(&spec.bn_layers())?;
        Ok(Self {
            spec,
            params,
            stats,
            bn: BatchNormConfig::default(),
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn stats(&self) -> &StatsStore<T> {
        &self.stats
    }

    pub fn stats_mut(&mut self) -> &mut StatsStore<T> {
        &mut self.stats
    }

    pub fn bn_config(&self) -> BatchNormConfig {
        self.bn
    }

    fn check_input(x: &Tensor<T>) -> Result<()> {
        let (_, c, h, w) = x.dims4("network input")?;
        if c != INPUT_CHANNELS {
            return Err(Error::mismatch("network input channels", &[c], &[INPUT_CHANNELS]));
        }
        check_extent(h, w)
    }

    fn run<'t>(
        &mut self,
        stages: std::ops::Range<usize>,
        bound: &Bound<'t, T>,
        mut x: Var<'t, T>,
        mode: BnMode,
    ) -> Result<Var<'t, T>> {
        Self::check_input(&x.value())?;
        let mut ctx = ForwardCtx {
            bound,
            stats: &mut self.stats,
            mode,
            bn: self.bn,
        };
        for stage in &self.spec.stages[stages] {
            x = stage.forward(x, &mut ctx)?;
        }
        Ok(x)
    }

    /// Logits `N×C×H×W` for images `N×3×H×W`. `bound` must come from
    /// [`ParamStore::bind`] or [`ParamStore::bind_frozen`] on this network.
    pub fn forward<'t>(&mut self, bound: &Bound<'t, T>, x: Var<'t, T>, mode: BnMode) -> Result<Var<'t, T>> {
        self.run(0..self.spec.stages.len(), bound, x, mode)
    }

    /// Encoder features `N×128×H/8×W/8`.
    pub fn forward_encoder<'t>(&mut self, bound: &Bound<'t, T>, x: Var<'t, T>, mode: BnMode) -> Result<Var<'t, T>> {
        self.run(0..self.spec.encoder_len, bound, x, mode)
    }

    /// Eval-mode logits without gradient tracking.
    pub fn infer(&mut self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let bound = self.params.bind_frozen(&tape);
        let x = tape.constant(images.clone());
        let y = self.forward(&bound, x, BnMode::Eval)?;
        let out = y.value();
        drop(bound);
        Ok((*out).clone())
    }

    pub fn predict(&mut self, images: &Tensor<T>) -> Result<LabelMap> {
        LabelMap::argmax(&self.infer(images)?)
    }

    pub fn param_entries(&self) -> Result<Vec<Entry>> {
        self.params
            .iter()
            .map(|(d, v)| Entry::new(d.name.clone(), d.shape.clone(), v.cast::<f32>().into_data()))
            .collect()
    }

    pub fn stats_entries(&self) -> Result<Vec<Entry>> {
        let mut out = Vec::new();
        for (name, s) in self.stats.iter() {
            let c = s.channels();
            out.push(Entry::new(format!("{name}.running_mean"), vec![c], s.mean.cast::<f32>().into_data())?);
            out.push(Entry::new(format!("{name}.running_var"), vec![c], s.var.cast::<f32>().into_data())?);
        }
        Ok(out)
    }

    /// Replace all parameters. Fails with the full layout diff on mismatch.
    pub fn load_param_entries(&mut self, entries: Vec<Entry>) -> Result<()> {
        let ordered = checkpoint::match_layout(&self.spec.layout(), entries)?;
        for (value, e) in self.params.values_mut().iter_mut().zip(ordered) {
            *value = Tensor::from_vec(&e.shape, e.data)?.cast();
        }
        Ok(())
    }

    pub fn load_stats_entries(&mut self, entries: Vec<Entry>) -> Result<()> {
        let ordered = checkpoint::match_layout(&self.spec.stats_layout(), entries)?;
        let mut it = ordered.into_iter();
        for (_, stats) in self.stats.iter_mut() {
            let mut next = || -> Result<Tensor<T>> {
                let e = it.next().expect("layout has two entries per layer");
                Ok(Tensor::from_vec(&e.shape, e.data)?.cast())
            };
            *stats = RunningStats {
                mean: next()?,
                var: next()?,
            };
        }
        Ok(())
    }

    /// Write parameters to `path` and running statistics to `path.bnstats`.
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.param_entries()?)?;
        checkpoint::save(&stats_path(path), &self.stats_entries()?)
    }

    /// Build `spec` and load its state saved by [`Network::save`].
    pub fn load(spec: NetworkSpec, path: &Path) -> Result<Self> {
        let mut net = Self::new(spec, 0)?;
        net.load_param_entries(checkpoint::load(path)?)?;
        net.load_stats_entries(checkpoint::load(&stats_path(path))?)?;
        Ok(net)
    }

    pub fn cast<U: Float>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            params: self.params.cast(),
            stats: self.stats.cast(),
            bn: self.bn,
        }
    }
}
