use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics and update the running estimates.
    Train,
    /// Normalize with the running estimates.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormConfig {
    pub eps: f64,
    /// Weight of the current batch in the running-statistics update.
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            momentum: 0.1,
        }
    }
}

/// Per-channel running mean and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Float> RunningStats<T> {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(Self {
            mean: Tensor::zeros(&[channels])?,
            var: Tensor::ones(&[channels])?,
        })
    }

    pub fn channels(&self) -> usize {
        self.mean.numel()
    }
}

/// Per-channel statistics over `(N, H, W)`, accumulated in f64.
fn channel_moments<T: Float>(data: &[T], n: usize, c: usize, plane: usize) -> Vec<(f64, f64)> {
    let count = (n * plane) as f64;
    (0..c)
        .map(|ch| {
            let samples = (0..n).flat_map(|s| &data[(s * c + ch) * plane..][..plane]);
            let mean = samples.clone().map(|v| v.as_f64()).sum::<f64>() / count;
            let var = samples.map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / count;
            (mean, var)
        })
        .collect()
}

pub fn batchnorm2d<'t, T: Float>(
    x: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    stats: &mut RunningStats<T>,
    mode: BnMode,
    cfg: BatchNormConfig,
) -> Result<Var<'t, T>> {
    let xv = x.value();
    let (n, c, h, w) = xv.dims4("batchnorm2d")?;
    for (what, shape) in [("gamma", gamma.shape()), ("beta", beta.shape())] {
        if shape != [c] {
            return Err(Error::ShapeMismatch {
                op: if what == "gamma" { "batchnorm2d gamma" } else { "batchnorm2d beta" },
                lhs: shape,
                rhs: vec![c],
            });
        }
    }
    if stats.channels() != c {
        return Err(Error::mismatch("batchnorm2d running stats", &[stats.channels()], &[c]));
    }
    let plane = h * w;

    // (mean, 1/sqrt(var + eps)) per channel.
    let norm: Vec<(f64, f64)> = match mode {
        BnMode::Train => {
            let moments = channel_moments(xv.data(), n, c, plane);
            let count = (n * plane) as f64;
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            let m = cfg.momentum;
            for (ch, &(mean, var)) in moments.iter().enumerate() {
                let rm = &mut stats.mean.data_mut()[ch];
                *rm = T::from_f64_lossy((1.0 - m) * rm.as_f64() + m * mean);
                let rv = &mut stats.var.data_mut()[ch];
                *rv = T::from_f64_lossy((1.0 - m) * rv.as_f64() + m * var * unbias);
            }
            moments
                .into_iter()
                .map(|(mean, var)| (mean, 1.0 / (var + cfg.eps).sqrt()))
                .collect()
        }
        BnMode::Eval => stats
            .mean
            .data()
            .iter()
            .zip(stats.var.data())
            .map(|(m, v)| (m.as_f64(), 1.0 / (v.as_f64() + cfg.eps).sqrt()))
            .collect(),
    };

    let gv = gamma.value();
    let bv = beta.value();
    let mut out = Vec::with_capacity(xv.numel());
    for (idx, chunk) in xv.data().chunks(plane).enumerate() {
        let ch = idx % c;
        let (mean, inv) = norm[ch];
        let (g, b) = (gv.data()[ch].as_f64(), bv.data()[ch].as_f64());
        out.extend(chunk.iter().map(|v| T::from_f64_lossy(g * (v.as_f64() - mean) * inv + b)));
    }
    let out = Tensor::from_vec(&[n, c, h, w], out)?;
    drop((xv, gv, bv));

    x.tape().record("batchnorm2d", &[x, gamma, beta], out, move |ctx| {
        let (xin, gamma, g) = (ctx.input(0), ctx.input(1), ctx.grad);
        let count = (n * plane) as f64;
        // Per channel: Σg and Σg·x̂.
        let mut sum_g = vec![0.0f64; c];
        let mut sum_gx = vec![0.0f64; c];
        for (idx, (xc, gc)) in xin.data().chunks(plane).zip(g.data().chunks(plane)).enumerate() {
            let ch = idx % c;
            let (mean, inv) = norm[ch];
            for (&xv, &gv) in xc.iter().zip(gc) {
                sum_g[ch] += gv.as_f64();
                sum_gx[ch] += gv.as_f64() * (xv.as_f64() - mean) * inv;
            }
        }
        let gx = ctx.needs[0].then(|| {
            let mut data = Vec::with_capacity(xin.numel());
            for (idx, (xc, gc)) in xin.data().chunks(plane).zip(g.data().chunks(plane)).enumerate() {
                let ch = idx % c;
                let (mean, inv) = norm[ch];
                let scale = gamma.data()[ch].as_f64() * inv;
                match mode {
                    BnMode::Train => {
                        let (mg, mgx) = (sum_g[ch] / count, sum_gx[ch] / count);
                        data.extend(xc.iter().zip(gc).map(|(&xv, &gv)| {
                            let xhat = (xv.as_f64() - mean) * inv;
                            T::from_f64_lossy(scale * (gv.as_f64() - mg - xhat * mgx))
                        }));
                    }
                    BnMode::Eval => {
                        data.extend(gc.iter().map(|&gv| T::from_f64_lossy(scale * gv.as_f64())));
                    }
                }
            }
            Tensor::from_vec(&[n, c, h, w], data).expect("input shape")
        });
        let to_tensor = |v: &[f64]| {
            Tensor::from_vec(&[c], v.iter().map(|&x| T::from_f64_lossy(x)).collect()).expect("channel shape")
        };
        let ggamma = ctx.needs[1].then(|| to_tensor(&sum_gx));
        let gbeta = ctx.needs[2].then(|| to_tensor(&sum_g));
        Ok(vec![gx, ggamma, gbeta])
    })
}
