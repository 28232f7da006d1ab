//! Central finite-difference gradient checks.
//!
//! The error measure for one element is
//! `|analytic − (f(x+ε) − f(x−ε)) / 2ε| / max(1, |analytic|)`, and a check
//! reports the maximum over all elements of all inputs.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::labels::{LabelMap, IGNORE_INDEX};
use crate::ops::{self, BatchNormConfig, BnMode, ConvParams, RunningStats};
use crate::rng;
use crate::tensor::{Fill, Tensor};

/// Pass threshold for the maximum relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Finite-difference step.
pub const EPS: f64 = 1e-4;
/// Random trials per op.
pub const TRIALS: usize = 5;

fn scalar_of(v: Var<'_, f64>) -> Result<f64> {
    let value = v.value();
    if !value.is_scalar() {
        return Err(Error::Rank {
            op: "finite_difference_check",
            expected: 0,
            shape: value.shape().to_vec(),
        });
    }
    let s = value.data()[0];
    if !s.is_finite() {
        return Err(Error::Numeric(format!("function value {s} is not finite")));
    }
    Ok(s)
}

/// Maximum relative error of the tape gradient of `f` against central
/// differences, per input.
pub fn check_gradients<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<Vec<f64>>
where
    F: for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&vars)?;
    scalar_of(out)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.wrt(v)).collect();
    drop(grads);

    let eval = |point: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = point.iter().map(|t| tape.constant(t.clone())).collect();
        scalar_of(f(&vars)?)
    };

    let mut point = inputs.to_vec();
    let mut errors = Vec::with_capacity(inputs.len());
    for (i, grad) in analytic.iter().enumerate() {
        if !grad.all_finite() {
            return Err(Error::Numeric(format!("analytic gradient of input {i} is not finite")));
        }
        let mut worst = 0.0f64;
        for j in 0..grad.numel() {
            let orig = point[i].data()[j];
            point[i].data_mut()[j] = orig + eps;
            let plus = eval(&point)?;
            point[i].data_mut()[j] = orig - eps;
            let minus = eval(&point)?;
            point[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[j];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
        errors.push(worst);
    }
    Ok(errors)
}

/// Single-input form of [`check_gradients`].
pub fn finite_difference_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    Ok(check_gradients(|v| f(v[0]), std::slice::from_ref(x), eps)?[0])
}

/// Identity whose backward doubles the gradient. The negative control for
/// the suite: wrapping any op with it must make that op's check fail.
pub fn faulty_identity(x: Var<'_, f64>) -> Result<Var<'_, f64>> {
    let out = (*x.value()).clone();
    x.tape()
        .record("faulty_identity", &[x], out, |ctx| Ok(vec![Some(ctx.grad.map(|g| 2.0 * g))]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpReport {
    pub op: String,
    pub trials: usize,
    pub max_error: f64,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.max_error < TOLERANCE
    }
}

fn uniform(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Result<Tensor<f64>> {
    Tensor::create(shape, Fill::Uniform { seed, lo, hi })
}

/// Uniform values pushed at least `gap` away from zero.
fn off_zero(shape: &[usize], seed: u64, gap: f64) -> Result<Tensor<f64>> {
    Ok(uniform(shape, seed, -1.0, 1.0)?.map(|v| if v < 0.0 { v - gap } else { v + gap }))
}

/// Distinct values spaced well beyond the FD step, in random order.
fn separated(shape: &[usize], seed: u64) -> Result<Tensor<f64>> {
    let n: usize = shape.iter().product();
    let mut values: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - n as f64 * 0.025).collect();
    values.shuffle(&mut rng::stream(seed));
    Tensor::from_vec(shape, values)
}

struct Suite {
    seed: u64,
    corrupt: Option<String>,
    reports: Vec<OpReport>,
}

impl Suite {
    fn trial_seed(&self, op: &str, trial: usize) -> u64 {
        rng::derive_seed(self.seed, &format!("{op}/{trial}"))
    }

    /// Run one trial of `op`: `f` builds the op's output from the input vars,
    /// which is then reduced by a fixed random weighting.
    fn trial<F>(&mut self, op: &str, inputs: &[Tensor<f64>], seed: u64, f: F) -> Result<()>
    where
        F: for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>>,
    {
        let corrupt = self.corrupt.as_deref() == Some(op);
        let probe = {
            let tape = Tape::new();
            let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
            f(&vars)?.shape()
        };
        let weights = uniform(&probe, rng::splitmix64(seed), -1.0, 1.0)?;
        let errors = check_gradients(
            |vars| {
                let mut out = f(vars)?;
                if corrupt {
                    out = faulty_identity(out)?;
                }
                if out.value().is_scalar() {
                    Ok(out)
                } else {
                    ops::weighted_sum(out, &weights)
                }
            },
            inputs,
            EPS,
        )?;
        let worst = errors.into_iter().fold(0.0, f64::max);
        match self.reports.iter_mut().find(|r| r.op == op) {
            Some(r) => {
                r.trials += 1;
                r.max_error = r.max_error.max(worst);
            }
            None => self.reports.push(OpReport {
                op: op.to_string(),
                trials: 1,
                max_error: worst,
            }),
        }
        Ok(())
    }
}

/// Names of the ops covered by [`run_suite`], in report order.
pub const SUITE_OPS: &[&str] = &[
    "add",
    "mul",
    "add_broadcast",
    "mul_broadcast",
    "conv2d",
    "maxpool2d",
    "global_avg_pool",
    "batchnorm2d_train",
    "batchnorm2d_eval",
    "relu",
    "upsample_bilinear",
    "channel_split",
    "channel_concat",
    "channel_shuffle",
    "softmax_cross_entropy",
];

/// Finite-difference check of every network op over seeded random inputs.
///
/// `corrupt` names one op whose backward is sabotaged through
/// [`faulty_identity`]; pass `None` for a normal run.
pub fn run_suite(seed: u64, corrupt: Option<&str>) -> Result<Vec<OpReport>> {
    if let Some(op) = corrupt {
        if !SUITE_OPS.contains(&op) {
            return Err(Error::Config(format!("unknown op `{op}` for corruption")));
        }
    }
    let mut s = Suite {
        seed,
        corrupt: corrupt.map(str::to_string),
        reports: Vec::new(),
    };
    let shape = [2, 3, 4, 5];
    for t in 0..TRIALS {
        let sd = s.trial_seed("elementwise", t);
        let a = uniform(&shape, sd, -2.0, 2.0)?;
        let b = uniform(&shape, sd + 1, -2.0, 2.0)?;
        let bc = uniform(&[2, 3, 1, 1], sd + 2, -2.0, 2.0)?;
        s.trial("add", &[a.clone(), b.clone()], sd, |v| ops::add(v[0], v[1]))?;
        s.trial("mul", &[a.clone(), b], sd, |v| ops::mul(v[0], v[1]))?;
        s.trial("add_broadcast", &[a.clone(), bc.clone()], sd, |v| ops::add(v[0], v[1]))?;
        s.trial("mul_broadcast", &[a, bc], sd, |v| ops::mul(v[0], v[1]))?;
    }

    for t in 0..TRIALS {
        for stride in [1, 2] {
            for pad in [0, 1, 2] {
                for dil in [1, 2, 5] {
                    let sd = s.trial_seed(&format!("conv2d/{stride}/{pad}/{dil}"), t);
                    let p = ConvParams::new(2, 3, (3, 3))
                        .stride(stride, stride)
                        .padding(pad, pad)
                        .dilation(dil, dil)
                        .bias(true);
                    let x = uniform(&[1, 2, 12, 12], sd, -1.0, 1.0)?;
                    let w = uniform(&p.weight_shape(), sd + 1, -1.0, 1.0)?;
                    let b = uniform(&[3], sd + 2, -1.0, 1.0)?;
                    s.trial("conv2d", &[x, w, b], sd, move |v| ops::conv2d(v[0], v[1], Some(v[2]), p))?;
                }
            }
        }
        // Asymmetric 1-D kernels as used by the residual units.
        for (kernel, dil) in [((3, 1), (2, 1)), ((1, 3), (1, 3))] {
            let sd = s.trial_seed(&format!("conv2d/{kernel:?}"), t);
            let p = ConvParams::new(2, 2, kernel).same(dil.0, dil.1);
            let x = uniform(&[2, 2, 7, 7], sd, -1.0, 1.0)?;
            let w = uniform(&p.weight_shape(), sd + 1, -1.0, 1.0)?;
            s.trial("conv2d", &[x, w], sd, move |v| ops::conv2d(v[0], v[1], None, p))?;
        }
    }

    for t in 0..TRIALS {
        let sd = s.trial_seed("pool", t);
        s.trial("maxpool2d", &[separated(&[2, 2, 6, 5], sd)?], sd, |v| ops::maxpool2d(v[0]))?;
        s.trial("global_avg_pool", &[uniform(&[2, 3, 3, 4], sd, -1.0, 1.0)?], sd, |v| {
            ops::global_avg_pool(v[0])
        })?;
    }

    let cfg = BatchNormConfig::default();
    for t in 0..TRIALS {
        let sd = s.trial_seed("batchnorm2d", t);
        let x = uniform(&[3, 2, 3, 3], sd, -2.0, 2.0)?;
        let gamma = uniform(&[2], sd + 1, 0.5, 1.5)?;
        let beta = uniform(&[2], sd + 2, -0.5, 0.5)?;
        s.trial("batchnorm2d_train", &[x.clone(), gamma.clone(), beta.clone()], sd, move |v| {
            let mut stats = RunningStats::new(2)?;
            ops::batchnorm2d(v[0], v[1], v[2], &mut stats, BnMode::Train, cfg)
        })?;
        let running = RunningStats {
            mean: uniform(&[2], sd + 3, -0.5, 0.5)?,
            var: uniform(&[2], sd + 4, 0.5, 2.0)?,
        };
        s.trial("batchnorm2d_eval", &[x, gamma, beta], sd, move |v| {
            let mut stats = running.clone();
            ops::batchnorm2d(v[0], v[1], v[2], &mut stats, BnMode::Eval, cfg)
        })?;
    }

    for t in 0..TRIALS {
        let sd = s.trial_seed("relu", t);
        s.trial("relu", &[off_zero(&[2, 3, 3, 3], sd, 0.01)?], sd, |v| ops::relu(v[0]))?;
        let sd = s.trial_seed("upsample", t);
        let scale = 2 + t % 2;
        s.trial("upsample_bilinear", &[uniform(&[1, 2, 3, 4], sd, -1.0, 1.0)?], sd, move |v| {
            ops::upsample_bilinear(v[0], scale)
        })?;
    }

    for t in 0..TRIALS {
        let sd = s.trial_seed("channel", t);
        let x = uniform(&[2, 6, 2, 3], sd, -1.0, 1.0)?;
        let w2 = uniform(&[2, 3, 2, 3], sd + 5, -1.0, 1.0)?;
        s.trial("channel_split", std::slice::from_ref(&x), sd, move |v| {
            // Weight the halves differently so a swapped split would show.
            let (a, b) = ops::channel_split(v[0])?;
            let wb = v[0].tape().constant(w2.clone());
            ops::add(a, ops::mul(b, wb)?)
        })?;
        let y = uniform(&[2, 4, 2, 3], sd + 1, -1.0, 1.0)?;
        s.trial("channel_concat", &[x.clone(), y], sd, |v| ops::channel_concat(v[0], v[1]))?;
        let groups = [2, 3][t % 2];
        s.trial("channel_shuffle", &[x], sd, move |v| ops::channel_shuffle(v[0], groups))?;
    }

    for t in 0..TRIALS {
        let sd = s.trial_seed("softmax_cross_entropy", t);
        let logits = uniform(&[2, 4, 3, 3], sd, -3.0, 3.0)?;
        let mut r = rng::stream(sd + 1);
        let labels: Vec<u32> = (0..18)
            .map(|i| if i % 5 == 0 { IGNORE_INDEX } else { r.random_range(0..4) })
            .collect();
        let labels = LabelMap::new(2, 3, 3, labels)?;
        s.trial("softmax_cross_entropy", &[logits], sd, move |v| {
            ops::softmax_cross_entropy(v[0], &labels, IGNORE_INDEX)
        })?;
    }

    let order = |op: &str| SUITE_OPS.iter().position(|o| *o == op).unwrap_or(usize::MAX);
    s.reports.sort_by_key(|r| order(&r.op));
    Ok(s.reports)
}

/// One line per op, `PASS`/`FAIL` against [`TOLERANCE`].
pub fn format_report(reports: &[OpReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&format!(
            "{:<22} trials={:<3} max_rel_err={:.3e} {}\n",
            r.op,
            r.trials,
            r.max_error,
            if r.passed() { "PASS" } else { "FAIL" }
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let x = uniform(&[3, 4], 1, -5.0, 5.0).unwrap();
        let err = finite_difference_check(ops::sum, &x, EPS).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn relu_sum_away_from_kink() {
        let x = off_zero(&[10], 2, 0.01).unwrap();
        let err = finite_difference_check(|v| ops::sum(ops::relu(v)?), &x, EPS).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn conv_sum() {
        let x = uniform(&[1, 1, 5, 5], 3, -1.0, 1.0).unwrap();
        let w = uniform(&[1, 1, 3, 3], 4, -1.0, 1.0).unwrap();
        let p = ConvParams::new(1, 1, (3, 3));
        let errs = check_gradients(|v| ops::sum(ops::conv2d(v[0], v[1], None, p)?), &[x, w], EPS).unwrap();
        assert!(errs.iter().all(|&e| e < 1e-4), "{errs:?}");
    }

    #[test]
    fn non_finite_is_reported() {
        let x = Tensor::from_vec(&[2], vec![f64::NAN, 1.0]).unwrap();
        assert!(matches!(finite_difference_check(ops::sum, &x, EPS), Err(Error::Numeric(_))));
    }

    #[test]
    fn faulty_identity_is_caught() {
        let x = uniform(&[4], 9, -1.0, 1.0).unwrap();
        let err = finite_difference_check(|v| ops::sum(faulty_identity(v)?), &x, EPS).unwrap();
        assert!((err - 0.5).abs() < 1e-6, "{err}");
    }
}
