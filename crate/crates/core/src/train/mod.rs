//! Training loop, optimizer, and segmentation metrics.

mod metrics;
mod optim;

pub use metrics::{miou, update_confusion, ConfusionMatrix, Scores};
pub use optim::{poly_lr, sgd_step, OptimState, SgdConfig};

use rand::seq::SliceRandom;

use crate::autograd::Tape;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::labels::{LabelMap, IGNORE_INDEX};
use crate::model::Network;
use crate::ops::{self, BnMode};
use crate::rng;
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iters: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Evaluate on the training set every this many iterations; 0 disables
    /// periodic evaluation.
    pub eval_every: usize,
    /// Stop after an evaluation whose mIoU exceeds this value.
    pub stop_at_miou: Option<f64>,
    pub sgd: SgdConfig,
}

impl TrainConfig {
    pub fn new(iters: usize, seed: u64) -> Self {
        Self {
            iters,
            batch_size: 5,
            seed,
            eval_every: 100,
            stop_at_miou: None,
            sgd: SgdConfig::new(iters.max(1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub iters_run: usize,
    pub losses: Vec<f64>,
    /// `(iteration count, scores)` for every evaluation.
    pub evals: Vec<(usize, Scores)>,
}

/// Loss and parameter gradients of one batch, in store order.
pub fn loss_and_grads<T: Float>(
    net: &mut Network<T>,
    images: &Tensor<T>,
    labels: &LabelMap,
    mode: BnMode,
) -> Result<(f64, Vec<Tensor<T>>)> {
    let params = net.params().clone();
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let logits = net.forward(&bound, tape.constant(images.clone()), mode)?;
    let loss = ops::softmax_cross_entropy(logits, labels, IGNORE_INDEX)?;
    let value = loss.value().data()[0].as_f64();
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    let mut grads = tape.backward(loss)?;
    Ok((value, bound.vars().iter().map(|&v| grads.take(v)).collect()))
}

/// Confusion matrix of eval-mode predictions over the whole dataset.
pub fn evaluate(net: &mut Network<f32>, data: &Dataset, batch_size: usize) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(net.spec().num_classes())?;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (images, labels) = data.batch(chunk)?;
        cm.update(&net.predict(&images)?, &labels, IGNORE_INDEX)?;
    }
    Ok(cm)
}

/// Deterministic minibatch order: each epoch is a seeded permutation.
struct Batches {
    seed: u64,
    len: usize,
    epoch: usize,
    order: Vec<usize>,
    pos: usize,
}

impl Batches {
    fn new(seed: u64, len: usize) -> Self {
        Self {
            seed,
            len,
            epoch: 0,
            order: Vec::new(),
            pos: len,
        }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.len {
                self.order = (0..self.len).collect();
                self.order
                    .shuffle(&mut rng::named_stream(self.seed, &format!("batches/{}", self.epoch)));
                self.epoch += 1;
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Train `net` in place. Each iteration logs `iter=<n> lr=<lr> loss=<loss>`
/// and each evaluation `eval iter=<n> miou=<m> pixacc=<a>` through `log`.
pub fn train(
    net: &mut Network<f32>,
    data: &Dataset,
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&str),
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if cfg.iters > cfg.sgd.max_iter {
        return Err(Error::Config(format!(
            "iters {} exceeds the schedule length {}",
            cfg.iters, cfg.sgd.max_iter
        )));
    }
    let mut state = OptimState::new(net.params(), cfg.sgd);
    let mut batches = Batches::new(cfg.seed, data.len());
    let mut report = TrainReport {
        iters_run: 0,
        losses: Vec::new(),
        evals: Vec::new(),
    };
    for iter in 0..cfg.iters {
        let (images, labels) = data.batch(&batches.next(cfg.batch_size))?;
        let (loss, grads) = loss_and_grads(net, &images, &labels, BnMode::Train)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iter });
        }
        let lr = sgd_step(net.params_mut(), &grads, &mut state, iter)?;
        log(&format!("iter={iter} lr={lr:.6e} loss={loss:.6}"));
        report.losses.push(loss);
        report.iters_run = iter + 1;

        let done = iter + 1 == cfg.iters;
        if done || (cfg.eval_every > 0 && (iter + 1) % cfg.eval_every == 0) {
            let scores = evaluate(net, data, cfg.batch_size)?.scores()?;
            log(&format!(
                "eval iter={} miou={:.6} pixacc={:.6}",
                iter + 1,
                scores.miou,
                scores.pixel_accuracy
            ));
            let hit = cfg.stop_at_miou.is_some_and(|t| scores.miou > t);
            report.evals.push((iter + 1, scores));
            if hit {
                break;
            }
        }
    }
    Ok(report)
}
