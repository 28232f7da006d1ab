use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::{Float, Tensor};

/// Momentum SGD with a polynomial learning-rate decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub base_lr: f64,
    pub momentum: f64,
    /// Applied to convolution weights only.
    pub weight_decay: f64,
    pub power: f64,
    pub max_iter: usize,
}

impl SgdConfig {
    pub fn new(max_iter: usize) -> Self {
        Self {
            base_lr: 5e-4,
            momentum: 0.9,
            weight_decay: 1e-4,
            power: 0.9,
            max_iter,
        }
    }

    pub fn lr(&self, iter: usize) -> Result<f64> {
        poly_lr(self.base_lr, self.power, iter, self.max_iter)
    }
}

/// `base · (1 − iter/max_iter)^power`.
pub fn poly_lr(base: f64, power: f64, iter: usize, max_iter: usize) -> Result<f64> {
    if max_iter == 0 || iter > max_iter {
        return Err(Error::Config(format!(
            "learning-rate schedule needs 0 <= iter <= max_iter with max_iter > 0, got iter {iter}, max_iter {max_iter}"
        )));
    }
    Ok(base * (1.0 - iter as f64 / max_iter as f64).powf(power))
}

/// Velocity buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<T> {
    pub config: SgdConfig,
    velocity: Vec<Tensor<T>>,
}

impl<T: Float> OptimState<T> {
    pub fn new(params: &ParamStore<T>, config: SgdConfig) -> Self {
        Self {
            config,
            velocity: params.values().iter().map(Tensor::zeros_like).collect(),
        }
    }

    pub fn velocity(&self) -> &[Tensor<T>] {
        &self.velocity
    }
}

/// One update at step `iter`: `v ← m·v + (g + wd·p)`, `p ← p − lr·v`.
/// Gradients are validated before any parameter changes. Returns the
/// learning rate used.
pub fn sgd_step<T: Float>(
    params: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    state: &mut OptimState<T>,
    iter: usize,
) -> Result<f64> {
    if grads.len() != params.len() || state.velocity.len() != params.len() {
        return Err(Error::Config(format!(
            "{} parameters, {} gradients, {} velocity buffers",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    for ((decl, g), v) in params.decls().iter().zip(grads).zip(&state.velocity) {
        if g.shape() != decl.shape.as_slice() || v.shape() != g.shape() {
            return Err(Error::mismatch("sgd gradient", g.shape(), &decl.shape));
        }
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient(decl.name.clone()));
        }
    }
    let cfg = state.config;
    let lr = cfg.lr(iter)?;
    let (lr_t, m) = (T::from_f64_lossy(lr), T::from_f64_lossy(cfg.momentum));
    let kinds: Vec<bool> = params.decls().iter().map(|d| d.kind.decays()).collect();
    for (((p, g), v), decays) in params.values_mut().iter_mut().zip(grads).zip(&mut state.velocity).zip(kinds) {
        let wd = T::from_f64_lossy(if decays { cfg.weight_decay } else { 0.0 });
        for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = m * *vi + (gi + wd * *pi);
            *pi -= lr_t * *vi;
        }
    }
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ParamDecl, ParamKind};

    fn store(kind: ParamKind, value: f64) -> ParamStore<f64> {
        let decl = ParamDecl {
            name: "p".into(),
            shape: vec![1],
            kind,
            fan_in: 1,
        };
        ParamStore::from_parts(vec![decl], vec![Tensor::scalar(value)]).unwrap()
    }

    #[test]
    fn schedule_values() {
        let c = SgdConfig::new(2000);
        assert_eq!(c.lr(0).unwrap(), 5e-4);
        assert_eq!(c.lr(2000).unwrap(), 0.0);
        assert!((c.lr(1000).unwrap() - 2.6794e-4).abs() < 5e-9);
        assert!(c.lr(2001).is_err());
        assert!((0..2000).all(|i| c.lr(i + 1).unwrap() < c.lr(i).unwrap()));
    }

    #[test]
    fn decay_only_step() {
        let mut p = store(ParamKind::ConvWeight, 1.0);
        let mut st = OptimState::new(&p, SgdConfig::new(10));
        let lr = sgd_step(&mut p, &[Tensor::scalar(0.0)], &mut st, 0).unwrap();
        assert_eq!(st.velocity()[0].data(), &[1e-4]);
        assert_eq!(p.values()[0].data(), &[1.0 - lr * 1e-4]);

        let mut b = store(ParamKind::BnGamma, 1.0);
        let mut st = OptimState::new(&b, SgdConfig::new(10));
        sgd_step(&mut b, &[Tensor::scalar(0.0)], &mut st, 0).unwrap();
        assert_eq!(b.values()[0].data(), &[1.0]);
    }

    #[test]
    fn vanilla_and_momentum_recurrence() {
        let vanilla = SgdConfig {
            base_lr: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
            ..SgdConfig::new(1_000_000)
        };
        let mut p = store(ParamKind::ConvWeight, 1.0);
        let mut st = OptimState::new(&p, vanilla);
        sgd_step(&mut p, &[Tensor::scalar(2.0)], &mut st, 0).unwrap();
        assert!((p.values()[0].data()[0] - 0.8).abs() < 1e-15);

        let cfg = SgdConfig {
            weight_decay: 0.0,
            power: 0.0,
            ..SgdConfig::new(10)
        };
        let g = 3.0;
        let mut p = store(ParamKind::ConvWeight, 0.0);
        let mut st = OptimState::new(&p, cfg);
        sgd_step(&mut p, &[Tensor::scalar(g)], &mut st, 0).unwrap();
        assert_eq!(st.velocity()[0].data(), &[g]);
        sgd_step(&mut p, &[Tensor::scalar(g)], &mut st, 1).unwrap();
        assert!((st.velocity()[0].data()[0] - 1.9 * g).abs() < 1e-12);
        assert!((p.values()[0].data()[0] + 5e-4 * g * 2.9).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = store(ParamKind::ConvWeight, 1.0);
        let mut st = OptimState::new(&p, SgdConfig::new(10));
        let err = sgd_step(&mut p, &[Tensor::scalar(f64::NAN)], &mut st, 0).unwrap_err();
        assert!(matches!(&err, Error::NonFiniteGradient(n) if n == "p"));
        assert_eq!(p.values()[0].data(), &[1.0]);
    }
}
