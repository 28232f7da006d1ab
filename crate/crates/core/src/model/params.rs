use std::collections::HashMap;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::ops::{self, BatchNormConfig, BnMode, RunningStats};
use crate::rng;
use crate::tensor::{Fill, Float, Tensor};

use super::layer::{ParamDecl, ParamKind};

/// Trainable tensors in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    decls: Vec<ParamDecl>,
    values: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

fn index_of(names: impl Iterator<Item = String>) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::new();
    for (i, name) in names.enumerate() {
        if index.insert(name.clone(), i).is_some() {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
    }
    Ok(index)
}

impl<T: Float> ParamStore<T> {
    /// Convolution weights: zero-mean normal with std `sqrt(2 / fan_in)`;
    /// biases and BN shifts zero; BN scales one. Each tensor draws from its
    /// own stream derived from `(seed, name)`.
    pub fn init(decls: Vec<ParamDecl>, seed: u64) -> Result<Self> {
        let values = decls
            .iter()
            .map(|d| match d.kind {
                ParamKind::ConvWeight => Tensor::create(
                    &d.shape,
                    Fill::Normal {
                        seed: rng::derive_seed(seed, &d.name),
                        mean: 0.0,
                        std: (2.0 / d.fan_in as f64).sqrt(),
                    },
                ),
                ParamKind::ConvBias | ParamKind::BnBeta => Tensor::zeros(&d.shape),
                ParamKind::BnGamma => Tensor::ones(&d.shape),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(decls, values)
    }

    pub fn from_parts(decls: Vec<ParamDecl>, values: Vec<Tensor<T>>) -> Result<Self> {
        if decls.len() != values.len() {
            return Err(Error::Config("parameter declarations and values differ in length".into()));
        }
        for (d, v) in decls.iter().zip(&values) {
            if d.shape != v.shape() {
                return Err(Error::mismatch("parameter value", v.shape(), &d.shape));
            }
        }
        let index = index_of(decls.iter().map(|d| d.name.clone()))?;
        Ok(Self { decls, values, index })
    }

    pub fn len(&self) -> usize {
        self.decls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decls.is_empty()
    }

    pub fn decls(&self) -> &[ParamDecl] {
        &self.decls
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamDecl, &Tensor<T>)> {
        self.decls.iter().zip(&self.values)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.values[i])
    }

    /// Total number of trainable scalars.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Record every parameter as a tracked leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound {
            vars: self.values.iter().map(|v| tape.leaf(v.clone())).collect(),
            index: self.index.clone(),
        }
    }

    /// Record every parameter as an untracked constant, for inference.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound {
            vars: self.values.iter().map(|v| tape.constant(v.clone())).collect(),
            index: self.index.clone(),
        }
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            decls: self.decls.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }
}

/// Parameters recorded on one tape, in store order.
pub struct Bound<'t, T> {
    vars: Vec<Var<'t, T>>,
    index: HashMap<String, usize>,
}

impl<'t, T: Float> Bound<'t, T> {
    pub fn get(&self, name: &str) -> Option<Var<'t, T>> {
        self.index.get(name).map(|&i| self.vars[i])
    }

    pub fn vars(&self) -> &[Var<'t, T>] {
        &self.vars
    }
}

/// Batch-norm running statistics, keyed by layer name.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsStore<T> {
    entries: Vec<(String, RunningStats<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Float> StatsStore<T> {
    pub fn new(layers: &[(String, usize)]) -> Result<Self> {
        let entries = layers
            .iter()
            .map(|(name, c)| Ok((name.clone(), RunningStats::new(*c)?)))
            .collect::<Result<Vec<_>>>()?;
        let index = index_of(entries.iter().map(|(n, _)| n.clone()))?;
        Ok(Self { entries, index })
    }

    pub fn get(&self, name: &str) -> Option<&RunningStats<T>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut RunningStats<T>> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &RunningStats<T>)> {
        self.entries.iter().map(|(n, s)| (n.as_str(), s))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut RunningStats<T>)> {
        self.entries.iter_mut().map(|(n, s)| (n.as_str(), s))
    }

    pub fn cast<U: Float>(&self) -> StatsStore<U> {
        StatsStore {
            entries: self
                .entries
                .iter()
                .map(|(n, s)| {
                    (
                        n.clone(),
                        RunningStats {
                            mean: s.mean.cast(),
                            var: s.var.cast(),
                        },
                    )
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}

pub(crate) struct ForwardCtx<'a, 't, T> {
    pub bound: &'a Bound<'t, T>,
    pub stats: &'a mut StatsStore<T>,
    pub mode: BnMode,
    pub bn: BatchNormConfig,
}

impl<'t, T: Float> ForwardCtx<'_, 't, T> {
    pub fn param(&self, name: &str) -> Result<Var<'t, T>> {
        self.bound
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn batchnorm(&mut self, name: &str, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let gamma = self.param(&format!("{name}.gamma"))?;
        let beta = self.param(&format!("{name}.beta"))?;
        let stats = self
            .stats
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("missing running statistics for `{name}`")))?;
        ops::batchnorm2d(x, gamma, beta, stats, self.mode, self.bn)
    }
}
