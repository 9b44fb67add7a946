//! Named parameter storage and per-step binding of parameters onto a tape.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Parameters in insertion order, addressable by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::contract(format!("parameter `{name}` defined twice")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, value));
        Ok(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.position(name)?;
        Some(&mut self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|(_, t)| t.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }
}

/// Deterministic parameter initialiser.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn normal(&mut self, shape: &[usize], std: f64) -> Tensor {
        let d = Normal::new(0.0, std).expect("positive std");
        Tensor::from_fn(shape, |_| d.sample(&mut self.rng))
    }
}

/// Binds parameters to tape leaves on first use within one forward pass.
pub struct Binder<'a> {
    store: &'a ParamStore,
    vars: Vec<Option<Var>>,
    trainable: bool,
}

impl<'a> Binder<'a> {
    /// `trainable = false` binds parameters as constants.
    pub fn new(store: &'a ParamStore, trainable: bool) -> Self {
        Self {
            store,
            vars: vec![None; store.len()],
            trainable,
        }
    }

    /// Uses `var` for parameter `name` instead of a fresh leaf.
    pub fn bind(&mut self, name: &str, var: Var) -> Result<()> {
        let i = self
            .store
            .position(name)
            .ok_or_else(|| TensorError::contract(format!("unknown parameter `{name}`")))?;
        self.vars[i] = Some(var);
        Ok(())
    }

    pub fn get(&mut self, tape: &mut Tape, name: &str) -> Result<Var> {
        let i = self
            .store
            .position(name)
            .ok_or_else(|| TensorError::contract(format!("unknown parameter `{name}`")))?;
        if let Some(v) = self.vars[i] {
            return Ok(v);
        }
        let value = self.store.entries[i].1.clone();
        let v = if self.trainable {
            tape.param(value)?
        } else {
            tape.constant(value)?
        };
        self.vars[i] = Some(v);
        Ok(v)
    }

    /// Gradient for every parameter in store order; zeros for parameters
    /// that were never used.
    pub fn gradients(&self, tape: &Tape) -> Vec<Tensor> {
        self.store
            .entries
            .iter()
            .zip(&self.vars)
            .map(|((_, t), v)| {
                v.and_then(|v| tape.grad(v).cloned())
                    .unwrap_or_else(|| Tensor::zeros(t.shape()))
            })
            .collect()
    }
}
