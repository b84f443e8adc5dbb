use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tape::ParamGrads;
use super::{NumError, Tensor};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named learnable tensor with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub requires_grad: bool,
    pub grad: Option<Tensor>,
}

/// Ordered collection of parameters. Ids are positions, so two stores built
/// by the same sequence of `add` calls share ids.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter name {name}");
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            requires_grad: true,
            grad: None,
        });
        id
    }

    /// Adds a parameter drawn from `N(0, std^2)`.
    pub fn add_normal(&mut self, name: impl Into<String>, shape: &[usize], std: f64, rng: &mut impl Rng) -> ParamId {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data).expect("shape"))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Adds `grads` into the gradient buffers (creating them on first use).
    pub fn accumulate(&mut self, grads: &ParamGrads) -> Result<(), NumError> {
        for (id, g) in grads.iter() {
            let p = self.params.get_mut(id.0).ok_or(NumError::UnknownParam(id.0))?;
            if !p.requires_grad {
                continue;
            }
            if g.numel() != p.value.numel() {
                return Err(NumError::ShapeMismatch {
                    op: "accumulate",
                    left: p.value.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            match &mut p.grad {
                Some(buf) => {
                    for (b, v) in buf.data_mut().iter_mut().zip(g.data()) {
                        *b += v;
                    }
                }
                None => p.grad = Some(g.clone()),
            }
        }
        Ok(())
    }

    /// Resets every gradient buffer to zero without dropping it.
    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            if let Some(g) = &mut p.grad {
                g.data_mut().fill(0.0);
            }
        }
    }

    /// Copy of the first `n` parameters with gradients disabled.
    pub fn frozen_prefix(&self, n: usize) -> ParamStore {
        let mut out = ParamStore::new();
        for p in &self.params[..n] {
            out.add(p.name.clone(), p.value.clone());
        }
        out.freeze();
        out
    }

    pub fn freeze(&mut self) {
        for p in &mut self.params {
            p.requires_grad = false;
            p.grad = None;
        }
    }

    /// True when no parameter holds a nonzero gradient.
    pub fn grads_absent_or_zero(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.grad.as_ref().is_none_or(|g| g.data().iter().all(|&v| v == 0.0)))
    }
}
