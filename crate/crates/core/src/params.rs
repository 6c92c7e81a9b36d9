//! Named parameter storage and the small layer types built on it.

use indexmap::IndexMap;
use rand::Rng;
use thiserror::Error;

use crate::tensor::{Graph, Real, Result as TensorResult, Tensor, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("parameter `{0}` is registered twice")]
    Duplicate(String),
    #[error("parameter `{0}` is missing")]
    Missing(String),
    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("unexpected parameter `{0}`")]
    Unexpected(String),
    #[error("parameter `{0}` holds a non-finite value")]
    NonFinite(String),
}

/// Ordered map from parameter name to tensor. Insertion order is the
/// canonical order for checkpoints, optimizer state and gradient reduction.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T: Real = f32> {
    entries: IndexMap<String, Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId, ParamError> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(ParamError::Duplicate(name));
        }
        let (i, _) = self.entries.insert_full(name, value);
        Ok(ParamId(i))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name)
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.entries.get_index_of(name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.entries.get_index(id.0).expect("valid id").0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.entries.values_mut()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self.entries.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Overwrites every value from `other`, which must hold exactly the same
    /// names with the same shapes.
    pub fn assign_from(&mut self, other: &ParamStore<T>) -> Result<(), ParamError> {
        for name in other.entries.keys() {
            if !self.entries.contains_key(name) {
                return Err(ParamError::Unexpected(name.clone()));
            }
        }
        for (name, slot) in self.entries.iter_mut() {
            let src = other
                .entries
                .get(name)
                .ok_or_else(|| ParamError::Missing(name.clone()))?;
            if src.shape() != slot.shape() {
                return Err(ParamError::Shape {
                    name: name.clone(),
                    expected: slot.shape().to_vec(),
                    found: src.shape().to_vec(),
                });
            }
            if !src.all_finite() {
                return Err(ParamError::NonFinite(name.clone()));
            }
            *slot = src.clone();
        }
        Ok(())
    }

    /// Records every parameter as a differentiable leaf of `g`.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        Bound(self.entries.values().map(|t| g.leaf(t.clone())).collect())
    }
}

/// Graph variables for every parameter of a store, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    /// Wraps variables already recorded for each parameter, in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

/// Draws `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn fan_in_uniform<T: Real>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("positive extents")
}

/// Square-kernel convolution layer: weight `[out,in,k,k]`, bias `[out]`.
#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    /// Registers `{prefix}.weight` and `{prefix}.bias`; same-padding for odd `k`.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        inputs: usize,
        outputs: usize,
        k: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, ParamError> {
        let weight = store.insert(
            format!("{prefix}.weight"),
            fan_in_uniform(&[outputs, inputs, k, k], inputs * k * k, rng),
        )?;
        let bias = store.insert(format!("{prefix}.bias"), Tensor::zeros([outputs]))?;
        Ok(Self {
            weight,
            bias,
            stride: 1,
            pad: k / 2,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> TensorResult<Var> {
        g.conv2d(x, p.var(self.weight), Some(p.var(self.bias)), self.stride, self.pad)
    }
}

/// Stride-2 transposed convolution with a 4×4 kernel, doubling both extents.
#[derive(Clone, Copy, Debug)]
pub struct Deconv {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Deconv {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, ParamError> {
        // each output pixel receives 4 taps per input channel at stride 2
        let weight = store.insert(
            format!("{prefix}.weight"),
            fan_in_uniform(&[inputs, outputs, 4, 4], inputs * 4, rng),
        )?;
        let bias = store.insert(format!("{prefix}.bias"), Tensor::zeros([outputs]))?;
        Ok(Self { weight, bias })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> TensorResult<Var> {
        g.conv_transpose2d(x, p.var(self.weight), Some(p.var(self.bias)), 2, 1)
    }
}

/// Bias-free square matrix applied on the right: `x × W`.
pub fn linear<T: Real>(
    store: &mut ParamStore<T>,
    name: &str,
    size: usize,
    rng: &mut impl Rng,
) -> Result<ParamId, ParamError> {
    store.insert(name, fan_in_uniform(&[size, size], size, rng))
}
