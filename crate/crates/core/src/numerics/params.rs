use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    name: String,
    value: Arc<Tensor>,
    grad: Vec<f64>,
}

impl Param {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }
}

/// Owner of every learnable tensor of a model, in registration order.
///
/// Registration order is the enumeration order used by checkpoints and the
/// optimizer, so it must not depend on anything but the model configuration.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = vec![0.0; value.numel()];
        self.params.push(Param {
            name: name.into(),
            value: Arc::new(value),
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub(crate) fn shared_value(&self, id: ParamId) -> Arc<Tensor> {
        Arc::clone(&self.params[id.0].value)
    }

    /// Mutable access to a parameter's values. Clones the buffer if a tape still holds it.
    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        Arc::make_mut(&mut self.params[id.0].value).data_mut()
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].grad
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Total number of scalar learnables.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// All parameter values concatenated in enumeration order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.scalar_count());
        for p in &self.params {
            out.extend_from_slice(p.value.data());
        }
        out
    }

    pub fn flatten_grads(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.scalar_count());
        for p in &self.params {
            out.extend_from_slice(&p.grad);
        }
        out
    }

    /// Inverse of [`ParamStore::flatten`].
    pub fn load_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.scalar_count() {
            return Err(Error::shape(
                "load_flat",
                format!("{} scalars", self.scalar_count()),
                format!("{} scalars", values.len()),
            ));
        }
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.value.numel();
            Arc::make_mut(&mut p.value)
                .data_mut()
                .copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| (*p.value).clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Tensor]) -> Result<()> {
        if snapshot.len() != self.params.len() {
            return Err(Error::Usage(format!(
                "snapshot holds {} tensors, store has {}",
                snapshot.len(),
                self.params.len()
            )));
        }
        for (p, t) in self.params.iter_mut().zip(snapshot) {
            if p.value.shape() != t.shape() {
                return Err(Error::shape("restore", format!("{:?}", p.value.shape()), format!("{:?}", t.shape())));
            }
            p.value = Arc::new(t.clone());
        }
        Ok(())
    }
}

/// Name and shape of one learnable tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Registers parameters either into a [`ParamStore`] or, in layout mode, only
/// records their names and shapes (no values are drawn or allocated).
pub struct ParamBuilder {
    init: Option<crate::numerics::init::Initializer>,
    store: ParamStore,
    layout: Vec<ParamSpec>,
}

impl ParamBuilder {
    pub fn new(seed: u64) -> Self {
        ParamBuilder {
            init: Some(crate::numerics::init::Initializer::new(seed)),
            store: ParamStore::new(),
            layout: Vec::new(),
        }
    }

    pub fn layout_only() -> Self {
        ParamBuilder {
            init: None,
            store: ParamStore::new(),
            layout: Vec::new(),
        }
    }

    pub fn allocates(&self) -> bool {
        self.init.is_some()
    }

    fn record(&mut self, name: String, shape: &[usize], value: impl FnOnce(&mut crate::numerics::init::Initializer) -> Tensor) -> ParamId {
        let id = ParamId(self.layout.len());
        self.layout.push(ParamSpec {
            name: name.clone(),
            shape: shape.to_vec(),
        });
        if let Some(init) = self.init.as_mut() {
            let t = value(init);
            debug_assert_eq!(t.shape(), shape);
            let stored = self.store.register(name, t);
            debug_assert_eq!(stored, id);
        }
        id
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn fan_in(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize) -> ParamId {
        self.record(name.into(), shape, |init| init.fan_in_uniform(shape, fan_in))
    }

    pub fn constant(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> ParamId {
        self.record(name.into(), shape, |_| Tensor::full(shape, value))
    }

    /// Values computed by `make` from the shared initializer.
    pub fn with(&mut self, name: impl Into<String>, shape: &[usize], make: impl FnOnce(&mut crate::numerics::init::Initializer) -> Tensor) -> ParamId {
        self.record(name.into(), shape, make)
    }

    pub fn layout(&self) -> &[ParamSpec] {
        &self.layout
    }

    pub fn into_layout(self) -> Vec<ParamSpec> {
        self.layout
    }

    pub fn into_store(self) -> ParamStore {
        self.store
    }
}
