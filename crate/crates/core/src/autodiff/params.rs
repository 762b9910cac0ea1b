use std::collections::BTreeMap;

use super::tensor::{Scalar, Tensor};
use super::AutodiffError;
use crate::rng::{normal, Rng};

/// Handle to an entry of a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Accumulated gradient; `None` until a backward pass reaches it.
    pub grad: Option<Vec<T>>,
    /// Buffers (batch-norm running statistics) are saved but never trained.
    pub trainable: bool,
}

/// Named parameters and buffers of one or more models, addressed by dotted
/// names such as `ssp.block0.conv.weight`.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<Parameter<T>>,
    by_name: BTreeMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new(), by_name: BTreeMap::new() }
    }

    fn insert(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> ParamId {
        if let Some(&id) = self.by_name.get(name) {
            let e = &mut self.entries[id.0];
            e.value = value;
            e.trainable = trainable;
            e.grad = None;
            return id;
        }
        let id = ParamId(self.entries.len());
        self.entries.push(Parameter { name: name.to_string(), value, grad: None, trainable });
        self.by_name.insert(name.to_string(), id);
        id
    }

    /// Registers (or replaces) a trainable parameter.
    pub fn add(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        self.insert(name, value, true)
    }

    /// Registers (or replaces) a non-trainable buffer.
    pub fn add_buffer(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        self.insert(name, value, false)
    }

    /// Trainable parameter drawn from `N(0, std^2)`.
    pub fn add_normal(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut Rng) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::cst(normal(rng) * std)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data).expect("shape matches"))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.entries.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Ids of trainable entries whose name starts with `prefix`.
    pub fn trainable_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.trainable && p.name.starts_with(prefix)).map(|(id, _)| id).collect()
    }

    /// Adds gradients produced by a backward pass into the accumulators.
    pub fn accumulate(&mut self, grads: &ParamGrads<T>) {
        for (id, g) in &grads.0 {
            let entry = &mut self.entries[id.0];
            match &mut entry.grad {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
                None => entry.grad = Some(g.clone()),
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad = None;
        }
    }

    /// Overwrites buffer values collected during a training forward pass.
    pub fn apply_updates(&mut self, updates: Vec<(ParamId, Vec<T>)>) {
        for (id, v) in updates {
            self.entries[id.0].value.data_mut().copy_from_slice(&v);
        }
    }

    /// Replaces the value of an existing entry, checking the shape.
    pub fn set_value(&mut self, name: &str, value: Tensor<T>) -> Result<(), AutodiffError> {
        let id = self.id(name).ok_or_else(|| AutodiffError::UnknownParameter(name.to_string()))?;
        let e = &mut self.entries[id.0];
        if e.value.shape() != value.shape() {
            return Err(AutodiffError::ShapeMismatch(format!(
                "{name}: stored {:?}, given {:?}",
                e.value.shape(),
                value.shape()
            )));
        }
        e.value = value;
        Ok(())
    }

    /// Copy with every value converted to another element type.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|p| Parameter { name: p.name.clone(), value: p.value.cast(), grad: None, trainable: p.trainable })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Per-parameter gradients returned by a backward pass.
#[derive(Clone, Debug, Default)]
pub struct ParamGrads<T>(pub Vec<(ParamId, Vec<T>)>);

impl<T: Scalar> ParamGrads<T> {
    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.0.iter().find(|(p, _)| *p == id).map(|(_, g)| g.as_slice())
    }
}
