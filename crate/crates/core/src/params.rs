//! Named parameter storage shared by the model, probes and the optimizer.

use alloc::string::String;
use alloc::vec::Vec;

use crate::tensor::{Mat, Scalar};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Parameters in declaration order. The order is the checkpoint order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<F> {
    names: Vec<String>,
    tensors: Vec<Mat<F>>,
    decay: Vec<bool>,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            decay: Vec::new(),
        }
    }

    /// Registers a tensor. `decay` marks it for decoupled weight decay.
    pub fn push(&mut self, name: impl Into<String>, value: Mat<F>, decay: bool) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        self.decay.push(decay);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Mat<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat<F> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn decays(&self, id: ParamId) -> bool {
        self.decay[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat<F>)> {
        self.tensors
            .iter()
            .zip(&self.names)
            .enumerate()
            .map(|(i, (t, n))| (ParamId(i), n.as_str(), t))
    }

    /// Total number of scalar learnables.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.rows() * t.cols()).sum()
    }

    /// Flat index `(tensor, offset)` for the `k`-th scalar in declaration order.
    pub fn locate(&self, mut k: usize) -> Option<(ParamId, usize)> {
        for (i, t) in self.tensors.iter().enumerate() {
            let n = t.rows() * t.cols();
            if k < n {
                return Some((ParamId(i), k));
            }
            k -= n;
        }
        None
    }
}

/// Per-parameter gradients aligned with a [`ParamStore`]. `None` means the
/// parameter did not take part in the recorded computation.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<F> {
    slots: Vec<Option<Mat<F>>>,
}

impl<F: Scalar> Grads<F> {
    pub fn empty(n: usize) -> Self {
        Self {
            slots: (0..n).map(|_| None).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat<F>> {
        self.slots.get(id.0).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Mat<F>) {
        match &mut self.slots[id.0] {
            Some(acc) => acc.add_assign(g),
            slot => *slot = Some(g.clone()),
        }
    }

    /// Adds every slot of `other` into `self`.
    pub fn merge(&mut self, other: &Grads<F>) {
        for (i, g) in other.slots.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, s: F) {
        for g in self.slots.iter_mut().flatten() {
            g.scale_assign(s);
        }
    }

    pub fn global_norm(&self) -> F {
        self.slots
            .iter()
            .flatten()
            .map(Mat::sq_norm)
            .fold(F::zero(), |a, b| a + b)
            .sqrt()
    }

    /// Flat gradient value for scalar `offset` of parameter `id` (0 if absent).
    pub fn value(&self, id: ParamId, offset: usize) -> F {
        self.get(id).map_or(F::zero(), |g| g.as_slice()[offset])
    }

    pub fn slot_mut(&mut self, id: ParamId) -> &mut Option<Mat<F>> {
        &mut self.slots[id.0]
    }
}
