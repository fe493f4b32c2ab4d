use serde::{Deserialize, Serialize};

use super::mask::Mask;
use crate::error::{MastError, Result};
use crate::numerics::{Gradients, Matrix, NodeId, ParamId, Tape};

/// A weight matrix gated by a same-shape binary mask.
///
/// Outside an evolution step the weights are exactly zero wherever the mask
/// is off, so the stored matrix is the effective (masked) weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseSlot {
    pub slot_id: ParamId,
    pub name: String,
    pub weights: Matrix,
    pub mask: Mask,
}

impl SparseSlot {
    pub fn apply_mask(&mut self) {
        self.mask.apply(&mut self.weights);
    }

    pub fn nonzero_weights(&self) -> usize {
        self.weights.as_slice().iter().filter(|v| **v != 0.0).count()
    }
}

/// A parameter that is never masked (biases, GRU gate biases).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseParam {
    pub id: ParamId,
    pub name: String,
    pub value: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Param {
    Sparse(SparseSlot),
    Dense(DenseParam),
}

impl Param {
    pub fn id(&self) -> ParamId {
        match self {
            Param::Sparse(s) => s.slot_id,
            Param::Dense(d) => d.id,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Param::Sparse(s) => &s.name,
            Param::Dense(d) => &d.name,
        }
    }

    pub fn value(&self) -> &Matrix {
        match self {
            Param::Sparse(s) => &s.weights,
            Param::Dense(d) => &d.value,
        }
    }

    pub fn value_mut(&mut self) -> &mut Matrix {
        match self {
            Param::Sparse(s) => &mut s.weights,
            Param::Dense(d) => &mut d.value,
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, Param::Sparse(_))
    }
}

/// Owns every parameter of one network family.
///
/// Ids are `base + position`, so stores built with different bases never
/// share ids and gradients from one family cannot be mistaken for another's.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    base: u32,
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new(base: u32) -> Self {
        ParamStore {
            base,
            params: Vec::new(),
        }
    }

    pub fn base(&self) -> u32 {
        self.base
    }

    fn next_id(&self) -> ParamId {
        ParamId(self.base + self.params.len() as u32)
    }

    /// Registers a masked weight matrix with an all-ones mask.
    pub fn add_sparse(&mut self, name: impl Into<String>, weights: Matrix) -> ParamId {
        let id = self.next_id();
        let (r, c) = weights.shape();
        self.params.push(Param::Sparse(SparseSlot {
            slot_id: id,
            name: name.into(),
            weights,
            mask: Mask::ones(r, c),
        }));
        id
    }

    pub fn add_dense(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let id = self.next_id();
        self.params.push(Param::Dense(DenseParam {
            id,
            name: name.into(),
            value,
        }));
        id
    }

    fn index(&self, id: ParamId) -> Option<usize> {
        let i = id.0.checked_sub(self.base)? as usize;
        (i < self.params.len()).then_some(i)
    }

    pub fn contains(&self, id: ParamId) -> bool {
        self.index(id).is_some()
    }

    pub fn get(&self, id: ParamId) -> Option<&Param> {
        self.index(id).map(|i| &self.params[i])
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        self.get(id)
            .unwrap_or_else(|| panic!("param {} not in store", id.0))
            .value()
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        let i = self
            .index(id)
            .unwrap_or_else(|| panic!("param {} not in store", id.0));
        self.params[i].value_mut()
    }

    pub fn slot(&self, id: ParamId) -> Option<&SparseSlot> {
        match self.get(id)? {
            Param::Sparse(s) => Some(s),
            Param::Dense(_) => None,
        }
    }

    pub fn slot_mut(&mut self, id: ParamId) -> Option<&mut SparseSlot> {
        let i = self.index(id)?;
        match &mut self.params[i] {
            Param::Sparse(s) => Some(s),
            Param::Dense(_) => None,
        }
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.params.iter().map(Param::id)
    }

    pub fn slots(&self) -> impl Iterator<Item = &SparseSlot> {
        self.params.iter().filter_map(|p| match p {
            Param::Sparse(s) => Some(s),
            Param::Dense(_) => None,
        })
    }

    pub fn slots_mut(&mut self) -> impl Iterator<Item = &mut SparseSlot> {
        self.params.iter_mut().filter_map(|p| match p {
            Param::Sparse(s) => Some(s),
            Param::Dense(_) => None,
        })
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Matrix)> {
        self.params.iter_mut().map(|p| (p.id(), p.value_mut()))
    }

    pub fn apply_masks(&mut self) {
        for s in self.slots_mut() {
            s.apply_mask();
        }
    }

    /// Puts a parameter on the tape, trainable or as a constant.
    pub fn bind(&self, tape: &mut Tape, id: ParamId, trainable: bool) -> NodeId {
        let v = self.value(id);
        if trainable {
            tape.param(id, v)
        } else {
            tape.input(v.clone())
        }
    }

    pub fn total_len(&self) -> usize {
        self.params.iter().map(|p| p.value().len()).sum()
    }

    pub fn sparse_len(&self) -> usize {
        self.slots().map(|s| s.weights.len()).sum()
    }

    pub fn mask_ones(&self) -> usize {
        self.slots().map(|s| s.mask.count_ones()).sum()
    }

    /// Copies weights and masks from `other`, which must have the same layout.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        self.check_layout(other)?;
        self.params.clone_from(&other.params);
        Ok(())
    }

    pub fn check_layout(&self, other: &ParamStore) -> Result<()> {
        if self.base != other.base || self.params.len() != other.params.len() {
            return Err(MastError::InvalidArgument(format!(
                "store layouts differ: base {} with {} params vs base {} with {} params",
                self.base,
                self.params.len(),
                other.base,
                other.params.len()
            )));
        }
        for (a, b) in self.params.iter().zip(&other.params) {
            if a.name() != b.name()
                || a.value().shape() != b.value().shape()
                || a.is_sparse() != b.is_sparse()
            {
                return Err(MastError::InvalidArgument(format!(
                    "param {} ({:?}) does not match {} ({:?})",
                    a.name(),
                    a.value().shape(),
                    b.name(),
                    b.value().shape()
                )));
            }
        }
        Ok(())
    }

    /// True when every gradient in `grads` belongs to this store.
    pub fn owns_all(&self, grads: &Gradients) -> bool {
        grads.iter().all(|(id, _)| self.contains(id))
    }

    /// Gradients restricted to this store's ids.
    pub fn select(&self, grads: &Gradients) -> Gradients {
        let mut out = Gradients::new();
        for (id, g) in grads.iter() {
            if self.contains(id) {
                out.insert(id, g.clone());
            }
        }
        out
    }
}
