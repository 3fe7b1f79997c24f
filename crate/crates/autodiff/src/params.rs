//! Named parameter collections shared by optimizers and checkpoints.

use std::collections::HashMap;

use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Ordered, name-indexed set of trainable tensors. Order is insertion
/// order and is part of the determinism contract: optimizers and
/// checkpoints iterate it the same way every time.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> usize {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        self.entries.push(Param {
            name: name.to_string(),
            value,
        });
        let id = self.entries.len() - 1;
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].value)
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn by_id(&self, id: usize) -> &Param {
        &self.entries[id]
    }

    pub fn by_id_mut(&mut self, id: usize) -> &mut Param {
        &mut self.entries[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }
}
