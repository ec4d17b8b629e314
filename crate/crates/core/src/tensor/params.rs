use std::collections::BTreeMap;

use super::tape::{GradientTape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named parameter blocks, iterated in lexicographic name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelParams {
    blocks: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.blocks.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.blocks
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter block named {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.blocks.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.blocks.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.blocks.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.blocks.keys()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.blocks.values().map(Tensor::len).sum()
    }

    /// Registers the named block on `tape`.
    pub fn var(&self, tape: &mut GradientTape, name: &str) -> Result<Var> {
        Ok(tape.param(name, self.get(name)?))
    }

    /// `self + sum_i scales[i] * dirs[i]`, block by block. The offset is formed
    /// before it is added so that the result is symmetric in the direction
    /// order.
    pub fn offset(&self, dirs: &[(&ModelParams, f64)]) -> Result<ModelParams> {
        let mut out = self.clone();
        for (name, block) in out.blocks.iter_mut() {
            let mut delta = Tensor::zeros(block.shape());
            for (dir, s) in dirs {
                delta.axpy(*s, dir.get(name)?)?;
            }
            block.add_assign(&delta)?;
        }
        Ok(out)
    }

    pub fn all_finite(&self) -> bool {
        self.blocks.values().all(Tensor::is_finite)
    }
}

impl FromIterator<(String, Tensor)> for ModelParams {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        Self {
            blocks: iter.into_iter().collect(),
        }
    }
}
