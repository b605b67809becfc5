use std::collections::BTreeMap;

use super::graph::{Gradients, Graph, Var};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors and their accumulated gradients.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Option<Tensor>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        self.grads.push(None);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Registers every parameter as a gradient-requiring leaf; the returned
    /// vector is indexed by [`ParamId::index`].
    pub fn bind(&self, graph: &mut Graph) -> Vec<Var> {
        self.values.iter().map(|v| graph.param(v.clone())).collect()
    }

    /// Adds the gradients of the bound leaves into the stored gradients.
    pub fn accumulate(&mut self, grads: &mut Gradients, vars: &[Var]) -> Result<()> {
        if vars.len() != self.values.len() {
            return Err(Error::usage("bound variable list does not match the parameter set"));
        }
        for (i, var) in vars.iter().enumerate() {
            let g = grads
                .take(*var)
                .ok_or_else(|| Error::usage(format!("no gradient for parameter {}", self.names[i])))?;
            match &mut self.grads[i] {
                Some(existing) => super::kernels::add_assign(existing.data_mut(), g.data()),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    pub fn set_grad(&mut self, id: ParamId, grad: Tensor) -> Result<()> {
        if grad.shape() != self.values[id.0].shape() {
            return Err(Error::dim("set_grad", format!("gradient shape {:?} for {}", grad.shape(), self.names[id.0])));
        }
        self.grads[id.0] = Some(grad);
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub(crate) fn values_and_grads_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor, &mut Option<Tensor>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter_mut())
            .zip(self.grads.iter_mut())
            .map(|((n, v), g)| (n, v, g))
    }

    pub fn to_named(&self) -> BTreeMap<String, Tensor> {
        self.names.iter().cloned().zip(self.values.iter().cloned()).collect()
    }

    /// Overwrites values from a name-keyed map; every parameter must be present
    /// with its current shape.
    pub fn load_named(&mut self, named: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, value) in self.names.iter().zip(self.values.iter_mut()) {
            let src = named
                .get(name)
                .ok_or_else(|| Error::format(format!("missing parameter {name}")))?;
            if src.shape() != value.shape() {
                return Err(Error::format(format!(
                    "parameter {name}: stored shape {:?}, expected {:?}",
                    src.shape(),
                    value.shape()
                )));
            }
            *value = src.clone();
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Tensor::is_finite)
    }
}
