use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;
use crate::scalar::Scalar;

/// Named trainable tensors, iterated in insertion order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

/// Tape handles for every parameter of a store, in store order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl Bound {
    /// Pairs externally created leaves with a store's names.
    pub fn from_vars<T: Scalar>(store: &ParamStore<T>, vars: Vec<Var>) -> Self {
        assert_eq!(vars.len(), store.len());
        Self {
            vars,
            index: store.index.clone(),
        }
    }

    pub fn get(&self, name: &str) -> Var {
        match self.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("unknown parameter `{name}`"),
        }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, mut tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Configuration(format!("duplicate parameter `{name}`")));
        }
        tensor.requires_grad = true;
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Places every parameter on the tape as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        let vars = self.tensors.iter().map(|t| tape.variable(t.clone())).collect();
        Bound {
            vars,
            index: self.index.clone(),
        }
    }

    /// Adds the tape's leaf gradients into the parameters' grad buffers.
    pub fn accumulate_grads(&mut self, tape: &mut Tape<T>, bound: &Bound) {
        for (tensor, &var) in self.tensors.iter_mut().zip(&bound.vars) {
            if let Some(g) = tape.take_grad(var) {
                let slot = tensor.grad_or_zeros();
                for (o, x) in slot.iter_mut().zip(g) {
                    *o += x;
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.grad = None;
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }
}
