use std::collections::HashMap;
use std::sync::Arc;

use crate::float::Float;
use crate::tensor::Tensor;
use crate::var::Var;

/// Ordered collection of named tensors (model weights or buffers).
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: Arc<HashMap<String, usize>>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: Arc::new(HashMap::new()),
        }
    }

    /// Adds a named tensor; panics on duplicate names.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        let name = name.into();
        let idx = self.names.len();
        let prev = Arc::make_mut(&mut self.index).insert(name.clone(), idx);
        assert!(prev.is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.position(name).map(move |i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    pub fn max_abs(&self) -> T {
        self.tensors
            .iter()
            .fold(T::zero(), |m, t| m.max(t.max_abs()))
    }

    /// Graph handles for every tensor, as differentiable leaves or constants.
    pub fn bind(&self, requires_grad: bool) -> Bound<T> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if requires_grad {
                    Var::leaf(t.clone())
                } else {
                    Var::constant(t.clone())
                }
            })
            .collect();
        Bound {
            vars,
            index: self.index.clone(),
        }
    }
}

/// Graph handles for one forward pass over a [`ParamStore`].
#[derive(Clone)]
pub struct Bound<T> {
    vars: Vec<Var<T>>,
    index: Arc<HashMap<String, usize>>,
}

impl<T: Float> Bound<T> {
    pub fn get(&self, name: &str) -> &Var<T> {
        match self.index.get(name) {
            Some(&i) => &self.vars[i],
            None => panic!("unknown parameter {name}"),
        }
    }

    pub fn vars(&self) -> &[Var<T>] {
        &self.vars
    }
}
