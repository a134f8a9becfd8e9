use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// A named trainable tensor together with its Adam moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub first_moment: Vec<F>,
    pub second_moment: Vec<F>,
}

/// Ordered collection of parameters with unique names.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<F> {
    params: Vec<Parameter<F>>,
    index: HashMap<String, ParamId>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::Invalid(format!(
                "duplicate parameter name {name}"
            )));
        }
        let n = value.numel();
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            first_moment: vec![F::zero(); n],
            second_moment: vec![F::zero(); n],
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<F> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<F> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<F>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<F>> {
        self.params.iter_mut()
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Converts every value and moment into another element type.
    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        let conv = |v: &[F]| v.iter().map(|x| G::c(x.as_f64())).collect::<Vec<G>>();
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    first_moment: conv(&p.first_moment),
                    second_moment: conv(&p.second_moment),
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub values: Vec<Vec<F>>,
}

impl<F: Real> Gradients<F> {
    pub fn zeros_like(store: &ParamStore<F>) -> Self {
        Self {
            values: store
                .iter()
                .map(|p| vec![F::zero(); p.value.numel()])
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[F] {
        &self.values[id.0]
    }

    pub fn add_assign(&mut self, other: &Gradients<F>) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: F) {
        for v in self.values.iter_mut().flatten() {
            *v *= s;
        }
    }

    pub fn global_norm(&self) -> F {
        self.values
            .iter()
            .flatten()
            .map(|v| *v * *v)
            .fold(F::zero(), |a, b| a + b)
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::<f32>::new();
        s.add("w", Tensor::zeros(vec![2])).unwrap();
        assert!(s.add("w", Tensor::zeros(vec![3])).is_err());
        assert_eq!(s.get(ParamId(0)).first_moment.len(), 2);
    }
}
