use std::collections::BTreeMap;

use c2f_autograd::{Float, Parameter};
use rand::Rng;

use crate::error::{Error, Result};

/// Named trainable parameters, ordered by name.
///
/// Initial values are drawn from the caller's seeded generator in
/// construction order, so a model is a pure function of (config, seed).
#[derive(Debug, Clone)]
pub struct ParamStore<T: Float> {
    params: BTreeMap<String, Parameter<T>>,
}

impl<T: Float> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
        }
    }

    fn insert(&mut self, name: String, data: Vec<T>, shape: &[usize]) -> Result<Parameter<T>> {
        if self.params.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        let p = Parameter::new(data, shape);
        self.params.insert(name, p.clone());
        Ok(p)
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut impl Rng,
    ) -> Result<Parameter<T>> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64(rng.random_range(-bound..=bound))).collect();
        self.insert(name.into(), data, shape)
    }

    pub fn constant(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> Result<Parameter<T>> {
        let n: usize = shape.iter().product();
        self.insert(name.into(), vec![T::from_f64(value); n], shape)
    }

    pub fn get(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.params.values().map(Parameter::numel).sum()
    }

    /// Overwrites one parameter; shape must match.
    pub fn set(&self, name: &str, shape: &[usize], data: &[f64]) -> Result<()> {
        let p = self
            .params
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))?;
        if p.shape() != shape || data.len() != p.numel() {
            return Err(Error::Shape(format!(
                "parameter {name}: stored {:?}, given {shape:?}",
                p.shape()
            )));
        }
        p.set(data.iter().map(|&v| T::from_f64(v)).collect());
        Ok(())
    }
}
