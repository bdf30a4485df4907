use indexmap::IndexMap;

use super::Tensor;
use crate::error::{Error, Result};

/// Named, ordered collection of parameter tensors (one of θ, α, β).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::KeyMismatch(format!("duplicate parameter `{name}`")));
        }
        self.entries.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    /// Value of a single-element parameter.
    pub fn scalar(&self, name: &str) -> Result<f64> {
        match self.entries.get(name) {
            Some(t) if t.len() == 1 => Ok(t.data()[0]),
            Some(t) => Err(Error::Shape {
                context: "scalar parameter",
                expected: vec![1],
                actual: t.shape().to_vec(),
            }),
            None => Err(Error::KeyMismatch(format!("missing parameter `{name}`"))),
        }
    }

    pub fn set_scalar(&mut self, name: &str, value: f64) -> Result<()> {
        match self.entries.get_mut(name) {
            Some(t) if t.len() == 1 => {
                t.data_mut()[0] = value;
                Ok(())
            }
            _ => Err(Error::KeyMismatch(format!("no scalar parameter `{name}`"))),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn total_dim(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_dim());
        for t in self.entries.values() {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Overwrites all entries from a flat vector laid out as by [`flatten`](Self::flatten).
    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.total_dim() {
            return Err(Error::Shape {
                context: "unflatten",
                expected: vec![self.total_dim()],
                actual: vec![flat.len()],
            });
        }
        let mut offset = 0;
        for t in self.entries.values_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Same keys and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape().to_vec())))
                .collect(),
        }
    }

    pub fn check_same_layout(&self, other: &ParamStore) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::KeyMismatch(format!(
                "{} entries vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for ((ka, va), (kb, vb)) in self.entries.iter().zip(&other.entries) {
            if ka != kb {
                return Err(Error::KeyMismatch(format!("`{ka}` vs `{kb}`")));
            }
            if va.shape() != vb.shape() {
                return Err(Error::Shape {
                    context: "parameter layout",
                    expected: va.shape().to_vec(),
                    actual: vb.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// In place `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &ParamStore) -> Result<()> {
        self.check_same_layout(other)?;
        for (a, b) in self.entries.values_mut().zip(other.entries.values()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.entries.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn norm(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(Tensor::is_finite)
    }
}
