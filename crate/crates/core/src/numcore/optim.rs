//! Named parameter storage and the Adam optimizer.

use std::collections::HashMap;

use super::graph::{Gradients, Graph, Var};
use super::tensor::Tensor;
use crate::error::{contract, Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub m: Tensor,
    pub v: Tensor,
}

/// Insertion-ordered named parameters with Adam moment accumulators.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
    step: u64,
}

/// Gradients keyed by parameter name.
pub type GradMap = HashMap<String, Vec<f64>>;

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        contract!(!self.index.contains_key(name), "duplicate parameter name {name}");
        let shape = value.shape().to_vec();
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
        });
        Ok(())
    }

    /// Restores a parameter together with its optimizer moments.
    pub fn insert_entry(&mut self, entry: ParamEntry) -> Result<()> {
        contract!(
            !self.index.contains_key(&entry.name),
            "duplicate parameter name {}",
            entry.name
        );
        contract!(
            entry.m.shape() == entry.value.shape() && entry.v.shape() == entry.value.shape(),
            "moment shapes differ from parameter {}",
            entry.name
        );
        self.index.insert(entry.name.clone(), self.entries.len());
        self.entries.push(entry);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.entries[i].value)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Records every parameter as a trainable leaf on `g`.
    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        let vars = self.entries.iter().map(|e| g.param(&e.value)).collect();
        BoundParams {
            vars,
            index: self.index.clone(),
        }
    }

    /// Copies values only (moments and step untouched) from another store with identical names.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        for e in &mut self.entries {
            let src = other
                .get(&e.name)
                .ok_or_else(|| Error::Contract(format!("missing parameter {}", e.name)))?;
            contract!(src.shape() == e.value.shape(), "shape mismatch for {}", e.name);
            e.value = src.clone();
        }
        Ok(())
    }

    /// One Adam update with bias correction; increments the step counter.
    pub fn adam_step(&mut self, grads: &GradMap, lr: f64) -> Result<()> {
        contract!(lr >= 0.0 && lr.is_finite(), "learning rate must be finite and >= 0");
        for e in &self.entries {
            let g = grads
                .get(&e.name)
                .ok_or_else(|| Error::Contract(format!("no gradient supplied for parameter {}", e.name)))?;
            contract!(
                g.len() == e.value.len(),
                "gradient for {} has length {} (expected {})",
                e.name,
                g.len(),
                e.value.len()
            );
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - ADAM_BETA1.powf(t);
        let bc2 = 1.0 - ADAM_BETA2.powf(t);
        for e in &mut self.entries {
            let g = &grads[&e.name];
            let (p, m, v) = (e.value.data_mut(), e.m.data_mut(), e.v.data_mut());
            for i in 0..g.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

/// Graph handles for every parameter of a [`ParamStore`].
pub struct BoundParams {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    /// Gradient map in the store's naming, ready for [`ParamStore::adam_step`].
    pub fn collect(&self, grads: &Gradients) -> GradMap {
        self.index
            .iter()
            .map(|(name, &i)| (name.clone(), grads.get(self.vars[i])))
            .collect()
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`; returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut GradMap, max_norm: f64) -> f64 {
    let mut names: Vec<&String> = grads.keys().collect();
    names.sort();
    let norm = names
        .iter()
        .map(|n| grads[*n].iter().map(|g| g * g).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grads.values_mut().for_each(|g| g.iter_mut().for_each(|x| *x *= s));
    }
    norm
}
