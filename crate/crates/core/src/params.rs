//! Named parameter storage and graph binding.

use std::collections::BTreeMap;

use rand::Rng;

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub frozen: bool,
}

/// Named weight matrices and bias vectors, each with a frozen flag.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet {
    entries: BTreeMap<String, Param>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.insert(
            name.into(),
            Param {
                value,
                frozen: false,
            },
        );
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries.get_mut(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Usage(format!("unknown parameter '{name}'")))
    }

    pub fn remove(&mut self, name: &str) -> Option<Param> {
        self.entries.remove(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn freeze_all(&mut self) {
        self.entries.values_mut().for_each(|p| p.frozen = true);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(|p| p.value.is_finite())
    }
}

/// Uniform initialization in `[−1/√fan_in, 1/√fan_in]`.
pub fn init_uniform(rows: usize, fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * fan_in)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::from_vec(rows, fan_in, data).expect("shape")
}

pub fn init_bias(len: usize, fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..len).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::from_vec(1, len, data).expect("shape")
}

/// Tracks which named parameters were placed in a graph, and whether each
/// is differentiated.
#[derive(Debug, Default)]
pub struct Bindings {
    nodes: BTreeMap<String, (NodeId, bool)>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the node for `name`, creating it on first use.
    pub fn bind(&mut self, g: &mut Graph, name: &str, value: &Tensor, trainable: bool) -> NodeId {
        if let Some(&(id, _)) = self.nodes.get(name) {
            return id;
        }
        let id = if trainable {
            g.leaf(value.clone())
        } else {
            g.constant(value.clone())
        };
        self.nodes.insert(name.to_string(), (id, trainable));
        id
    }

    pub fn node(&self, name: &str) -> Option<NodeId> {
        self.nodes.get(name).map(|(id, _)| *id)
    }

    /// Gradients of every trainable bound parameter, in name order.
    pub fn gradients(&self, g: &Graph) -> Vec<(String, Tensor)> {
        self.nodes
            .iter()
            .filter(|(_, (_, t))| *t)
            .map(|(name, (id, _))| (name.clone(), g.grad(*id).clone()))
            .collect()
    }
}
