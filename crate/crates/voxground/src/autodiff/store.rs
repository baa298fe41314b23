//! Named parameter tensors with paired gradient buffers.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// One learnable tensor. Values and grad always share a shape.
#[derive(Clone, Debug)]
pub struct ParamTensor {
    pub name: String,
    pub values: Matrix,
    pub grad: Matrix,
}

/// Ordered collection of parameters. Iteration order is the name order,
/// so two stores built from the same config walk their tensors identically.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    tensors: BTreeMap<String, ParamTensor>,
    pub rng_seed: u64,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl ParamStore {
    pub fn new(rng_seed: u64) -> Self {
        Self { tensors: BTreeMap::new(), rng_seed }
    }

    /// Inserts a tensor with explicit values; the grad starts at zero.
    pub fn insert(&mut self, name: &str, values: Matrix) {
        let (r, c) = values.shape();
        self.tensors.insert(
            name.to_string(),
            ParamTensor { name: name.to_string(), values, grad: Matrix::zeros(r, c) },
        );
    }

    /// Inserts a tensor initialized uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    ///
    /// The per-tensor stream is derived from the store seed and the tensor
    /// name, so initialization does not depend on insertion order.
    pub fn init_uniform(&mut self, name: &str, rows: usize, cols: usize, fan_in: usize) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed ^ fnv1a(name.as_bytes()));
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        self.insert(name, Matrix::from_vec(rows, cols, data).expect("sized buffer"));
    }

    pub fn init_zeros(&mut self, name: &str, rows: usize, cols: usize) {
        self.insert(name, Matrix::zeros(rows, cols));
    }

    pub fn get(&self, name: &str) -> Result<&ParamTensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ParamTensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor> {
        self.tensors.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.tensors.values_mut()
    }

    pub fn names(&self) -> Vec<String> {
        self.tensors.keys().cloned().collect()
    }

    pub fn zero_grads(&mut self) {
        for t in self.tensors.values_mut() {
            t.grad.data_mut().fill(0.0);
        }
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.tensors.values().map(|t| t.values.len()).sum()
    }
}
