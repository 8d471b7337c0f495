//! Named parameter storage and tape binding.
//!
//! Parameters live outside any tape in an insertion-ordered store; each
//! forward pass binds them onto a fresh tape as leaves and reads their
//! gradients back out after the reverse sweep. Initialization is fully
//! deterministic given the seed.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, Tape, Value};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub values: Vec<T>,
    pub shape: Vec<usize>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self { values: vec![T::zero(); len], shape }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// How a parameter tensor is filled at construction.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform(-limit, limit) with limit = sqrt(6 / (fan_in + fan_out)).
    Xavier { fan_in: usize, fan_out: usize },
    /// LSTM gate bias block: forget-gate quarter at one, rest zero.
    LstmBias,
}

/// Insertion-ordered collection of named parameter tensors.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: &str, shape: Vec<usize>, init: Init, rng: &mut ChaCha8Rng) {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let len: usize = shape.iter().product();
        let values = match init {
            Init::Zeros => vec![T::zero(); len],
            Init::Ones => vec![T::one(); len],
            Init::Xavier { fan_in, fan_out } => {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..len).map(|_| T::from_f64(rng.gen_range(-limit..limit))).collect()
            }
            Init::LstmBias => {
                let quarter = len / 4;
                (0..len)
                    .map(|i| if i >= quarter && i < 2 * quarter { T::one() } else { T::zero() })
                    .collect()
            }
        };
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), Tensor { values, shape }));
    }

    /// Inserts a prebuilt tensor (checkpoint restore path).
    pub fn push_raw(&mut self, name: &str, tensor: Tensor<T>) {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), tensor));
    }

    pub fn get(&self, name: &str) -> &Tensor<T> {
        let i = *self.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        &self.entries[i].1
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<T> {
        let i = *self.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        &mut self.entries[i].1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Converts every tensor to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (name, tensor) in &self.entries {
            out.index.insert(name.clone(), out.entries.len());
            out.entries.push((
                name.clone(),
                Tensor {
                    values: tensor.values.iter().map(|v| U::from_f64(v.to_f64())).collect(),
                    shape: tensor.shape.clone(),
                },
            ));
        }
        out
    }
}

/// Leaf bindings of a parameter store on one tape.
pub struct TapeBinding {
    ids: HashMap<String, Value>,
    order: Vec<String>,
}

impl TapeBinding {
    pub fn bind<T: Scalar>(store: &ParamStore<T>, tape: &Tape<T>) -> Self {
        let mut ids = HashMap::new();
        let mut order = Vec::with_capacity(store.len());
        for (name, tensor) in store.iter() {
            ids.insert(name.to_string(), tape.leaf(tensor.values.clone(), tensor.shape.clone()));
            order.push(name.to_string());
        }
        Self { ids, order }
    }

    pub fn get(&self, name: &str) -> Value {
        *self.ids.get(name).unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    /// Accumulates this tape's parameter gradients into `acc` (aligned with
    /// the store's insertion order), scaled by `scale`.
    pub fn accumulate_grads<T: Scalar>(&self, grads: &Gradients<T>, scale: T, acc: &mut GradBuffer<T>) {
        for (slot, name) in self.order.iter().enumerate() {
            let g = grads.of(self.ids[name]);
            let dst = &mut acc.per_param[slot];
            debug_assert_eq!(dst.len(), g.len());
            for (d, &v) in dst.iter_mut().zip(g) {
                *d += v * scale;
            }
        }
    }
}

/// Flat gradient accumulator aligned with a store's parameter order.
#[derive(Debug, Clone)]
pub struct GradBuffer<T> {
    pub per_param: Vec<Vec<T>>,
}

impl<T: Scalar> GradBuffer<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self { per_param: store.iter().map(|(_, t)| vec![T::zero(); t.len()]).collect() }
    }

    pub fn reset(&mut self) {
        for p in &mut self.per_param {
            p.fill(T::zero());
        }
    }

    pub fn add_scaled(&mut self, other: &GradBuffer<T>, scale: T) {
        for (a, b) in self.per_param.iter_mut().zip(&other.per_param) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y * scale;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.per_param
            .iter()
            .flat_map(|p| p.iter())
            .map(|v| v.to_f64() * v.to_f64())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: T) {
        for p in &mut self.per_param {
            for v in p.iter_mut() {
                *v = *v * factor;
            }
        }
    }
}
