//! Named parameter specs and the materialized parameter store.
//!
//! Architecture code describes every trainable tensor once, as a
//! [`ParamSpec`] appended to a [`ParamBuilder`]. The same description serves
//! three consumers: parameter counting (no allocation), seeded initialization
//! into a [`ParamStore`], and checkpoint manifests (names and shapes in spec
//! order). Spec order is construction order and is part of the wire format.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use crate::graph::{Graph, Var};
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How a parameter tensor is filled at model creation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform on `[-limit, limit)` with `limit = sqrt(6 / (fan_in + fan_out))`.
    GlorotUniform {
        fan_in: usize,
        fan_out: usize,
    },
    Zeros,
    Ones,
}

/// Declarative description of one trainable tensor.
#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    /// Number of scalars in this tensor.
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Accumulates parameter specs while the architecture is walked.
#[derive(Default)]
pub struct ParamBuilder {
    specs: Vec<ParamSpec>,
}

impl ParamBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor and returns its id (index in spec order).
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> usize {
        self.specs.push(ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        });
        self.specs.len() - 1
    }

    /// Registers `<name>.weight` + `<name>.bias` for a `k x k` convolution.
    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> (usize, usize) {
        let w = self.add(
            format!("{name}.weight"),
            &[cout, cin, k, k],
            Init::GlorotUniform {
                fan_in: cin * k * k,
                fan_out: cout * k * k,
            },
        );
        let b = self.add(format!("{name}.bias"), &[cout], Init::Zeros);
        (w, b)
    }

    /// Registers a 2x2 stride-2 transposed convolution (`(cin, cout, 2, 2)`).
    pub fn conv_transpose(&mut self, name: &str, cin: usize, cout: usize) -> (usize, usize) {
        let w = self.add(
            format!("{name}.weight"),
            &[cin, cout, 2, 2],
            Init::GlorotUniform {
                fan_in: cin * 4,
                fan_out: cout * 4,
            },
        );
        let b = self.add(format!("{name}.bias"), &[cout], Init::Zeros);
        (w, b)
    }

    /// Total scalar count across all registered tensors.
    pub fn total_scalars(&self) -> u64 {
        self.specs.iter().map(|s| s.numel() as u64).sum()
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn finish(self) -> Vec<ParamSpec> {
        self.specs
    }
}

/// Materialized parameters: one tensor per spec, in spec order.
pub struct ParamStore<T> {
    specs: Vec<ParamSpec>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    /// Fills every tensor per its initializer, drawing random values from a
    /// single seeded stream in spec order.
    pub fn init(specs: Vec<ParamSpec>, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let tensors = specs
            .iter()
            .map(|spec| match spec.init {
                Init::Zeros => Tensor::zeros(&spec.shape),
                Init::Ones => Tensor::full(&spec.shape, T::one()),
                Init::GlorotUniform { fan_in, fan_out } => {
                    let limit = Float::sqrt(6.0 / (fan_in + fan_out) as f64);
                    let data = (0..spec.numel())
                        .map(|_| T::from_f64(rng.gen_range(-limit..limit)))
                        .collect();
                    Tensor::new(&spec.shape, data)
                }
            })
            .collect();
        Self { specs, tensors }
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn total_scalars(&self) -> u64 {
        self.tensors.iter().map(|t| t.numel() as u64).sum()
    }

    pub fn tensor(&self, id: usize) -> &Tensor<T> {
        &self.tensors[id]
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Replaces a tensor's data (checkpoint loading).
    ///
    /// # Panics
    /// If the length does not match the spec shape.
    pub fn load_data(&mut self, id: usize, data: &[T]) {
        assert_eq!(
            data.len(),
            self.specs[id].numel(),
            "checkpoint tensor '{}' has {} values, expected {}",
            self.specs[id].name,
            data.len(),
            self.specs[id].numel()
        );
        self.tensors[id] = Tensor::new(&self.specs[id].shape, data.to_vec());
    }

    /// Inserts every parameter into a graph as a leaf, in spec order, and
    /// returns the graph handles indexed by param id.
    pub fn bind_all(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| g.leaf(t.clone(), trainable))
            .collect()
    }

    /// Overwrites every tensor with uniform draws from `[lo, hi)`; used by
    /// structural tests that need the whole network away from its symmetric
    /// initialization point.
    pub fn randomize_uniform(&mut self, seed: u64, lo: f64, hi: f64) {
        let mut rng = rng_from_seed(seed);
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v = T::from_f64(rng.gen_range(lo..hi));
            }
        }
    }
}
