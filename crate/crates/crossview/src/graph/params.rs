//! Named parameter storage shared by the model, the optimizer and the
//! checkpoint format.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    FanInUniform {
        fan_in: usize,
    },
    /// ReLU-gain fan-in uniform, U(-sqrt(6/fan_in), sqrt(6/fan_in)); keeps
    /// activation variance through ReLU stacks.
    ReluFanInUniform {
        fan_in: usize,
    },
    Normal {
        std: f32,
    },
}

struct Entry {
    name: String,
    value: ArrayD<f32>,
    grad: ArrayD<f32>,
}

/// Flat, insertion-ordered parameter table. Names follow module paths
/// ("ground.backbone.block0.weight") and key the checkpoint archive.
#[derive(Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn add<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: Init,
        rng: &mut R,
    ) -> ParamId {
        let name = name.into();
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        let value = match init {
            Init::Zeros => ArrayD::zeros(IxDyn(shape)),
            Init::Ones => ArrayD::from_elem(IxDyn(shape), 1.0),
            Init::FanInUniform { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
                ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(-bound..bound))
            }
            Init::ReluFanInUniform { fan_in } => {
                let bound = (6.0 / fan_in.max(1) as f32).sqrt();
                ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(-bound..bound))
            }
            Init::Normal { std } => {
                let dist = rand_distr::Normal::new(0.0f32, std).expect("valid std");
                ArrayD::from_shape_fn(IxDyn(shape), |_| {
                    rand_distr::Distribution::sample(&dist, rng)
                })
            }
        };
        let grad = ArrayD::zeros(IxDyn(shape));
        self.entries.push(Entry { name, value, grad });
        ParamId(self.entries.len() - 1)
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<f32> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<f32> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &ArrayD<f32> {
        &self.entries[id.0].grad
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &ArrayD<f32>) {
        let entry = &mut self.entries[id.0];
        debug_assert_eq!(
            entry.grad.shape(),
            g.shape(),
            "grad shape for {}",
            entry.name
        );
        entry.grad += g;
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
        }
    }

    pub fn scale_grads(&mut self, factor: f32) {
        for e in &mut self.entries {
            e.grad.mapv_inplace(|v| v * factor);
        }
    }

    /// Global L2 norm over all gradients.
    pub fn grad_norm(&self) -> f32 {
        self.entries
            .iter()
            .flat_map(|e| e.grad.iter())
            .map(|v| (*v as f64) * (*v as f64))
            .sum::<f64>()
            .sqrt() as f32
    }

    /// Global L2 norm over all parameter values.
    pub fn value_norm(&self) -> f32 {
        self.entries
            .iter()
            .flat_map(|e| e.value.iter())
            .map(|v| (*v as f64) * (*v as f64))
            .sum::<f64>()
            .sqrt() as f32
    }

    pub fn all_finite(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.value.iter().all(|v| v.is_finite()))
    }
}
