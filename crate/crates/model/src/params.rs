//! Flat named parameter storage shared by all layers.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::float::Float;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
}

impl<T> Param<T> {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Matrices receive weight decay; vectors (biases, norm gains) do not.
    pub fn decays(&self) -> bool {
        self.shape.len() == 2
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub(crate) fn normal<R: Rng>(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut R) -> ParamId {
        let n = shape.iter().product();
        let value = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::lit(z * std)
            })
            .collect();
        self.push(name, shape, value)
    }

    pub(crate) fn constant(&mut self, name: &str, shape: &[usize], v: f64) -> ParamId {
        let n = shape.iter().product();
        self.push(name, shape, vec![T::lit(v); n])
    }

    fn push(&mut self, name: &str, shape: &[usize], value: Vec<T>) -> ParamId {
        self.params.push(Param { name: name.to_string(), shape: shape.to_vec(), value });
        ParamId(self.params.len() - 1)
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &[T] {
        &self.params[id.0].value
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Param::numel).sum()
    }

    pub fn zeros_like(&self) -> Grads<T> {
        Grads { g: self.params.iter().map(|p| vec![T::zero(); p.value.len()]).collect() }
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    value: p.value.iter().map(|v| U::lit(v.as_f64())).collect(),
                })
                .collect(),
        }
    }
}

/// Gradient buffers parallel to a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Grads<T> {
    pub(crate) g: Vec<Vec<T>>,
}

impl<T: Float> Grads<T> {
    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.g[id.0]
    }

    pub fn tensors(&self) -> &[Vec<T>] {
        &self.g
    }

    pub fn global_norm(&self) -> f64 {
        self.g
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| {
                let x = v.as_f64();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: T) {
        for t in &mut self.g {
            for v in t.iter_mut() {
                *v *= s;
            }
        }
    }
}
