use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameters with paired gradient buffers, in registration order.
/// Gradient buffers are allocated on first use.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: IndexMap<String, (Tensor<T>, Vec<T>)>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    pub fn register(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        if self.entries.contains_key(name) {
            return Err(NnError::Argument(format!("duplicate parameter `{name}`")));
        }
        let (idx, _) = self
            .entries
            .insert_full(name.to_string(), (value, Vec::new()));
        Ok(ParamId(idx))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.entries.values().map(|(t, _)| t.len()).sum()
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.entries
            .get_index_of(name)
            .map(ParamId)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.entries.get_index(id.0).map(|(k, _)| k.as_str()).unwrap_or("?")
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].0
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].0
    }

    /// Empty until a gradient has been stored for `id`.
    pub fn grad(&self, id: ParamId) -> &[T] {
        &self.entries[id.0].1
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [T] {
        let (t, g) = &mut self.entries[id.0];
        if g.is_empty() {
            *g = vec![T::zero(); t.len()];
        }
        g
    }

    pub fn zero_grads(&mut self) {
        for (_, g) in self.entries.values_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Adds gradients (as returned by `Graph::into_param_grads`) into the buffers.
    pub fn accumulate_grads(&mut self, grads: Vec<(ParamId, Vec<T>)>) {
        for (id, g) in grads {
            let (t, buf) = &mut self.entries[id.0];
            debug_assert_eq!(t.len(), g.len());
            if buf.is_empty() {
                *buf = g;
            } else {
                for (b, v) in buf.iter_mut().zip(&g) {
                    *b += *v;
                }
            }
        }
    }

    /// Multiplies every stored gradient by `s`.
    pub fn scale_grads(&mut self, s: T) {
        for (_, g) in self.entries.values_mut() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Global L2 norm of all stored gradients.
    pub fn grad_norm(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|(_, g)| g.iter())
            .map(|v| v.f64() * v.f64())
            .sum::<f64>()
            .sqrt()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, (t, _))| (k.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>, &mut Vec<T>)> {
        self.entries
            .iter_mut()
            .map(|(k, (t, g))| (k.as_str(), t, g))
    }

    /// Replace every value with the one of the same name in `other`.
    /// Names and shapes must match exactly.
    pub fn load_from(&mut self, other: &[(String, Tensor<T>)]) -> Result<()> {
        if other.len() != self.entries.len() {
            return Err(NnError::Argument(format!(
                "expected {} arrays, found {}",
                self.entries.len(),
                other.len()
            )));
        }
        for (name, t) in other {
            let (cur, _) = self
                .entries
                .get_mut(name)
                .ok_or_else(|| NnError::UnknownParam(name.clone()))?;
            if cur.shape() != t.shape() {
                return Err(NnError::Argument(format!(
                    "`{name}`: shape {:?} does not match model {:?}",
                    t.shape(),
                    cur.shape()
                )));
            }
            *cur = t.clone();
        }
        Ok(())
    }

    pub fn to_named(&self) -> Vec<(String, Tensor<T>)> {
        self.entries
            .iter()
            .map(|(k, (t, _))| (k.clone(), t.clone()))
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (k, (t, _)) in &self.entries {
            out.register(k, t.cast()).expect("names are unique");
        }
        out
    }
}

/// Registers parameters under a name prefix with the usual initializers.
pub struct Init<'a, T, R> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut R,
}

impl<'a, T: Scalar, R: Rng> Init<'a, T, R> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut R) -> Self {
        Self { store, rng }
    }

    /// Xavier-uniform `[fan_in, fan_out]` matrix.
    pub fn xavier(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<ParamId> {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| T::c(self.rng.random_range(-a..a)))
            .collect();
        self.store.register(name, Tensor::new(&[fan_in, fan_out], data)?)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<ParamId> {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(self.rng);
                T::c(std * z)
            })
            .collect();
        self.store.register(name, Tensor::new(shape, data)?)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.store.register(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.store.register(name, Tensor::full(shape, T::one()))
    }
}
