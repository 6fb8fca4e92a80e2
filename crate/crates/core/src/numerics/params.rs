use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named parameter tensors, ordered by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Uniform `[-a, a]` initialisation with `a = sqrt(1 / fan_in)`.
    ///
    /// The stream for each tensor is derived from `(seed, name)`, so adding a
    /// parameter never changes the values drawn for the others.
    pub fn init_uniform(&mut self, seed: u64, name: &str, shape: &[usize], fan_in: usize) {
        let a = (1.0 / fan_in.max(1) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name.as_bytes()));
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-a..=a)).collect();
        self.insert(name, Tensor::new(shape, data).expect("shape product"));
    }

    pub fn init_zeros(&mut self, name: &str, shape: &[usize]) {
        self.insert(name, Tensor::zeros(shape));
    }

    /// Copies every parameter under `src_prefix` to the same suffix under `dst_prefix`.
    pub fn copy_prefix(&mut self, src_prefix: &str, dst_prefix: &str) -> usize {
        let copies: Vec<(String, Tensor)> = self
            .params
            .iter()
            .filter_map(|(k, v)| {
                k.strip_prefix(src_prefix)
                    .map(|rest| (format!("{dst_prefix}{rest}"), v.clone()))
            })
            .collect();
        let n = copies.len();
        self.params.extend(copies);
        n
    }

    /// Merges `other` in, overwriting same-named entries.
    pub fn extend(&mut self, other: ParamStore) {
        self.params.extend(other.params);
    }

    /// Sub-store of the parameters whose name starts with `prefix`.
    pub fn filter_prefix(&self, prefix: &str) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        for (k, v) in &self.params {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("parameter {k}")));
            }
        }
        Ok(())
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_bounded_and_named_seeded() {
        let mut a = ParamStore::new();
        a.init_uniform(7, "w", &[3, 3, 2, 4], 18);
        let bound = (1.0f64 / 18.0).sqrt();
        assert!(a.get("w").unwrap().data().iter().all(|v| v.abs() <= bound));

        let mut b = ParamStore::new();
        b.init_uniform(7, "other", &[5], 5);
        b.init_uniform(7, "w", &[3, 3, 2, 4], 18);
        assert_eq!(a.get("w"), b.get("w"));
    }
}
