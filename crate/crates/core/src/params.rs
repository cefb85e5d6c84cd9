//! Named parameter storage, the Adam optimizer, and seed derivation.

use std::hash::{DefaultHasher, Hash, Hasher};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Gradients, Matrix, Var};

/// Ordered collection of named parameter matrices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: Vec<(String, Matrix)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((name, value)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
    }

    /// Panicking lookup for names fixed by a model definition.
    pub fn expect(&self, name: &str) -> &Matrix {
        self.get(name)
            .unwrap_or_else(|| panic!("missing parameter `{name}`"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.entries.iter().map(|(n, m)| (n.as_str(), m))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Matrix)> {
        self.entries.iter_mut().map(|(n, m)| (n.as_str(), m))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, m)| m.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries
            .iter()
            .all(|(_, m)| m.iter().all(|v| v.is_finite()))
    }

    /// Hash of names, shapes, and exact bit patterns.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (name, m) in &self.entries {
            name.hash(&mut h);
            m.shape().hash(&mut h);
            for v in m.iter() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Puts every parameter on `graph`, tracked or constant.
    pub fn bind(&self, graph: &mut Graph, tracked: bool) -> BoundParams {
        let vars = self
            .entries
            .iter()
            .map(|(_, m)| {
                if tracked {
                    graph.param(m.clone())
                } else {
                    graph.constant(m.clone())
                }
            })
            .collect();
        BoundParams {
            names: self.entries.iter().map(|(n, _)| n.clone()).collect(),
            vars,
        }
    }
}

/// Graph handles of a bound [`ParamStore`], in store order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Var {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("missing parameter `{name}`"));
        self.vars[i]
    }

    /// Gradients in store order.
    pub fn gradients(&self, grads: &mut Gradients) -> Vec<Matrix> {
        self.vars.iter().map(|v| grads.take(*v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first: Vec<Matrix>,
    pub second: Vec<Matrix>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Matrix> = store.iter().map(|(_, m)| Matrix::zeros(m.raw_dim())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn update(&mut self, store: &mut ParamStore, grads: &[Matrix]) {
        assert_eq!(grads.len(), store.len(), "one gradient per parameter");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (i, (_, p)) in store.iter_mut().enumerate() {
            let g = &grads[i];
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

pub fn grads_finite(grads: &[Matrix]) -> bool {
    grads.iter().all(|g| g.iter().all(|v| v.is_finite()))
}

/// Derives an independent seed from a base seed and a path of tags
/// (splitmix64 mixing).
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut x = base;
    for &t in tags {
        x = splitmix(x ^ splitmix(t.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    splitmix(x)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_for(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut store = ParamStore::new();
        store.insert("x", array![[3.0, -2.0]]);
        let mut opt = Adam::new(&store, 0.1);
        for _ in 0..500 {
            let g = store.expect("x") * 2.0;
            opt.update(&mut store, &[g]);
        }
        assert!(store.expect("x").iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn fingerprint_tracks_bits() {
        let mut store = ParamStore::new();
        store.insert("a", array![[0.0]]);
        let before = store.fingerprint();
        store.get_mut("a").unwrap()[[0, 0]] = -0.0;
        assert_ne!(before, store.fingerprint());
    }

    #[test]
    fn derived_seeds_differ_by_tag() {
        assert_ne!(derive_seed(1, &[0]), derive_seed(1, &[1]));
        assert_ne!(derive_seed(1, &[0, 1]), derive_seed(1, &[1, 0]));
        assert_eq!(derive_seed(7, &[3, 4]), derive_seed(7, &[3, 4]));
    }
}
