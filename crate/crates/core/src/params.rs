//! Named parameter storage, gradients and the momentum optimizer.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A dense row-major parameter array. Vectors are `n × 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Registers a parameter drawn uniformly from `[-1/√fan_in, 1/√fan_in]`.
    pub fn uniform<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / libm::sqrt(fan_in.max(1) as f64);
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        self.insert(name, rows, cols, data)
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.insert(name, rows, cols, vec![0.0; rows * cols])
    }

    pub fn insert(&mut self, name: &str, rows: usize, cols: usize, data: Vec<f64>) -> ParamId {
        assert_eq!(rows * cols, data.len());
        assert!(self.find(name).is_none(), "duplicate parameter name {name}");
        self.params.push(Param {
            name: name.into(),
            rows,
            cols,
            data,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Overwrites values from another store with the same layout.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::ParamLayout("parameter count differs".into()));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name || dst.rows != src.rows || dst.cols != src.cols {
                return Err(Error::ParamLayout(alloc::format!(
                    "parameter {} does not match {}",
                    dst.name,
                    src.name
                )));
            }
            dst.data.clone_from(&src.data);
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.data.iter().all(|x| x.is_finite()))
    }
}

/// Gradients aligned one-to-one with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    grads: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store.params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.grads[id.0]
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in &mut self.grads {
            for x in g.iter_mut() {
                *x *= k;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        libm::sqrt(self.grads.iter().flatten().map(|x| x * x).sum())
    }

    /// First parameter holding a non-finite gradient entry.
    pub fn first_non_finite(&self) -> Option<ParamId> {
        self.grads
            .iter()
            .position(|g| g.iter().any(|x| !x.is_finite()))
            .map(ParamId)
    }

    pub fn is_all_zero(&self, id: ParamId) -> bool {
        self.grads[id.0].iter().all(|&x| x == 0.0)
    }
}

/// Stochastic gradient descent with classical momentum:
/// `v ← μ v + g`, `θ ← θ − η v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(store: &ParamStore, learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: store.params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
        }
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    pub fn set_velocity(&mut self, velocity: Vec<Vec<f64>>) -> Result<()> {
        if velocity.len() != self.velocity.len()
            || velocity
                .iter()
                .zip(&self.velocity)
                .any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::ParamLayout("optimizer state layout differs".into()));
        }
        self.velocity = velocity;
        Ok(())
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) {
        for ((p, v), g) in store
            .params
            .iter_mut()
            .zip(&mut self.velocity)
            .zip(&grads.grads)
        {
            for ((x, vi), gi) in p.data.iter_mut().zip(v.iter_mut()).zip(g) {
                *vi = self.momentum * *vi + gi;
                *x -= self.learning_rate * *vi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let id = store.uniform("w", 8, 16, 16, &mut rng);
        assert!(store.get(id).data.iter().all(|x| x.abs() <= 0.25));
    }

    #[test]
    fn momentum_update_matches_closed_form() {
        let mut store = ParamStore::new();
        let id = store.insert("w", 1, 1, vec![1.0]);
        let mut opt = Sgd::new(&store, 0.1, 0.9);
        let mut g = ParamGrads::zeros_like(&store);
        g.get_mut(id)[0] = 2.0;
        opt.step(&mut store, &g);
        assert!((store.get(id).data[0] - 0.8).abs() < 1e-15);
        opt.step(&mut store, &g);
        // v = 0.9 * 2 + 2 = 3.8
        assert!((store.get(id).data[0] - (0.8 - 0.38)).abs() < 1e-15);
    }
}
