//! Small feed-forward building blocks expressed over the autodiff graph.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ValueId};
use crate::params::ParamStore;

/// Hidden-layer nonlinearity. `Identity` exists so tests can build exact
/// pass-through configurations; production defaults use `Tanh`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

/// Descriptor for a single affine layer; weights live in the [`ParamStore`]
/// under `<name>.w` (row-major out x in) and `<name>.b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Linear {
            name: name.into(),
            in_dim,
            out_dim,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut impl Rng, frozen: bool) {
        let std = 1.0 / (self.in_dim as f64).sqrt();
        let normal = Normal::new(0.0, std).unwrap();
        let w: Vec<f64> = (0..self.in_dim * self.out_dim)
            .map(|_| normal.sample(rng))
            .collect();
        store.register(&self.weight_name(), w, frozen);
        store.register(&self.bias_name(), vec![0.0; self.out_dim], frozen);
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: ValueId) -> ValueId {
        let w = g.param(store, &self.weight_name());
        let b = g.param(store, &self.bias_name());
        let y = g.matvec(w, x, self.out_dim, self.in_dim);
        g.add(y, b)
    }
}

/// Two-layer perceptron: `out = W2 act(W1 x + b1) + b2`.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
    pub activation: Activation,
}

impl Mlp {
    pub fn new(name: &str, in_dim: usize, hidden: usize, out_dim: usize) -> Self {
        Mlp {
            l1: Linear::new(format!("{name}.l1"), in_dim, hidden),
            l2: Linear::new(format!("{name}.l2"), hidden, out_dim),
            activation: Activation::Tanh,
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut impl Rng, frozen: bool) {
        self.l1.register(store, rng, frozen);
        self.l2.register(store, rng, frozen);
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: ValueId) -> ValueId {
        let h = self.l1.forward(g, store, x);
        let h = match self.activation {
            Activation::Tanh => g.tanh(h),
            Activation::Identity => h,
        };
        self.l2.forward(g, store, h)
    }

    pub fn param_names(&self) -> Vec<String> {
        vec![
            self.l1.weight_name(),
            self.l1.bias_name(),
            self.l2.weight_name(),
            self.l2.bias_name(),
        ]
    }
}

/// Overwrite an MLP's weights with an exact identity map (requires
/// `Identity` activation and hidden >= in == out). Test configurations only.
pub fn set_identity(mlp: &Mlp, store: &mut ParamStore) {
    assert_eq!(mlp.activation, Activation::Identity);
    assert_eq!(mlp.l1.in_dim, mlp.l2.out_dim);
    assert!(mlp.l1.out_dim >= mlp.l1.in_dim);
    let dim = mlp.l1.in_dim;
    let hidden = mlp.l1.out_dim;
    let mut w1 = vec![0.0; hidden * dim];
    for i in 0..dim {
        w1[i * dim + i] = 1.0;
    }
    let mut w2 = vec![0.0; dim * hidden];
    for i in 0..dim {
        w2[i * hidden + i] = 1.0;
    }
    *store.values_mut(&mlp.l1.weight_name()).unwrap() = w1;
    *store.values_mut(&mlp.l1.bias_name()).unwrap() = vec![0.0; hidden];
    *store.values_mut(&mlp.l2.weight_name()).unwrap() = w2;
    *store.values_mut(&mlp.l2.bias_name()).unwrap() = vec![0.0; dim];
}

/// Zero every weight and bias of an MLP. Test configurations only.
pub fn set_zero(mlp: &Mlp, store: &mut ParamStore) {
    for name in mlp.param_names() {
        let v = store.values_mut(&name).unwrap();
        v.iter_mut().for_each(|x| *x = 0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_configuration_is_exact() {
        let mlp = Mlp::new("m", 3, 3, 3).with_activation(Activation::Identity);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        mlp.register(&mut store, &mut rng, false);
        set_identity(&mlp, &mut store);

        let mut g = Graph::new();
        let x = g.constant(vec![0.4, -1.7, 2.5]);
        let y = mlp.forward(&mut g, &store, x);
        assert_eq!(g.value(y), &[0.4, -1.7, 2.5]);
    }

    #[test]
    fn zero_mlp_maps_everything_to_zero() {
        let mlp = Mlp::new("m", 4, 8, 2);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        mlp.register(&mut store, &mut rng, false);
        set_zero(&mlp, &mut store);

        let mut g = Graph::new();
        let x = g.constant(vec![1.0, 2.0, 3.0, 4.0]);
        let y = mlp.forward(&mut g, &store, x);
        assert_eq!(g.value(y), &[0.0, 0.0]);
    }

    #[test]
    fn mlp_parameter_gradients_match_finite_differences() {
        let mlp = Mlp::new("m", 3, 5, 2);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        mlp.register(&mut store, &mut rng, false);

        let input = vec![0.3, -0.8, 1.1];
        let loss = |s: &ParamStore| {
            let mut g = Graph::new();
            let x = g.constant(input.clone());
            let y = mlp.forward(&mut g, s, x);
            let d = g.dot(y, y);
            g.value(d)[0]
        };

        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let y = mlp.forward(&mut g, &store, x);
        let d = g.dot(y, y);
        let grads = g.backward(d);

        for name in mlp.param_names() {
            let len = store.values(&name).unwrap().len();
            for idx in (0..len).step_by(3) {
                let orig = store.values(&name).unwrap()[idx];
                let eps = 1e-6;
                store.values_mut(&name).unwrap()[idx] = orig + eps;
                let fp = loss(&store);
                store.values_mut(&name).unwrap()[idx] = orig - eps;
                let fm = loss(&store);
                store.values_mut(&name).unwrap()[idx] = orig;
                let num = (fp - fm) / (2.0 * eps);
                let ana = grads.get(&name).unwrap()[idx];
                assert!(
                    (num - ana).abs() <= 1e-5 * num.abs().max(ana.abs()) + 1e-9,
                    "{name}[{idx}]: {num} vs {ana}"
                );
            }
        }
    }
}
