use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{Gradients, Graph, Var};
use super::tensor::{Real, Tensor};

/// Named parameter tree. Iteration order is the lexical order of names.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.params.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(Tensor::is_finite)
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Copies every entry of `other` into `self`, replacing same-named entries.
    pub fn merge(&mut self, other: ParamStore<T>) {
        self.params.extend(other.params);
    }

    /// Keeps entries whose name starts with `prefix`, with the prefix stripped.
    pub fn sub_tree(&self, prefix: &str) -> ParamStore<T> {
        ParamStore {
            params: self
                .params
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    pub fn with_prefix(self, prefix: &str) -> ParamStore<T> {
        ParamStore {
            params: self
                .params
                .into_iter()
                .map(|(k, v)| (format!("{prefix}{k}"), v))
                .collect(),
        }
    }
}

/// How a freshly declared parameter is filled.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal with standard deviation `gain / sqrt(fan_in)`.
    FanIn {
        fan_in: usize,
        gain: f64,
    },
}

/// Binds parameters into a [`Graph`] by name.
///
/// In init mode, the first request for a name creates it from the given
/// [`Init`]; running a model's forward once in init mode therefore defines
/// the parameter tree and the forward pass from a single source.
pub struct Ctx<'a, T: Real> {
    pub g: &'a mut Graph<T>,
    store: Store<'a, T>,
    rng: Option<&'a mut ChaCha8Rng>,
    bound: BTreeMap<String, Var>,
    trainable: bool,
}

enum Store<'a, T> {
    Shared(&'a ParamStore<T>),
    Owned(&'a mut ParamStore<T>),
}

impl<T: Real> Store<'_, T> {
    fn get(&self, name: &str) -> Option<&Tensor<T>> {
        match self {
            Store::Shared(s) => s.get(name),
            Store::Owned(s) => s.get(name),
        }
    }
}

impl<'a, T: Real> Ctx<'a, T> {
    /// Reads parameters from `store`; unknown names panic.
    pub fn new(g: &'a mut Graph<T>, store: &'a ParamStore<T>) -> Self {
        Self {
            g,
            store: Store::Shared(store),
            rng: None,
            bound: BTreeMap::new(),
            trainable: true,
        }
    }

    /// Creates missing parameters with `rng`.
    pub fn init(g: &'a mut Graph<T>, store: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            g,
            store: Store::Owned(store),
            rng: Some(rng),
            bound: BTreeMap::new(),
            trainable: true,
        }
    }

    /// Binds parameters as constants (inference).
    pub fn frozen(mut self) -> Self {
        self.trainable = false;
        self
    }

    pub fn p(&mut self, name: &str, shape: &[usize], init: Init) -> Var {
        if let Some(v) = self.bound.get(name) {
            return *v;
        }
        if self.store.get(name).is_none() {
            let rng = self
                .rng
                .as_deref_mut()
                .unwrap_or_else(|| panic!("parameter `{name}` missing from store"));
            let n: usize = shape.iter().product();
            let data: Vec<T> = match init {
                Init::Zeros => vec![T::zero(); n],
                Init::Ones => vec![T::one(); n],
                Init::FanIn { fan_in, gain } => {
                    let std = gain / (fan_in.max(1) as f64).sqrt();
                    let normal = Normal::new(0.0, std).expect("finite std");
                    (0..n).map(|_| T::lit(normal.sample(rng))).collect()
                }
            };
            match &mut self.store {
                Store::Owned(s) => s.insert(name, Tensor::from_vec(shape, data)),
                Store::Shared(_) => unreachable!("init mode owns its store"),
            }
        }
        let t = self.store.get(name).expect("present").clone();
        assert_eq!(t.shape(), shape, "parameter `{name}` has unexpected shape");
        let v = if self.trainable {
            self.g.param(t)
        } else {
            self.g.input(t)
        };
        self.bound.insert(name.to_string(), v);
        v
    }

    pub fn bound(&self) -> &BTreeMap<String, Var> {
        &self.bound
    }

    pub fn into_bound(self) -> BTreeMap<String, Var> {
        self.bound
    }
}

/// Collects parameter gradients by name, zero-filling parameters the loss did not reach.
pub fn collect_grads<T: Real>(
    store: &ParamStore<T>,
    bound: &BTreeMap<String, Var>,
    mut grads: Gradients<T>,
) -> ParamStore<T> {
    let mut out = ParamStore::new();
    for (name, t) in store.iter() {
        let g = bound
            .get(name)
            .and_then(|v| grads.take(*v))
            .unwrap_or_else(|| Tensor::zeros(t.shape()));
        out.insert(name.clone(), g);
    }
    out
}

/// Draws a standard-normal tensor.
pub fn randn<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..n)
            .map(|_| T::lit(rng.sample::<f64, _>(rand_distr::StandardNormal)))
            .collect(),
    )
}
