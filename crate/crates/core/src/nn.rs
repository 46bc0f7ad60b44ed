//! Parameter storage, convolution layers, initialization and Adam.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::kernels::ConvGeom;
use crate::tape::{Tape, Var};
use crate::tensor::{Fnv, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        debug_assert!(self.id(name).is_none(), "duplicate parameter {name}");
        self.names.push(name.to_string());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.shape().len()).sum()
    }

    /// Order-sensitive checksum over the given parameters (names and bits).
    pub fn checksum_of(&self, ids: impl IntoIterator<Item = ParamId>) -> u64 {
        let mut h = Fnv::new();
        for id in ids {
            h.write(self.names[id.0].as_bytes());
            h.write(&self.values[id.0].checksum().to_le_bytes());
        }
        h.finish()
    }

    pub fn checksum(&self) -> u64 {
        self.checksum_of((0..self.len()).map(ParamId))
    }

    /// Replace values from `(name, tensor)` pairs; every name and shape must match.
    pub fn load(&mut self, entries: impl IntoIterator<Item = (String, Tensor)>) -> Result<()> {
        let mut seen = alloc::vec![false; self.len()];
        for (name, value) in entries {
            let Some(id) = self.id(&name) else {
                bail!(Data, "unexpected parameter {name}");
            };
            if self.values[id.0].shape() != value.shape() {
                bail!(
                    Dimension,
                    "parameter {name}: expected {}, got {}",
                    self.values[id.0].shape(),
                    value.shape()
                );
            }
            self.values[id.0] = value;
            seen[id.0] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            bail!(Data, "missing parameter {}", self.names[missing]);
        }
        Ok(())
    }
}

/// A forward-pass context binding one store's parameters onto a tape.
pub struct Scope<'a> {
    pub tape: &'a mut Tape,
    store: &'a ParamStore,
    track: bool,
}

impl<'a> Scope<'a> {
    /// `track = false` enters every parameter as a frozen constant.
    pub fn new(tape: &'a mut Tape, store: &'a ParamStore, track: bool) -> Self {
        Self { tape, store, track }
    }

    pub fn bind(&mut self, id: ParamId) -> Var {
        if self.track {
            self.tape.param(id, self.store.get(id))
        } else {
            self.tape.constant(self.store.get(id).clone())
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }
}

pub fn normal_tensor(shape: Shape, std: f64, rng: &mut impl Rng) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite std");
    let data = (0..shape.len()).map(|_| dist.sample(rng)).collect();
    Tensor::from_vec(shape, data).expect("shape")
}

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `N(0, std²)`.
    Normal(f64),
    /// He/Kaiming normal for ReLU fan-in.
    He,
}

impl Init {
    fn std(self, fan_in: usize) -> f64 {
        match self {
            Init::Normal(s) => s,
            Init::He => libm::sqrt(2.0 / fan_in as f64),
        }
    }
}

/// A (possibly transposed) square-kernel convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeom,
    pub transposed: bool,
    pub output_pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        geom: ConvGeom,
        bias: bool,
        init: Init,
    ) -> Self {
        let k = geom.kernel;
        let shape = Shape::new(cout, cin, k, k);
        let weight = store.add(
            &alloc::format!("{name}.weight"),
            normal_tensor(shape, init.std(cin * k * k), rng),
        );
        let bias = bias.then(|| store.add(&alloc::format!("{name}.bias"), Tensor::zeros(Shape::new(1, cout, 1, 1))));
        Self {
            weight,
            bias,
            geom,
            transposed: false,
            output_pad: 0,
        }
    }

    /// Transposed convolution with stride-2 doubling (`output_pad = stride - 1`).
    #[allow(clippy::too_many_arguments)]
    pub fn new_transposed(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        geom: ConvGeom,
        init: Init,
    ) -> Self {
        let k = geom.kernel;
        let weight = store.add(
            &alloc::format!("{name}.weight"),
            normal_tensor(Shape::new(cin, cout, k, k), init.std(cin * k * k), rng),
        );
        let bias = Some(store.add(&alloc::format!("{name}.bias"), Tensor::zeros(Shape::new(1, cout, 1, 1))));
        Self {
            weight,
            bias,
            geom,
            transposed: true,
            output_pad: geom.stride - 1,
        }
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> {
        core::iter::once(self.weight).chain(self.bias)
    }

    pub fn forward(&self, s: &mut Scope<'_>, x: Var) -> Result<Var> {
        let w = s.bind(self.weight);
        let b = self.bias.map(|b| s.bind(b));
        if self.transposed {
            s.tape.conv_transpose2d(x, w, b, self.geom, self.output_pad)
        } else {
            s.tape.conv2d(x, w, b, self.geom)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction; moment buffers align with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub steps: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let mut a = Self {
            config,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        };
        a.sync(store);
        a
    }

    /// Allocate zeroed moments for parameters added since the last call.
    pub fn sync(&mut self, store: &ParamStore) {
        for (_, _, v) in store.iter().skip(self.first.len()) {
            self.first.push(Tensor::zeros(v.shape()));
            self.second.push(Tensor::zeros(v.shape()));
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)]) {
        self.sync(store);
        self.steps += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.steps as f64;
        let c1 = 1.0 - libm::pow(beta1, t);
        let c2 = 1.0 - libm::pow(beta2, t);
        for (id, g) in grads {
            let m = &mut self.first[id.0];
            let v = &mut self.second[id.0];
            let p = store.get_mut(*id);
            for (((p, m), v), g) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / (libm::sqrt(*v / c2) + eps);
            }
        }
    }
}
