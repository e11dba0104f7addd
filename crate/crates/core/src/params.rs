//! Named parameter storage, initialisation and the Adam optimiser.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::scalar::Scalar;
use crate::spectro_io::{load_tensor, save_tensor};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

/// Graph leaves for every parameter of a store.
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        Bound(self.tensors.iter().map(|t| g.param(t.clone())).collect())
    }

    /// Same names and shapes in another precision.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn zero_all(&mut self) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

impl ParamStore<f32> {
    /// Writes one tensor file per parameter, `<name>.dpit`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, t) in self.names.iter().zip(&self.tensors) {
            save_tensor(&dir.join(format!("{name}.dpit")), t.shape(), t.data())?;
        }
        Ok(())
    }

    /// Loads every parameter of this store from `dir`; shapes must match.
    pub fn load_dir(&mut self, dir: &Path) -> Result<()> {
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let (dims, data) = load_tensor(&dir.join(format!("{name}.dpit")))?;
            if dims != t.shape() {
                return Err(Error::Shape(format!(
                    "checkpoint {name}: expected {:?}, found {dims:?}",
                    t.shape()
                )));
            }
            t.data_mut().copy_from_slice(&data);
        }
        Ok(())
    }
}

/// Seeded parameter initialiser.
pub struct Init {
    rng: ChaCha8Rng,
    /// When false, adaLN modulation projections start at zero so every
    /// residual branch is dormant.
    pub generic_gates: bool,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            generic_gates: false,
        }
    }

    /// Random (non-zero) modulation projections; used by perturbation and
    /// gradient tests that need every branch active.
    pub fn generic(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            generic_gates: true,
        }
    }

    pub fn normal<T: Scalar>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        let dist = Normal::new(0.0, std).expect("finite std");
        Tensor::from_fn(shape, |_| T::lit(dist.sample(&mut self.rng)))
    }

    /// Xavier-uniform for a `[fan_in, fan_out]`-style weight.
    pub fn xavier<T: Scalar>(&mut self, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor<T> {
        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
        self.normal(shape, std)
    }

    pub fn zeros<T: Scalar>(&mut self, shape: &[usize]) -> Tensor<T> {
        Tensor::zeros(shape)
    }

    /// Modulation projection: zero unless generic gates were requested.
    pub fn modulation<T: Scalar>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        if self.generic_gates {
            self.normal(shape, 0.5 / (fan_in as f64).sqrt())
        } else {
            Tensor::zeros(shape)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: Some(1.0),
        }
    }
}

pub struct Adam<T> {
    cfg: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = || store.tensors.iter().map(|t| vec![T::zero(); t.numel()]).collect();
        Self {
            cfg,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    /// Applies one update from the gradients of `bound`'s leaves. Returns the
    /// pre-clip gradient norm.
    pub fn step(&mut self, store: &mut ParamStore<T>, bound: &Bound, grads: &Gradients<T>) -> f64 {
        let sq: f64 = bound
            .vars()
            .iter()
            .filter_map(|&v| grads.get(v))
            .flat_map(|g| g.data().iter())
            .map(|x| x.to_f64().unwrap_or(f64::NAN).powi(2))
            .sum();
        let norm = sq.sqrt();
        let factor = match self.cfg.clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let (b1t, b2t) = (T::lit(b1), T::lit(b2));
        let lr = T::lit(self.cfg.lr * bc2.sqrt() / bc1);
        let eps = T::lit(self.cfg.eps * bc2.sqrt());
        let factor = T::lit(factor);
        for (i, &var) in bound.vars().iter().enumerate() {
            let Some(g) = grads.get(var) else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((p, &gr), mi), vi) in store.tensors[i]
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let gr = gr * factor;
                *mi = b1t * *mi + (T::one() - b1t) * gr;
                *vi = b2t * *vi + (T::one() - b2t) * gr * gr;
                *p -= lr * *mi / (vi.sqrt() + eps);
            }
        }
        norm
    }
}
