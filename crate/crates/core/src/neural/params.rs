use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    /// Whether AdamW applies weight decay to this tensor.
    pub decay: bool,
}

/// Named trainable tensors, all stored as row-major matrices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        init: Init,
        decay: bool,
        rng: &mut R,
    ) -> ParamId {
        assert!(!self.by_name.contains_key(name), "duplicate parameter {name}");
        let n = rows * cols;
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("finite std");
                (0..n).map(|_| dist.sample(rng)).collect()
            }
        };
        let id = ParamId(self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            rows,
            cols,
            data,
            decay,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients(self.params.iter().map(|p| vec![0.0; p.data.len()]).collect())
    }

    /// Replace all values from `other`, which must have identical names and shapes.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::Shape("parameter count differs".into()));
        }
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            if a.name != b.name || a.rows != b.rows || a.cols != b.cols {
                return Err(Error::Shape(format!("parameter {} does not match {}", a.name, b.name)));
            }
            a.data.copy_from_slice(&b.data);
        }
        Ok(())
    }
}

/// Gradient buffers laid out like a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub(crate) Vec<Vec<f64>>);

impl Gradients {
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.0[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.0[id.0]
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().flatten().for_each(|x| *x *= s);
    }

    pub fn zero(&mut self) {
        self.0.iter_mut().flatten().for_each(|x| *x = 0.0);
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn buffers(&self) -> &[Vec<f64>] {
        &self.0
    }
}

impl ParamStore {
    pub(crate) fn push_raw(&mut self, p: Param) -> Result<ParamId> {
        if self.by_name.contains_key(&p.name) {
            return Err(Error::Checkpoint(format!("duplicate parameter {}", p.name)));
        }
        if p.data.len() != p.rows * p.cols {
            return Err(Error::Shape(format!("parameter {} data length", p.name)));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(p.name.clone(), id);
        self.params.push(p);
        Ok(id)
    }
}

impl ParamId {
    /// Id of the `i`-th parameter registered in a store.
    pub fn from_index(i: usize) -> Self {
        ParamId(i)
    }
}
