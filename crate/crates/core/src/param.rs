//! Trainable parameters and the store that owns them.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor with its gradient and Adagrad accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub gradient: Tensor,
    pub accumulator: Tensor,
    /// Frozen parameters behave as constants on the tape.
    pub trainable: bool,
    /// Row-sparse parameters (embedding tables) are updated row by row.
    pub sparse_rows: bool,
}

/// Adagrad hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adagrad {
    pub learning_rate: f64,
    pub epsilon: f64,
    /// Weight decay added to the gradient before the update.
    pub l2_weight: f64,
}

impl Default for Adagrad {
    fn default() -> Self {
        Adagrad {
            learning_rate: 0.1,
            epsilon: 1e-8,
            l2_weight: 1e-5,
        }
    }
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let shape = value.shape();
        Parameter {
            name: name.into(),
            value,
            gradient: Tensor::zeros(shape),
            accumulator: Tensor::zeros(shape),
            trainable: true,
            sparse_rows: false,
        }
    }

    pub fn shape(&self) -> Shape {
        self.value.shape()
    }

    /// One Adagrad update over the whole parameter, then clears the gradient.
    ///
    /// `acc += g²; value -= lr·g / (√acc + ε)` with `g = grad + l2·value`.
    pub fn adagrad_step(&mut self, opt: &Adagrad) -> Result<()> {
        if !self.gradient.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient for {}",
                self.name
            )));
        }
        adagrad_slice(
            self.value.data_mut(),
            self.gradient.data(),
            self.accumulator.data_mut(),
            opt,
        );
        self.gradient.fill(0.0);
        Ok(())
    }

    /// Adagrad restricted to the listed rows of a matrix parameter.
    pub fn adagrad_step_rows(&mut self, rows: &BTreeSet<usize>, opt: &Adagrad) -> Result<()> {
        for &r in rows {
            if !self.gradient.row(r).iter().all(|g| g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for {} row {r}",
                    self.name
                )));
            }
        }
        for &r in rows {
            // Rows are disjoint slices of three different tensors.
            let grad = self.gradient.row(r).to_vec();
            let mut acc = self.accumulator.row(r).to_vec();
            adagrad_slice(self.value.row_mut(r), &grad, &mut acc, opt);
            self.accumulator.row_mut(r).copy_from_slice(&acc);
            self.gradient.row_mut(r).fill(0.0);
        }
        Ok(())
    }
}

fn adagrad_slice(value: &mut [f64], grad: &[f64], acc: &mut [f64], opt: &Adagrad) {
    for ((v, &g), a) in value.iter_mut().zip(grad).zip(acc.iter_mut()) {
        let g = g + opt.l2_weight * *v;
        if g == 0.0 {
            continue;
        }
        *a += g * g;
        *v -= opt.learning_rate * g / (a.sqrt() + opt.epsilon);
    }
}

/// Which parameters (and which rows of sparse ones) received gradient since
/// the last update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Touched {
    pub dense: BTreeSet<ParamId>,
    pub rows: BTreeMap<ParamId, BTreeSet<usize>>,
}

impl Touched {
    pub fn contains(&self, id: ParamId) -> bool {
        self.dense.contains(&id) || self.rows.contains_key(&id)
    }

    pub fn is_empty(&self) -> bool {
        self.dense.is_empty() && self.rows.is_empty()
    }
}

/// Owns every parameter of a model, addressed by [`ParamId`] or by name.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
    touched: Touched,
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, param: Parameter) -> ParamId {
        assert!(
            !self.by_name.contains_key(&param.name),
            "duplicate parameter name {}",
            param.name
        );
        let id = ParamId(self.params.len());
        self.by_name.insert(param.name.clone(), id);
        self.params.push(param);
        id
    }

    /// Adds a parameter drawn uniformly from `[-scale, scale]`.
    pub fn add_uniform(&mut self, name: impl Into<String>, shape: Shape, scale: f64, rng: &mut impl Rng) -> ParamId {
        let data = (0..shape.len())
            .map(|_| rng.gen_range(-scale..=scale))
            .collect();
        self.add(Parameter::new(name, Tensor::new(shape, data).expect("shape/data agree")))
    }

    pub fn add_filled(&mut self, name: impl Into<String>, shape: Shape, value: f64) -> ParamId {
        self.add(Parameter::new(name, Tensor::filled(shape, value)))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.id(name).map(|id| self.get_mut(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Drops every parameter added after the store had `len` entries.
    pub fn truncate(&mut self, len: usize) {
        for p in self.params.drain(len..) {
            self.by_name.remove(&p.name);
        }
        self.touched.dense.retain(|id| id.0 < len);
        self.touched.rows.retain(|id, _| id.0 < len);
    }

    pub fn touched(&self) -> &Touched {
        &self.touched
    }

    /// Adds a dense gradient contribution.
    pub(crate) fn accumulate(&mut self, id: ParamId, grad: &[f64]) {
        let p = &mut self.params[id.0];
        for (g, &d) in p.gradient.data_mut().iter_mut().zip(grad) {
            *g += d;
        }
        self.touched.dense.insert(id);
    }

    /// Adds a gradient contribution to one row of a matrix parameter.
    pub(crate) fn accumulate_row(&mut self, id: ParamId, row: usize, grad: &[f64]) {
        let p = &mut self.params[id.0];
        for (g, &d) in p.gradient.row_mut(row).iter_mut().zip(grad) {
            *g += d;
        }
        if p.sparse_rows {
            self.touched.rows.entry(id).or_default().insert(row);
        } else {
            self.touched.dense.insert(id);
        }
    }

    /// Applies Adagrad to every touched parameter (touched rows only for
    /// sparse ones) and clears gradients. Nothing is modified if any touched
    /// gradient is non-finite.
    pub fn adagrad_update(&mut self, opt: &Adagrad) -> Result<()> {
        let touched = std::mem::take(&mut self.touched);
        let check = || -> Result<()> {
            for &id in &touched.dense {
                if !self.params[id.0].gradient.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient for {}",
                        self.params[id.0].name
                    )));
                }
            }
            for (&id, rows) in &touched.rows {
                let p = &self.params[id.0];
                if rows.iter().any(|&r| !p.gradient.row(r).iter().all(|g| g.is_finite())) {
                    return Err(Error::Numeric(format!("non-finite gradient for {}", p.name)));
                }
            }
            Ok(())
        };
        if let Err(e) = check() {
            self.zero_grad_with(&touched);
            return Err(e);
        }
        for &id in &touched.dense {
            self.params[id.0].adagrad_step(opt)?;
        }
        for (&id, rows) in &touched.rows {
            self.params[id.0].adagrad_step_rows(rows, opt)?;
        }
        Ok(())
    }

    /// Clears every accumulated gradient without updating values.
    pub fn zero_grad(&mut self) {
        let touched = std::mem::take(&mut self.touched);
        self.zero_grad_with(&touched);
    }

    fn zero_grad_with(&mut self, touched: &Touched) {
        for &id in &touched.dense {
            self.params[id.0].gradient.fill(0.0);
        }
        for (&id, rows) in &touched.rows {
            for &r in rows {
                self.params[id.0].gradient.row_mut(r).fill(0.0);
            }
        }
    }

    /// Copies values and accumulators from `other` for every name present
    /// in both stores; returns how many parameters were copied.
    pub fn copy_matching(&mut self, other: &ParamStore, prefix: &str) -> Result<usize> {
        let mut copied = 0;
        for (_, src) in other.iter().filter(|(_, p)| p.name.starts_with(prefix)) {
            let Some(dst) = self.by_name_mut(&src.name) else {
                continue;
            };
            if dst.shape() != src.shape() {
                return Err(Error::Config(format!(
                    "parameter {} has shape {} but source has {}",
                    src.name,
                    dst.shape(),
                    src.shape()
                )));
            }
            dst.value = src.value.clone();
            dst.accumulator = src.accumulator.clone();
            copied += 1;
        }
        Ok(copied)
    }
}
