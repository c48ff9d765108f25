use std::collections::BTreeMap;

use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors in declaration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<S> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
}

impl<S: Real> ParamSet<S> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<S>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter name `{name}`");
        self.names.push(name);
        self.tensors.push(tensor.with_requires_grad(true));
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.tensors[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<S>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Drops every gradient buffer.
    pub fn clear_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::clear_grad);
    }

    /// Adds `grads` into the gradient buffers of the parameters.
    pub fn accumulate(&mut self, grads: &Gradients<S>) {
        for (i, g) in grads.entries.iter().enumerate() {
            let Some(g) = g else { continue };
            let buf = self.tensors[i].grad_mut();
            match g {
                ParamGrad::Dense(d) => {
                    for (b, x) in buf.iter_mut().zip(d) {
                        *b += *x;
                    }
                }
                ParamGrad::Rows { width, rows } => {
                    for (&r, vals) in rows {
                        let dst = &mut buf[r * width..(r + 1) * width];
                        for (b, x) in dst.iter_mut().zip(vals) {
                            *b += *x;
                        }
                    }
                }
            }
        }
    }

    /// Replaces the values of every parameter, keeping shapes.
    pub fn copy_values_from(&mut self, other: &ParamSet<S>) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Contract("parameter sets differ".into()));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            if dst.shape() != src.shape() {
                return Err(Error::shape("copy_values_from", dst.shape(), src.shape()));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    pub fn cast<T: Real>(&self) -> ParamSet<T> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Gradient for a single parameter: dense, or a sparse set of rows touched by
/// an embedding lookup.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamGrad<S> {
    Dense(Vec<S>),
    Rows {
        width: usize,
        rows: BTreeMap<usize, Vec<S>>,
    },
}

impl<S: Real> ParamGrad<S> {
    pub fn to_dense(&self, numel: usize) -> Vec<S> {
        match self {
            ParamGrad::Dense(d) => d.clone(),
            ParamGrad::Rows { width, rows } => {
                let mut out = vec![S::zero(); numel];
                for (&r, vals) in rows {
                    out[r * width..(r + 1) * width].copy_from_slice(vals);
                }
                out
            }
        }
    }
}

/// Gradients produced by one backward pass, indexed by [`ParamId`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<S> {
    entries: Vec<Option<ParamGrad<S>>>,
    numels: Vec<usize>,
}

impl<S: Real> Gradients<S> {
    pub(crate) fn new(params: &ParamSet<S>) -> Self {
        Self {
            entries: vec![None; params.len()],
            numels: params.tensors.iter().map(Tensor::numel).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&ParamGrad<S>> {
        self.entries.get(id.0).and_then(Option::as_ref)
    }

    /// Dense copy of the gradient, zeros when the parameter was not reached.
    pub fn dense(&self, id: ParamId) -> Vec<S> {
        let n = self.numels[id.0];
        self.get(id).map_or_else(|| vec![S::zero(); n], |g| g.to_dense(n))
    }

    pub(crate) fn add_dense(&mut self, id: ParamId, grad: &[S]) {
        let n = self.numels[id.0];
        let entry = &mut self.entries[id.0];
        match entry {
            None => *entry = Some(ParamGrad::Dense(grad.to_vec())),
            Some(ParamGrad::Dense(d)) => {
                for (a, b) in d.iter_mut().zip(grad) {
                    *a += *b;
                }
            }
            Some(rows @ ParamGrad::Rows { .. }) => {
                let mut d = rows.to_dense(n);
                for (a, b) in d.iter_mut().zip(grad) {
                    *a += *b;
                }
                *entry = Some(ParamGrad::Dense(d));
            }
        }
    }

    pub(crate) fn add_row(&mut self, id: ParamId, width: usize, row: usize, grad: &[S]) {
        let entry = self.entries[id.0].get_or_insert_with(|| ParamGrad::Rows {
            width,
            rows: BTreeMap::new(),
        });
        match entry {
            ParamGrad::Dense(d) => {
                for (a, b) in d[row * width..(row + 1) * width].iter_mut().zip(grad) {
                    *a += *b;
                }
            }
            ParamGrad::Rows { rows, .. } => {
                let dst = rows.entry(row).or_insert_with(|| vec![S::zero(); width]);
                for (a, b) in dst.iter_mut().zip(grad) {
                    *a += *b;
                }
            }
        }
    }
}
