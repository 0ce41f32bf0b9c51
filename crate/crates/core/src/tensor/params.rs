use std::collections::BTreeMap;

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Named trainable parameters plus named persistent buffers (batchnorm
/// running statistics). Iteration is sorted by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet<T = f32> {
    params: BTreeMap<String, Tensor<T>>,
    buffers: BTreeMap<String, Tensor<T>>,
    velocity: BTreeMap<String, Vec<T>>,
}

impl<T: Element> ParameterSet<T> {
    pub fn new() -> Self {
        ParameterSet { params: BTreeMap::new(), buffers: BTreeMap::new(), velocity: BTreeMap::new() }
    }

    pub fn insert_param(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) || self.buffers.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name `{name}`")));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) || self.buffers.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate buffer name `{name}`")));
        }
        self.buffers.insert(name, value);
        Ok(())
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor<T>> {
        self.buffers.get(name)
    }

    pub fn buffer_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.buffers.get_mut(name)
    }

    /// Mutable access to two buffers at once.
    pub fn buffer_pair_mut(&mut self, a: &str, b: &str) -> Option<(&mut Tensor<T>, &mut Tensor<T>)> {
        if a == b {
            return None;
        }
        let mut first = None;
        let mut second = None;
        for (name, t) in self.buffers.iter_mut() {
            if name == a {
                first = Some(t);
            } else if name == b {
                second = Some(t);
            }
        }
        first.zip(second)
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn trainable_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn clear_grads(&mut self) {
        self.params.values_mut().for_each(Tensor::clear_grad);
    }

    /// Copy of parameters and buffers without gradients or optimizer state.
    pub fn snapshot(&self) -> Self {
        let strip = |m: &BTreeMap<String, Tensor<T>>| {
            m.iter()
                .map(|(n, t)| {
                    let mut t = t.clone();
                    t.clear_grad();
                    (n.clone(), t)
                })
                .collect()
        };
        ParameterSet { params: strip(&self.params), buffers: strip(&self.buffers), velocity: BTreeMap::new() }
    }

    /// Momentum SGD: `v = momentum * v + grad; p = p - lr * v`.
    ///
    /// Fails without modifying anything if any parameter lacks a gradient.
    pub fn sgd_step(&mut self, lr: f64, momentum: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!("momentum {momentum} is outside [0, 1)")));
        }
        if let Some((name, _)) = self.params.iter().find(|(_, t)| t.grad().is_none()) {
            return Err(Error::MissingGrad(name.clone()));
        }
        let (lr, mu) = (T::from_f64(lr), T::from_f64(momentum));
        for (name, p) in self.params.iter_mut() {
            let grad = p.grad().expect("checked above").to_vec();
            let v = self.velocity.entry(name.clone()).or_insert_with(|| vec![T::zero(); grad.len()]);
            for ((vi, gi), pi) in v.iter_mut().zip(&grad).zip(p.data_mut()) {
                *vi = mu * *vi + *gi;
                *pi -= lr * *vi;
            }
        }
        Ok(())
    }
}
