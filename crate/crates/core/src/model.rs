//! A trainable network instantiated from an [`ArchitectureSpec`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::{ArchitectureSpec, LayerSpec, Shape};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::{
    batchnorm2d, batchnorm2d_backward, conv2d_backward, conv2d_with, dense, dense_backward, dropout,
    maxpool2d_backward, maxpool2d_with_indices, relu, relu_backward, BatchNormCache, Element, Mode,
    ParameterSet, Tensor, BN_EPSILON,
};

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Conv { weight: String, bias: String, stride: usize, padding: usize },
    Relu,
    BatchNorm { gamma: String, beta: String, mean: String, var: String },
    MaxPool { pool: usize, stride: usize },
    Flatten,
    Dense { weight: String, bias: String },
    Dropout { rate: f64 },
}

enum Saved<T> {
    Input(Tensor<T>),
    BatchNorm(BatchNormCache<T>),
    MaxPool { shape: Vec<usize>, argmax: Vec<usize> },
    Flatten(Vec<usize>),
    Dropout(Option<Vec<T>>),
}

/// Intermediate values recorded by [`Network::forward_train`] for the
/// backward pass.
pub struct Tape<T> {
    saved: Vec<Saved<T>>,
}

fn layer_prefix(index: usize, kind: &str) -> String {
    format!("{index:03}_{kind}")
}

/// Sequential CNN with parameters stored in a [`ParameterSet`] under names
/// like `004_batchnorm.gamma`.
#[derive(Clone, Debug)]
pub struct Network<T: Element = f32> {
    spec: ArchitectureSpec,
    nodes: Vec<Node>,
    params: ParameterSet<T>,
    dropout_seed: u64,
    dropout_calls: u64,
    input_grad: bool,
}

impl<T: Element> Network<T> {
    /// Builds the network with fan-in scaled uniform weights (limit
    /// `sqrt(6 / fan_in)`), zero biases, `gamma = 1`, `beta = 0`.
    pub fn new(spec: &ArchitectureSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let (nodes, shapes) = Self::plan(spec)?;
        let mut params = ParameterSet::new();
        for (i, (node, in_shape)) in nodes.iter().zip(&shapes).enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut uniform = |shape: &[usize], fan_in: usize| {
                let limit = (6.0 / fan_in as f64).sqrt();
                Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-limit..limit)))
            };
            match (node, &spec.layers[i], *in_shape) {
                (
                    Node::Conv { weight, bias, .. },
                    &LayerSpec::Conv { kernel_size: k, filters, .. },
                    Shape::Spatial { channels, .. },
                ) => {
                    params.insert_param(weight, uniform(&[filters, channels, k, k], channels * k * k))?;
                    params.insert_param(bias, Tensor::zeros(&[filters]))?;
                }
                (Node::Dense { weight, bias }, &LayerSpec::Dense { width }, Shape::Flat(n)) => {
                    params.insert_param(weight, uniform(&[n, width], n))?;
                    params.insert_param(bias, Tensor::zeros(&[width]))?;
                }
                (Node::BatchNorm { gamma, beta, mean, var }, _, Shape::Spatial { channels, .. }) => {
                    params.insert_param(gamma, Tensor::full(&[channels], T::one()))?;
                    params.insert_param(beta, Tensor::zeros(&[channels]))?;
                    params.insert_buffer(mean, Tensor::zeros(&[channels]))?;
                    params.insert_buffer(var, Tensor::full(&[channels], T::one()))?;
                }
                _ => {}
            }
        }
        Ok(Network {
            spec: spec.clone(),
            nodes,
            params,
            dropout_seed: seed ^ 0x9e37_79b9_7f4a_7c15,
            dropout_calls: 0,
            input_grad: false,
        })
    }

    /// Rebuilds a network from stored parameters, checking that every
    /// expected tensor is present with the right shape.
    pub fn from_parameters(spec: &ArchitectureSpec, params: ParameterSet<T>, seed: u64) -> Result<Self> {
        let fresh = Self::new(spec, seed)?;
        let names = |set: &ParameterSet<T>| -> Vec<(String, Vec<usize>, bool)> {
            set.params()
                .map(|(n, t)| (n.to_string(), t.shape().to_vec(), true))
                .chain(set.buffers().map(|(n, t)| (n.to_string(), t.shape().to_vec(), false)))
                .collect()
        };
        let (want, have) = (names(&fresh.params), names(&params));
        if want != have {
            let missing = want.iter().find(|w| !have.contains(w)).or_else(|| have.iter().find(|h| !want.contains(h)));
            return Err(Error::Shape(format!(
                "stored parameters do not match architecture `{}` (first difference: {:?})",
                spec.name, missing
            )));
        }
        Ok(Network { params, ..fresh })
    }

    fn plan(spec: &ArchitectureSpec) -> Result<(Vec<Node>, Vec<Shape>)> {
        let out_shapes = spec.output_shape()?;
        let input = Shape::Spatial {
            channels: spec.input_shape.channels,
            height: spec.input_shape.height,
            width: spec.input_shape.width,
        };
        let in_shapes: Vec<Shape> = std::iter::once(input).chain(out_shapes.iter().copied()).take(spec.layers.len()).collect();
        let nodes = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let p = layer_prefix(i, l.kind());
                match *l {
                    LayerSpec::Conv { stride, padding, .. } => {
                        Node::Conv { weight: format!("{p}.weight"), bias: format!("{p}.bias"), stride, padding }
                    }
                    LayerSpec::Batchnorm => Node::BatchNorm {
                        gamma: format!("{p}.gamma"),
                        beta: format!("{p}.beta"),
                        mean: format!("{p}.running_mean"),
                        var: format!("{p}.running_var"),
                    },
                    LayerSpec::Maxpool { pool_size, stride } => Node::MaxPool { pool: pool_size, stride },
                    LayerSpec::Flatten => Node::Flatten,
                    LayerSpec::Dense { .. } => Node::Dense { weight: format!("{p}.weight"), bias: format!("{p}.bias") },
                    LayerSpec::Dropout { rate } => Node::Dropout { rate },
                    LayerSpec::Relu => Node::Relu,
                }
            })
            .collect();
        Ok((nodes, in_shapes))
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParameterSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet<T> {
        &mut self.params
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes().expect("validated at construction")
    }

    /// Input shape for a batch of `b` samples.
    pub fn batch_shape(&self, b: usize) -> [usize; 4] {
        let s = self.spec.input_shape;
        [b, s.channels, s.height, s.width]
    }

    /// Makes [`Network::backward`] also return the gradient with respect to
    /// the network input (off by default; the first convolution then skips
    /// its input gradient).
    pub fn set_input_grad(&mut self, on: bool) {
        self.input_grad = on;
    }

    /// Converts parameters to another precision.
    pub fn cast<U: Element>(&self) -> Network<U> {
        let mut params = ParameterSet::new();
        for (n, t) in self.params.params() {
            params.insert_param(n, t.cast()).expect("names are unique");
        }
        for (n, t) in self.params.buffers() {
            params.insert_buffer(n, t.cast()).expect("names are unique");
        }
        Network {
            spec: self.spec.clone(),
            nodes: self.nodes.clone(),
            params,
            dropout_seed: self.dropout_seed,
            dropout_calls: self.dropout_calls,
            input_grad: self.input_grad,
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [b, ..] = x.dims4()?;
        if x.shape() != self.batch_shape(b) {
            return Err(Error::Shape(format!(
                "network `{}` expects input {:?}, got {:?}",
                self.spec.name,
                self.batch_shape(b),
                x.shape()
            )));
        }
        Ok(())
    }

    fn param(&self, name: &str) -> &Tensor<T> {
        self.params.param(name).expect("parameter created with the network")
    }

    /// Inference-mode forward pass (dropout off, running batchnorm
    /// statistics). Returns logits.
    pub fn infer(&self, x: &Tensor<T>, exec: Exec) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for node in &self.nodes {
            cur = match node {
                Node::Conv { weight, bias, stride, padding } => {
                    conv2d_with(exec, &cur, self.param(weight), self.param(bias), *stride, *padding)?
                }
                Node::Relu => relu(&cur),
                Node::BatchNorm { gamma, beta, mean, var } => {
                    let mut m = self.params.buffer(mean).expect("buffer").clone();
                    let mut v = self.params.buffer(var).expect("buffer").clone();
                    let (y, _) =
                        batchnorm2d(&cur, self.param(gamma), self.param(beta), &mut m, &mut v, BN_EPSILON, Mode::Infer)?;
                    y
                }
                Node::MaxPool { pool, stride } => maxpool2d_with_indices(&cur, *pool, *stride)?.0,
                Node::Flatten => {
                    let b = cur.shape()[0];
                    let n = cur.len() / b;
                    cur.reshape(vec![b, n])?
                }
                Node::Dense { weight, bias } => dense(&cur, self.param(weight), self.param(bias))?,
                Node::Dropout { .. } => cur,
            };
        }
        Ok(cur)
    }

    /// Train-mode forward pass. Updates batchnorm running statistics and
    /// advances the dropout call counter.
    pub fn forward_train(&mut self, x: &Tensor<T>, exec: Exec) -> Result<(Tensor<T>, Tape<T>)> {
        self.check_input(x)?;
        let mut cur = x.clone();
        let mut saved = Vec::with_capacity(self.nodes.len());
        for i in 0..self.nodes.len() {
            let node = self.nodes[i].clone();
            let (next, s) = match node {
                Node::Conv { weight, bias, stride, padding } => {
                    let y = conv2d_with(exec, &cur, self.param(&weight), self.param(&bias), stride, padding)?;
                    (y, Saved::Input(cur))
                }
                Node::Relu => (relu(&cur), Saved::Input(cur)),
                Node::BatchNorm { gamma, beta, mean, var } => {
                    let g = self.param(&gamma).clone();
                    let b = self.param(&beta).clone();
                    let (m, v) = self.params.buffer_pair_mut(&mean, &var).expect("buffers");
                    let (y, cache) = batchnorm2d(&cur, &g, &b, m, v, BN_EPSILON, Mode::Train)?;
                    (y, Saved::BatchNorm(cache.expect("train mode caches")))
                }
                Node::MaxPool { pool, stride } => {
                    let shape = cur.shape().to_vec();
                    let (y, argmax) = maxpool2d_with_indices(&cur, pool, stride)?;
                    (y, Saved::MaxPool { shape, argmax })
                }
                Node::Flatten => {
                    let shape = cur.shape().to_vec();
                    let b = shape[0];
                    let n = cur.len() / b;
                    (cur.reshape(vec![b, n])?, Saved::Flatten(shape))
                }
                Node::Dense { weight, bias } => {
                    let y = dense(&cur, self.param(&weight), self.param(&bias))?;
                    (y, Saved::Input(cur))
                }
                Node::Dropout { rate } => {
                    let counter = self.dropout_calls;
                    self.dropout_calls += 1;
                    let (y, mask) = dropout(&cur, rate, self.dropout_seed, counter, Mode::Train)?;
                    (y, Saved::Dropout(mask))
                }
            };
            cur = next;
            saved.push(s);
        }
        Ok((cur, Tape { saved }))
    }

    /// Back-propagates `grad_logits` through the recorded tape, storing a
    /// gradient on every parameter. Returns the input gradient when enabled
    /// with [`Network::set_input_grad`].
    pub fn backward(&mut self, tape: Tape<T>, grad_logits: &Tensor<T>, exec: Exec) -> Result<Option<Tensor<T>>> {
        if tape.saved.len() != self.nodes.len() {
            return Err(Error::Shape("tape does not belong to this network".into()));
        }
        let mut grad = grad_logits.clone();
        let first_param = self
            .nodes
            .iter()
            .position(|n| matches!(n, Node::Conv { .. } | Node::Dense { .. } | Node::BatchNorm { .. }))
            .unwrap_or(0);
        for (i, saved) in tape.saved.into_iter().enumerate().rev() {
            let node = self.nodes[i].clone();
            let need_input = self.input_grad || i > first_param;
            grad = match (node, saved) {
                (Node::Conv { weight, bias, stride, padding }, Saved::Input(x)) => {
                    let g = conv2d_backward(exec, &x, self.param(&weight), &grad, stride, padding, need_input)?;
                    self.set_grad(&weight, g.weights)?;
                    self.set_grad(&bias, g.bias)?;
                    match g.input {
                        Some(dx) => dx,
                        None => return Ok(None),
                    }
                }
                (Node::Relu, Saved::Input(x)) => relu_backward(&x, &grad)?,
                (Node::BatchNorm { gamma, beta, .. }, Saved::BatchNorm(cache)) => {
                    let g = batchnorm2d_backward(&cache, self.param(&gamma), &grad)?;
                    self.set_grad(&gamma, g.gamma)?;
                    self.set_grad(&beta, g.beta)?;
                    g.input
                }
                (Node::MaxPool { .. }, Saved::MaxPool { shape, argmax }) => maxpool2d_backward(&shape, &argmax, &grad)?,
                (Node::Flatten, Saved::Flatten(shape)) => grad.reshape(shape)?,
                (Node::Dense { weight, bias }, Saved::Input(x)) => {
                    let g = dense_backward(&x, self.param(&weight), &grad)?;
                    self.set_grad(&weight, g.weights)?;
                    self.set_grad(&bias, g.bias)?;
                    g.input
                }
                (Node::Dropout { .. }, Saved::Dropout(mask)) => match mask {
                    Some(m) => {
                        let d = grad.data().iter().zip(&m).map(|(&g, &k)| g * k).collect();
                        Tensor::new(grad.shape().to_vec(), d)?
                    }
                    None => grad,
                },
                _ => return Err(Error::Shape(format!("tape entry {i} does not match layer"))),
            };
        }
        Ok(self.input_grad.then_some(grad))
    }

    fn set_grad(&mut self, name: &str, g: Tensor<T>) -> Result<()> {
        self.params.param_mut(name).expect("parameter created with the network").set_grad(g.into_data())
    }
}
