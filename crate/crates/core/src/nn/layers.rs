//! Stateful layers that cache what their backward pass needs.

use serde::{Deserialize, Serialize};

use super::conv::{conv2d_backward, conv2d_forward, ConvSpec};
use super::ops::{maxpool_backward, maxpool_forward, relu_backward, relu_in_place, PoolSpec};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Declarative layer vocabulary used by encoder configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv {
        kernel: usize,
        out_channels: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
    Relu,
    Concat,
}

/// A trainable buffer with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub shape: Vec<usize>,
}

impl<T: Scalar> Param<T> {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Param {
            value: vec![T::zero(); n],
            grad: vec![T::zero(); n],
            shape,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    fn accumulate(&mut self, g: &[T]) {
        for (a, &b) in self.grad.iter_mut().zip(g) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub spec: ConvSpec,
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(spec: ConvSpec) -> Self {
        Conv2d {
            spec,
            weight: Param::zeros(vec![spec.out_channels, spec.in_channels, spec.kernel, spec.kernel]),
            bias: Param::zeros(vec![spec.out_channels]),
            input: None,
        }
    }

    pub fn forward(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        let y = conv2d_forward(&x, &self.weight.value, &self.bias.value, &self.spec)?;
        self.input = Some(x);
        Ok(y)
    }

    /// Forward pass without caching (inference).
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d_forward(x, &self.weight.value, &self.bias.value, &self.spec)
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .input
            .take()
            .ok_or_else(|| Error::ShapeMismatch("convolution backward without forward".into()))?;
        let grads = conv2d_backward(&x, &self.weight.value, g, &self.spec)?;
        self.weight.accumulate(&grads.weight);
        self.bias.accumulate(&grads.bias);
        Ok(grads.input)
    }
}

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    MaxPool {
        spec: PoolSpec,
        cache: Option<([usize; 4], Vec<usize>)>,
    },
    Relu {
        output: Option<Tensor<T>>,
    },
}

impl<T: Scalar> Layer<T> {
    pub fn from_spec(spec: &LayerSpec, in_channels: usize) -> Result<(Self, usize)> {
        Ok(match *spec {
            LayerSpec::Conv {
                kernel,
                out_channels,
                stride,
                padding,
            } => {
                let cs = ConvSpec::new(in_channels, out_channels, kernel, stride, padding);
                (Layer::Conv(Conv2d::new(cs)), out_channels)
            }
            LayerSpec::MaxPool { window, stride } => (
                Layer::MaxPool {
                    spec: PoolSpec { window, stride },
                    cache: None,
                },
                in_channels,
            ),
            LayerSpec::Relu => (Layer::Relu { output: None }, in_channels),
            LayerSpec::Concat => {
                return Err(Error::InvalidConfig("concat is a graph node, not a stream layer".into()))
            }
        })
    }

    pub fn forward(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(c) => c.forward(x),
            Layer::MaxPool { spec, cache } => {
                let (y, arg) = maxpool_forward(&x, spec)?;
                *cache = Some((x.shape(), arg));
                Ok(y)
            }
            Layer::Relu { output } => {
                let mut y = x;
                relu_in_place(&mut y);
                *output = Some(y.clone());
                Ok(y)
            }
        }
    }

    pub fn infer(&self, x: Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(c) => c.infer(&x),
            Layer::MaxPool { spec, .. } => Ok(maxpool_forward(&x, spec)?.0),
            Layer::Relu { .. } => {
                let mut y = x;
                relu_in_place(&mut y);
                Ok(y)
            }
        }
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let missing = || Error::ShapeMismatch("backward without forward".into());
        match self {
            Layer::Conv(c) => c.backward(g),
            Layer::MaxPool { cache, .. } => {
                let (shape, arg) = cache.take().ok_or_else(missing)?;
                maxpool_backward(shape, &arg, g)
            }
            Layer::Relu { output } => relu_backward(&output.take().ok_or_else(missing)?, g),
        }
    }
}

/// Named layer chain.
#[derive(Debug, Clone, Default)]
pub struct Sequential<T> {
    pub layers: Vec<(String, Layer<T>)>,
    pub out_channels: usize,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(in_channels: usize) -> Self {
        Sequential {
            layers: Vec::new(),
            out_channels: in_channels,
        }
    }

    pub fn push(&mut self, name: String, spec: &LayerSpec) -> Result<()> {
        let (layer, out) = Layer::from_spec(spec, self.out_channels)?;
        self.layers.push((name, layer));
        self.out_channels = out;
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn forward(&mut self, mut x: Tensor<T>) -> Result<Tensor<T>> {
        for (_, layer) in &mut self.layers {
            x = layer.forward(x)?;
        }
        Ok(x)
    }

    pub fn infer(&self, mut x: Tensor<T>) -> Result<Tensor<T>> {
        for (_, layer) in &self.layers {
            x = layer.infer(x)?;
        }
        Ok(x)
    }

    pub fn backward(&mut self, g: Tensor<T>) -> Result<Tensor<T>> {
        let mut g = g;
        for (_, layer) in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn convs(&self) -> impl Iterator<Item = (&str, &Conv2d<T>)> {
        self.layers.iter().filter_map(|(n, l)| match l {
            Layer::Conv(c) => Some((n.as_str(), c)),
            _ => None,
        })
    }

    pub fn convs_mut(&mut self) -> impl Iterator<Item = (&str, &mut Conv2d<T>)> {
        self.layers.iter_mut().filter_map(|(n, l)| match l {
            Layer::Conv(c) => Some((n.as_str(), c)),
            _ => None,
        })
    }
}
