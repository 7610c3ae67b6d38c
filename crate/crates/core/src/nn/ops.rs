//! Max pooling, ReLU, channel concatenation and nearest-neighbor resampling.

use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub window: usize,
    pub stride: usize,
}

impl PoolSpec {
    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.window == 0 || self.stride == 0 || h < self.window || w < self.window {
            return Err(Error::ShapeMismatch(format!("{h}x{w} input cannot be pooled by {self:?}")));
        }
        Ok(((h - self.window) / self.stride + 1, (w - self.window) / self.stride + 1))
    }
}

/// Pooled output plus, per output element, the flat input index it came from.
pub fn maxpool_forward<T: Scalar>(input: &Tensor<T>, spec: &PoolSpec) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = input.shape();
    let (oh, ow) = spec.output_dims(h, w)?;
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut argmax = vec![0usize; n * c * oh * ow];
    let src = input.data();
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let (y0, x0) = (oy * spec.stride, ox * spec.stride);
                let mut best = base + y0 * w + x0;
                for y in y0..y0 + spec.window {
                    for x in x0..x0 + spec.window {
                        let i = base + y * w + x;
                        // strict comparison: ties keep the first row-major element
                        if src[i] > src[best] {
                            best = i;
                        }
                    }
                }
                out.data_mut()[o] = src[best];
                argmax[o] = best;
                o += 1;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool_backward<T: Scalar>(input_shape: [usize; 4], argmax: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if argmax.len() != grad_out.data().len() {
        return Err(Error::ShapeMismatch("pool routing does not match upstream gradient".into()));
    }
    let mut grad = Tensor::zeros(input_shape);
    let g = grad.data_mut();
    for (&i, &v) in argmax.iter().zip(grad_out.data()) {
        g[i] += v;
    }
    Ok(grad)
}

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let mut out = input.clone();
    relu_in_place(&mut out);
    out
}

pub(crate) fn relu_in_place<T: Scalar>(t: &mut Tensor<T>) {
    for v in t.data_mut() {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
}

/// `activation` may be either the ReLU input or its output: both are positive
/// exactly where the gradient passes. The subgradient at zero is zero.
pub fn relu_backward<T: Scalar>(activation: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if activation.shape() != grad_out.shape() {
        return Err(Error::ShapeMismatch("relu gradient shape".into()));
    }
    let mut g = grad_out.clone();
    for (gv, &a) in g.data_mut().iter_mut().zip(activation.data()) {
        if !(a > T::zero()) {
            *gv = T::zero();
        }
    }
    Ok(g)
}

/// Concatenates along channels; batch and spatial dims must agree.
pub fn concat_channels_forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let ([na, ca, ha, wa], [nb, cb, hb, wb]) = (a.shape(), b.shape());
    if (na, ha, wa) != (nb, hb, wb) {
        return Err(Error::SpatialMismatch {
            left: (na, ha, wa),
            right: (nb, hb, wb),
        });
    }
    let mut data = Vec::with_capacity(a.data().len() + b.data().len());
    for i in 0..na {
        data.extend_from_slice(a.item(i));
        data.extend_from_slice(b.item(i));
    }
    Tensor::new([na, ca + cb, ha, wa], data)
}

/// Splits an upstream gradient into the parts for the first `channels_a`
/// channels and the rest.
pub fn concat_channels_backward<T: Scalar>(grad_out: &Tensor<T>, channels_a: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let [n, c, h, w] = grad_out.shape();
    if channels_a == 0 || channels_a >= c {
        return Err(Error::ShapeMismatch(format!("cannot split {c} channels at {channels_a}")));
    }
    let split = channels_a * h * w;
    let mut ga = Vec::with_capacity(n * split);
    let mut gb = Vec::with_capacity(n * (c * h * w - split));
    for i in 0..n {
        let item = grad_out.item(i);
        ga.extend_from_slice(&item[..split]);
        gb.extend_from_slice(&item[split..]);
    }
    Ok((Tensor::new([n, channels_a, h, w], ga)?, Tensor::new([n, c - channels_a, h, w], gb)?))
}

fn nearest_index(i: usize, from: usize, to: usize) -> usize {
    i * from / to
}

/// Nearest-neighbor resampling of the spatial dims to `(height, width)`.
pub fn resample_nearest_forward<T: Scalar>(input: &Tensor<T>, height: usize, width: usize) -> Tensor<T> {
    let [n, c, h, w] = input.shape();
    let mut out = Tensor::zeros([n, c, height, width]);
    let mut o = 0;
    for plane in 0..n * c {
        for y in 0..height {
            let sy = nearest_index(y, h, height);
            for x in 0..width {
                let sx = nearest_index(x, w, width);
                out.data_mut()[o] = input.data()[(plane * h + sy) * w + sx];
                o += 1;
            }
        }
    }
    out
}

pub fn resample_nearest_backward<T: Scalar>(input_shape: [usize; 4], grad_out: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = input_shape;
    let [_, _, height, width] = grad_out.shape();
    let mut grad = Tensor::zeros(input_shape);
    let mut o = 0;
    for plane in 0..n * c {
        for y in 0..height {
            let sy = nearest_index(y, h, height);
            for x in 0..width {
                let sx = nearest_index(x, w, width);
                grad.data_mut()[(plane * h + sy) * w + sx] += grad_out.data()[o];
                o += 1;
            }
        }
    }
    grad
}
