//! 2D cross-correlation with zero padding, lowered to GEMM through im2col.

use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.patch_len()
    }

    /// Rows of the im2col matrix: `in_channels · kernel²`.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn output_dims(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let out = |n: usize| {
            let padded = n + 2 * self.padding;
            (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
        };
        match (out(height), out(width)) {
            (Some(h), Some(w)) => Ok((h, w)),
            _ => Err(Error::ShapeMismatch(format!(
                "{height}x{width} input is smaller than a {k}x{k} kernel with padding {p}",
                k = self.kernel,
                p = self.padding
            ))),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 || self.out_channels == 0 || self.in_channels == 0 {
            return Err(Error::ShapeMismatch(format!("degenerate convolution {self:?}")));
        }
        Ok(())
    }

    fn check<T: Scalar>(&self, input: &Tensor<T>, weight: &[T], bias: Option<&[T]>) -> Result<(usize, usize)> {
        self.validate()?;
        if input.channels() != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "convolution expects {} input channels, got {}",
                self.in_channels,
                input.channels()
            )));
        }
        if weight.len() != self.weight_len() || bias.is_some_and(|b| b.len() != self.out_channels) {
            return Err(Error::ShapeMismatch(format!("parameter buffers do not match {self:?}")));
        }
        self.output_dims(input.height(), input.width())
    }
}

/// Unfolds one batch item (`c × h × w`) into a `patch_len × (oh·ow)` matrix.
fn im2col<T: Scalar>(src: &[T], h: usize, w: usize, spec: &ConvSpec, oh: usize, ow: usize, cols: &mut [T]) {
    let (k, s, p) = (spec.kernel, spec.stride, spec.padding as isize);
    let plane = oh * ow;
    for c in 0..spec.in_channels {
        let chan = &src[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * s + ki) as isize - p;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src_row = &chan[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, out) in line.iter_mut().enumerate() {
                        let ix = (ox * s + kj) as isize - p;
                        *out = if ix >= 0 && ix < w as isize {
                            src_row[ix as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back into an image.
fn col2im<T: Scalar>(cols: &[T], h: usize, w: usize, spec: &ConvSpec, oh: usize, ow: usize, dst: &mut [T]) {
    let (k, s, p) = (spec.kernel, spec.stride, spec.padding as isize);
    let plane = oh * ow;
    for c in 0..spec.in_channels {
        let chan = &mut dst[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * s + ki) as isize - p;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut chan[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * s + kj) as isize - p;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn is_pointwise(spec: &ConvSpec) -> bool {
    spec.kernel == 1 && spec.stride == 1 && spec.padding == 0
}

/// `weight` is `out_channels × in_channels × kernel × kernel`, row-major.
pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, weight: &[T], bias: &[T], spec: &ConvSpec) -> Result<Tensor<T>> {
    let (oh, ow) = spec.check(input, weight, Some(bias))?;
    let (h, w) = (input.height(), input.width());
    let (r, plane, oc) = (spec.patch_len(), oh * ow, spec.out_channels);
    let mut out = Tensor::zeros([input.batch(), oc, oh, ow]);
    let mut cols = if is_pointwise(spec) { Vec::new() } else { vec![T::zero(); r * plane] };
    for b in 0..input.batch() {
        let dst = out.item_mut(b);
        for (o, chunk) in dst.chunks_mut(plane).enumerate() {
            chunk.fill(bias[o]);
        }
        let src: &[T] = if is_pointwise(spec) {
            input.item(b)
        } else {
            im2col(input.item(b), h, w, spec, oh, ow, &mut cols);
            &cols
        };
        T::gemm(oc, r, plane, weight, (r as isize, 1), src, (plane as isize, 1), T::one(), dst, (plane as isize, 1));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &[T],
    grad_out: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<ConvGrads<T>> {
    let (oh, ow) = spec.check(input, weight, None)?;
    if grad_out.shape() != [input.batch(), spec.out_channels, oh, ow] {
        return Err(Error::ShapeMismatch(format!(
            "upstream gradient {:?} does not match convolution output {:?}",
            grad_out.shape(),
            [input.batch(), spec.out_channels, oh, ow]
        )));
    }
    let (h, w) = (input.height(), input.width());
    let (r, plane, oc) = (spec.patch_len(), oh * ow, spec.out_channels);
    let mut grad_input = Tensor::zeros(input.shape());
    let mut grad_weight = vec![T::zero(); spec.weight_len()];
    let mut grad_bias = vec![T::zero(); oc];
    let pointwise = is_pointwise(spec);
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); r * plane] };
    let mut grad_cols = if pointwise { Vec::new() } else { vec![T::zero(); r * plane] };
    for b in 0..input.batch() {
        let g = grad_out.item(b);
        for (o, chunk) in g.chunks(plane).enumerate() {
            grad_bias[o] += chunk.iter().copied().sum::<T>();
        }
        let src: &[T] = if pointwise {
            input.item(b)
        } else {
            im2col(input.item(b), h, w, spec, oh, ow, &mut cols);
            &cols
        };
        // dW += G · colsᵀ
        T::gemm(oc, plane, r, g, (plane as isize, 1), src, (1, plane as isize), T::one(), &mut grad_weight, (r as isize, 1));
        // dcols = Wᵀ · G
        if pointwise {
            let dst = grad_input.item_mut(b);
            T::gemm(r, oc, plane, weight, (1, r as isize), g, (plane as isize, 1), T::zero(), dst, (plane as isize, 1));
        } else {
            T::gemm(r, oc, plane, weight, (1, r as isize), g, (plane as isize, 1), T::zero(), &mut grad_cols, (plane as isize, 1));
            col2im(&grad_cols, h, w, spec, oh, ow, grad_input.item_mut(b));
        }
    }
    Ok(ConvGrads {
        input: grad_input,
        weight: grad_weight,
        bias: grad_bias,
    })
}
