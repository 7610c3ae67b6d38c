//! Minimal deterministic CNN kernels with exact backpropagation.

pub mod conv;
pub mod gradcheck;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod tensor;

pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvSpec};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, Objective};
pub use layers::{Conv2d, Layer, LayerSpec, Param, Sequential};
pub use ops::{
    concat_channels_backward, concat_channels_forward, maxpool_backward, maxpool_forward, relu_backward,
    relu_forward, resample_nearest_backward, resample_nearest_forward, PoolSpec,
};
pub use optim::{clip_grad_norm, grad_norm, lr_schedule, sgd_momentum_step, LrSchedule, Parameterized, Sgd};
pub use tensor::{Scalar, Tensor};

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Fills a buffer with zero-mean Gaussian samples.
pub fn gaussian_fill<T: Scalar, R: Rng + ?Sized>(values: &mut [T], sigma: f64, rng: &mut R) {
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and non-negative");
    for v in values {
        *v = T::from_f64_lossy(normal.sample(rng));
    }
}
