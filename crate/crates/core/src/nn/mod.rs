//! A small CPU layer stack with explicit forward/backward passes.
//!
//! Layers are generic over [`Scalar`] so training runs in `f32` while
//! finite-difference gradient tests instantiate the same code in `f64`.
//! All reductions accumulate in a fixed order, so outputs and gradients are
//! bit-reproducible for a given seed regardless of thread count.

mod adam;
mod conv;
mod norm;
mod ops;

pub use adam::Adam;
pub use conv::{Conv1d, Conv2d, ConvTranspose2d};
pub use norm::BatchNorm;
pub use ops::{AdaptiveAvgPool, LeakyRelu, Linear, MaxPool2d, Relu, Sigmoid};

use ndarray::{ArrayView2, ArrayViewMut2};
use rand::Rng;

/// Element type for network parameters and activations.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssignOps
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + Send
    + Sync
    + std::fmt::Debug
    + std::fmt::Display
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    /// Tag written into checkpoints.
    const DTYPE: &'static str;

    /// `c = alpha * a @ b + beta * c` on strided views.
    fn gemm(
        alpha: Self,
        a: &ArrayView2<Self>,
        b: &ArrayView2<Self>,
        beta: Self,
        c: &mut ArrayViewMut2<Self>,
    );
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    const DTYPE: &'static str = "f32";

    fn gemm(
        alpha: Self,
        a: &ArrayView2<Self>,
        b: &ArrayView2<Self>,
        beta: Self,
        c: &mut ArrayViewMut2<Self>,
    ) {
        let (m, k) = a.dim();
        let (k2, n) = b.dim();
        assert_eq!(k, k2, "gemm inner dimensions differ");
        assert_eq!(c.dim(), (m, n), "gemm output shape mismatch");
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                a.stride_of(ndarray::Axis(0)),
                a.stride_of(ndarray::Axis(1)),
                b.as_ptr(),
                b.stride_of(ndarray::Axis(0)),
                b.stride_of(ndarray::Axis(1)),
                beta,
                c.as_mut_ptr(),
                c.stride_of(ndarray::Axis(0)),
                c.stride_of(ndarray::Axis(1)),
            );
        }
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    const DTYPE: &'static str = "f64";

    fn gemm(
        alpha: Self,
        a: &ArrayView2<Self>,
        b: &ArrayView2<Self>,
        beta: Self,
        c: &mut ArrayViewMut2<Self>,
    ) {
        let (m, k) = a.dim();
        let (k2, n) = b.dim();
        assert_eq!(k, k2, "gemm inner dimensions differ");
        assert_eq!(c.dim(), (m, n), "gemm output shape mismatch");
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                a.stride_of(ndarray::Axis(0)),
                a.stride_of(ndarray::Axis(1)),
                b.as_ptr(),
                b.stride_of(ndarray::Axis(0)),
                b.stride_of(ndarray::Axis(1)),
                beta,
                c.as_mut_ptr(),
                c.stride_of(ndarray::Axis(0)),
                c.stride_of(ndarray::Axis(1)),
            );
        }
    }
}

/// Callback receiving every named parameter with its gradient, as contiguous
/// slices. Visit order is fixed by the model structure.
pub type ParamFn<'a, T> = dyn FnMut(&str, &mut [T], &mut [T]) + 'a;

/// Anything owning trainable parameters.
pub trait ParamOwner<T: Scalar> {
    /// Visits `(name, value, grad)` for every parameter tensor under `prefix`.
    fn visit_params(&mut self, prefix: &str, f: &mut ParamFn<T>);

    fn zero_grads(&mut self) {
        self.visit_params("", &mut |_, _, g| g.fill(T::zero()));
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, v, _| n += v.len());
        n
    }
}

/// Draws conv/linear init weights: normal(0, 0.02) sampled in `f64` so the
/// same seed produces the same network in every precision.
pub fn init_normal<T: Scalar, R: Rng + ?Sized>(buf: &mut [T], std: f64, rng: &mut R) {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0, std).expect("std is finite");
    for v in buf.iter_mut() {
        *v = T::from_f64(normal.sample(rng));
    }
}

/// Output length of a strided convolution with explicit one-sided padding.
pub fn conv_out_len(
    input: usize,
    kernel: usize,
    stride: usize,
    pad_lo: usize,
    pad_hi: usize,
) -> usize {
    (input + pad_lo + pad_hi - kernel) / stride + 1
}

/// Receptive field of a stack of `(kernel, stride)` layers.
pub fn receptive_field(layers: &[(usize, usize)]) -> usize {
    let mut rf = 1usize;
    for &(k, s) in layers.iter().rev() {
        rf = (rf - 1) * s + k;
    }
    rf
}
