//! Dense 4-D tensors and the operators the network is built from.
//!
//! Layout is always (batch, channel, row, column), row-major. Each operator
//! is a pure function with an explicit backward counterpart; there is no
//! general autodiff graph.

/// Defines a generic function whose body is compiled twice, for the baseline
/// target and with AVX2 and FMA, and picks one at run time. Fused
/// multiply-adds round once on either path, so results do not depend on it.
macro_rules! multiversion {
    ($(#[$meta:meta])* $vis:vis fn $name:ident<$S:ident: Scalar>($($arg:ident: $ty:ty),* $(,)?) $body:block) => {
        $(#[$meta])*
        $vis fn $name<$S: Scalar>($($arg: $ty),*) {
            #[inline(always)]
            fn body<$S: Scalar>($($arg: $ty),*) $body

            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx2,fma")]
                unsafe fn fast<$S: Scalar>($($arg: $ty),*) {
                    body::<$S>($($arg),*)
                }
                if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
                    // SAFETY: both features were detected above
                    return unsafe { fast::<$S>($($arg),*) };
                }
            }
            body::<$S>($($arg),*)
        }
    };
}

pub mod conv;
mod direct;
mod elementwise;
mod gemm;
mod init;
mod norm;
mod optim;
pub mod par;

pub use conv::{conv2d_backward, conv2d_forward, conv_output_dim, ConvGrads, ConvParams, Padding};
pub use elementwise::{
    activation, activation_backward, add, add_backward, upsample_nearest_2x, upsample_nearest_2x_backward, Activation,
};
pub use gemm::matmul;
pub use init::{glorot_limit, init_weights};
pub use norm::{batchnorm_backward, batchnorm_forward, BatchNormState, NormGrads};
pub use optim::{rmsprop_step, RmspropState};

use crate::error::{Error, Result};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

/// Scalar precision of the engine: `f32` for training, `f64` for
/// verification runs.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + fmt::Debug
    + fmt::Display
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Send
    + Sync
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// One register tile of the matrix multiply; see `gemm`.
    #[doc(hidden)]
    #[inline(always)]
    fn gemm_microkernel(a: &[Self], b: &[Self], acc: &mut [Self]) {
        gemm::microkernel_portable(a, b, acc)
    }
}

impl Scalar for f32 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn gemm_microkernel(a: &[Self], b: &[Self], acc: &mut [Self]) {
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx512f") {
                // SAFETY: feature checked above
                return unsafe { gemm::x86::microkernel_avx512(a, b, acc) };
            }
            if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
                // SAFETY: features checked above
                return unsafe { gemm::x86::microkernel_avx2(a, b, acc) };
            }
        }
        gemm::microkernel_portable(a, b, acc)
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[inline]
pub(crate) fn cst<S: Scalar>(v: f64) -> S {
    S::from_f64_lossy(v)
}

/// Forward-pass behaviour of mode-dependent operators (batch norm).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape4 { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor4<S> {
    shape: Shape4,
    data: Vec<S>,
    grad: Option<Vec<S>>,
}

impl<S: Scalar> Tensor4<S> {
    pub fn zeros(shape: Shape4) -> Self {
        Self::filled(shape, S::zero())
    }

    pub fn filled(shape: Shape4, value: S) -> Self {
        Tensor4 {
            shape,
            data: vec![value; shape.len()],
            grad: None,
        }
    }

    pub fn from_vec(shape: Shape4, data: Vec<S>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(
                "tensor",
                "data",
                format!("{} values for shape {shape}", data.len()),
            ));
        }
        Ok(Tensor4 {
            shape,
            data,
            grad: None,
        })
    }

    pub fn from_fn(shape: Shape4, mut f: impl FnMut(usize, usize, usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor4 {
            shape,
            data,
            grad: None,
        }
    }

    /// Same-shape tensor with a zeroed gradient buffer attached.
    pub fn with_grad(mut self) -> Self {
        self.grad = Some(vec![S::zero(); self.data.len()]);
        self
    }

    #[inline]
    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [S]> {
        self.grad.as_deref_mut()
    }

    /// Split borrow of values and gradient.
    pub fn data_and_grad_mut(&mut self) -> (&mut [S], Option<&mut [S]>) {
        (&mut self.data, self.grad.as_deref_mut())
    }

    /// Adds `g` into the gradient buffer, creating it if absent.
    pub fn accumulate_grad(&mut self, g: &[S]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(Error::shape(
                "accumulate_grad",
                "data",
                format!("{} gradient values for shape {}", g.len(), self.shape),
            ));
        }
        let len = self.data.len();
        let buf = self.grad.get_or_insert_with(|| vec![S::zero(); len]);
        for (b, &v) in buf.iter_mut().zip(g) {
            *b += v;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = S::zero());
        }
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> S {
        self.data[self.index(n, c, y, x)]
    }

    /// The (h, w) plane of channel `c` of batch item `n`.
    pub fn plane(&self, n: usize, c: usize) -> &[S] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [S] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    /// Batch item `n` as its own 1-item tensor.
    pub fn item(&self, n: usize) -> Tensor4<S> {
        let len = self.shape.c * self.shape.plane();
        Tensor4 {
            shape: Shape4::new(1, self.shape.c, self.shape.h, self.shape.w),
            data: self.data[n * len..(n + 1) * len].to_vec(),
            grad: None,
        }
    }

    /// Concatenates 1-or-more-item tensors of equal (c, h, w) along the batch axis.
    pub fn stack(items: &[&Tensor4<S>]) -> Result<Tensor4<S>> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("stack", "batch", "no tensors"))?
            .shape;
        let mut data = Vec::new();
        let mut n = 0;
        for t in items {
            let s = t.shape;
            if (s.c, s.h, s.w) != (first.c, first.h, first.w) {
                return Err(Error::shape("stack", "channel/spatial", format!("{s} vs {first}")));
            }
            n += s.n;
            data.extend_from_slice(&t.data);
        }
        Tensor4::from_vec(Shape4::new(n, first.c, first.h, first.w), data)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite()) && self.grad.as_ref().is_none_or(|g| g.iter().all(|v| v.is_finite()))
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Tensor4<S> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    /// Converts the values to another precision (the gradient is dropped).
    pub fn cast<T: Scalar>(&self) -> Tensor4<T> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| T::from_f64_lossy(v.as_f64())).collect(),
            grad: None,
        }
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub(crate) fn require_shape(&self, op: &'static str, expected: Shape4) -> Result<()> {
        let s = self.shape;
        let axis = if s.n != expected.n {
            "batch"
        } else if s.c != expected.c {
            "channel"
        } else if s.h != expected.h {
            "height"
        } else if s.w != expected.w {
            "width"
        } else {
            return Ok(());
        };
        Err(Error::shape(op, axis, format!("got {s}, expected {expected}")))
    }
}

impl<S> fmt::Debug for Tensor4<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor4")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .field("has_grad", &self.grad.is_some())
            .finish()
    }
}
