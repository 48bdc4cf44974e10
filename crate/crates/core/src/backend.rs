//! Array backends shared by the plain solver and the differentiable tape.
//!
//! Spectral kernels (convection, projection, time steps) are written once
//! against [`Backend`] and run either on owned arrays ([`Plain`]) or on tape
//! variables (see [`crate::autodiff`]).

use std::sync::Arc;

use ndarray::ArrayD;
use num_complex::Complex64;

use crate::fft;

pub type CTensor = ArrayD<Complex64>;

/// Minimal algebra needed by the pseudo-spectral kernels.
pub trait Backend {
    type T: Clone;

    /// Wraps a constant array.
    fn constant(&self, x: CTensor) -> Self::T;
    /// Current value of `x`.
    fn value<'a>(&self, x: &'a Self::T) -> &'a CTensor;
    fn add(&self, a: &Self::T, b: &Self::T) -> Self::T;
    fn sub(&self, a: &Self::T, b: &Self::T) -> Self::T;
    /// Elementwise product of equally shaped values.
    fn mul(&self, a: &Self::T, b: &Self::T) -> Self::T;
    fn scale(&self, a: &Self::T, s: f64) -> Self::T;
    /// Elementwise product with a fixed array broadcast over leading axes.
    fn mul_fixed(&self, a: &Self::T, c: &Arc<CTensor>) -> Self::T;
    /// Adds a fixed array of the same shape.
    fn add_fixed(&self, a: &Self::T, c: &Arc<CTensor>) -> Self::T;
    /// Forward transform over the last two axes.
    fn fft2(&self, a: &Self::T) -> Self::T;
    /// Normalized inverse transform over the last two axes.
    fn ifft2(&self, a: &Self::T) -> Self::T;
    /// Real part, stored as a complex array with zero imaginary part.
    fn re(&self, a: &Self::T) -> Self::T;
}

/// Backend over owned arrays without derivative tracking.
#[derive(Clone, Copy, Debug, Default)]
pub struct Plain;

impl Backend for Plain {
    type T = CTensor;

    fn constant(&self, x: CTensor) -> CTensor {
        x
    }
    fn value<'a>(&self, x: &'a CTensor) -> &'a CTensor {
        x
    }
    fn add(&self, a: &CTensor, b: &CTensor) -> CTensor {
        a + b
    }
    fn sub(&self, a: &CTensor, b: &CTensor) -> CTensor {
        a - b
    }
    fn mul(&self, a: &CTensor, b: &CTensor) -> CTensor {
        a * b
    }
    fn scale(&self, a: &CTensor, s: f64) -> CTensor {
        a.mapv(|v| v * s)
    }
    fn mul_fixed(&self, a: &CTensor, c: &Arc<CTensor>) -> CTensor {
        a * &**c
    }
    fn add_fixed(&self, a: &CTensor, c: &Arc<CTensor>) -> CTensor {
        a + &**c
    }
    fn fft2(&self, a: &CTensor) -> CTensor {
        let mut out = a.clone();
        fft::fft2(&mut out);
        out
    }
    fn ifft2(&self, a: &CTensor) -> CTensor {
        let mut out = a.clone();
        fft::ifft2(&mut out);
        out
    }
    fn re(&self, a: &CTensor) -> CTensor {
        a.mapv(|v| Complex64::new(v.re, 0.0))
    }
}
