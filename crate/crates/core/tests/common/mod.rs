//! Oracles shared by the integration tests.
//!
//! The DFT helpers evaluate and project Fourier series with explicit dense
//! matrices, independently of the FFT used by the library.

#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectral_refine::grid::{inverse, transform, Grid, SpectralField};

/// Signed integer index of FFT bin `j` on `n` points.
pub fn idx(j: usize, n: usize) -> i64 {
    if j < n.div_ceil(2) {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// Random real mean-free field with modes `0 < max(|ĵx|, |ĵy|) <= kmax`.
pub fn random_field(grid: &Arc<Grid>, seed: u64, kmax: i64) -> SpectralField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.n;
    let mut c = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (idx(i, n), idx(j, n));
            if a.abs() <= kmax && b.abs() <= kmax && (a, b) != (0, 0) {
                c[[i, j]] = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
    }
    let phys = inverse(&SpectralField::scalar(grid.clone(), c), n).unwrap();
    transform(grid, &phys).unwrap().mean_free()
}

pub fn random_velocity(grid: &Arc<Grid>, seed: u64, kmax: i64) -> SpectralField {
    let a = random_field(grid, seed, kmax);
    let b = random_field(grid, seed.wrapping_mul(31).wrapping_add(7), kmax);
    SpectralField::vector(grid.clone(), a.planes[0].clone(), b.planes[0].clone())
}

/// `E[p, j] = exp(i 2π ĵ p / m)` for `m` sample points and `n` bins.
fn eval_matrix(n: usize, m: usize, sign: f64) -> Array2<Complex64> {
    Array2::from_shape_fn((m, n), |(p, j)| {
        let phase = sign * 2.0 * PI * idx(j, n) as f64 * p as f64 / m as f64;
        Complex64::new(phase.cos(), phase.sin())
    })
}

/// Physical values on an `m × m` grid of a coefficient array in library normalization
/// (`f(x) = n⁻² Σ ĉ_ĵ e^{2πi ĵ·x/L}`); the Nyquist bins must be empty.
pub fn dft_eval(c: &Array2<Complex64>, m: usize) -> Array2<f64> {
    let n = c.dim().0;
    let e = eval_matrix(n, m, 1.0);
    let v = e.dot(c).dot(&e.t());
    v.mapv(|z| z.re / (n * n) as f64)
}

/// Coefficients on `n` bins, in library normalization, of samples on an `m × m` grid.
pub fn dft_project(f: &Array2<f64>, n: usize) -> Array2<Complex64> {
    let m = f.dim().0;
    let e = eval_matrix(n, m, -1.0);
    let fc = f.mapv(|v| Complex64::new(v, 0.0));
    let s = (n * n) as f64 / (m * m) as f64;
    e.t().dot(&fc).dot(&e).mapv(|z| z * s)
}

/// Multiplies coefficients by `i k_x` (`axis = 0`) or `i k_y` (`axis = 1`), Nyquist zeroed.
pub fn deriv(c: &Array2<Complex64>, axis: usize, l: f64) -> Array2<Complex64> {
    let n = c.dim().0;
    let mut out = c.clone();
    for (j, mut lane) in out.axis_iter_mut(Axis(axis)).enumerate() {
        let s = idx(j, n);
        let k = if n % 2 == 0 && s == -(n as i64 / 2) { 0.0 } else { 2.0 * PI * s as f64 / l };
        lane.mapv_inplace(|z| z * Complex64::new(0.0, k));
    }
    out
}

/// Zeroes bins outside the two-thirds mask.
pub fn mask_two_thirds(c: &Array2<Complex64>) -> Array2<Complex64> {
    let n = c.dim().0;
    let keep = |j: usize| 3 * idx(j, n).unsigned_abs() < n as u64;
    Array2::from_shape_fn(c.dim(), |(i, j)| if keep(i) && keep(j) { c[[i, j]] } else { Complex64::new(0.0, 0.0) })
}

/// `max |a − b| / max |b|` over coefficient arrays.
pub fn rel_max(a: &Array2<Complex64>, b: &Array2<Complex64>) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    let den = b.iter().map(|y| y.norm()).fold(0.0, f64::max);
    num / den.max(1e-300)
}

/// Mesh-weighted `√(Σ f² dx²)` of a physical array.
pub fn quad_l2(f: &Array2<f64>, l: f64) -> f64 {
    let n = f.dim().0 as f64;
    (f.iter().map(|v| v * v).sum::<f64>() * (l / n).powi(2)).sqrt()
}
