//! Periodic grids, spectral fields and the differential operators built on them.
//!
//! Coefficients are stored full-spectrum in FFT order with axis 0 along `x` and
//! axis 1 along `y`. The forward transform is unnormalized and the inverse
//! divides by `n²`. Physical wavenumbers are `2π ĵ / L` for the signed integer
//! index `ĵ`. Spectral derivatives drop the Nyquist bin so that every operator
//! maps real fields to real fields.

use std::sync::Arc;

use ndarray::{Array2, ArrayD, Ix2, IxDyn};
use num_complex::Complex64;

use crate::backend::{Backend, CTensor, Plain};
use crate::error::{Error, Result};
use crate::fft;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Uniform periodic grid on the square torus of edge `l`.
#[derive(Debug)]
pub struct Grid {
    pub n: usize,
    pub l: f64,
    pub dx: f64,
    /// `kx[[i, j]]` is the physical wavenumber of row `i`.
    pub kx: Array2<f64>,
    /// `ky[[i, j]]` is the physical wavenumber of column `j`.
    pub ky: Array2<f64>,
    pub k_sq: Array2<f64>,
    pub dealias_mask: Array2<bool>,
    pub(crate) ops: GridOps,
}

/// Precomputed per-mode multipliers, shape `[n, n]`.
#[derive(Debug)]
pub(crate) struct GridOps {
    pub ikx: Arc<CTensor>,
    pub iky: Arc<CTensor>,
    pub mask: Arc<CTensor>,
    pub neg_ksq: Arc<CTensor>,
    /// ω̂ ↦ û₁ = i k_y ω̂ / |k|².
    pub w_to_u1: Arc<CTensor>,
    /// ω̂ ↦ û₂ = −i k_x ω̂ / |k|².
    pub w_to_u2: Arc<CTensor>,
    pub p11: Arc<CTensor>,
    pub p12: Arc<CTensor>,
    pub p22: Arc<CTensor>,
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.l == other.l
    }
}

/// Builds a grid with `n` points per axis on a torus of edge `l`.
pub fn make_grid(n: usize, l: f64) -> Result<Arc<Grid>> {
    Grid::new(n, l)
}

impl Grid {
    pub fn new(n: usize, l: f64) -> Result<Arc<Grid>> {
        if n < 8 || n % 2 != 0 {
            return Err(Error::InvalidGrid(format!("n = {n} must be even and >= 8")));
        }
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::InvalidGrid(format!("L = {l} must be positive")));
        }
        let two_pi_l = 2.0 * std::f64::consts::PI / l;
        let k1: Vec<f64> = (0..n).map(|j| fft::signed_index(j, n) as f64 * two_pi_l).collect();
        let kd: Vec<f64> = (0..n)
            .map(|j| if j == n / 2 { 0.0 } else { k1[j] })
            .collect();
        let kx = Array2::from_shape_fn((n, n), |(i, _)| k1[i]);
        let ky = Array2::from_shape_fn((n, n), |(_, j)| k1[j]);
        let k_sq = &kx * &kx + &ky * &ky;
        let dealias_mask = Array2::from_shape_fn((n, n), |(i, j)| {
            let (a, b) = (fft::signed_index(i, n), fft::signed_index(j, n));
            3 * a.unsigned_abs() < n as u64 && 3 * b.unsigned_abs() < n as u64
        });
        let cmap = |f: &dyn Fn(usize, usize) -> Complex64| {
            Arc::new(ArrayD::from_shape_fn(IxDyn(&[n, n]), |ix| f(ix[0], ix[1])))
        };
        let inv = |i: usize, j: usize| {
            let q = k_sq[[i, j]];
            if q == 0.0 {
                0.0
            } else {
                1.0 / q
            }
        };
        let kd_sq = |i: usize, j: usize| kd[i] * kd[i] + kd[j] * kd[j];
        let proj = |i: usize, j: usize, a: f64, b: f64, diag: f64| {
            let q = kd_sq(i, j);
            if q == 0.0 {
                Complex64::new(diag, 0.0)
            } else {
                Complex64::new(diag - a * b / q, 0.0)
            }
        };
        let ops = GridOps {
            ikx: cmap(&|i, _| I * kd[i]),
            iky: cmap(&|_, j| I * kd[j]),
            mask: cmap(&|i, j| Complex64::new(if dealias_mask[[i, j]] { 1.0 } else { 0.0 }, 0.0)),
            neg_ksq: cmap(&|i, j| Complex64::new(-k_sq[[i, j]], 0.0)),
            w_to_u1: cmap(&|i, j| I * kd[j] * inv(i, j)),
            w_to_u2: cmap(&|i, j| -I * kd[i] * inv(i, j)),
            p11: cmap(&|i, j| proj(i, j, kd[i], kd[i], 1.0)),
            p12: cmap(&|i, j| proj(i, j, kd[i], kd[j], 0.0)),
            p22: cmap(&|i, j| proj(i, j, kd[j], kd[j], 1.0)),
        };
        Ok(Arc::new(Grid {
            n,
            l,
            dx: l / n as f64,
            kx,
            ky,
            k_sq,
            dealias_mask,
            ops,
        }))
    }

    /// Node coordinates `i·dx` along one axis.
    pub fn coords(&self) -> Vec<f64> {
        (0..self.n).map(|i| i as f64 * self.dx).collect()
    }

    /// Signed integer index of bin `j`.
    pub fn index(&self, j: usize) -> i64 {
        fft::signed_index(j, self.n)
    }

    /// Factor turning `Σ|F_k|²` of unnormalized coefficients into `∫|f|²`.
    pub fn parseval_factor(&self) -> f64 {
        let n2 = (self.n * self.n) as f64;
        self.l * self.l / (n2 * n2)
    }

    /// Evaluates `f(x, y)` at the grid nodes.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Array2<f64> {
        let dx = self.dx;
        Array2::from_shape_fn((self.n, self.n), |(i, j)| f(i as f64 * dx, j as f64 * dx))
    }
}

/// Fourier coefficients of a real scalar field (one plane) or vector field (two planes).
#[derive(Clone, Debug)]
pub struct SpectralField {
    pub grid: Arc<Grid>,
    pub planes: Vec<Array2<Complex64>>,
}

impl SpectralField {
    pub fn scalar(grid: Arc<Grid>, coeffs: Array2<Complex64>) -> Self {
        SpectralField { grid, planes: vec![coeffs] }
    }

    pub fn vector(grid: Arc<Grid>, a: Array2<Complex64>, b: Array2<Complex64>) -> Self {
        SpectralField { grid, planes: vec![a, b] }
    }

    pub fn zeros(grid: Arc<Grid>, vector: bool) -> Self {
        let n = grid.n;
        let planes = vec![Array2::zeros((n, n)); if vector { 2 } else { 1 }];
        SpectralField { grid, planes }
    }

    pub fn is_vector(&self) -> bool {
        self.planes.len() == 2
    }

    /// Scalar coefficients; panics on vector fields.
    pub fn coeffs(&self) -> &Array2<Complex64> {
        assert!(!self.is_vector(), "scalar field expected");
        &self.planes[0]
    }

    /// Largest `|f̂(0)|` over planes, in normalized (mean value) units.
    pub fn mean_abs(&self) -> f64 {
        let n2 = (self.grid.n * self.grid.n) as f64;
        self.planes.iter().map(|p| p[[0, 0]].norm() / n2).fold(0.0, f64::max)
    }

    pub fn is_mean_free(&self) -> bool {
        self.mean_abs() <= 1e-12
    }

    /// Copy with the `k = 0` coefficients removed.
    pub fn mean_free(&self) -> Self {
        let mut out = self.clone();
        for p in &mut out.planes {
            p[[0, 0]] = Complex64::new(0.0, 0.0);
        }
        out
    }

    pub fn map_planes(&self, f: impl Fn(&Array2<Complex64>) -> Array2<Complex64>) -> Self {
        SpectralField { grid: self.grid.clone(), planes: self.planes.iter().map(f).collect() }
    }

    pub fn zip_with(
        &self,
        other: &SpectralField,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> Result<Self> {
        check_same(self, other)?;
        let planes = self
            .planes
            .iter()
            .zip(&other.planes)
            .map(|(a, b)| ndarray::Zip::from(a).and(b).map_collect(|x, y| f(*x, *y)))
            .collect();
        Ok(SpectralField { grid: self.grid.clone(), planes })
    }

    pub fn add(&self, other: &SpectralField) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &SpectralField) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map_planes(|p| p.mapv(|v| v * s))
    }

    pub(crate) fn plane_dyn(&self, i: usize) -> CTensor {
        self.planes[i].clone().into_dyn()
    }

    pub(crate) fn from_dyn(grid: Arc<Grid>, planes: Vec<CTensor>) -> Self {
        let planes = planes
            .into_iter()
            .map(|p| p.into_dimensionality::<Ix2>().expect("2-d plane"))
            .collect();
        SpectralField { grid, planes }
    }

    /// Physical values of every plane on the native grid.
    pub fn to_physical(&self) -> Vec<Array2<f64>> {
        self.planes.iter().map(|p| inverse_plane(p, self.grid.n)).collect()
    }

    /// Largest imaginary residue of the inverse transform relative to the field magnitude.
    pub fn imag_residue(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for p in &self.planes {
            let mut a = p.clone().into_dyn();
            fft::ifft2(&mut a);
            let mag = a.iter().map(|v| v.re.abs()).fold(0.0, f64::max).max(1e-300);
            let im = a.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
            worst = worst.max(im / mag);
        }
        worst
    }
}

/// Time-stamped sequence of spectral snapshots.
#[derive(Clone, Debug)]
pub struct SpectralTrajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<SpectralField>,
}

impl SpectralTrajectory {
    pub fn new(times: Vec<f64>, snapshots: Vec<SpectralField>) -> Result<Self> {
        if times.len() != snapshots.len() {
            return Err(Error::Shape(format!(
                "{} times for {} snapshots",
                times.len(),
                snapshots.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("times must be strictly increasing".into()));
        }
        Ok(SpectralTrajectory { times, snapshots })
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Mean snapshot spacing.
    pub fn spacing(&self) -> Option<f64> {
        if self.times.len() < 2 {
            return None;
        }
        Some((self.times[self.times.len() - 1] - self.times[0]) / (self.times.len() - 1) as f64)
    }
}

pub(crate) fn check_same(a: &SpectralField, b: &SpectralField) -> Result<()> {
    if *a.grid != *b.grid || a.planes.len() != b.planes.len() {
        return Err(Error::Shape(format!(
            "fields on n = {} ({} planes) and n = {} ({} planes)",
            a.grid.n,
            a.planes.len(),
            b.grid.n,
            b.planes.len()
        )));
    }
    Ok(())
}

fn check_square(f: &Array2<f64>, n: usize) -> Result<()> {
    let (r, c) = f.dim();
    if r != c {
        return Err(Error::Shape(format!("non-square array {r}x{c}")));
    }
    if r != n {
        return Err(Error::Shape(format!("array of size {r} on grid with n = {n}")));
    }
    Ok(())
}

fn forward_plane(f: &Array2<f64>) -> Array2<Complex64> {
    let mut a = f.mapv(|v| Complex64::new(v, 0.0)).into_dyn();
    fft::fft2(&mut a);
    a.into_dimensionality::<Ix2>().expect("2-d")
}

fn inverse_plane(p: &Array2<Complex64>, n_out: usize) -> Array2<f64> {
    let n = p.dim().0;
    let mut a = p.clone().into_dyn();
    if n_out != n {
        a = resize_dyn(&a, n_out);
    }
    fft::ifft2(&mut a);
    a.into_dimensionality::<Ix2>().expect("2-d").mapv(|v| v.re)
}

/// Spectral resize of the last two axes with the unnormalized-FFT scale `(m/n)²`.
pub(crate) fn resize_dyn(a: &CTensor, m: usize) -> CTensor {
    let d = a.ndim();
    let n = a.shape()[d - 1];
    let s = (m as f64 / n as f64).powi(2);
    let b = fft::resize_axis(a, d - 2, m, 1.0);
    fft::resize_axis(&b, d - 1, m, s)
}

/// Transforms a real scalar field sampled on `grid`.
pub fn transform(grid: &Arc<Grid>, f: &Array2<f64>) -> Result<SpectralField> {
    check_square(f, grid.n)?;
    Ok(SpectralField::scalar(grid.clone(), forward_plane(f)))
}

/// Transforms a real vector field given by its two component arrays.
pub fn transform_vector(grid: &Arc<Grid>, u1: &Array2<f64>, u2: &Array2<f64>) -> Result<SpectralField> {
    check_square(u1, grid.n)?;
    check_square(u2, grid.n)?;
    Ok(SpectralField::vector(grid.clone(), forward_plane(u1), forward_plane(u2)))
}

/// Physical values of a scalar field on an `n_out` grid (trigonometric interpolation when `n_out > n`).
pub fn inverse(field: &SpectralField, n_out: usize) -> Result<Array2<f64>> {
    if field.is_vector() {
        return Err(Error::Shape("inverse expects a scalar field".into()));
    }
    Ok(inverse_planes(field, n_out)?.remove(0))
}

/// Physical values of every plane on an `n_out` grid.
pub fn inverse_planes(field: &SpectralField, n_out: usize) -> Result<Vec<Array2<f64>>> {
    if n_out < field.grid.n || n_out % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "n_out = {n_out} must be even and >= {}",
            field.grid.n
        )));
    }
    Ok(field.planes.iter().map(|p| inverse_plane(p, n_out)).collect())
}

/// Moves a field to an `m`-point grid of the same edge by spectral truncation or zero padding.
pub fn resample(field: &SpectralField, m: usize) -> Result<SpectralField> {
    let grid = make_grid(m, field.grid.l)?;
    let planes = field.planes.iter().map(|p| resize_dyn(&p.clone().into_dyn(), m)).collect();
    Ok(SpectralField::from_dyn(grid, planes))
}

/// Zeroes every coefficient whose row or column is the Nyquist bin.
///
/// Fields without Nyquist content keep their derivatives under resampling.
pub fn drop_nyquist(f: &SpectralField) -> SpectralField {
    let h = f.grid.n / 2;
    f.map_planes(|p| {
        let mut q = p.clone();
        q.row_mut(h).fill(Complex64::new(0.0, 0.0));
        q.column_mut(h).fill(Complex64::new(0.0, 0.0));
        q
    })
}

/// Zeroes coefficients outside the 2/3 mask.
pub fn dealias(f: &SpectralField) -> SpectralField {
    let mask = &f.grid.dealias_mask;
    f.map_planes(|p| {
        ndarray::Zip::from(p)
            .and(mask)
            .map_collect(|v, &m| if m { *v } else { Complex64::new(0.0, 0.0) })
    })
}

/// Solves `-Δψ = ω` for mean-free `ω`.
pub fn inverse_laplacian(omega: &SpectralField) -> Result<SpectralField> {
    if omega.is_vector() {
        return Err(Error::Shape("inverse_laplacian expects a scalar field".into()));
    }
    let m = omega.mean_abs();
    if m > 1e-12 {
        return Err(Error::NotMeanFree(m));
    }
    let k_sq = &omega.grid.k_sq;
    Ok(omega.map_planes(|p| {
        ndarray::Zip::from(p)
            .and(k_sq)
            .map_collect(|v, &q| if q == 0.0 { Complex64::new(0.0, 0.0) } else { *v / q })
    }))
}

/// Multiplies every plane by `-|k|²`.
pub fn laplacian(f: &SpectralField) -> SpectralField {
    let k_sq = &f.grid.k_sq;
    f.map_planes(|p| ndarray::Zip::from(p).and(k_sq).map_collect(|v, &q| -*v * q))
}

/// Velocity `(∂_y ψ, −∂_x ψ)` of a streamfunction.
pub fn rot_grad(psi: &SpectralField) -> Result<SpectralField> {
    if psi.is_vector() {
        return Err(Error::Shape("rot_grad expects a scalar field".into()));
    }
    let o = &psi.grid.ops;
    let p = psi.plane_dyn(0);
    let u1 = &p * &*o.iky;
    let u2 = -(&p * &*o.ikx);
    Ok(SpectralField::from_dyn(psi.grid.clone(), vec![u1, u2]))
}

/// Scalar curl `∂_x u₂ − ∂_y u₁`.
pub fn curl2d(u: &SpectralField) -> Result<SpectralField> {
    if !u.is_vector() {
        return Err(Error::Shape("curl2d expects a vector field".into()));
    }
    let o = &u.grid.ops;
    let w = &u.plane_dyn(1) * &*o.ikx - &u.plane_dyn(0) * &*o.iky;
    Ok(SpectralField::from_dyn(u.grid.clone(), vec![w]))
}

/// Spectral divergence of a vector field.
pub fn divergence(u: &SpectralField) -> Result<SpectralField> {
    if !u.is_vector() {
        return Err(Error::Shape("divergence expects a vector field".into()));
    }
    let o = &u.grid.ops;
    let d = &u.plane_dyn(0) * &*o.ikx + &u.plane_dyn(1) * &*o.iky;
    Ok(SpectralField::from_dyn(u.grid.clone(), vec![d]))
}

/// Spectral gradient of a scalar field.
pub fn gradient(f: &SpectralField) -> Result<SpectralField> {
    if f.is_vector() {
        return Err(Error::Shape("gradient expects a scalar field".into()));
    }
    let o = &f.grid.ops;
    let p = f.plane_dyn(0);
    Ok(SpectralField::from_dyn(f.grid.clone(), vec![&p * &*o.ikx, &p * &*o.iky]))
}

/// Removes the gradient part of a vector field.
pub fn leray_project(u: &SpectralField) -> Result<SpectralField> {
    if !u.is_vector() {
        return Err(Error::Shape("leray_project expects a vector field".into()));
    }
    let [a, b] = leray(&Plain, &u.grid, [&u.plane_dyn(0), &u.plane_dyn(1)]);
    Ok(SpectralField::from_dyn(u.grid.clone(), vec![a, b]))
}

/// De-aliased coefficients of `(∇⊥ψ)·∇ω` with `ψ = (−Δ)⁻¹ω`.
pub fn convection_vs(omega: &SpectralField) -> Result<SpectralField> {
    if omega.is_vector() {
        return Err(Error::Shape("convection_vs expects a scalar field".into()));
    }
    let m = omega.mean_abs();
    if m > 1e-12 {
        return Err(Error::NotMeanFree(m));
    }
    let c = conv_vs(&Plain, &omega.grid, &omega.plane_dyn(0));
    Ok(SpectralField::from_dyn(omega.grid.clone(), vec![c]))
}

/// De-aliased coefficients of `(u·∇)u`.
pub fn convection_vp(u: &SpectralField) -> Result<SpectralField> {
    if !u.is_vector() {
        return Err(Error::Shape("convection_vp expects a vector field".into()));
    }
    let [a, b] = conv_vp(&Plain, &u.grid, [&u.plane_dyn(0), &u.plane_dyn(1)]);
    Ok(SpectralField::from_dyn(u.grid.clone(), vec![a, b]))
}

/// `c(z, u, v) = ∫ ((z·∇)u)·v` by quadrature on an oversampled grid.
///
/// `u` and `v` may both be scalar or both vector fields; `z` is a vector field.
pub fn trilinear_form(z: &SpectralField, u: &SpectralField, v: &SpectralField) -> Result<f64> {
    if !z.is_vector() {
        return Err(Error::Shape("z must be a vector field".into()));
    }
    if *z.grid != *u.grid || *z.grid != *v.grid || u.planes.len() != v.planes.len() {
        return Err(Error::Shape("trilinear_form needs fields on one grid".into()));
    }
    let n = z.grid.n;
    let m = (3 * n).div_ceil(2) + 2;
    let m = m + m % 2;
    let fine = make_grid(m, z.grid.l)?;
    let up = |f: &SpectralField| resample(f, m);
    let (zf, uf, vf) = (up(z)?, up(u)?, up(v)?);
    let zp = zf.to_physical();
    let vp = vf.to_physical();
    let w = fine.dx * fine.dx;
    let mut total = 0.0;
    for (i, plane) in uf.planes.iter().enumerate() {
        let s = SpectralField::scalar(fine.clone(), plane.clone());
        let g = gradient(&s)?.to_physical();
        let conv = &zp[0] * &g[0] + &zp[1] * &g[1];
        total += (&conv * &vp[i]).sum() * w;
    }
    Ok(total)
}

pub(crate) fn to_phys<B: Backend>(b: &B, x: &B::T) -> B::T {
    b.re(&b.ifft2(x))
}

/// De-aliased `û·∇ω` for vorticity coefficients `w` (shape `[n, n]`).
pub(crate) fn conv_vs<B: Backend>(b: &B, g: &Grid, w: &B::T) -> B::T {
    let o = &g.ops;
    let u1 = to_phys(b, &b.mul_fixed(w, &o.w_to_u1));
    let u2 = to_phys(b, &b.mul_fixed(w, &o.w_to_u2));
    let wx = to_phys(b, &b.mul_fixed(w, &o.ikx));
    let wy = to_phys(b, &b.mul_fixed(w, &o.iky));
    let prod = b.add(&b.mul(&u1, &wx), &b.mul(&u2, &wy));
    b.mul_fixed(&b.fft2(&prod), &o.mask)
}

/// De-aliased `(u·∇)u` for velocity coefficient planes.
pub(crate) fn conv_vp<B: Backend>(b: &B, g: &Grid, u: [&B::T; 2]) -> [B::T; 2] {
    let o = &g.ops;
    let p1 = to_phys(b, u[0]);
    let p2 = to_phys(b, u[1]);
    let comp = |c: &B::T| {
        let dx = to_phys(b, &b.mul_fixed(c, &o.ikx));
        let dy = to_phys(b, &b.mul_fixed(c, &o.iky));
        let prod = b.add(&b.mul(&p1, &dx), &b.mul(&p2, &dy));
        b.mul_fixed(&b.fft2(&prod), &o.mask)
    };
    [comp(u[0]), comp(u[1])]
}

pub(crate) fn leray<B: Backend>(b: &B, g: &Grid, u: [&B::T; 2]) -> [B::T; 2] {
    let o = &g.ops;
    let a = b.add(&b.mul_fixed(u[0], &o.p11), &b.mul_fixed(u[1], &o.p12));
    let c = b.add(&b.mul_fixed(u[0], &o.p12), &b.mul_fixed(u[1], &o.p22));
    [a, c]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    pub(crate) fn random_field(grid: &Arc<Grid>, seed: u64, kmax: i64) -> SpectralField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = grid.n;
        let mut c = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (grid.index(i), grid.index(j));
                if a.abs() <= kmax && b.abs() <= kmax && (a, b) != (0, 0) {
                    c[[i, j]] = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                }
            }
        }
        let f = SpectralField::scalar(grid.clone(), c);
        let phys = inverse(&f, n).unwrap();
        transform(grid, &phys).unwrap()
    }

    #[test]
    fn grid_wavenumbers_and_mask() {
        let g = make_grid(8, 1.0).unwrap();
        let expect = [0.0, 1.0, 2.0, 3.0, -4.0, -3.0, -2.0, -1.0];
        for (i, e) in expect.iter().enumerate() {
            assert_abs_diff_eq!(g.kx[[i, 0]], e * 2.0 * PI, epsilon = 1e-14);
            assert_abs_diff_eq!(g.ky[[0, i]], e * 2.0 * PI, epsilon = 1e-14);
        }
        assert_eq!(g.k_sq[[0, 0]], 0.0);
        let g = make_grid(64, 1.0).unwrap();
        let kept: Vec<i64> = (0..64).filter(|&i| g.dealias_mask[[i, 0]]).map(|i| g.index(i)).collect();
        assert_eq!(kept.iter().max(), Some(&21));
        assert_eq!(kept.iter().min(), Some(&-21));
        for i in 0..64 {
            for j in 0..64 {
                let (mi, mj) = ((64 - i) % 64, (64 - j) % 64);
                assert_eq!(g.k_sq[[i, j]], g.k_sq[[mi, mj]]);
            }
        }
        assert!(make_grid(7, 1.0).is_err());
        assert!(make_grid(6, 1.0).is_err());
        assert!(make_grid(8, -1.0).is_err());
    }

    #[test]
    fn pure_mode_transform() {
        let g = make_grid(8, 1.0).unwrap();
        let f = transform(&g, &g.sample(|x, _| (2.0 * PI * x).sin())).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let v = f.coeffs()[[i, j]];
                match (g.index(i), g.index(j)) {
                    (1, 0) => assert_abs_diff_eq!(v.im, -32.0, epsilon = 1e-12),
                    (-1, 0) => assert_abs_diff_eq!(v.im, 32.0, epsilon = 1e-12),
                    _ => assert!(v.norm() < 1e-12),
                }
            }
        }
    }

    #[test]
    fn round_trip_and_upsampling() {
        let g = make_grid(32, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = Array2::from_shape_fn((32, 32), |_| rng.gen_range(-1.0..1.0));
        let back = inverse(&transform(&g, &f).unwrap(), 32).unwrap();
        let err = (&back - &f).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(err <= 1e-12, "{err}");

        let g8 = make_grid(8, 1.0).unwrap();
        let s = transform(&g8, &g8.sample(|x, _| (2.0 * PI * x).sin())).unwrap();
        let up = inverse(&s, 32).unwrap();
        let exact = make_grid(32, 1.0).unwrap().sample(|x, _| (2.0 * PI * x).sin());
        let err = (&up - &exact).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(err <= 1e-12, "{err}");
        assert!(transform(&g, &Array2::zeros((32, 16))).is_err());
        assert!(inverse(&s, 4).is_err());
    }

    #[test]
    fn dealias_examples() {
        let g = make_grid(16, 1.0).unwrap();
        let f1 = transform(&g, &g.sample(|x, _| (2.0 * PI * x).cos())).unwrap();
        let d1 = dealias(&f1);
        for (a, b) in d1.planes[0].iter().zip(f1.planes[0].iter()) {
            assert!((a - b).norm() < 1e-12);
        }
        let f7 = transform(&g, &g.sample(|x, _| (14.0 * PI * x).cos())).unwrap();
        assert!(dealias(&f7).planes[0].iter().all(|v| v.norm() < 1e-12));
        let r = random_field(&g, 1, 8);
        let d = dealias(&r);
        assert_eq!(dealias(&d).planes[0], d.planes[0]);
    }

    #[test]
    fn inverse_laplacian_examples() {
        let g = make_grid(16, 1.0).unwrap();
        let w = transform(&g, &g.sample(|x, _| (2.0 * PI * x).sin())).unwrap();
        let psi = inverse(&inverse_laplacian(&w).unwrap(), 16).unwrap();
        let exact = g.sample(|x, _| (2.0 * PI * x).sin() / (4.0 * PI * PI));
        assert!((&psi - &exact).iter().all(|v| v.abs() < 1e-14));
        let z = SpectralField::zeros(g.clone(), false);
        assert!(inverse_laplacian(&z).unwrap().planes[0].iter().all(|v| v.norm() == 0.0));
        let r = random_field(&g, 2, 7);
        let back = laplacian(&inverse_laplacian(&r).unwrap()).scale(-1.0);
        for (a, b) in back.planes[0].iter().zip(r.planes[0].iter()) {
            assert!((a - b).norm() < 1e-12 * 256.0);
        }
        let with_mean = transform(&g, &g.sample(|_, _| 1.0)).unwrap();
        assert!(matches!(inverse_laplacian(&with_mean), Err(Error::NotMeanFree(_))));
    }

    #[test]
    fn rot_grad_and_curl() {
        let g = make_grid(16, 1.0).unwrap();
        let psi = transform(&g, &g.sample(|_, y| (2.0 * PI * y).sin())).unwrap();
        let u = inverse_planes(&rot_grad(&psi).unwrap(), 16).unwrap();
        let e1 = g.sample(|_, y| 2.0 * PI * (2.0 * PI * y).cos());
        assert!((&u[0] - &e1).iter().all(|v| v.abs() < 1e-12));
        assert!(u[1].iter().all(|v| v.abs() < 1e-12));

        let c = transform(&g, &g.sample(|_, _| 3.0)).unwrap();
        assert!(rot_grad(&c).unwrap().planes.iter().all(|p| p.iter().all(|v| v.norm() == 0.0)));

        let r = random_field(&g, 4, 7);
        let v = rot_grad(&r).unwrap();
        assert!(divergence(&v).unwrap().planes[0].iter().all(|x| x.norm() < 1e-12));
        let w = curl2d(&v).unwrap();
        let lap = laplacian(&r).scale(-1.0);
        for (a, b) in w.planes[0].iter().zip(lap.planes[0].iter()) {
            assert!((a - b).norm() <= 1e-12 * b.norm().max(1.0));
        }

        let uu = transform_vector(&g, &g.sample(|_, y| (2.0 * PI * y).cos()), &Array2::zeros((16, 16))).unwrap();
        let w = inverse(&curl2d(&uu).unwrap(), 16).unwrap();
        let e = g.sample(|_, y| 2.0 * PI * (2.0 * PI * y).sin());
        assert!((&w - &e).iter().all(|v| v.abs() < 1e-12));
        assert!(rot_grad(&uu).is_err());
        assert!(curl2d(&r).is_err());
    }

    #[test]
    fn leray_examples() {
        let g = make_grid(16, 1.0).unwrap();
        let phi = transform(&g, &g.sample(|x, _| (2.0 * PI * x).sin())).unwrap();
        let grad = gradient(&phi).unwrap();
        let p = leray_project(&grad).unwrap();
        assert!(p.planes.iter().all(|pl| pl.iter().all(|v| v.norm() < 1e-12)));
        let r = random_field(&g, 5, 7);
        let v = rot_grad(&r).unwrap();
        let pv = leray_project(&v).unwrap();
        for (a, b) in pv.planes.iter().zip(v.planes.iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).norm() < 1e-12 * y.norm().max(1.0));
            }
        }
        let r2 = random_field(&g, 6, 8);
        let mixed = SpectralField::vector(g.clone(), r.planes[0].clone(), r2.planes[0].clone());
        let once = leray_project(&mixed).unwrap();
        let twice = leray_project(&once).unwrap();
        for (a, b) in once.planes.iter().zip(twice.planes.iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).norm() < 1e-12 * x.norm().max(1.0));
            }
        }
        assert!(divergence(&once).unwrap().planes[0].iter().all(|x| x.norm() < 1e-11));
    }
}
