//! FFT-realized Sobolev norms, Bochner aggregation, relative errors and radial spectra.

use crate::error::{Error, Result};
use crate::grid::{check_same, inverse_laplacian, SpectralField, SpectralTrajectory};

/// Weighted norm `(Σ (α + |k|²)^s |f̂(k)|²)^{1/2}`, optionally over `k ≠ 0` only.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormSpec {
    pub s: f64,
    pub alpha: f64,
    pub quotient: bool,
}

impl NormSpec {
    /// Standard `H^s` norm with weight `(1 + |k|²)^s`.
    pub fn sobolev(s: f64) -> Self {
        NormSpec { s, alpha: 1.0, quotient: false }
    }

    /// The quotient flag is forced on when the weight is singular at `k = 0`.
    pub fn new(s: f64, alpha: f64, quotient: bool) -> Result<Self> {
        if !(alpha >= 0.0) {
            return Err(Error::InvalidArgument(format!("alpha = {alpha} must be >= 0")));
        }
        Ok(NormSpec { s, alpha, quotient: quotient || (s < 0.0 && alpha == 0.0) })
    }
}

fn weighted_sum(f: &SpectralField, skip_zero: bool, w: impl Fn(f64) -> f64) -> f64 {
    let g = &f.grid;
    let mut total = 0.0;
    for p in &f.planes {
        for ((i, j), v) in p.indexed_iter() {
            let q = g.k_sq[[i, j]];
            if skip_zero && i == 0 && j == 0 {
                continue;
            }
            total += w(q) * v.norm_sqr();
        }
    }
    total * g.parseval_factor()
}

/// `‖f‖` under `spec`; `s = 0, α = 1` is the L² norm.
pub fn sobolev_norm(f: &SpectralField, spec: NormSpec) -> Result<f64> {
    let singular = spec.s < 0.0 && spec.alpha == 0.0;
    if singular && !f.is_mean_free() {
        return Err(Error::NotMeanFree(f.mean_abs()));
    }
    let quotient = spec.quotient || singular;
    Ok(weighted_sum(f, quotient, |q| (spec.alpha + q).powf(spec.s)).sqrt())
}

/// L² norm.
pub fn l2_norm(f: &SpectralField) -> f64 {
    weighted_sum(f, false, |_| 1.0).sqrt()
}

/// Homogeneous seminorm `(Σ_{k≠0} |k|^{2s} |f̂|²)^{1/2}`.
pub fn seminorm(f: &SpectralField, s: f64) -> f64 {
    weighted_sum(f, true, |q| q.powf(s)).sqrt()
}

/// Regularized negative norm `(Σ_{k≠0} (α + |k|²)^{-1} |f̂|²)^{1/2}`.
pub fn neg_norm(f: &SpectralField, alpha: f64) -> Result<f64> {
    if alpha < 0.0 {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} must be >= 0")));
    }
    if alpha == 0.0 && !f.is_mean_free() {
        return Err(Error::NotMeanFree(f.mean_abs()));
    }
    Ok(weighted_sum(f, true, |q| 1.0 / (alpha + q)).sqrt())
}

/// Duality pairing `⟨f, (−Δ)⁻¹f⟩^{1/2}` by physical quadrature, next to `|f|₋₁`.
pub fn dual_norm_check(f: &SpectralField) -> Result<(f64, f64)> {
    if !f.is_mean_free() {
        return Err(Error::NotMeanFree(f.mean_abs()));
    }
    let g = &f.grid;
    let w = g.dx * g.dx;
    let mut pairing = 0.0;
    for p in &f.planes {
        let s = SpectralField::scalar(g.clone(), p.clone());
        let psi = inverse_laplacian(&s)?.to_physical().remove(0);
        let phys = s.to_physical().remove(0);
        pairing += (&phys * &psi).sum() * w;
    }
    Ok((pairing.max(0.0).sqrt(), seminorm(f, -1.0)))
}

/// Exponent of a Bochner norm in time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeExponent {
    Two,
    Infinity,
}

/// `L²` (trapezoidal rule) or `L^∞` in time of the `H^s` norm of each snapshot.
pub fn bochner_norm(traj: &SpectralTrajectory, s: f64, p: TimeExponent) -> Result<f64> {
    if traj.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    let spec = NormSpec::sobolev(s);
    let norms = traj
        .snapshots
        .iter()
        .map(|f| sobolev_norm(f, spec))
        .collect::<Result<Vec<_>>>()?;
    match p {
        TimeExponent::Infinity => Ok(norms.iter().cloned().fold(0.0, f64::max)),
        TimeExponent::Two => {
            let mut acc = 0.0;
            for (k, w) in traj.times.windows(2).enumerate() {
                let h = w[1] - w[0];
                acc += 0.5 * h * (norms[k].powi(2) + norms[k + 1].powi(2));
            }
            Ok(acc.sqrt())
        }
    }
}

/// Shell-summed spectrum with bins centered at integer wavenumber indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumCurve {
    pub k_bins: Vec<f64>,
    pub values: Vec<f64>,
}

fn shell_sum(f: &SpectralField, factor: f64) -> SpectrumCurve {
    let g = &f.grid;
    let kmax = ((g.n as f64 / 2.0) * std::f64::consts::SQRT_2).ceil() as usize + 1;
    let mut values = vec![0.0; kmax + 1];
    for p in &f.planes {
        for ((i, j), v) in p.indexed_iter() {
            let (a, b) = (g.index(i) as f64, g.index(j) as f64);
            let r = (a * a + b * b).sqrt();
            let bin = (r + 0.5).floor() as usize;
            values[bin] += v.norm_sqr();
        }
    }
    let c = factor * g.parseval_factor();
    SpectrumCurve {
        k_bins: (0..=kmax).map(|k| k as f64).collect(),
        values: values.into_iter().map(|v| v * c).collect(),
    }
}

/// `Z(k) = Σ_{k−½ ≤ |ĵ| < k+½} |ω̂|²`, summing to `‖ω‖₀²`.
pub fn enstrophy_spectrum(omega: &SpectralField) -> Result<SpectrumCurve> {
    if omega.is_vector() {
        return Err(Error::Shape("enstrophy_spectrum expects vorticity".into()));
    }
    Ok(shell_sum(omega, 1.0))
}

/// `E(k) = ½ Σ_shell |û|²`, summing to the kinetic energy.
pub fn energy_spectrum(u: &SpectralField) -> Result<SpectrumCurve> {
    if !u.is_vector() {
        return Err(Error::Shape("energy_spectrum expects a velocity field".into()));
    }
    Ok(shell_sum(u, 0.5))
}

/// Least-squares slope of `log E` against `log k` over bins in `[k_lo, k_hi]`.
pub fn fit_slope(curve: &SpectrumCurve, k_lo: f64, k_hi: f64) -> Result<f64> {
    let pts: Vec<(f64, f64)> = curve
        .k_bins
        .iter()
        .zip(&curve.values)
        .filter(|(k, v)| **k >= k_lo && **k <= k_hi && **k > 0.0 && **v > 0.0)
        .map(|(k, v)| (k.ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::InvalidArgument(format!("no spectrum data in [{k_lo}, {k_hi}]")));
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// `‖a − b‖₀ / ‖b‖₀`.
pub fn rel_l2(a: &SpectralField, b: &SpectralField) -> Result<f64> {
    check_same(a, b)?;
    let nb = l2_norm(b);
    if nb == 0.0 {
        return Err(Error::InvalidArgument("reference field has zero norm".into()));
    }
    Ok(l2_norm(&a.sub(b)?) / nb)
}
