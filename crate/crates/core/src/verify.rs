//! Built-in property suite run by `spectral-refine verify`.
//!
//! Every check draws its inputs from fixed seeds, so two runs print identical
//! reports.

use std::sync::Arc;

use crate::autodiff::grad_check;
use crate::datagen::{generate_dataset, grf_sample, DatasetSpec, IcKind, IcSpec};
use crate::error::Result;
use crate::grid::{drop_nyquist, leray_project, make_grid, rot_grad, trilinear_form, Grid, SpectralField};
use crate::model::{StfnoConfig, StfnoModel};
use crate::norms::{dual_norm_check, l2_norm, seminorm};
use crate::timestep::{Scheme, SolverConfig};
use crate::train::{dataset_problem, sample_pair, FinetuneConfig, Session};

/// Outcome of one property: the worst observed value against its bound.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub worst: f64,
    pub bound: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.worst <= self.bound
    }

    /// One report line, `PASS name worst=… bound=…`.
    pub fn line(&self) -> String {
        let tag = if self.passed() { "PASS" } else { "FAIL" };
        format!("{tag} {} worst={:.6e} bound={:.1e}", self.name, self.worst, self.bound)
    }
}

/// Random mean-free field without Nyquist content.
pub fn field(grid: &Arc<Grid>, seed: u64) -> Result<SpectralField> {
    Ok(drop_nyquist(&grf_sample(grid, 2.5, 7.0, seed)?))
}

/// Random vector field built from two independent [`field`] draws.
pub fn velocity(grid: &Arc<Grid>, seed: u64) -> Result<SpectralField> {
    let a = field(grid, seed)?;
    let b = field(grid, seed ^ 0x9e37_79b9)?;
    Ok(SpectralField::vector(grid.clone(), a.planes[0].clone(), b.planes[0].clone()))
}

/// `‖f‖₀` from coefficients against the mesh-weighted sum of `f²`.
pub fn parseval(grid: &Arc<Grid>, samples: usize, seed: u64) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for i in 0..samples as u64 {
        let f = field(grid, seed + i)?;
        let phys = f.to_physical().remove(0);
        let quad = (phys.iter().map(|v| v * v).sum::<f64>() * grid.dx * grid.dx).sqrt();
        worst = worst.max((l2_norm(&f) - quad).abs() / quad);
    }
    Ok(Check { name: "parseval", worst, bound: 1e-12 })
}

/// `|c(z,u,v) + c(z,v,u)|` and `|c(z,v,v)|` relative to `|z|₁|u|₁|v|₁` for divergence-free `z`.
pub fn skew_symmetry(grid: &Arc<Grid>, samples: usize, seed: u64) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for i in 0..samples as u64 {
        let s = seed + 3 * i;
        let z = rot_grad(&field(grid, s)?)?;
        let u = velocity(grid, s + 1)?;
        let v = velocity(grid, s + 2)?;
        let scale = seminorm(&z, 1.0) * seminorm(&u, 1.0) * seminorm(&v, 1.0);
        let sum = trilinear_form(&z, &u, &v)? + trilinear_form(&z, &v, &u)?;
        worst = worst.max(sum.abs() / scale).max(trilinear_form(&z, &v, &v)?.abs() / scale);
    }
    Ok(Check { name: "skew_symmetry", worst, bound: 1e-10 })
}

/// `‖P(Pu) − Pu‖₀ / ‖u‖₀` for the Leray projector `P`.
pub fn projector_idempotency(grid: &Arc<Grid>, samples: usize, seed: u64) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for i in 0..samples as u64 {
        let u = velocity(grid, seed + i)?;
        let p = leray_project(&u)?;
        let pp = leray_project(&p)?;
        worst = worst.max(l2_norm(&pp.sub(&p)?) / l2_norm(&u));
    }
    Ok(Check { name: "projector_idempotency", worst, bound: 1e-13 })
}

/// Spectral `|f|₋₁` against the quadrature pairing `⟨f, (−Δ)⁻¹f⟩^{1/2}`.
pub fn norm_equivalence(grid: &Arc<Grid>, samples: usize, seed: u64) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for i in 0..samples as u64 {
        let (dual, spectral) = dual_norm_check(&field(grid, seed + i)?)?;
        worst = worst.max((dual - spectral).abs() / spectral);
    }
    Ok(Check { name: "norm_equivalence", worst, bound: 1e-10 })
}

/// Tape gradient of the fine-tuning loss against five-point differences.
///
/// Each fine-tunable coordinate scales a single space-time mode, so the loss
/// moves little per unit step and a unit difference step keeps the quotient
/// far above evaluation round-off.
pub fn fine_tune_gradient(n: usize, samples: usize, seed: u64) -> Result<Check> {
    let spec = DatasetSpec {
        n_train: 0,
        n_test: 1,
        n_gen: n,
        n,
        l: 1.0,
        dt: 1e-3,
        burn_in: 0.0,
        ell: 4,
        n_t: 4,
        record_every: 5,
    };
    let ic = IcSpec { kind: IcKind::Grf { alpha: 2.5, tau: 7.0 }, seed, normalize_energy: Some(0.5) };
    let solver = SolverConfig::new(Scheme::Rk2Cn, 1e-3, 1e-3)?;
    let data = generate_dataset(&spec, &ic, &solver)?.test;
    let cfg = StfnoConfig { d_t: 4, tau_max: 2, k_max: n / 4 - 1, seed, ..StfnoConfig::default() };
    let model = StfnoModel::new(cfg, n, 1.0)?;
    let (input, _) = sample_pair(&data, 0, model.cfg.formulation)?;
    let problem = dataset_problem(&data, &solver)?;
    let ft = FinetuneConfig::default();
    let session = Session::new(&model, &input, &problem, &ft)?;
    let (values, real) = session.trainable_values();
    let r = grad_check(|t, v| session.loss_with(t, v), &values, &real, 1.0, samples, seed)?;
    Ok(Check { name: "grad_check", worst: r.max_rel_err, bound: 1e-6 })
}

/// The full suite at desk size.
pub fn run(seed: u64) -> Result<Vec<Check>> {
    let grid = make_grid(32, 1.0)?;
    Ok(vec![
        parseval(&grid, 20, seed)?,
        skew_symmetry(&grid, 10, seed)?,
        projector_idempotency(&grid, 20, seed)?,
        norm_equivalence(&grid, 20, seed)?,
        fine_tune_gradient(16, 20, seed)?,
    ])
}
