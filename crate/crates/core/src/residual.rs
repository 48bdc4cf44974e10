//! PDE residuals and the negative-norm error estimator.
//!
//! The residual of a candidate evolution is `R = f − ∂_t u − N(u) + νΔu`, with
//! `N` the de-aliased convection term. Velocity residuals are Leray-projected
//! so that only the solenoidal part, the one seen by divergence-free test
//! functions, enters the estimator `η_m = ‖R(t_m)‖₋₁`.

use std::sync::Arc;

use ndarray::{ArrayD, IxDyn};

use crate::backend::{Backend, CTensor, Plain};
use crate::error::{Error, Result};
use crate::grid::{check_same, conv_vp, conv_vs, leray, Grid, SpectralField, SpectralTrajectory};
use crate::norms::neg_norm;

/// Which Navier-Stokes formulation a field belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Formulation {
    /// Vorticity-streamfunction: scalar vorticity.
    Vs,
    /// Velocity-pressure: two velocity components.
    Vp,
}

impl Formulation {
    pub fn of(field: &SpectralField) -> Self {
        if field.is_vector() {
            Formulation::Vp
        } else {
            Formulation::Vs
        }
    }

    pub fn components(self) -> usize {
        match self {
            Formulation::Vs => 1,
            Formulation::Vp => 2,
        }
    }
}

impl std::str::FromStr for Formulation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vs" => Ok(Formulation::Vs),
            "vp" => Ok(Formulation::Vp),
            _ => Err(Error::InvalidArgument(format!("unknown formulation {s:?}"))),
        }
    }
}

impl std::fmt::Display for Formulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Formulation::Vs => "vs",
            Formulation::Vp => "vp",
        })
    }
}

/// Physical parameters of the estimator.
#[derive(Clone, Debug)]
pub struct EstimatorConfig {
    pub nu: f64,
    /// Shift of the negative-norm weight `(α + |k|²)^{-1}`.
    pub alpha: f64,
    /// Curl of the force (vorticity) or the force (velocity).
    pub forcing: Option<SpectralField>,
}

impl EstimatorConfig {
    pub fn new(nu: f64) -> Self {
        EstimatorConfig { nu, alpha: 0.0, forcing: None }
    }
}

/// Estimator contribution of one time level.
#[derive(Clone, Debug, PartialEq)]
pub struct StepEta {
    pub t: f64,
    pub eta: f64,
    /// Negative norm of each residual term on its own.
    pub terms: Vec<(&'static str, f64)>,
}

/// Per-step estimator values and their aggregate.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorReport {
    pub per_step: Vec<StepEta>,
    /// `(Σ_m η_m²)^{1/2}`.
    pub eta_total: f64,
    pub formulation: Formulation,
}

impl EstimatorReport {
    pub fn from_steps(per_step: Vec<StepEta>, formulation: Formulation) -> Self {
        let eta_total = per_step.iter().map(|s| s.eta * s.eta).sum::<f64>().sqrt();
        EstimatorReport { per_step, eta_total, formulation }
    }

    /// `t_m,eta_m` rows followed by a `# eta_total=` summary line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,eta\n");
        for step in &self.per_step {
            s.push_str(&format!("{},{}\n", crate::io::fmt_f64(step.t), crate::io::fmt_f64(step.eta)));
        }
        s.push_str(&format!(
            "# eta_total={} formulation={}\n",
            crate::io::fmt_f64(self.eta_total),
            self.formulation
        ));
        s
    }
}

/// Weights `c/(α + |k|²)` with `k = 0` dropped, where `c` is the Parseval factor.
pub fn neg_weight(grid: &Grid, alpha: f64) -> Arc<ArrayD<f64>> {
    let n = grid.n;
    let c = grid.parseval_factor();
    Arc::new(ArrayD::from_shape_fn(IxDyn(&[n, n]), |ix| {
        if ix[0] == 0 && ix[1] == 0 {
            0.0
        } else {
            c / (alpha + grid.k_sq[[ix[0], ix[1]]])
        }
    }))
}

/// Physics part of the right-hand side, `f − N(u) + νΔu`, on any backend.
pub(crate) fn tendency_kernel<B: Backend>(
    b: &B,
    grid: &Grid,
    u: &[B::T],
    forcing: &[Arc<CTensor>],
    nu: f64,
) -> Vec<B::T> {
    let conv: Vec<B::T> = if u.len() == 2 {
        conv_vp(b, grid, [&u[0], &u[1]]).into()
    } else {
        vec![conv_vs(b, grid, &u[0])]
    };
    let mut out: Vec<B::T> = u
        .iter()
        .zip(&conv)
        .map(|(p, c)| b.sub(&b.scale(&b.mul_fixed(p, &grid.ops.neg_ksq), nu), c))
        .collect();
    for (o, f) in out.iter_mut().zip(forcing) {
        *o = b.add_fixed(o, f);
    }
    project(b, grid, out)
}

pub(crate) fn project<B: Backend>(b: &B, grid: &Grid, u: Vec<B::T>) -> Vec<B::T> {
    if u.len() == 2 {
        leray(b, grid, [&u[0], &u[1]]).into()
    } else {
        u
    }
}

fn forcing_planes(cfg: &EstimatorConfig, field: &SpectralField) -> Result<Vec<Arc<CTensor>>> {
    match &cfg.forcing {
        None => Ok(Vec::new()),
        Some(f) => {
            check_same(f, field)?;
            Ok((0..f.planes.len()).map(|i| Arc::new(f.plane_dyn(i))).collect())
        }
    }
}

fn planes(f: &SpectralField) -> Vec<CTensor> {
    (0..f.planes.len()).map(|i| f.plane_dyn(i)).collect()
}

/// `f − N(u) + νΔu`, Leray-projected for velocity fields.
pub fn tendency(field: &SpectralField, cfg: &EstimatorConfig) -> Result<SpectralField> {
    let forcing = forcing_planes(cfg, field)?;
    let out = tendency_kernel(&Plain, &field.grid, &planes(field), &forcing, cfg.nu);
    Ok(SpectralField::from_dyn(field.grid.clone(), out))
}

fn residual(
    u: &SpectralField,
    dt_u: &SpectralField,
    f: Option<&SpectralField>,
    nu: f64,
) -> Result<SpectralField> {
    check_same(u, dt_u)?;
    let cfg = EstimatorConfig { nu, alpha: 0.0, forcing: f.cloned() };
    let rhs = tendency(u, &cfg)?;
    let dt = SpectralField::from_dyn(u.grid.clone(), project(&Plain, &u.grid, planes(dt_u)));
    rhs.sub(&dt)
}

/// Leray-projected `f − ∂_t u − (u·∇)u + νΔu`.
pub fn residual_vp(
    u: &SpectralField,
    dt_u: &SpectralField,
    f: Option<&SpectralField>,
    nu: f64,
) -> Result<SpectralField> {
    if !u.is_vector() {
        return Err(Error::Shape("residual_vp expects a velocity field".into()));
    }
    residual(u, dt_u, f, nu)
}

/// `curl f − ∂_t ω − u·∇ω + νΔω` with `u = ∇^⊥(−Δ)^{-1}ω`.
pub fn residual_vs(
    omega: &SpectralField,
    dt_omega: &SpectralField,
    curl_f: Option<&SpectralField>,
    nu: f64,
) -> Result<SpectralField> {
    if omega.is_vector() {
        return Err(Error::Shape("residual_vs expects vorticity".into()));
    }
    if !omega.is_mean_free() {
        return Err(Error::NotMeanFree(omega.mean_abs()));
    }
    residual(omega, dt_omega, curl_f, nu)
}

fn term_norms(
    field: &SpectralField,
    dt_field: &SpectralField,
    cfg: &EstimatorConfig,
) -> Result<Vec<(&'static str, f64)>> {
    let g = &field.grid;
    let p = planes(field);
    let conv: Vec<CTensor> = if field.is_vector() {
        conv_vp(&Plain, g, [&p[0], &p[1]]).into()
    } else {
        vec![conv_vs(&Plain, g, &p[0])]
    };
    let lap: Vec<CTensor> = p.iter().map(|x| x * &*g.ops.neg_ksq * cfg.nu).collect();
    let proj = |v: Vec<CTensor>| SpectralField::from_dyn(g.clone(), project(&Plain, g, v));
    let mut out = vec![
        ("time_derivative", neg_norm(&proj(planes(dt_field)), cfg.alpha)?),
        ("convection", neg_norm(&proj(conv), cfg.alpha)?),
        ("diffusion", neg_norm(&proj(lap), cfg.alpha)?),
    ];
    if let Some(f) = &cfg.forcing {
        out.push(("forcing", neg_norm(&proj(planes(f)), cfg.alpha)?));
    }
    Ok(out)
}

/// `η_m = ‖R(u_m, ∂_t u_m)‖₋₁` under `cfg.alpha`.
pub fn eta_m(field: &SpectralField, dt_field: &SpectralField, cfg: &EstimatorConfig) -> Result<f64> {
    let r = residual(field, dt_field, cfg.forcing.as_ref(), cfg.nu)?;
    neg_norm(&r, cfg.alpha)
}

/// Estimator report of `traj` with time derivatives `dt_fields`.
pub fn eta_total(
    traj: &SpectralTrajectory,
    dt_fields: &[SpectralField],
    cfg: &EstimatorConfig,
) -> Result<EstimatorReport> {
    if traj.len() != dt_fields.len() || traj.is_empty() {
        return Err(Error::Shape(format!(
            "{} snapshots but {} time derivatives",
            traj.len(),
            dt_fields.len()
        )));
    }
    let per_step = traj
        .times
        .iter()
        .zip(&traj.snapshots)
        .zip(dt_fields)
        .map(|((&t, u), d)| {
            Ok(StepEta { t, eta: eta_m(u, d, cfg)?, terms: term_norms(u, d, cfg)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EstimatorReport::from_steps(per_step, Formulation::of(&traj.snapshots[0])))
}

/// Second-order finite-difference time derivative of every snapshot.
///
/// Interior snapshots use centered differences, the end points one-sided
/// three-point stencils. Requires uniform spacing and at least three snapshots.
pub fn centered_dt(traj: &SpectralTrajectory) -> Result<Vec<SpectralField>> {
    let h = traj
        .spacing()
        .ok_or_else(|| Error::InvalidArgument("need uniformly spaced snapshots".into()))?;
    let s = &traj.snapshots;
    let m = s.len();
    if m < 3 {
        return Err(Error::InvalidArgument("need at least three snapshots".into()));
    }
    let comb = |a: &SpectralField, ca: f64, b: &SpectralField, cb: f64, c: &SpectralField, cc: f64| {
        Ok::<_, Error>(a.scale(ca).add(&b.scale(cb))?.add(&c.scale(cc))?.scale(1.0 / h))
    };
    let mut out = Vec::with_capacity(m);
    out.push(comb(&s[0], -1.5, &s[1], 2.0, &s[2], -0.5)?);
    for k in 1..m - 1 {
        out.push(s[k + 1].sub(&s[k - 1])?.scale(0.5 / h));
    }
    out.push(comb(&s[m - 1], 1.5, &s[m - 2], -2.0, &s[m - 3], 0.5)?);
    Ok(out)
}

/// Trapezoidal residuals `(u_m − u_{m−1})/h − ½(D u_m + D u_{m−1})`.
///
/// `start` is the state preceding the first snapshot and `tendencies` holds
/// `D u` for `start` followed by every snapshot. Velocity residuals are
/// Leray-projected.
pub fn trapezoid_residuals(
    start: (f64, &SpectralField),
    traj: &SpectralTrajectory,
    tendencies: &[SpectralField],
) -> Result<Vec<SpectralField>> {
    if tendencies.len() != traj.len() + 1 {
        return Err(Error::Shape(format!(
            "{} snapshots need {} tendencies, got {}",
            traj.len(),
            traj.len() + 1,
            tendencies.len()
        )));
    }
    let mut prev = (start.0, start.1.clone());
    let mut out = Vec::with_capacity(traj.len());
    for (m, (&t, u)) in traj.times.iter().zip(&traj.snapshots).enumerate() {
        let h = t - prev.0;
        if !(h > 0.0) {
            return Err(Error::InvalidArgument("snapshot times must increase".into()));
        }
        let diff = u.sub(&prev.1)?.scale(1.0 / h);
        let mean = tendencies[m].add(&tendencies[m + 1])?.scale(0.5);
        let r = diff.sub(&mean)?;
        let g = r.grid.clone();
        out.push(SpectralField::from_dyn(g.clone(), project(&Plain, &g, planes(&r))));
        prev = (t, u.clone());
    }
    Ok(out)
}

/// Estimator report built from precomputed residual fields.
pub fn report_from_residuals(
    times: &[f64],
    residuals: &[SpectralField],
    alpha: f64,
) -> Result<EstimatorReport> {
    if times.len() != residuals.len() || residuals.is_empty() {
        return Err(Error::Shape("times and residuals must align".into()));
    }
    let per_step = times
        .iter()
        .zip(residuals)
        .map(|(&t, r)| {
            let eta = neg_norm(r, alpha)?;
            Ok(StepEta { t, eta, terms: vec![("trapezoid", eta)] })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EstimatorReport::from_steps(per_step, Formulation::of(&residuals[0])))
}

/// Trapezoidal estimator of `traj` with exact tendencies.
pub fn trajectory_report(
    start: (f64, &SpectralField),
    traj: &SpectralTrajectory,
    cfg: &EstimatorConfig,
) -> Result<EstimatorReport> {
    let mut tend = vec![tendency(start.1, cfg)?];
    for u in &traj.snapshots {
        tend.push(tendency(u, cfg)?);
    }
    let r = trapezoid_residuals(start, traj, &tend)?;
    report_from_residuals(&traj.times, &r, cfg.alpha)
}
