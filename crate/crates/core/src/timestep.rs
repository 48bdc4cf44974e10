//! Implicit-explicit marching for the vorticity and velocity formulations.
//!
//! Scalar fields are advanced as vorticity, vector fields as velocity with a
//! Leray projection after every stage. Diffusion and linear drag are solved
//! implicitly per mode, convection is explicit.

use std::sync::Arc;

use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64;

use crate::backend::{Backend, CTensor, Plain};
use crate::error::{Error, Result};
use crate::grid::{conv_vp, conv_vs, leray, Grid, SpectralField, SpectralTrajectory};
use crate::norms::l2_norm;

/// Time integration scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    /// Four-stage explicit convection with implicit-Euler diffusion in every stage.
    ImexRk4,
    /// Heun convection with Crank-Nicolson diffusion.
    Rk2Cn,
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "imex_rk4" => Ok(Scheme::ImexRk4),
            "rk2_cn" => Ok(Scheme::Rk2Cn),
            _ => Err(Error::InvalidArgument(format!("unknown scheme {s:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub scheme: Scheme,
    pub dt: f64,
    pub nu: f64,
    /// Curl of the force for vorticity runs, the force itself for velocity runs.
    pub forcing: Option<SpectralField>,
    pub drag: f64,
    /// Disables the convection term; diffusion-only runs are used as a test oracle.
    pub convection: bool,
}

impl SolverConfig {
    pub fn new(scheme: Scheme, dt: f64, nu: f64) -> Result<Self> {
        let cfg = SolverConfig { scheme, dt, nu, forcing: None, drag: 0.0, convection: true };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::InvalidArgument(format!("nu = {} must be positive", self.nu)));
        }
        if !(self.drag >= 0.0) {
            return Err(Error::InvalidArgument(format!("drag = {} must be >= 0", self.drag)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SolverState {
    pub t: f64,
    pub field: SpectralField,
}

/// Per-mode multipliers of one step size, reusable across steps.
pub struct StepOps {
    grid: Arc<Grid>,
    scheme: Scheme,
    dt: f64,
    convection: bool,
    vector: bool,
    /// `1 + c·dt·λ` and `1 / (1 − c·dt·λ)` for the stage fractions in use.
    explicit_half: Arc<CTensor>,
    implicit_half: Arc<CTensor>,
    implicit_full: Arc<CTensor>,
    forcing: Vec<Arc<CTensor>>,
}

impl StepOps {
    pub fn new(grid: &Arc<Grid>, cfg: &SolverConfig, dt: f64, vector: bool) -> Result<Self> {
        cfg.validate()?;
        let n = grid.n;
        let lam = |i: usize, j: usize| -cfg.nu * grid.k_sq[[i, j]] - cfg.drag;
        let map = |f: &dyn Fn(f64) -> f64| {
            Arc::new(ArrayD::from_shape_fn(IxDyn(&[n, n]), |ix| {
                Complex64::new(f(lam(ix[0], ix[1])), 0.0)
            }))
        };
        let (explicit_half, implicit_half, implicit_full) = match cfg.scheme {
            Scheme::Rk2Cn => (
                map(&|l| 1.0 + 0.5 * dt * l),
                map(&|l| 1.0 / (1.0 - 0.5 * dt * l)),
                map(&|_| 1.0),
            ),
            Scheme::ImexRk4 => (
                map(&|_| 1.0),
                map(&|l| 1.0 / (1.0 - 0.5 * dt * l)),
                map(&|l| 1.0 / (1.0 - dt * l)),
            ),
        };
        let mut forcing = Vec::new();
        if let Some(f) = &cfg.forcing {
            if *f.grid != **grid || f.is_vector() != vector {
                return Err(Error::Shape("forcing does not match the solution field".into()));
            }
            let planes: Vec<CTensor> = f.planes.iter().map(|p| p.clone().into_dyn()).collect();
            let planes = if vector {
                let [a, b] = leray(&Plain, grid, [&planes[0], &planes[1]]);
                vec![a, b]
            } else {
                let mut p = planes;
                p[0][[0, 0]] = Complex64::new(0.0, 0.0);
                p
            };
            forcing = planes.into_iter().map(Arc::new).collect();
        }
        Ok(StepOps {
            grid: grid.clone(),
            scheme: cfg.scheme,
            dt,
            convection: cfg.convection,
            vector,
            explicit_half,
            implicit_half,
            implicit_full,
            forcing,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Explicit tendency `f − N(u)` (projected for velocity fields).
    fn explicit<B: Backend>(&self, b: &B, u: &[B::T]) -> Vec<B::T> {
        let g = &self.grid;
        let mut out: Vec<B::T> = if !self.convection {
            u.iter().map(|p| b.scale(p, 0.0)).collect()
        } else if self.vector {
            let [c1, c2] = conv_vp(b, g, [&u[0], &u[1]]);
            vec![b.scale(&c1, -1.0), b.scale(&c2, -1.0)]
        } else {
            vec![b.scale(&conv_vs(b, g, &u[0]), -1.0)]
        };
        for (o, f) in out.iter_mut().zip(&self.forcing) {
            *o = b.add_fixed(o, f);
        }
        if self.vector {
            let [a, c] = leray(b, g, [&out[0], &out[1]]);
            out = vec![a, c];
        }
        out
    }

    fn project<B: Backend>(&self, b: &B, u: Vec<B::T>) -> Vec<B::T> {
        if self.vector {
            let [a, c] = leray(b, &self.grid, [&u[0], &u[1]]);
            vec![a, c]
        } else {
            u
        }
    }

    /// Advances coefficient planes by one step on any backend.
    pub fn apply<B: Backend>(&self, b: &B, u: &[B::T]) -> Vec<B::T> {
        let dt = self.dt;
        let axpy = |x: &[B::T], y: &[B::T], s: f64| -> Vec<B::T> {
            x.iter().zip(y).map(|(p, q)| b.add(p, &b.scale(q, s))).collect()
        };
        let mulf = |x: &[B::T], m: &Arc<CTensor>| -> Vec<B::T> {
            x.iter().map(|p| b.mul_fixed(p, m)).collect()
        };
        match self.scheme {
            Scheme::Rk2Cn => {
                let base = mulf(u, &self.explicit_half);
                let e0 = self.explicit(b, u);
                let u1 = self.project(b, mulf(&axpy(&base, &e0, dt), &self.implicit_half));
                let e1 = self.explicit(b, &u1);
                let mix: Vec<B::T> = e0.iter().zip(&e1).map(|(p, q)| b.add(p, q)).collect();
                self.project(b, mulf(&axpy(&base, &mix, 0.5 * dt), &self.implicit_half))
            }
            Scheme::ImexRk4 => {
                let k1 = self.explicit(b, u);
                let u2 = self.project(b, mulf(&axpy(u, &k1, 0.5 * dt), &self.implicit_half));
                let k2 = self.explicit(b, &u2);
                let u3 = self.project(b, mulf(&axpy(u, &k2, 0.5 * dt), &self.implicit_half));
                let k3 = self.explicit(b, &u3);
                let u4 = self.project(b, mulf(&axpy(u, &k3, dt), &self.implicit_full));
                let k4 = self.explicit(b, &u4);
                let sum: Vec<B::T> = (0..u.len())
                    .map(|i| {
                        let s = b.add(&k1[i], &k4[i]);
                        b.add(&s, &b.scale(&b.add(&k2[i], &k3[i]), 2.0))
                    })
                    .collect();
                self.project(b, mulf(&axpy(u, &sum, dt / 6.0), &self.implicit_full))
            }
        }
    }

    /// Plain step of a spectral field with blow-up detection.
    pub fn step_field(&self, field: &SpectralField, t: f64) -> Result<SpectralField> {
        let planes: Vec<CTensor> = (0..field.planes.len()).map(|i| field.plane_dyn(i)).collect();
        let out = SpectralField::from_dyn(field.grid.clone(), self.apply(&Plain, &planes));
        let before = l2_norm(field);
        let after = l2_norm(&out);
        if !after.is_finite() || (before > 0.0 && after > 1e6 * before) {
            return Err(Error::BlowUp { t: t + self.dt });
        }
        Ok(out)
    }
}

fn check_state(field: &SpectralField) -> Result<()> {
    if !field.is_vector() && !field.is_mean_free() {
        return Err(Error::NotMeanFree(field.mean_abs()));
    }
    Ok(())
}

/// Advances `state` by one `cfg.dt`.
pub fn step(state: &SolverState, cfg: &SolverConfig) -> Result<SolverState> {
    check_state(&state.field)?;
    let ops = StepOps::new(&state.field.grid, cfg, cfg.dt, state.field.is_vector())?;
    Ok(SolverState { t: state.t + cfg.dt, field: ops.step_field(&state.field, state.t)? })
}

fn fine_step(gamma: u32, dt: f64) -> Result<f64> {
    if gamma < 2 {
        return Err(Error::InvalidArgument(format!("gamma = {gamma} must be >= 2")));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt = {dt} must be positive")));
    }
    Ok(dt.powi(gamma as i32))
}

/// One solver step of size `dt^gamma`.
pub fn b_gamma(field: &SpectralField, gamma: u32, dt: f64, cfg: &SolverConfig) -> Result<SpectralField> {
    let h = fine_step(gamma, dt)?;
    check_state(field)?;
    StepOps::new(&field.grid, cfg, h, field.is_vector())?.step_field(field, 0.0)
}

/// `(b_gamma(u) − u) / dt^gamma`.
pub fn dt_approx(field: &SpectralField, gamma: u32, dt: f64, cfg: &SolverConfig) -> Result<SpectralField> {
    let h = fine_step(gamma, dt)?;
    Ok(b_gamma(field, gamma, dt, cfg)?.sub(field)?.scale(1.0 / h))
}

/// Operator for [`b_gamma`] that can also run on the tape.
pub fn b_gamma_ops(grid: &Arc<Grid>, gamma: u32, dt: f64, cfg: &SolverConfig, vector: bool) -> Result<StepOps> {
    StepOps::new(grid, cfg, fine_step(gamma, dt)?, vector)
}

/// Marches to `t_end`, recording every `record_every` steps including the initial state.
pub fn advance(
    state: &SolverState,
    cfg: &SolverConfig,
    t_end: f64,
    record_every: usize,
) -> Result<SpectralTrajectory> {
    check_state(&state.field)?;
    if !(t_end > state.t) || record_every == 0 {
        return Err(Error::InvalidArgument(format!(
            "need t_end > t ({t_end} vs {}) and record_every >= 1",
            state.t
        )));
    }
    let ops = StepOps::new(&state.field.grid, cfg, cfg.dt, state.field.is_vector())?;
    let span = cfg.dt * record_every as f64;
    let records = ((t_end - state.t) / span * (1.0 + 1e-12)).floor() as usize;
    let mut times = vec![state.t];
    let mut snaps = vec![state.field.clone()];
    let mut f = state.field.clone();
    let mut steps = 0usize;
    for _ in 0..records {
        for _ in 0..record_every {
            f = ops.step_field(&f, state.t + steps as f64 * cfg.dt)?;
            steps += 1;
        }
        times.push(state.t + steps as f64 * cfg.dt);
        snaps.push(f.clone());
    }
    SpectralTrajectory::new(times, snaps)
}

/// `safety · dx / max|u|`, or infinity for a vanishing velocity.
pub fn cfl_dt(u: &SpectralField, safety: f64) -> Result<f64> {
    if !u.is_vector() {
        return Err(Error::Shape("cfl_dt expects a velocity field".into()));
    }
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(Error::InvalidArgument(format!("safety = {safety} must lie in (0, 1]")));
    }
    let p = u.to_physical();
    let vmax = p[0]
        .iter()
        .zip(p[1].iter())
        .map(|(a, b)| (a * a + b * b).sqrt())
        .fold(0.0, f64::max);
    Ok(if vmax == 0.0 { f64::INFINITY } else { safety * u.grid.dx / vmax })
}

/// Velocity of a vorticity field.
pub fn velocity_of(omega: &SpectralField) -> Result<SpectralField> {
    if omega.is_vector() {
        return Err(Error::Shape("velocity_of expects vorticity".into()));
    }
    let g = &omega.grid;
    let w = omega.plane_dyn(0);
    let u1 = &w * &*g.ops.w_to_u1;
    let u2 = &w * &*g.ops.w_to_u2;
    Ok(SpectralField::from_dyn(g.clone(), vec![u1, u2]))
}
