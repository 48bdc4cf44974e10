//! Initial-condition samplers and trajectory datasets.

use std::sync::Arc;

use ndarray::{s, Array1, Array2, Array4, ArrayD, IxDyn};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{fmt_f64, ArrayData, Sfc1};
use crate::grid::{make_grid, resample, transform, transform_vector, Grid, SpectralField};
use crate::timestep::{SolverConfig, StepOps};

/// Exact Taylor-Green vortex at time `t` with integer wavenumber index `kappa`.
///
/// With `K = 2πκ/L`, `u = e^{−2K²νt} (sin Kx cos Ky, −cos Kx sin Ky)` and
/// `ω = 2K e^{−2K²νt} sin Kx sin Ky`.
pub fn taylor_green(kappa: u32, nu: f64, t: f64, grid: &Arc<Grid>) -> Result<(SpectralField, SpectralField)> {
    if kappa == 0 || 4 * kappa as usize >= grid.n {
        return Err(Error::InvalidArgument(format!(
            "kappa = {kappa} is not resolved on n = {} (need 0 < 2κ < n/2)",
            grid.n
        )));
    }
    let k = 2.0 * std::f64::consts::PI * kappa as f64 / grid.l;
    let decay = (-2.0 * k * k * nu * t).exp();
    let u1 = grid.sample(|x, y| decay * (k * x).sin() * (k * y).cos());
    let u2 = grid.sample(|x, y| -decay * (k * x).cos() * (k * y).sin());
    let w = grid.sample(|x, y| 2.0 * k * decay * (k * x).sin() * (k * y).sin());
    Ok((transform_vector(grid, &u1, &u2)?, transform(grid, &w)?))
}

fn white_noise(grid: &Grid, rng: &mut ChaCha8Rng) -> Array2<Complex64> {
    let n = grid.n;
    let noise = Array2::from_shape_fn((n, n), |_| rng.sample::<f64, _>(StandardNormal));
    let g = make_grid(n, grid.l).expect("valid grid");
    transform(&g, &noise).expect("square").planes.remove(0)
}

/// Gaussian field with per-mode standard deviation `τ^α (|k|² + τ²)^{−α/2}`.
pub fn grf_sample(grid: &Arc<Grid>, alpha: f64, tau: f64, seed: u64) -> Result<SpectralField> {
    grf_stream(grid, alpha, tau, seed, 0)
}

fn grf_stream(grid: &Arc<Grid>, alpha: f64, tau: f64, seed: u64, stream: u64) -> Result<SpectralField> {
    if !(alpha > 1.0 && tau > 0.0) {
        return Err(Error::InvalidArgument(format!("need alpha > 1 and tau > 0, got {alpha}, {tau}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut c = white_noise(grid, &mut rng);
    for ((i, j), v) in c.indexed_iter_mut() {
        let q = grid.k_sq[[i, j]];
        *v *= tau.powf(alpha) * (q + tau * tau).powf(-alpha / 2.0);
    }
    c[[0, 0]] = Complex64::new(0.0, 0.0);
    Ok(SpectralField::scalar(grid.clone(), c))
}

/// Random-phase vorticity whose streamfunction obeys `|ψ̂(k)|² ∝ k^{−1} (τ² + (k/k0)⁴)^{−1}`.
///
/// `k` is the integer wavenumber magnitude. With `normalize_energy` the field is
/// rescaled so that `½‖u‖²` equals the target.
pub fn mcwilliams_sample(
    grid: &Arc<Grid>,
    k0: f64,
    tau: f64,
    seed: u64,
    normalize_energy: Option<f64>,
) -> Result<SpectralField> {
    mcwilliams_stream(grid, k0, tau, seed, 0, normalize_energy)
}

fn mcwilliams_stream(
    grid: &Arc<Grid>,
    k0: f64,
    tau: f64,
    seed: u64,
    stream: u64,
    normalize_energy: Option<f64>,
) -> Result<SpectralField> {
    if !(k0 >= 1.0 && tau >= 0.0) {
        return Err(Error::InvalidArgument(format!("need k0 >= 1 and tau >= 0, got {k0}, {tau}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let noise = white_noise(grid, &mut rng);
    let mut w = Array2::<Complex64>::zeros((grid.n, grid.n));
    for ((i, j), v) in noise.indexed_iter() {
        let (a, b) = (grid.index(i) as f64, grid.index(j) as f64);
        let k = (a * a + b * b).sqrt();
        if k == 0.0 || v.norm() == 0.0 {
            continue;
        }
        let amp = (1.0 / (k * (tau * tau + (k / k0).powi(4)))).sqrt();
        let psi = v / v.norm() * amp * (grid.n * grid.n) as f64;
        let q = grid.k_sq[[i, j]];
        w[[i, j]] = psi * q;
    }
    let w = SpectralField::scalar(grid.clone(), w);
    match normalize_energy {
        Some(target) if !(target > 0.0) => {
            Err(Error::InvalidArgument(format!("energy target {target} must be positive")))
        }
        Some(target) => {
            let energy = 0.5 * crate::norms::l2_norm(&crate::timestep::velocity_of(&w)?).powi(2);
            Ok(w.scale((target / energy).sqrt()))
        }
        None => Ok(w),
    }
}

/// Initial-condition family.
#[derive(Clone, Debug, PartialEq)]
pub enum IcKind {
    /// Trajectory `i` of a dataset uses wavenumber index `kappa + i`.
    TaylorGreen { kappa: u32 },
    Grf { alpha: f64, tau: f64 },
    McWilliams { k0: f64, tau: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcSpec {
    pub kind: IcKind,
    pub seed: u64,
    pub normalize_energy: Option<f64>,
}

impl IcSpec {
    /// Initial vorticity of trajectory `index` on `grid`.
    pub fn sample(&self, grid: &Arc<Grid>, index: u64, nu: f64) -> Result<SpectralField> {
        let w = match self.kind {
            IcKind::TaylorGreen { kappa } => taylor_green(kappa + index as u32, nu, 0.0, grid)?.1,
            IcKind::Grf { alpha, tau } => grf_stream(grid, alpha, tau, self.seed, index)?,
            IcKind::McWilliams { k0, tau } => {
                return mcwilliams_stream(grid, k0, tau, self.seed, index, self.normalize_energy)
            }
        };
        match self.normalize_energy {
            Some(e) if !matches!(self.kind, IcKind::TaylorGreen { .. }) => {
                let u = crate::timestep::velocity_of(&w)?;
                let cur = 0.5 * crate::norms::l2_norm(&u).powi(2);
                Ok(w.scale((e / cur).sqrt()))
            }
            _ => Ok(w),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub n_train: usize,
    pub n_test: usize,
    /// Resolution of the solver runs.
    pub n_gen: usize,
    /// Resolution of the stored snapshots.
    pub n: usize,
    pub l: f64,
    pub dt: f64,
    pub burn_in: f64,
    pub ell: usize,
    pub n_t: usize,
    /// Solver steps between stored snapshots, so `δt = record_every · dt`.
    pub record_every: usize,
}

impl DatasetSpec {
    pub fn delta_t(&self) -> f64 {
        self.record_every as f64 * self.dt
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_gen < self.n {
            return Err(Error::InvalidArgument("n_gen must be >= n".into()));
        }
        if !(self.burn_in >= 0.0) || self.ell < 2 || self.n_t < 1 || self.record_every == 0 {
            return Err(Error::InvalidArgument(
                "need burn_in >= 0, ell >= 2, n_t >= 1, record_every >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Vorticity snapshots `[traj, time, x, y]` with their time stamps.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub n: usize,
    pub l: f64,
    pub nu: f64,
    pub dt: f64,
    pub delta_t: f64,
    pub input_times: Vec<f64>,
    pub output_times: Vec<f64>,
    pub inputs: Array4<f64>,
    pub outputs: Array4<f64>,
    /// Index of each trajectory in generation order.
    pub ids: Vec<u64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ell(&self) -> usize {
        self.inputs.dim().1
    }

    pub fn n_t(&self) -> usize {
        self.outputs.dim().1
    }

    pub fn grid(&self) -> Result<Arc<Grid>> {
        make_grid(self.n, self.l)
    }

    /// Trajectories `range` as a new dataset.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Dataset {
        Dataset {
            inputs: self.inputs.slice(s![range.clone(), .., .., ..]).to_owned(),
            outputs: self.outputs.slice(s![range.clone(), .., .., ..]).to_owned(),
            ids: self.ids[range].to_vec(),
            input_times: self.input_times.clone(),
            output_times: self.output_times.clone(),
            ..*self
        }
    }

    fn spectral(&self, a: &Array4<f64>, k: usize, m: usize) -> Result<SpectralField> {
        let g = self.grid()?;
        let f = transform(&g, &a.slice(s![k, m, .., ..]).to_owned())?;
        Ok(f.mean_free())
    }

    pub fn input_field(&self, k: usize, m: usize) -> Result<SpectralField> {
        self.spectral(&self.inputs, k, m)
    }

    pub fn output_field(&self, k: usize, m: usize) -> Result<SpectralField> {
        self.spectral(&self.outputs, k, m)
    }
}

impl Dataset {
    /// Packs the snapshots and their scalar metadata into one container.
    pub fn to_sfc1(&self) -> Sfc1 {
        let mut c = Sfc1::new();
        let scalars = vec![self.n as f64, self.l, self.nu, self.dt, self.delta_t];
        let entries = [
            ("scalars", ArrayData::Real(ArrayD::from_shape_vec(IxDyn(&[5]), scalars).expect("5"))),
            ("input_times", ArrayData::Real(Array1::from(self.input_times.clone()).into_dyn())),
            ("output_times", ArrayData::Real(Array1::from(self.output_times.clone()).into_dyn())),
            ("inputs", ArrayData::Real(self.inputs.clone().into_dyn())),
            ("outputs", ArrayData::Real(self.outputs.clone().into_dyn())),
            (
                "ids",
                ArrayData::Real(Array1::from_iter(self.ids.iter().map(|&i| i as f64)).into_dyn()),
            ),
        ];
        for (name, data) in entries {
            c.push(name, data).expect("names are distinct");
        }
        c
    }

    pub fn from_sfc1(c: &Sfc1) -> Result<Dataset> {
        let scalars = c.real("scalars")?;
        if scalars.len() != 5 {
            return Err(Error::Format("scalars must hold 5 values".into()));
        }
        let four = |name: &str| -> Result<Array4<f64>> {
            c.real(name)?
                .clone()
                .into_dimensionality()
                .map_err(|_| Error::Format(format!("{name} must be 4-dimensional")))
        };
        let vec = |name: &str| -> Result<Vec<f64>> { Ok(c.real(name)?.iter().copied().collect()) };
        let ds = Dataset {
            n: scalars[0] as usize,
            l: scalars[1],
            nu: scalars[2],
            dt: scalars[3],
            delta_t: scalars[4],
            input_times: vec("input_times")?,
            output_times: vec("output_times")?,
            inputs: four("inputs")?,
            outputs: four("outputs")?,
            ids: vec("ids")?.into_iter().map(|v| v as u64).collect(),
        };
        let (k, l, n1, n2) = ds.inputs.dim();
        let (k2, t, m1, m2) = ds.outputs.dim();
        if k != k2
            || [n1, n2, m1, m2].iter().any(|&d| d != ds.n)
            || l != ds.input_times.len()
            || t != ds.output_times.len()
            || ds.ids.len() != k
        {
            return Err(Error::Format("dataset arrays disagree in shape".into()));
        }
        Ok(ds)
    }

    /// Sidecar `key=value` description of the dataset and how it was made.
    pub fn metadata(&self, ic: &IcSpec) -> String {
        let mut s = format!(
            "n={}\nl={}\ndt={}\ndelta_t={}\nell={}\nn_t={}\nnu={}\ntrajectories={}\nseed={}\n",
            self.n,
            fmt_f64(self.l),
            fmt_f64(self.dt),
            fmt_f64(self.delta_t),
            self.ell(),
            self.n_t(),
            fmt_f64(self.nu),
            self.len(),
            ic.seed,
        );
        match ic.kind {
            IcKind::TaylorGreen { kappa } => s.push_str(&format!("ic=taylor_green\nkappa={kappa}\n")),
            IcKind::Grf { alpha, tau } => {
                s.push_str(&format!("ic=grf\nalpha={}\ntau={}\n", fmt_f64(alpha), fmt_f64(tau)))
            }
            IcKind::McWilliams { k0, tau } => {
                s.push_str(&format!("ic=mcwilliams\nk0={}\ntau={}\n", fmt_f64(k0), fmt_f64(tau)))
            }
        }
        if let Some(e) = ic.normalize_energy {
            s.push_str(&format!("energy={}\n", fmt_f64(e)));
        }
        s
    }
}

/// Outcome of a generation run.
#[derive(Debug)]
pub struct Generated {
    pub train: Dataset,
    pub test: Dataset,
    /// Trajectory indices that blew up and were dropped.
    pub failed: Vec<u64>,
}

fn run_one(
    spec: &DatasetSpec,
    ic: &IcSpec,
    cfg: &SolverConfig,
    index: u64,
) -> Result<Vec<Array2<f64>>> {
    let gen = make_grid(spec.n_gen, spec.l)?;
    let mut w = ic.sample(&gen, index, cfg.nu)?;
    let ops = StepOps::new(&gen, cfg, cfg.dt, false)?;
    let burn_steps = (spec.burn_in / cfg.dt).round() as usize;
    let mut t = 0.0;
    for k in 0..burn_steps {
        w = ops.step_field(&w, k as f64 * cfg.dt)?;
        t = (k + 1) as f64 * cfg.dt;
    }
    let total = spec.ell + spec.n_t;
    let mut out = Vec::with_capacity(total);
    for rec in 0..total {
        if rec > 0 {
            for _ in 0..spec.record_every {
                w = ops.step_field(&w, t)?;
                t += cfg.dt;
            }
        }
        let coarse = resample(&w, spec.n)?;
        out.push(coarse.to_physical().remove(0));
    }
    Ok(out)
}

/// Samples, burns in, records and downsamples every trajectory.
///
/// Trajectories run in parallel on the current rayon pool. A trajectory whose
/// solve blows up is dropped and its index reported in [`Generated::failed`].
pub fn generate_dataset(spec: &DatasetSpec, ic: &IcSpec, cfg: &SolverConfig) -> Result<Generated> {
    spec.validate()?;
    cfg.validate()?;
    if (cfg.dt - spec.dt).abs() > 1e-15 * spec.dt {
        return Err(Error::InvalidArgument("solver dt differs from dataset dt".into()));
    }
    let count = spec.n_train + spec.n_test;
    let runs: Vec<(u64, Result<Vec<Array2<f64>>>)> = (0..count as u64)
        .into_par_iter()
        .map(|i| (i, run_one(spec, ic, cfg, i)))
        .collect();
    let mut failed = Vec::new();
    let mut ok = Vec::new();
    for (i, r) in runs {
        match r {
            Ok(s) => ok.push((i, s)),
            Err(Error::BlowUp { t }) => {
                eprintln!("trajectory {i} (seed {}, stream {i}) blew up at t = {t}", ic.seed);
                failed.push(i);
            }
            Err(e) => return Err(e),
        }
    }
    let burn = (spec.burn_in / cfg.dt).round() * cfg.dt;
    let dt_rec = spec.delta_t();
    let input_times: Vec<f64> = (0..spec.ell).map(|m| burn + m as f64 * dt_rec).collect();
    let output_times: Vec<f64> =
        (0..spec.n_t).map(|m| burn + (spec.ell + m) as f64 * dt_rec).collect();
    let build = |items: &[(u64, Vec<Array2<f64>>)]| {
        let n = spec.n;
        let mut inputs = Array4::zeros((items.len(), spec.ell, n, n));
        let mut outputs = Array4::zeros((items.len(), spec.n_t, n, n));
        for (k, (_, snaps)) in items.iter().enumerate() {
            for (m, a) in snaps.iter().enumerate() {
                if m < spec.ell {
                    inputs.slice_mut(s![k, m, .., ..]).assign(a);
                } else {
                    outputs.slice_mut(s![k, m - spec.ell, .., ..]).assign(a);
                }
            }
        }
        Dataset {
            n,
            l: spec.l,
            nu: cfg.nu,
            dt: cfg.dt,
            delta_t: dt_rec,
            input_times: input_times.clone(),
            output_times: output_times.clone(),
            inputs,
            outputs,
            ids: items.iter().map(|x| x.0).collect(),
        }
    };
    let split = ok.iter().take_while(|(i, _)| (*i as usize) < spec.n_train).count();
    Ok(Generated { train: build(&ok[..split]), test: build(&ok[split..]), failed })
}
