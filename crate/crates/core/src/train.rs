//! Training, spectral fine-tuning and evaluation.
//!
//! Fine-tuning freezes everything except the projection's full-spectrum layer
//! (optionally also its channel reduction), holds the backbone latent fixed and
//! minimizes the squared estimator `η² = Σ_m η_m²`. The time derivative of each
//! predicted snapshot comes from one fine solver step,
//! `D_t u = (B_γ(u) − u)/δt^γ`, and consecutive outputs are tied together by
//! the trapezoidal residual `(u_m − u_{m−1})/h − ½(D_t u_m + D_t u_{m−1})`,
//! whose first entry uses the last input snapshot as `u_{−1}`.

use std::sync::Arc;

use ndarray::{Array2, ArrayD, Axis, IxDyn};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{Tape, TapeBackend, Var};
use crate::backend::{CTensor, Plain};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::grid::{curl2d, make_grid, Grid, SpectralField, SpectralTrajectory};
use crate::model::{output_points, spectra_to_fields, ParamGroup, StfnoModel};
use crate::norms::{bochner_norm, enstrophy_spectrum, fit_slope, rel_l2, TimeExponent};
use crate::residual::{neg_weight, project, report_from_residuals, trajectory_report, EstimatorConfig, EstimatorReport, Formulation};
use crate::timestep::{b_gamma_ops, velocity_of, SolverConfig, StepOps};

/// Warm-up then cosine decay of the learning rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OneCycle {
    pub peak: f64,
    pub total_steps: usize,
    /// Fraction of steps spent warming up.
    pub warmup: f64,
    /// Smallest rate as a fraction of `peak`.
    pub floor: f64,
}

impl OneCycle {
    pub fn new(peak: f64, total_steps: usize) -> Self {
        OneCycle { peak, total_steps, warmup: 0.2, floor: 1e-3 }
    }

    pub fn lr(&self, step: usize) -> f64 {
        let lo = self.floor * self.peak;
        let total = self.total_steps.max(1) as f64;
        let warm = (self.warmup * total).max(1.0);
        let s = step as f64;
        if s < warm {
            lo + (self.peak - lo) * s / warm
        } else {
            let p = ((s - warm) / (total - warm).max(1.0)).min(1.0);
            lo + 0.5 * (self.peak - lo) * (1.0 + (std::f64::consts::PI * p).cos())
        }
    }
}

/// Adam moments; real and imaginary parts are independent coordinates.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay (AdamW); zero gives Adam.
    pub weight_decay: f64,
    pub schedule: Option<OneCycle>,
    pub step: usize,
    m: Vec<CTensor>,
    v: Vec<CTensor>,
}

impl OptimizerState {
    pub fn adam(lr: f64) -> Self {
        OptimizerState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            schedule: None,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn current_lr(&self) -> f64 {
        self.schedule.map_or(self.lr, |s| s.lr(self.step))
    }

    /// One update of `params` (in place) from `grads`.
    pub fn update(&mut self, params: &mut [&mut CTensor], grads: &[CTensor], real: &[bool]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect();
            self.v = params.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect();
        }
        let lr = self.current_lr();
        self.step += 1;
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (k, p) in params.iter_mut().enumerate() {
            let is_real = real[k];
            ndarray::Zip::from(&mut **p)
                .and(&mut self.m[k])
                .and(&mut self.v[k])
                .and(&grads[k])
                .for_each(|p, m, v, g| {
                    let g = if is_real { Complex64::new(g.re, 0.0) } else { *g };
                    m.re = b1 * m.re + (1.0 - b1) * g.re;
                    m.im = b1 * m.im + (1.0 - b1) * g.im;
                    v.re = b2 * v.re + (1.0 - b2) * g.re * g.re;
                    v.im = b2 * v.im + (1.0 - b2) * g.im * g.im;
                    let step = |m: f64, v: f64| lr * (m / c1) / ((v / c2).sqrt() + eps);
                    p.re -= step(m.re, v.re) + lr * wd * p.re;
                    p.im -= step(m.im, v.im) + lr * wd * p.im;
                });
        }
    }
}

/// Training loss measured on whole output trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Relative L² error.
    L2,
    /// Relative `H⁻¹` error.
    HNeg1,
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(LossKind::L2),
            "h_neg1" => Ok(LossKind::HNeg1),
            _ => Err(Error::InvalidArgument(format!("unknown loss {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub loss: LossKind,
    pub weight_decay: f64,
    pub one_cycle: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 10, lr: 1e-2, batch: 2, loss: LossKind::L2, weight_decay: 0.0, one_cycle: true, seed: 0 }
    }
}

/// Per-epoch diagnostics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    /// Mean training loss of every epoch.
    pub loss: Vec<f64>,
    /// Enstrophy-slope difference between prediction and data on the first
    /// trajectory after each epoch (`NaN` when no slope can be fitted).
    pub slope_gap: Vec<f64>,
}

fn loss_weight(grid: &Grid, kind: LossKind) -> Arc<ArrayD<f64>> {
    match kind {
        LossKind::HNeg1 => neg_weight(grid, 0.0),
        LossKind::L2 => Arc::new(ArrayD::from_elem(IxDyn(&[grid.n, grid.n]), grid.parseval_factor())),
    }
}

/// Model input `[c, ell, n, n]` and target spectra `[c, n_t, n, n]` of one trajectory.
pub fn sample_pair(data: &Dataset, k: usize, form: Formulation) -> Result<(ArrayD<f64>, CTensor)> {
    let conv = |f: SpectralField| -> Result<SpectralField> {
        match form {
            Formulation::Vs => Ok(f),
            Formulation::Vp => velocity_of(&f),
        }
    };
    let inputs = (0..data.ell()).map(|m| conv(data.input_field(k, m)?)).collect::<Result<Vec<_>>>()?;
    let outputs = (0..data.n_t()).map(|m| conv(data.output_field(k, m)?)).collect::<Result<Vec<_>>>()?;
    Ok((StfnoModel::fields_to_input(&inputs), fields_to_spectra(&outputs)))
}

/// Stacks fields into spectra `[c, T, n, n]`.
pub fn fields_to_spectra(fields: &[SpectralField]) -> CTensor {
    let comps = fields[0].planes.len();
    let n = fields[0].grid.n;
    let mut out = ArrayD::zeros(IxDyn(&[comps, fields.len(), n, n]));
    for (t, f) in fields.iter().enumerate() {
        for (ci, p) in f.planes.iter().enumerate() {
            out.index_axis_mut(Axis(0), ci).index_axis_mut(Axis(0), t).assign(p);
        }
    }
    out
}

fn sample_loss<'t>(
    model: &StfnoModel,
    tape: &'t Tape,
    input: &ArrayD<f64>,
    target: &CTensor,
    weight: &Arc<ArrayD<f64>>,
) -> Result<(Var<'t>, Vec<Var<'t>>)> {
    let mv = model.vars(tape, |_| true);
    let n = input.shape()[2];
    let n_t = target.shape()[1];
    let latent = model.latent_tape(tape, &mv, input)?;
    let pts = output_points(model.cfg.d_t, n_t);
    let eval = model.eval_matrix(&pts, &vec![-1.0; n_t]);
    let corr = model.projection_tape(&mv, &latent, &eval, n)?;
    let out = model.anchor_tape(tape, &corr, &model.base_spectrum(input, n)?)?;
    let diff = out.sub(&tape.constant(target.clone()));
    let mut den = 0.0;
    ndarray::Zip::from(target).and_broadcast(&**weight).for_each(|v, w| den += w * v.norm_sqr());
    let num = diff.weighted_sq_sum(weight);
    let loss = num.scale(1.0 / den).sqrt();
    Ok((loss, mv.vars))
}

/// Loss and parameter gradients of one trajectory.
pub fn sample_gradient(
    model: &StfnoModel,
    input: &ArrayD<f64>,
    target: &CTensor,
    kind: LossKind,
) -> Result<(f64, Vec<CTensor>)> {
    let grid = make_grid(input.shape()[2], model.l)?;
    let weight = loss_weight(&grid, kind);
    let tape = Tape::new();
    let (loss, vars) = sample_loss(model, &tape, input, target, &weight)?;
    let g = tape.backward(&loss)?;
    Ok((loss.scalar(), vars.iter().map(|v| g.of(v)).collect()))
}

/// Minibatch Adam on the relative trajectory loss for `cfg.epochs` epochs.
pub fn train(model: &mut StfnoModel, data: &Dataset, cfg: &TrainConfig) -> Result<TrainHistory> {
    if data.n != model.n_train {
        return Err(Error::Shape(format!("dataset n = {} but model n = {}", data.n, model.n_train)));
    }
    let form = model.cfg.formulation;
    let pairs = (0..data.len()).map(|k| sample_pair(data, k, form)).collect::<Result<Vec<_>>>()?;
    let batch = cfg.batch.max(1);
    let batches_per_epoch = pairs.len().div_ceil(batch);
    let mut opt = OptimizerState::adam(cfg.lr);
    opt.weight_decay = cfg.weight_decay;
    if cfg.one_cycle {
        opt.schedule = Some(OneCycle::new(cfg.lr, cfg.epochs * batches_per_epoch));
    }
    let real: Vec<bool> = model.params.iter().map(|p| p.real).collect();
    let mut hist = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64)));
        let mut total = 0.0;
        for (b, chunk) in order.chunks(batch).enumerate() {
            let results = chunk
                .par_iter()
                .map(|&k| sample_gradient(model, &pairs[k].0, &pairs[k].1, cfg.loss))
                .collect::<Vec<_>>();
            let mut grads: Vec<CTensor> = model.params.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect();
            for r in results {
                let (loss, g) = r?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("training loss in epoch {epoch}, batch {b}")));
                }
                total += loss;
                for (acc, gi) in grads.iter_mut().zip(&g) {
                    *acc += gi;
                }
            }
            let scale = 1.0 / chunk.len() as f64;
            grads.iter_mut().for_each(|g| g.mapv_inplace(|v| v * scale));
            let mut ps: Vec<&mut CTensor> = model.params.iter_mut().map(|p| &mut p.value).collect();
            opt.update(&mut ps, &grads, &real);
        }
        hist.loss.push(total / pairs.len() as f64);
        hist.slope_gap.push(slope_gap_of(model, data, &pairs[0]).unwrap_or(f64::NAN));
    }
    Ok(hist)
}

fn slope_gap_of(model: &StfnoModel, data: &Dataset, pair: &(ArrayD<f64>, CTensor)) -> Result<f64> {
    let n = data.n;
    let n_t = pair.1.shape()[1];
    let pred = model.forward(&pair.0, n_t, n)?;
    let grid = make_grid(n, model.l)?;
    let target = spectra_to_fields(&grid, &pair.1);
    slope_gap(pred.last().expect("outputs"), target.last().expect("outputs"))
}

fn vorticity(f: &SpectralField) -> Result<SpectralField> {
    if f.is_vector() {
        crate::grid::curl2d(f)
    } else {
        Ok(f.clone())
    }
}

/// Enstrophy-spectrum slope of `pred` minus that of `reference` over `k ∈ [4, n/4]`.
pub fn slope_gap(pred: &SpectralField, reference: &SpectralField) -> Result<f64> {
    let hi = (pred.grid.n / 4) as f64;
    let s = |f: &SpectralField| fit_slope(&enstrophy_spectrum(&vorticity(f)?)?, 4.0, hi);
    Ok(s(pred)? - s(reference)?)
}

/// Norm the fine-tuning loss measures the residual in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FtLoss {
    HNeg1,
    L2,
}

impl std::str::FromStr for FtLoss {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "h_neg1" => Ok(FtLoss::HNeg1),
            "l2" => Ok(FtLoss::L2),
            _ => Err(Error::InvalidArgument(format!("unknown fine-tuning loss {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FtMode {
    /// All output times at once.
    Parallel,
    /// One output time after another until each meets the tolerance.
    Guaranteed,
}

impl std::str::FromStr for FtMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parallel" => Ok(FtMode::Parallel),
            "guaranteed" => Ok(FtMode::Guaranteed),
            _ => Err(Error::InvalidArgument(format!("unknown fine-tuning mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneConfig {
    pub iters: usize,
    pub lr: f64,
    pub gamma: u32,
    pub loss: FtLoss,
    pub alpha: f64,
    pub mode: FtMode,
    /// Per-step target of the guaranteed mode.
    pub tol: f64,
    /// Update budget per output time in the guaranteed mode.
    pub iter_max: usize,
    /// Also train the projection's channel reduction.
    pub train_reduce: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            iters: 100,
            lr: 0.1,
            gamma: 2,
            loss: FtLoss::HNeg1,
            alpha: 0.0,
            mode: FtMode::Parallel,
            tol: 1e-3,
            iter_max: 100,
            train_reduce: false,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mode == FtMode::Guaranteed && !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tol = {} must be positive", self.tol)));
        }
        if self.gamma < 2 {
            return Err(Error::InvalidArgument(format!("gamma = {} must be >= 2", self.gamma)));
        }
        if !(self.lr > 0.0) || !(self.alpha >= 0.0) {
            return Err(Error::InvalidArgument("lr must be positive and alpha >= 0".into()));
        }
        Ok(())
    }
}

/// Physics of the window being refined.
#[derive(Clone, Debug)]
pub struct FinetuneProblem {
    pub solver: SolverConfig,
    /// Time between consecutive outputs, also the `δt` of the fine step `δt^γ`.
    pub spacing: f64,
    pub n_t_out: usize,
    /// Time of the last input snapshot.
    pub t_last: f64,
}

/// Refined outputs with the optimization record.
#[derive(Clone, Debug)]
pub struct FinetuneResult {
    pub outputs: Vec<SpectralField>,
    /// Output times.
    pub times: Vec<f64>,
    /// Estimator before every update and after the last one (parallel mode),
    /// or once per output time at acceptance (guaranteed mode).
    pub history: Vec<EstimatorReport>,
    /// The model with its tuned projection.
    pub model: StfnoModel,
    /// Optimizer updates spent on each output time (guaranteed mode).
    pub updates_per_step: Vec<usize>,
    /// Output times that exhausted `iter_max` without meeting `tol`.
    pub hit_iter_max: Vec<usize>,
}

/// Fixed-latent fine-tuning problem for one input window.
pub struct Session<'a> {
    model: StfnoModel,
    latent: CTensor,
    base: CTensor,
    grid: Arc<Grid>,
    ops: StepOps,
    fine_h: f64,
    weight: Arc<ArrayD<f64>>,
    problem: &'a FinetuneProblem,
    cfg: &'a FinetuneConfig,
    trainable: Vec<bool>,
}

impl<'a> Session<'a> {
    pub fn new(model: &StfnoModel, input: &ArrayD<f64>, problem: &'a FinetuneProblem, cfg: &'a FinetuneConfig) -> Result<Self> {
        cfg.validate()?;
        problem.solver.validate()?;
        if problem.n_t_out == 0 || !(problem.spacing > 0.0) {
            return Err(Error::InvalidArgument("need n_t_out >= 1 and a positive spacing".into()));
        }
        let n = input.shape().get(2).copied().unwrap_or(0);
        let grid = make_grid(n, model.l)?;
        let vector = model.cfg.formulation == Formulation::Vp;
        let ops = b_gamma_ops(&grid, cfg.gamma, problem.spacing, &problem.solver, vector)?;
        let weight = match cfg.loss {
            FtLoss::HNeg1 => neg_weight(&grid, cfg.alpha),
            FtLoss::L2 => Arc::new(ArrayD::from_elem(IxDyn(&[n, n]), grid.parseval_factor())),
        };
        let trainable = model
            .params
            .iter()
            .map(|p| p.group == ParamGroup::Ks || (cfg.train_reduce && p.group == ParamGroup::Reduce))
            .collect();
        let latent = model.latent(input)?;
        Ok(Session {
            latent,
            base: model.base_spectrum(input, n)?,
            model: model.clone(),
            fine_h: ops.dt(),
            ops,
            grid,
            weight,
            problem,
            cfg,
            trainable,
        })
    }

    fn vars<'t>(&self, tape: &'t Tape) -> crate::model::ModelVars<'t> {
        let train_reduce = self.cfg.train_reduce;
        self.model.vars(tape, |g| g == ParamGroup::Ks || (train_reduce && g == ParamGroup::Reduce))
    }

    /// Current values of the trainable parameters and their realness flags.
    pub fn trainable_values(&self) -> (Vec<CTensor>, Vec<bool>) {
        self.model
            .params
            .iter()
            .zip(&self.trainable)
            .filter(|(_, &t)| t)
            .map(|(p, _)| (p.value.clone(), p.real))
            .unzip()
    }

    /// `η²` of the parallel problem with the trainable parameters taken from `theta`.
    pub fn loss_with<'t>(&self, tape: &'t Tape, theta: &[Var<'t>]) -> Result<Var<'t>> {
        let mut it = theta.iter();
        let vars = self
            .model
            .params
            .iter()
            .zip(&self.trainable)
            .map(|(p, &t)| {
                if t {
                    it.next().cloned().ok_or_else(|| Error::Shape("too few parameters".into()))
                } else {
                    Ok(tape.constant(p.value.clone()))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mv = crate::model::ModelVars { vars };
        let t_out = self.problem.n_t_out;
        let pts = output_points(self.model.cfg.d_t, t_out);
        let eval = self.model.eval_matrix(&pts, &vec![-1.0; t_out]);
        let corr = self.model.projection_tape(&mv, &tape.constant(self.latent.clone()), &eval, self.grid.n)?;
        let u = self.model.anchor_tape(tape, &corr, &self.base)?;
        Ok(self.loss(&self.residual(tape, &u, &self.base)))
    }

    /// `D_t` of spectra `[c, T, n, n]` on the tape.
    fn dt_tape<'t>(&self, tape: &'t Tape, u: &Var<'t>) -> Vec<Var<'t>> {
        let b = TapeBackend(tape);
        let planes: Vec<Var<'t>> = (0..u.shape()[0]).map(|c| u.index0(c)).collect();
        let next = self.ops.apply(&b, &planes);
        next.iter().zip(&planes).map(|(a, p)| a.sub(p).scale(1.0 / self.fine_h)).collect()
    }

    /// `D_t` of plain spectra `[c, n, n]`.
    fn dt_plain(&self, u: &CTensor) -> Vec<CTensor> {
        let planes: Vec<CTensor> = u.outer_iter().map(|p| p.to_owned()).collect();
        let next = self.ops.apply(&Plain, &planes);
        next.iter().zip(&planes).map(|(a, p)| (a - p) / self.fine_h).collect()
    }

    /// Trapezoidal residual planes `[T, n, n]` per component, `prev` preceding the first row.
    fn residual<'t>(&self, tape: &'t Tape, u: &Var<'t>, prev: &CTensor) -> Vec<Var<'t>> {
        let t = u.shape()[1];
        let h = self.problem.spacing;
        let d = self.dt_tape(tape, u);
        let d_prev = self.dt_plain(prev);
        let mut shift = Array2::zeros((t, t));
        for m in 1..t {
            shift[[m, m - 1]] = Complex64::new(1.0, 0.0);
        }
        let shift = Arc::new(shift);
        let first = |x: &CTensor| {
            let mut a = ArrayD::zeros(IxDyn(&[t, x.shape()[0], x.shape()[1]]));
            a.index_axis_mut(Axis(0), 0).assign(x);
            Arc::new(a)
        };
        let mut out = Vec::new();
        for c in 0..u.shape()[0] {
            let uc = u.index0(c);
            let pc = prev.index_axis(Axis(0), c).to_owned();
            let u_prev = uc.axis_matmul_fixed(0, &shift).add_fixed(&first(&pc));
            let d_shift = d[c].axis_matmul_fixed(0, &shift).add_fixed(&first(&d_prev[c]));
            let diff = uc.sub(&u_prev).scale(1.0 / h);
            out.push(diff.sub(&d[c].add(&d_shift).scale(0.5)));
        }
        project(&TapeBackend(tape), &self.grid, out)
    }

    fn loss<'t>(&self, res: &[Var<'t>]) -> Var<'t> {
        let mut acc = res[0].weighted_sq_sum(&self.weight);
        for r in &res[1..] {
            acc = acc.add(&r.weighted_sq_sum(&self.weight));
        }
        acc
    }

    fn report(&self, res: &[Var], times: &[f64]) -> Result<EstimatorReport> {
        let planes: Vec<CTensor> = res.iter().map(|r| r.value().clone()).collect();
        let stacked = ndarray::stack(Axis(0), &planes.iter().map(|p| p.view()).collect::<Vec<_>>())
            .map_err(|e| Error::Shape(e.to_string()))?;
        let fields = spectra_to_fields(&self.grid, &stacked);
        let alpha = if self.cfg.loss == FtLoss::HNeg1 { self.cfg.alpha } else { 0.0 };
        let mut rep = report_from_residuals(times, &fields, alpha)?;
        if self.cfg.loss == FtLoss::L2 {
            for (s, f) in rep.per_step.iter_mut().zip(&fields) {
                s.eta = crate::norms::l2_norm(f);
            }
            rep = EstimatorReport::from_steps(rep.per_step, rep.formulation);
        }
        Ok(rep)
    }

    fn step(&mut self, opt: &mut OptimizerState, grads: &crate::autodiff::Grads, vars: &[Var]) {
        let mut ps = Vec::new();
        let mut gs = Vec::new();
        let mut real = Vec::new();
        for ((p, v), &t) in self.model.params.iter_mut().zip(vars).zip(&self.trainable) {
            if t {
                gs.push(grads.of(v));
                real.push(p.real);
                ps.push(&mut p.value);
            }
        }
        opt.update(&mut ps, &gs, &real);
    }
}

fn check_finite(v: f64, what: &str, iter: usize) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} at fine-tuning iteration {iter}")))
    }
}

fn output_times(problem: &FinetuneProblem) -> Vec<f64> {
    (1..=problem.n_t_out).map(|m| problem.t_last + m as f64 * problem.spacing).collect()
}

/// Parallel-in-time refinement: every iteration updates the projection from
/// the gradient of `η² = Σ_m η_m²` over all output times.
pub fn finetune_parallel(
    model: &StfnoModel,
    input: &ArrayD<f64>,
    problem: &FinetuneProblem,
    cfg: &FinetuneConfig,
) -> Result<FinetuneResult> {
    let mut s = Session::new(model, input, problem, cfg)?;
    let n = s.grid.n;
    let t_out = problem.n_t_out;
    let times = output_times(problem);
    let pts = output_points(s.model.cfg.d_t, t_out);
    let eval = s.model.eval_matrix(&pts, &vec![-1.0; t_out]);
    let mut opt = OptimizerState::adam(cfg.lr);
    let mut history = Vec::with_capacity(cfg.iters + 1);
    let mut outputs = CTensor::zeros(IxDyn(&[0]));
    for it in 0..=cfg.iters {
        let tape = Tape::new();
        let mv = s.vars(&tape);
        let latent = tape.constant(s.latent.clone());
        let corr = s.model.projection_tape(&mv, &latent, &eval, n)?;
        let u = s.model.anchor_tape(&tape, &corr, &s.base)?;
        let res = s.residual(&tape, &u, &s.base);
        let loss = s.loss(&res);
        check_finite(loss.scalar(), "estimator", it)?;
        history.push(s.report(&res, &times)?);
        outputs = u.value().clone();
        if it == cfg.iters {
            break;
        }
        let grads = tape.backward(&loss)?;
        s.step(&mut opt, &grads, &mv.vars);
    }
    Ok(FinetuneResult {
        outputs: spectra_to_fields(&s.grid, &outputs),
        times,
        history,
        model: s.model,
        updates_per_step: Vec::new(),
        hit_iter_max: Vec::new(),
    })
}

/// Sequential refinement: output `m` is `u*_{m−1} + Q̃(v)(s_m) − Q̃(v)(s_{m−1})`
/// and the projection is updated until `η_m ≤ tol` or `iter_max` updates,
/// after which `u*_m` is frozen.
pub fn finetune_guaranteed(
    model: &StfnoModel,
    input: &ArrayD<f64>,
    problem: &FinetuneProblem,
    cfg: &FinetuneConfig,
) -> Result<FinetuneResult> {
    let mut s = Session::new(model, input, problem, cfg)?;
    let n = s.grid.n;
    let times = output_times(problem);
    let pts = output_points(s.model.cfg.d_t, problem.n_t_out);
    let mut opt = OptimizerState::adam(cfg.lr);
    let mut prev = s.base.clone();
    let mut accepted: Vec<CTensor> = Vec::new();
    let mut history = Vec::new();
    let mut updates = Vec::new();
    let mut hit = Vec::new();
    for m in 0..problem.n_t_out {
        let anchor = if m == 0 { -1.0 } else { pts[m - 1] };
        let eval = s.model.eval_matrix(&pts[m..=m], &[anchor]);
        let mut count = 0;
        loop {
            let tape = Tape::new();
            let mv = s.vars(&tape);
            let latent = tape.constant(s.latent.clone());
            let corr = s.model.projection_tape(&mv, &latent, &eval, n)?;
            let u = s.model.anchor_tape(&tape, &corr, &prev)?;
            let res = s.residual(&tape, &u, &prev);
            let loss = s.loss(&res);
            check_finite(loss.scalar(), "estimator", count)?;
            let rep = s.report(&res, &times[m..=m])?;
            let eta = rep.eta_total;
            if eta <= cfg.tol || count >= cfg.iter_max {
                if eta > cfg.tol {
                    hit.push(m);
                }
                history.push(rep);
                prev = u.value().index_axis(Axis(1), 0).to_owned();
                accepted.push(prev.clone());
                break;
            }
            let grads = tape.backward(&loss)?;
            s.step(&mut opt, &grads, &mv.vars);
            count += 1;
        }
        updates.push(count);
    }
    let stacked = ndarray::stack(Axis(1), &accepted.iter().map(|a| a.view()).collect::<Vec<_>>())
        .map_err(|e| Error::Shape(e.to_string()))?;
    Ok(FinetuneResult {
        outputs: spectra_to_fields(&s.grid, &stacked),
        times,
        history,
        model: s.model,
        updates_per_step: updates,
        hit_iter_max: hit,
    })
}

/// Accuracy and residual summary of a predicted window.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    /// Relative L² error of the final snapshot.
    pub rel_l2_final: f64,
    /// Relative L²-in-time, L²-in-space error over the window.
    pub bochner_rel: f64,
    /// Negative norm of the final trapezoidal residual with `α = 0`.
    pub residual_alpha0: f64,
    /// The same with `α = 1`.
    pub residual_alpha1: f64,
    /// Enstrophy-slope difference of the final snapshots (`NaN` if undefined).
    pub slope_gap: f64,
}

impl Metrics {
    pub const HEADER: [&'static str; 5] = ["rel_l2_final", "bochner_rel", "residual_alpha0", "residual_alpha1", "slope_gap"];

    pub fn row(&self) -> Vec<f64> {
        vec![self.rel_l2_final, self.bochner_rel, self.residual_alpha0, self.residual_alpha1, self.slope_gap]
    }
}

/// Compares `pred` with `reference` at `times`; `start` is the state before the window.
pub fn evaluate(
    pred: &[SpectralField],
    reference: &[SpectralField],
    times: &[f64],
    start: (f64, &SpectralField),
    est: &EstimatorConfig,
) -> Result<Metrics> {
    if pred.len() != reference.len() || pred.len() != times.len() || pred.is_empty() {
        return Err(Error::Shape("prediction, reference and times must align".into()));
    }
    let last = pred.len() - 1;
    let diff = pred.iter().zip(reference).map(|(p, r)| p.sub(r)).collect::<Result<Vec<_>>>()?;
    let ref_traj = SpectralTrajectory::new(times.to_vec(), reference.to_vec())?;
    let diff_traj = SpectralTrajectory::new(times.to_vec(), diff)?;
    let den = bochner_norm(&ref_traj, 0.0, TimeExponent::Two)?;
    let bochner_rel = if times.len() > 1 && den > 0.0 {
        bochner_norm(&diff_traj, 0.0, TimeExponent::Two)? / den
    } else {
        rel_l2(&pred[last], &reference[last])?
    };
    let pred_traj = SpectralTrajectory::new(times.to_vec(), pred.to_vec())?;
    let mut e0 = est.clone();
    e0.alpha = 0.0;
    let mut e1 = est.clone();
    e1.alpha = 1.0;
    let r0 = trajectory_report(start, &pred_traj, &e0)?;
    let r1 = trajectory_report(start, &pred_traj, &e1)?;
    Ok(Metrics {
        rel_l2_final: rel_l2(&pred[last], &reference[last])?,
        bochner_rel,
        residual_alpha0: r0.per_step[last].eta,
        residual_alpha1: r1.per_step[last].eta,
        slope_gap: slope_gap(&pred[last], &reference[last]).unwrap_or(f64::NAN),
    })
}

/// Window problem of trajectory windows in `data` under `solver`.
pub fn dataset_problem(data: &Dataset, solver: &SolverConfig) -> Result<FinetuneProblem> {
    let t_last = *data.input_times.last().ok_or_else(|| Error::Shape("dataset has no inputs".into()))?;
    let mut solver = solver.clone();
    solver.nu = data.nu;
    Ok(FinetuneProblem { solver, spacing: data.delta_t, n_t_out: data.n_t(), t_last })
}

fn to_vorticity(fields: Vec<SpectralField>) -> Result<Vec<SpectralField>> {
    fields.into_iter().map(|f| if f.is_vector() { curl2d(&f) } else { Ok(f) }).collect()
}

/// Prediction of one trajectory window, as vorticity, with the estimator history.
#[derive(Clone, Debug)]
pub struct WindowPrediction {
    pub outputs: Vec<SpectralField>,
    pub history: Vec<EstimatorReport>,
}

/// Fine-tunes every trajectory of `data` independently and in parallel.
///
/// `cfg.iters = 0` in parallel mode reproduces the plain forward pass.
pub fn finetune_dataset(
    model: &StfnoModel,
    data: &Dataset,
    solver: &SolverConfig,
    cfg: &FinetuneConfig,
) -> Result<Vec<WindowPrediction>> {
    cfg.validate()?;
    let problem = dataset_problem(data, solver)?;
    (0..data.len())
        .into_par_iter()
        .map(|k| {
            let (input, _) = sample_pair(data, k, model.cfg.formulation)?;
            let r = match cfg.mode {
                FtMode::Parallel => finetune_parallel(model, &input, &problem, cfg)?,
                FtMode::Guaranteed => finetune_guaranteed(model, &input, &problem, cfg)?,
            };
            Ok(WindowPrediction { outputs: to_vorticity(r.outputs)?, history: r.history })
        })
        .collect()
}

/// Copy of `data` whose output windows are replaced by `outputs`.
pub fn with_outputs(data: &Dataset, outputs: &[Vec<SpectralField>]) -> Result<Dataset> {
    if outputs.len() != data.len() || outputs.iter().any(|o| o.len() != data.n_t()) {
        return Err(Error::Shape("one output window per trajectory is required".into()));
    }
    let mut out = data.clone();
    for (k, window) in outputs.iter().enumerate() {
        for (m, f) in window.iter().enumerate() {
            if f.grid.n != data.n || f.is_vector() {
                return Err(Error::Shape("outputs must be vorticity on the dataset grid".into()));
            }
            out.outputs.index_axis_mut(Axis(0), k).index_axis_mut(Axis(0), m).assign(&f.to_physical()[0]);
        }
    }
    Ok(out)
}

/// Metrics of every predicted window of `pred` against `reference` windows.
///
/// Both datasets must share their inputs and time stamps; the residual is the
/// vorticity residual at the dataset viscosity.
pub fn evaluate_dataset(pred: &Dataset, reference: &[Vec<SpectralField>]) -> Result<Vec<Metrics>> {
    if reference.len() != pred.len() {
        return Err(Error::Shape("one reference window per trajectory is required".into()));
    }
    let est = EstimatorConfig::new(pred.nu);
    let t_last = *pred.input_times.last().ok_or_else(|| Error::Shape("dataset has no inputs".into()))?;
    (0..pred.len())
        .into_par_iter()
        .map(|k| {
            let start = pred.input_field(k, pred.ell() - 1)?;
            let outs = (0..pred.n_t()).map(|m| pred.output_field(k, m)).collect::<Result<Vec<_>>>()?;
            evaluate(&outs, &reference[k], &pred.output_times, (t_last, &start), &est)
        })
        .collect()
}

/// Output windows of `data` as spectral fields.
pub fn dataset_windows(data: &Dataset) -> Result<Vec<Vec<SpectralField>>> {
    (0..data.len())
        .map(|k| (0..data.n_t()).map(|m| data.output_field(k, m)).collect())
        .collect()
}
