//! Space-time Fourier neural operator mapping a window of snapshots to the
//! next window.
//!
//! The forward pass is `Q̃ ∘ σ ∘ K_{L−1} ∘ ⋯ ∘ σ ∘ K_0 ∘ P̃`:
//!
//! * `P̃` pads the input window in time, resamples it to `d_t` latent steps,
//!   lifts channels, applies a depthwise spatial spectral filter, adds a
//!   periodic positional encoding and normalizes over channels.
//! * `K_l v = W v + b + Re F⁻¹(R · F v)` mixes channels on the retained
//!   space-time modes `|τ| ≤ τ_max`, `|k| ≤ k_max`.
//! * `Q̃` reduces channels, pads in time, multiplies every space-time mode by
//!   `w_s + R_S` (the fine-tunable layer) and evaluates the resulting
//!   trigonometric series at the requested output times. The reduction sees
//!   the backbone features together with the resampled input window, so the
//!   multiplier acts on signals at data scale. Outputs are anchored at the
//!   last input snapshot.
//!
//! Every operator is either spectral or pointwise, so the same weights apply
//! at any spatial resolution and any number of output times.

use std::sync::Arc;

use ndarray::{Array2, ArrayD, Axis, IxDyn};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Activation, Tape, Var};
use crate::backend::CTensor;
use crate::error::{Error, Result};
use crate::fft::{bin_of, signed_index};
use crate::grid::{leray, make_grid, Grid, SpectralField};
use crate::io::{ArrayData, Sfc1};
use crate::residual::Formulation;

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct StfnoConfig {
    /// Number of backbone spectral convolutions.
    pub layers: usize,
    /// Channel width `d_v`.
    pub width: usize,
    /// Latent time steps `d_t`.
    pub d_t: usize,
    pub tau_max: usize,
    pub k_max: usize,
    /// Temporal padding as a fraction of the padded window.
    pub t_pad: f64,
    /// Leray-project velocity outputs.
    pub helmholtz: bool,
    pub formulation: Formulation,
    pub activation: Activation,
    pub layer_norm: bool,
    pub seed: u64,
}

impl Default for StfnoConfig {
    fn default() -> Self {
        StfnoConfig {
            layers: 2,
            width: 8,
            d_t: 10,
            tau_max: 5,
            k_max: 8,
            t_pad: 0.5,
            helmholtz: false,
            formulation: Formulation::Vs,
            activation: Activation::Gelu,
            layer_norm: true,
            seed: 0,
        }
    }
}

impl StfnoConfig {
    /// Checks the hyper-parameters against the training grid size `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.width == 0 || self.d_t == 0 {
            return bad("width and d_t must be positive".into());
        }
        if 2 * self.tau_max > self.d_t {
            return bad(format!("tau_max = {} exceeds d_t/2 = {}", self.tau_max, self.d_t / 2));
        }
        if 2 * self.k_max >= n {
            return bad(format!("k_max = {} must stay below n/2 = {}", self.k_max, n / 2));
        }
        if !(self.t_pad >= 0.0 && self.t_pad.is_finite()) {
            return bad(format!("t_pad = {} must be >= 0", self.t_pad));
        }
        if self.helmholtz && self.formulation != Formulation::Vp {
            return bad("the Helmholtz layer needs the velocity formulation".into());
        }
        Ok(())
    }

    /// Length of the padded latent time axis inside the projection.
    pub fn padded_len(&self) -> usize {
        self.d_t + (self.t_pad * self.d_t as f64).ceil() as usize
    }

    fn temporal_bins(&self) -> Vec<usize> {
        let mut bins = Vec::new();
        for s in -(self.tau_max as i64)..=self.tau_max as i64 {
            let b = bin_of(s, self.d_t);
            if !bins.contains(&b) {
                bins.push(b);
            }
        }
        bins
    }
}

/// Parameter groups; fine-tuning trains only some of them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Lift,
    Backbone,
    /// Channel reduction inside the projection.
    Reduce,
    /// The full-spectrum space-time multiplier of the projection.
    Ks,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: CTensor,
    /// Only the real part is a degree of freedom.
    pub real: bool,
}

/// Model weights together with their architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct StfnoModel {
    pub cfg: StfnoConfig,
    /// Resolution the full-spectrum multiplier is defined on.
    pub n_train: usize,
    /// Domain edge length of the fields the model acts on.
    pub l: f64,
    pub params: Vec<Param>,
}

fn c(v: f64) -> Complex64 {
    Complex64::new(v, 0.0)
}

/// Row `e` with `p(s) = Σ_k e_k X_k` for `X` the unnormalized DFT of a
/// period-`n` sequence; the Nyquist mode is evaluated as a cosine.
pub fn trig_eval_row(n: usize, s: f64) -> Vec<Complex64> {
    (0..n)
        .map(|k| {
            if n % 2 == 0 && k == n / 2 {
                c((std::f64::consts::PI * s).cos() / n as f64)
            } else {
                let ph = 2.0 * std::f64::consts::PI * signed_index(k, n) as f64 * s / n as f64;
                Complex64::from_polar(1.0 / n as f64, ph)
            }
        })
        .collect()
}

/// Values at fractional positions `points` of the trigonometric interpolant
/// of a period-`n` sequence, as a `[points, n]` matrix.
pub fn trig_interp_matrix(n: usize, points: &[f64]) -> Array2<f64> {
    Array2::from_shape_fn((points.len(), n), |(j, i)| {
        (0..n)
            .map(|k| {
                let d = points[j] - i as f64;
                if n % 2 == 0 && k == n / 2 {
                    (std::f64::consts::PI * d).cos()
                } else {
                    (2.0 * std::f64::consts::PI * signed_index(k, n) as f64 * d / n as f64).cos()
                }
            })
            .sum::<f64>()
            / n as f64
    })
}

/// `[len + pad, len]` map appending a linear blend from the last sample back to the first.
pub fn ramp_pad_matrix(len: usize, pad: usize) -> Array2<f64> {
    let mut m = Array2::zeros((len + pad, len));
    for i in 0..len {
        m[[i, i]] = 1.0;
    }
    for j in 0..pad {
        let w = (j + 1) as f64 / (pad + 1) as f64;
        m[[len + j, len - 1]] += 1.0 - w;
        m[[len + j, 0]] += w;
    }
    m
}

fn to_complex(m: &Array2<f64>) -> Arc<Array2<Complex64>> {
    Arc::new(m.mapv(c))
}

/// Latent positions of `n_t_out` outputs spread over `d_t` latent steps.
///
/// Output `j` sits at `(j + 1)·d_t/n_t_out − 1`; position `−1` is the last input snapshot.
pub fn output_points(d_t: usize, n_t_out: usize) -> Vec<f64> {
    (0..n_t_out)
        .map(|j| (j + 1) as f64 * d_t as f64 / n_t_out as f64 - 1.0)
        .collect()
}

/// Spectral coefficients `[c, n, n]` of the last snapshot of `input`, mean removed.
fn last_snapshot_hat(input: &ArrayD<f64>) -> CTensor {
    let l = input.shape()[1];
    let mut u = input.index_axis(Axis(1), l - 1).mapv(c);
    crate::fft::fft_axes(&mut u, &[1, 2], false);
    for mut p in u.outer_iter_mut() {
        p[[0, 0]] = c(0.0);
    }
    u
}

fn mean_mask(m: usize) -> Arc<CTensor> {
    Arc::new(ArrayD::from_shape_fn(IxDyn(&[m, m]), |ix| {
        c(if ix[0] == 0 && ix[1] == 0 { 0.0 } else { 1.0 })
    }))
}

fn signed_map(k_max: usize, n: usize) -> Arc<Vec<usize>> {
    Arc::new((-(k_max as i64)..=k_max as i64).map(|s| bin_of(s, n)).collect())
}

/// Handles to the tape variables of every parameter, in model order.
pub struct ModelVars<'t> {
    pub vars: Vec<Var<'t>>,
}

impl StfnoModel {
    /// Randomly initialized model; the full-spectrum layer starts as the identity.
    pub fn new(cfg: StfnoConfig, n_train: usize, l: f64) -> Result<Self> {
        cfg.validate(n_train)?;
        make_grid(n_train, l)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (dv, c_in) = (cfg.width, cfg.formulation.components());
        let kk = 2 * cfg.k_max + 1;
        let mut normal = |shape: &[usize], std: f64| -> CTensor {
            ArrayD::from_shape_simple_fn(IxDyn(shape), || c(std * rng.sample::<f64, _>(StandardNormal)))
        };
        let mut params = Vec::new();
        let mut push = |name: String, group, value: CTensor, real| {
            params.push(Param { name, group, value, real })
        };
        push("lift.w".into(), ParamGroup::Lift, normal(&[dv, c_in], (1.0 / c_in as f64).sqrt()), true);
        let spatial = normal(&[dv, 1, kk, kk], 0.1);
        push("lift.spatial".into(), ParamGroup::Lift, spatial, false);
        push("lift.pos_w".into(), ParamGroup::Lift, normal(&[dv, 5], (1.0 / 5f64).sqrt()), true);
        push("lift.pos_b".into(), ParamGroup::Lift, ArrayD::zeros(IxDyn(&[dv, 1, 1, 1])), true);
        push("lift.ln_gamma".into(), ParamGroup::Lift, ArrayD::from_elem(IxDyn(&[dv]), c(1.0)), true);
        push("lift.ln_beta".into(), ParamGroup::Lift, ArrayD::zeros(IxDyn(&[dv])), true);
        let na = cfg.temporal_bins().len();
        let mut rng2 = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        for layer in 0..cfg.layers {
            let scale = 1.0 / dv as f64;
            let r = ArrayD::from_shape_simple_fn(IxDyn(&[na, kk, kk, dv, dv]), || {
                Complex64::new(rng2.gen_range(-1.0..1.0), rng2.gen_range(-1.0..1.0)) * scale
            });
            push(format!("layer{layer}.r"), ParamGroup::Backbone, r, false);
            let w = ArrayD::from_shape_simple_fn(IxDyn(&[dv, dv]), || {
                c(rng2.sample::<f64, _>(StandardNormal) * scale.sqrt())
            });
            push(format!("layer{layer}.w"), ParamGroup::Backbone, w, true);
            push(format!("layer{layer}.b"), ParamGroup::Backbone, ArrayD::zeros(IxDyn(&[dv, 1, 1, 1])), true);
        }
        let c_out = c_in;
        let mut wq = ArrayD::zeros(IxDyn(&[c_out, dv + c_in]));
        for o in 0..c_out {
            for i in 0..dv {
                wq[[o, i]] = c(rng2.sample::<f64, _>(StandardNormal) / (dv as f64).sqrt());
            }
            wq[[o, dv + o]] = c(1.0);
        }
        push("proj.w".into(), ParamGroup::Reduce, wq, true);
        push("proj.b".into(), ParamGroup::Reduce, ArrayD::zeros(IxDyn(&[c_out, 1, 1, 1])), true);
        let np = cfg.padded_len();
        push("proj.ks_r".into(), ParamGroup::Ks, ArrayD::zeros(IxDyn(&[c_out, np, n_train, n_train])), false);
        push("proj.ks_skip".into(), ParamGroup::Ks, ArrayD::from_elem(IxDyn(&[c_out, 1, 1, 1]), c(1.0)), true);
        Ok(StfnoModel { cfg, n_train, l, params })
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.params
            .iter()
            .position(|p| p.name == name)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter {name:?}")))
    }

    /// Number of real degrees of freedom.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len() * if p.real { 1 } else { 2 }).sum()
    }

    /// Tape variables for all parameters; groups rejected by `trainable` are constants.
    pub fn vars<'t>(&self, tape: &'t Tape, trainable: impl Fn(ParamGroup) -> bool) -> ModelVars<'t> {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable(p.group) {
                    tape.param(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect();
        ModelVars { vars }
    }

    fn var<'a, 't>(&self, mv: &'a ModelVars<'t>, name: &str) -> &'a Var<'t> {
        &mv.vars[self.index(name).expect("parameter exists")]
    }

    fn check_input(&self, input: &ArrayD<f64>) -> Result<(usize, usize)> {
        let s = input.shape();
        let c_in = self.cfg.formulation.components();
        if s.len() != 4 || s[0] != c_in || s[2] != s[3] {
            return Err(Error::Shape(format!("model input must be [{c_in}, ell, n, n], got {s:?}")));
        }
        if s[1] < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 input snapshots, got {}", s[1])));
        }
        if s[2] < 8 || s[2] % 2 != 0 {
            return Err(Error::InvalidGrid(format!("n = {} must be even and >= 8", s[2])));
        }
        Ok((s[1], s[2]))
    }

    /// Input window padded and resampled to `d_t` latent steps, `[c_in, d_t, n, n]`.
    pub fn window_tape<'t>(&self, tape: &'t Tape, input: &ArrayD<f64>) -> Result<Var<'t>> {
        let (ell, _) = self.check_input(input)?;
        let cfg = &self.cfg;
        let pad = (cfg.t_pad * ell as f64).ceil() as usize;
        let points: Vec<f64> = if cfg.d_t == 1 {
            vec![(ell - 1) as f64]
        } else {
            (0..cfg.d_t).map(|j| j as f64 * (ell - 1) as f64 / (cfg.d_t - 1) as f64).collect()
        };
        let resample = trig_interp_matrix(ell + pad, &points).dot(&ramp_pad_matrix(ell, pad));
        let x = tape.constant(input.mapv(c));
        Ok(x.axis_matmul_fixed(1, &to_complex(&resample)))
    }

    /// Lifting `P̃` on the tape: `[c_in, ell, n, n]` to `[d_v, d_t, n, n]`.
    pub fn lift_tape<'t>(&self, tape: &'t Tape, mv: &ModelVars<'t>, input: &ArrayD<f64>) -> Result<Var<'t>> {
        let (_, n) = self.check_input(input)?;
        let cfg = &self.cfg;
        let x = self.window_tape(tape, input)?;
        let x = x.channel_matmul(self.var(mv, "lift.w"));
        let filt = self.var(mv, "lift.spatial").scatter_last2(&signed_map(cfg.k_max, n), n);
        let spec = x.fft(&[2, 3]).mul(&filt).ifft(&[2, 3]).re();
        let x = x.add(&spec);
        let feats = tape.constant(positional_features(cfg.d_t, n));
        let pe = feats.channel_matmul(self.var(mv, "lift.pos_w")).add_bcast(self.var(mv, "lift.pos_b"));
        let x = x.add(&pe);
        Ok(if cfg.layer_norm {
            x.layer_norm(self.var(mv, "lift.ln_gamma"), self.var(mv, "lift.ln_beta"), 1e-5)
        } else {
            x
        })
    }

    /// One backbone layer followed by the activation.
    pub fn layer_tape<'t>(&self, mv: &ModelVars<'t>, layer: usize, v: &Var<'t>) -> Var<'t> {
        let n = v.shape()[2];
        let tb = Arc::new(self.cfg.temporal_bins());
        let sb = signed_map(self.cfg.k_max, n);
        let spec = v
            .fft(&[1, 2, 3])
            .spectral_mix(self.var(mv, &format!("layer{layer}.r")), &tb, &sb)
            .ifft(&[1, 2, 3])
            .re();
        let w = v
            .channel_matmul(self.var(mv, &format!("layer{layer}.w")))
            .add_bcast(self.var(mv, &format!("layer{layer}.b")));
        w.add(&spec).activate(self.cfg.activation)
    }

    /// Backbone output stacked over the resampled input window, `[d_v + c_in, d_t, n, n]`.
    pub fn latent_tape<'t>(&self, tape: &'t Tape, mv: &ModelVars<'t>, input: &ArrayD<f64>) -> Result<Var<'t>> {
        let mut v = self.lift_tape(tape, mv, input)?;
        for layer in 0..self.cfg.layers {
            v = self.layer_tape(mv, layer, &v);
        }
        Ok(Var::concat0(&[v, self.window_tape(tape, input)?]))
    }

    /// Evaluation rows `[points, padded_len]`, each minus the row at `anchor`.
    pub fn eval_matrix(&self, points: &[f64], anchor: &[f64]) -> Arc<Array2<Complex64>> {
        let np = self.cfg.padded_len();
        let mut m = Array2::zeros((points.len(), np));
        for (j, (&s, &a)) in points.iter().zip(anchor).enumerate() {
            let (e, e0) = (trig_eval_row(np, s), trig_eval_row(np, a));
            for k in 0..np {
                m[[j, k]] = e[k] - e0[k];
            }
        }
        Arc::new(m)
    }

    /// Increments `Q̃(v)(s_j) − Q̃(v)(a_j)` as spatial spectra `[c, rows, n_out, n_out]`.
    ///
    /// `eval` comes from [`Self::eval_matrix`]. The mean mode is zero and each
    /// snapshot is the spectrum of a real field.
    pub fn projection_tape<'t>(
        &self,
        mv: &ModelVars<'t>,
        latent: &Var<'t>,
        eval: &Arc<Array2<Complex64>>,
        n_out: usize,
    ) -> Result<Var<'t>> {
        if n_out < self.n_train || n_out % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "n_out = {n_out} must be even and >= the training resolution {}",
                self.n_train
            )));
        }
        let cfg = &self.cfg;
        let q = latent.channel_matmul(self.var(mv, "proj.w")).add_bcast(self.var(mv, "proj.b"));
        let q = if q.shape()[2] != n_out { q.resize_spatial(n_out) } else { q };
        let np = cfg.padded_len();
        let pad = to_complex(&ramp_pad_matrix(cfg.d_t, np - cfg.d_t));
        let qh = q.axis_matmul_fixed(1, &pad).fft(&[1, 2, 3]);
        let map: Arc<Vec<usize>> =
            Arc::new((0..self.n_train).map(|j| bin_of(signed_index(j, self.n_train), n_out)).collect());
        let mult = self
            .var(mv, "proj.ks_r")
            .scatter_last2(&map, n_out)
            .add_bcast(self.var(mv, "proj.ks_skip"));
        let corr = qh.mul(&mult).axis_matmul_fixed(1, eval);
        let corr = corr.ifft(&[2, 3]).re().fft(&[2, 3]).mul_fixed(&mean_mask(n_out));
        Ok(corr)
    }

    /// Anchored outputs `u_last + increment`, Leray-projected when configured.
    pub fn anchor_tape<'t>(&self, tape: &'t Tape, corr: &Var<'t>, base: &CTensor) -> Result<Var<'t>> {
        let n_out = corr.shape()[2];
        let b = tape.constant(base.clone().insert_axis(Axis(1)));
        let out = corr.add_bcast(&b);
        if self.cfg.helmholtz {
            let g = make_grid(n_out, self.l)?;
            let [a, d] = leray(&crate::autodiff::TapeBackend(tape), &g, [&out.index0(0), &out.index0(1)]);
            Ok(Var::stack(&[a, d]))
        } else {
            Ok(out)
        }
    }

    /// Last input snapshot as spectra `[c, n_out, n_out]`.
    pub fn base_spectrum(&self, input: &ArrayD<f64>, n_out: usize) -> Result<CTensor> {
        self.check_input(input)?;
        let u = last_snapshot_hat(input);
        Ok(if u.shape()[2] != n_out { crate::grid::resize_dyn(&u, n_out) } else { u })
    }

    /// Lifting output as plain values.
    pub fn lift(&self, input: &ArrayD<f64>) -> Result<CTensor> {
        let tape = Tape::new();
        let mv = self.vars(&tape, |_| false);
        Ok(self.lift_tape(&tape, &mv, input)?.value().clone())
    }

    /// Backbone output as plain values.
    pub fn latent(&self, input: &ArrayD<f64>) -> Result<CTensor> {
        let tape = Tape::new();
        let mv = self.vars(&tape, |_| false);
        Ok(self.latent_tape(&tape, &mv, input)?.value().clone())
    }

    /// `n_t_out` predicted snapshots at resolution `n_out` from a fixed latent.
    pub fn project(
        &self,
        latent: &CTensor,
        base: &CTensor,
        n_t_out: usize,
        n_out: usize,
    ) -> Result<Vec<SpectralField>> {
        if n_t_out == 0 {
            return Err(Error::InvalidArgument("n_t_out must be positive".into()));
        }
        let tape = Tape::new();
        let mv = self.vars(&tape, |_| false);
        let pts = output_points(self.cfg.d_t, n_t_out);
        let eval = self.eval_matrix(&pts, &vec![-1.0; n_t_out]);
        let corr = self.projection_tape(&mv, &tape.constant(latent.clone()), &eval, n_out)?;
        let out = self.anchor_tape(&tape, &corr, base)?;
        self.to_fields(out.value(), n_out)
    }

    /// Full forward pass.
    pub fn forward(&self, input: &ArrayD<f64>, n_t_out: usize, n_out: usize) -> Result<Vec<SpectralField>> {
        let latent = self.latent(input)?;
        let base = self.base_spectrum(input, n_out)?;
        self.project(&latent, &base, n_t_out, n_out)
    }

    /// Splits spectra `[c, T, n, n]` into one field per time.
    pub fn to_fields(&self, out: &CTensor, n: usize) -> Result<Vec<SpectralField>> {
        let g = make_grid(n, self.l)?;
        Ok(spectra_to_fields(&g, out))
    }

    /// Physical snapshots `[c, T, n, n]` of fields.
    pub fn fields_to_input(fields: &[SpectralField]) -> ArrayD<f64> {
        let comps = fields[0].planes.len();
        let n = fields[0].grid.n;
        let mut out = ArrayD::zeros(IxDyn(&[comps, fields.len(), n, n]));
        for (t, f) in fields.iter().enumerate() {
            for (ci, p) in f.to_physical().into_iter().enumerate() {
                out.index_axis_mut(Axis(0), ci).index_axis_mut(Axis(0), t).assign(&p);
            }
        }
        out
    }

    /// Appends predictions autoregressively: each round feeds the last `ell`
    /// snapshots back in and keeps `n_t_out` new ones.
    pub fn rollout_baseline(&self, input: &ArrayD<f64>, rounds: usize, n_t_out: usize) -> Result<Vec<SpectralField>> {
        let (ell, n) = self.check_input(input)?;
        let mut window = input.clone();
        let mut out: Vec<SpectralField> = Vec::new();
        for _ in 0..rounds {
            let pred = self.forward(&window, n_t_out, n)?;
            let phys = Self::fields_to_input(&pred);
            let joined = ndarray::concatenate(Axis(1), &[window.view(), phys.view()])
                .map_err(|e| Error::Shape(e.to_string()))?;
            let total = joined.shape()[1];
            window = joined.slice_axis(Axis(1), ndarray::Slice::from(total - ell..)).to_owned();
            out.extend(pred);
        }
        Ok(out)
    }

    /// Weights as an SFC1 container; `config` holds the architecture.
    pub fn to_sfc1(&self) -> Sfc1 {
        let cfg = &self.cfg;
        let header = vec![
            cfg.layers as f64,
            cfg.width as f64,
            cfg.d_t as f64,
            cfg.tau_max as f64,
            cfg.k_max as f64,
            cfg.t_pad,
            cfg.helmholtz as u8 as f64,
            (cfg.formulation == Formulation::Vp) as u8 as f64,
            (cfg.activation == Activation::Identity) as u8 as f64,
            cfg.layer_norm as u8 as f64,
            cfg.seed as f64,
            self.n_train as f64,
            self.l,
        ];
        let mut s = Sfc1::new();
        s.push("config", ArrayData::Real(ArrayD::from_shape_vec(IxDyn(&[header.len()]), header).expect("1-D")))
            .expect("unique");
        for p in &self.params {
            let data = if p.real {
                ArrayData::Real(p.value.mapv(|v| v.re))
            } else {
                ArrayData::Complex(p.value.clone())
            };
            s.push(p.name.clone(), data).expect("unique names");
        }
        s
    }

    pub fn from_sfc1(s: &Sfc1) -> Result<Self> {
        let h = s.real("config")?;
        if h.len() != 13 {
            return Err(Error::Format("model config record has the wrong length".into()));
        }
        let flag = |i: usize| h[i] != 0.0;
        let cfg = StfnoConfig {
            layers: h[0] as usize,
            width: h[1] as usize,
            d_t: h[2] as usize,
            tau_max: h[3] as usize,
            k_max: h[4] as usize,
            t_pad: h[5],
            helmholtz: flag(6),
            formulation: if flag(7) { Formulation::Vp } else { Formulation::Vs },
            activation: if flag(8) { Activation::Identity } else { Activation::Gelu },
            layer_norm: flag(9),
            seed: h[10] as u64,
        };
        let mut model = StfnoModel::new(cfg, h[11] as usize, h[12])?;
        for p in &mut model.params {
            let value = match s.get(&p.name) {
                Some(ArrayData::Real(a)) if p.real => a.mapv(c),
                Some(ArrayData::Complex(a)) if !p.real => a.clone(),
                _ => return Err(Error::Format(format!("missing or mistyped parameter {:?}", p.name))),
            };
            if value.shape() != p.value.shape() {
                return Err(Error::Format(format!("parameter {:?} has shape {:?}", p.name, value.shape())));
            }
            p.value = value;
        }
        Ok(model)
    }

    /// One line per parameter: name, shape and dtype.
    pub fn manifest(&self) -> String {
        self.params
            .iter()
            .map(|p| format!("{} {:?} {}\n", p.name, p.value.shape(), if p.real { "f64" } else { "c128" }))
            .collect()
    }
}

/// Splits spectra `[c, T, n, n]` into one field per time on `grid`.
pub fn spectra_to_fields(grid: &Arc<Grid>, out: &CTensor) -> Vec<SpectralField> {
    let comps = out.shape()[0];
    (0..out.shape()[1])
        .map(|t| {
            let planes = (0..comps)
                .map(|ci| out.index_axis(Axis(0), ci).index_axis(Axis(0), t).to_owned().into_dyn())
                .collect();
            SpectralField::from_dyn(grid.clone(), planes)
        })
        .collect()
}

/// Channels `(t, sin 2πx, cos 2πx, sin 2πy, cos 2πy)` on `[5, d_t, n, n]` with `t ∈ [0, 1]`.
fn positional_features(d_t: usize, n: usize) -> CTensor {
    let tau = std::f64::consts::TAU;
    ArrayD::from_shape_fn(IxDyn(&[5, d_t, n, n]), |ix| {
        let t = if d_t > 1 { ix[1] as f64 / (d_t - 1) as f64 } else { 0.0 };
        let (x, y) = (ix[2] as f64 / n as f64, ix[3] as f64 / n as f64);
        c(match ix[0] {
            0 => t,
            1 => (tau * x).sin(),
            2 => (tau * x).cos(),
            3 => (tau * y).sin(),
            _ => (tau * y).cos(),
        })
    })
}
