mod common;

use std::sync::Arc;

use common::*;
use ndarray::{Array2, ArrayD, IxDyn};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectral_refine::autodiff::*;
use spectral_refine::backend::CTensor;
use spectral_refine::grid::make_grid;
use spectral_refine::timestep::{b_gamma_ops, Scheme, SolverConfig};
use spectral_refine::Result;

fn rand_tensor(shape: &[usize], seed: u64) -> CTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ArrayD::from_shape_fn(IxDyn(shape), |_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

fn rand_weights(shape: &[usize], seed: u64) -> Arc<ArrayD<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Arc::new(ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(0.1..1.0)))
}

/// Worst relative error of `f` over 40 sampled coordinates.
fn check<F>(f: F, params: &[CTensor], real: &[bool]) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    check_eps(f, params, real, 1e-3)
}

fn check_eps<F>(f: F, params: &[CTensor], real: &[bool], eps: f64) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    grad_check(f, params, real, eps, 40, 17).unwrap().max_rel_err
}

const TOL: f64 = 1e-7;

#[test]
fn arithmetic_primitives() {
    let shape = [3, 4, 4];
    let w = rand_weights(&shape, 1);
    let fixed = Arc::new(rand_tensor(&shape, 2));
    let small = Arc::new(rand_tensor(&[4, 4], 3));
    let p = [rand_tensor(&shape, 4), rand_tensor(&shape, 5), rand_tensor(&[4, 4], 6)];
    let err = check(
        |_, v| {
            let a = v[0].add(&v[1]).sub(&v[1].scale(0.3)).mul(&v[0]);
            let b = a.mul_fixed(&fixed).add_fixed(&fixed).add_bcast(&v[2]).mul_fixed(&small);
            Ok(b.weighted_sq_sum(&w))
        },
        &p,
        &[false; 3],
    );
    assert!(err <= TOL, "{err:e}");
}

#[test]
fn transform_primitives() {
    let shape = [2, 4, 8, 8];
    let w = rand_weights(&shape, 1);
    let p = [rand_tensor(&shape, 7)];
    for axes in [vec![2, 3], vec![1, 2, 3], vec![1]] {
        let err = check(|_, v| Ok(v[0].fft(&axes).ifft(&[3]).re().fft(&[2]).weighted_sq_sum(&w)), &p, &[false]);
        assert!(err <= TOL, "{axes:?}: {err:e}");
    }
}

#[test]
fn activation_primitives() {
    let shape = [2, 5, 5];
    let w = rand_weights(&shape, 2);
    let p = [rand_tensor(&shape, 8).mapv(|v| v * 3.0)];
    for act in [Activation::Gelu, Activation::Identity] {
        let err = check(|_, v| Ok(v[0].activate(act).weighted_sq_sum(&w)), &p, &[false]);
        assert!(err <= TOL, "{act:?}: {err:e}");
    }
}

#[test]
fn channel_and_axis_products() {
    let w = rand_weights(&[4, 3, 6], 3);
    let m = Arc::new(Array2::from_shape_fn((6, 5), |(i, j)| Complex64::new((i + 2 * j) as f64 * 0.1, (i as f64 - j as f64) * 0.05)));
    let p = [rand_tensor(&[2, 3, 5], 9), rand_tensor(&[4, 2], 10)];
    let err = check(|_, v| Ok(v[0].axis_matmul_fixed(2, &m).channel_matmul(&v[1]).weighted_sq_sum(&w)), &p, &[false, false]);
    assert!(err <= TOL, "{err:e}");
}

#[test]
fn resize_and_indexing_primitives() {
    let p = [rand_tensor(&[2, 8, 8], 11), rand_tensor(&[2, 8, 8], 12)];
    for m in [6usize, 8, 12, 16] {
        let w = rand_weights(&[3, 2, m, m], m as u64);
        let err = check(
            |_, v| {
                let up = v[0].resize_spatial(m);
                let other = v[1].resize_spatial(m);
                let stacked = Var::stack(&[up.clone(), other]);
                let cat = Var::concat0(&[stacked, up.mul(&up).scale(0.5).index0(1).resize_spatial(m).stack_one()]);
                Ok(cat.weighted_sq_sum(&w))
            },
            &p,
            &[false, false],
        );
        assert!(err <= TOL, "m = {m}: {err:e}");
    }
}

trait StackOne<'t> {
    fn stack_one(&self) -> Var<'t>;
}

impl<'t> StackOne<'t> for Var<'t> {
    /// `[1, 2, m, m]` view of a `[m, m]` value broadcast to two channels.
    fn stack_one(&self) -> Var<'t> {
        Var::stack(&[Var::stack(&[self.clone(), self.scale(-1.0)])])
    }
}

#[test]
fn scalar_reductions() {
    let p = [rand_tensor(&[3, 4], 13), rand_tensor(&[3, 4], 14)];
    let w = rand_weights(&[3, 4], 5);
    let err = check(
        |_, v| {
            let num = v[0].mul(&v[1]).sum().re();
            let den = v[1].weighted_sq_sum(&w).scale(2.0);
            Ok(num.div_scalar(&den).add(&v[0].weighted_sq_sum(&w).sqrt()))
        },
        &p,
        &[false, false],
    );
    assert!(err <= TOL, "{err:e}");
}

#[test]
fn layer_norm_primitive() {
    let p = [rand_tensor(&[4, 3, 3], 15).mapv(|v| Complex64::new(v.re, 0.0)), rand_tensor(&[4], 16), rand_tensor(&[4], 17)];
    let w = rand_weights(&[4, 3, 3], 6);
    let real = [true, true, true];
    let err = check(|_, v| Ok(v[0].layer_norm(&v[1].re(), &v[2].re(), 1e-5).weighted_sq_sum(&w)), &p, &real);
    assert!(err <= TOL, "{err:e}");
}

#[test]
fn scatter_and_spectral_mix_primitives() {
    let map = Arc::new(vec![0usize, 1, 7]);
    let w = rand_weights(&[2, 4, 8, 8], 7);
    let tbins = Arc::new(vec![0usize, 2]);
    let sbins = Arc::new(vec![0usize, 1, 7]);
    let p = [rand_tensor(&[3, 4, 3, 3], 18), rand_tensor(&[2, 3, 3, 2, 3], 19)];
    let err = check(
        |_, v| Ok(v[0].scatter_last2(&map, 8).fft(&[1]).spectral_mix(&v[1], &tbins, &sbins).weighted_sq_sum(&w)),
        &p,
        &[false, false],
    );
    assert!(err <= TOL, "{err:e}");
}

#[test]
fn solver_step_on_the_tape() {
    let g = make_grid(16, 1.0).unwrap();
    let w = rand_weights(&[16, 16], 8);
    for scheme in [Scheme::Rk2Cn, Scheme::ImexRk4] {
        let cfg = SolverConfig::new(scheme, 1e-2, 1e-2).unwrap();
        let ops = b_gamma_ops(&g, 2, 0.1, &cfg, false).unwrap();
        let field = random_field(&g, 3, 5).scale(1e-2);
        let p = [field.planes[0].clone().into_dyn()];
        let err = check_eps(|t, v| Ok(ops.apply(&TapeBackend(t), &[v[0].clone()]).remove(0).weighted_sq_sum(&w)), &p, &[false], 1e-2);
        assert!(err <= TOL, "{scheme:?}: {err:e}");
        let vops = b_gamma_ops(&g, 2, 0.1, &cfg, true).unwrap();
        let u = random_velocity(&g, 4, 5).scale(1e-2);
        let p = [u.planes[0].clone().into_dyn(), u.planes[1].clone().into_dyn()];
        let err = check_eps(
            |t, v| {
                let out = vops.apply(&TapeBackend(t), &[v[0].clone(), v[1].clone()]);
                Ok(out[0].weighted_sq_sum(&w).add(&out[1].weighted_sq_sum(&w)))
            },
            &p,
            &[false, false],
            1e-2,
        );
        assert!(err <= TOL, "{scheme:?} velocity: {err:e}");
    }
}

#[test]
fn sum_of_squares_has_gradient_two_theta() {
    let theta = rand_tensor(&[5, 3], 20);
    let ones = Arc::new(ArrayD::from_elem(IxDyn(&[5, 3]), 1.0));
    let tape = Tape::new();
    let v = tape.param(theta.clone());
    let g = tape.backward(&v.weighted_sq_sum(&ones)).unwrap();
    assert!(g.of(&v).iter().zip(theta.iter()).all(|(a, b)| (a - b * 2.0).norm() <= 1e-15));
}

#[test]
fn round_trip_transform_has_gradient_two_f() {
    let f = rand_tensor(&[8, 8], 21);
    let ones = Arc::new(ArrayD::from_elem(IxDyn(&[8, 8]), 1.0));
    let tape = Tape::new();
    let v = tape.param(f.clone());
    let g = tape.backward(&v.fft(&[0, 1]).ifft(&[0, 1]).weighted_sq_sum(&ones)).unwrap();
    assert!(g.of(&v).iter().zip(f.iter()).all(|(a, b)| (a - b * 2.0).norm() <= 1e-13));
}

#[test]
fn transform_adjoint_is_the_conjugate_transform() {
    let n = 8;
    let x = rand_tensor(&[n, n], 22);
    let y = Arc::new(rand_tensor(&[n, n], 23));
    let tape = Tape::new();
    let v = tape.param(x);
    let loss = v.fft(&[0, 1]).mul_fixed(&y).sum().re();
    let g = tape.backward(&loss).unwrap().of(&v);
    let y2: Array2<Complex64> = y.as_ref().clone().into_dimensionality().unwrap();
    let oracle = dft_forward(&y2);
    for ((i, j), o) in oracle.indexed_iter() {
        assert!((g[[i, j]] - o.conj()).norm() <= 1e-12 * (n * n) as f64);
    }
}

/// Unnormalized forward DFT with dense matrices.
fn dft_forward(c: &Array2<Complex64>) -> Array2<Complex64> {
    let n = c.dim().0;
    let e = Array2::from_shape_fn((n, n), |(p, j)| {
        let phase = -2.0 * std::f64::consts::PI * (p * j) as f64 / n as f64;
        Complex64::new(phase.cos(), phase.sin())
    });
    e.dot(c).dot(&e)
}

#[test]
fn quadratic_loss_passes_tightly_and_bad_eps_is_rejected() {
    let p = [rand_tensor(&[6], 24)];
    let w = rand_weights(&[6], 9);
    let r = grad_check(|_, v| Ok(v[0].weighted_sq_sum(&w)), &p, &[false], 1e-2, 12, 1).unwrap();
    assert!(r.max_rel_err <= 1e-10);
    assert_eq!(r.samples.len(), 12);
    assert!(grad_check(|_, v| Ok(v[0].weighted_sq_sum(&w)), &p, &[false], 0.0, 4, 1).is_err());
    assert!(grad_check(|_, v| Ok(v[0].weighted_sq_sum(&w)), &p, &[false], -1.0, 4, 1).is_err());
}

#[test]
fn backward_is_deterministic_and_rejects_non_scalars() {
    let x = rand_tensor(&[2, 8, 8], 25);
    let w = rand_weights(&[2, 8, 8], 10);
    let run = || {
        let tape = Tape::new();
        let v = tape.param(x.clone());
        let loss = v.fft(&[1, 2]).activate(Activation::Gelu).resize_spatial(12).resize_spatial(8).weighted_sq_sum(&w);
        tape.backward(&loss).unwrap().of(&v)
    };
    assert_eq!(run(), run());
    let tape = Tape::new();
    let v = tape.param(x.clone());
    assert!(tape.backward(&v).is_err());
}

#[test]
fn unused_and_constant_inputs_get_zero_gradient() {
    let tape = Tape::new();
    let a = tape.param(rand_tensor(&[3], 26));
    let b = tape.param(rand_tensor(&[3], 27));
    let k = tape.constant(rand_tensor(&[3], 28));
    let w = rand_weights(&[3], 11);
    let g = tape.backward(&a.mul(&k).weighted_sq_sum(&w)).unwrap();
    assert!(g.of(&b).iter().all(|v| v.norm() == 0.0));
    assert!(g.of(&a).iter().any(|v| v.norm() > 0.0));
}

#[test]
fn fan_out_accumulates() {
    let x = rand_tensor(&[4], 29);
    let ones = Arc::new(ArrayD::from_elem(IxDyn(&[4]), 1.0));
    let tape = Tape::new();
    let v = tape.param(x.clone());
    let loss = v.add(&v).add(&v).weighted_sq_sum(&ones);
    let g = tape.backward(&loss).unwrap().of(&v);
    assert!(g.iter().zip(x.iter()).all(|(a, b)| (a - b * 18.0).norm() <= 1e-13));
}
