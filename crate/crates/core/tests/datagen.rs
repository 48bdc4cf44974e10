mod common;

use std::f64::consts::PI;

use common::*;
use spectral_refine::datagen::*;
use spectral_refine::grid::*;
use spectral_refine::norms::{energy_spectrum, l2_norm};
use spectral_refine::timestep::{velocity_of, Scheme, SolverConfig};

fn spec(n_gen: usize, n: usize) -> DatasetSpec {
    DatasetSpec {
        n_train: 2,
        n_test: 1,
        n_gen,
        n,
        l: 1.0,
        dt: 1e-3,
        burn_in: 0.0,
        ell: 10,
        n_t: 10,
        record_every: 2,
    }
}

fn grf_ic(seed: u64) -> IcSpec {
    IcSpec { kind: IcKind::Grf { alpha: 2.5, tau: 7.0 }, seed, normalize_energy: Some(0.5) }
}

fn solver() -> SolverConfig {
    SolverConfig::new(Scheme::Rk2Cn, 1e-3, 1e-3).unwrap()
}

#[test]
fn taylor_green_point_value_and_curl() {
    let g = make_grid(16, 2.0 * PI).unwrap();
    let (u, w) = taylor_green(1, 1e-3, 0.0, &g).unwrap();
    let phys = w.to_physical().remove(0);
    assert!((phys[[4, 4]] - 2.0).abs() <= 1e-12);
    let c = curl2d(&u).unwrap();
    assert!(rel_max(&c.planes[0], &w.planes[0]) <= 1e-12);
    assert!(taylor_green(4, 1e-3, 0.0, &g).is_err());
    assert!(taylor_green(0, 1e-3, 0.0, &g).is_err());
}

#[test]
fn taylor_green_decays_at_the_exact_rate() {
    let g = make_grid(32, 1.0).unwrap();
    let nu = 2e-3;
    let (_, a) = taylor_green(2, nu, 0.3, &g).unwrap();
    let (_, b) = taylor_green(2, nu, 0.8, &g).unwrap();
    let k = 4.0 * PI;
    let expect = (-2.0 * k * k * nu * 0.5).exp();
    assert!((l2_norm(&b) / l2_norm(&a) - expect).abs() <= 1e-12);
}

#[test]
fn grf_samples_are_deterministic_mean_free_and_real() {
    let g = make_grid(32, 1.0).unwrap();
    let a = grf_sample(&g, 2.5, 7.0, 42).unwrap();
    let b = grf_sample(&g, 2.5, 7.0, 42).unwrap();
    assert_eq!(a.planes, b.planes);
    assert_ne!(a.planes, grf_sample(&g, 2.5, 7.0, 43).unwrap().planes);
    assert_eq!(a.planes[0][[0, 0]].norm(), 0.0);
    assert!(a.imag_residue() <= 1e-12);
    assert!(grf_sample(&g, 1.0, 7.0, 1).is_err());
}

#[test]
fn grf_mode_variance_matches_the_covariance() {
    let (n, alpha, tau) = (8usize, 2.5, 7.0);
    let g = make_grid(n, 1.0).unwrap();
    let samples = 2000;
    let modes = [(1usize, 0usize), (0, 1), (1, 1), (2, 0), (1, 2), (7, 1)];
    let mut acc = [0.0; 6];
    for s in 0..samples {
        let f = grf_sample(&g, alpha, tau, s).unwrap();
        for (a, &(i, j)) in acc.iter_mut().zip(&modes) {
            *a += f.planes[0][[i, j]].norm_sqr();
        }
    }
    for (a, &(i, j)) in acc.iter().zip(&modes) {
        let (kx, ky) = (2.0 * PI * idx(i, n) as f64, 2.0 * PI * idx(j, n) as f64);
        let expect = (n * n) as f64 * tau.powf(2.0 * alpha) * (kx * kx + ky * ky + tau * tau).powf(-alpha);
        let got = a / samples as f64;
        assert!((got / expect - 1.0).abs() <= 0.1, "mode ({i},{j}): {got} vs {expect}");
    }
}

fn mcwilliams_law(k: f64, k0: f64, tau: f64) -> f64 {
    1.0 / (k * (tau * tau + (k / k0).powi(4)))
}

#[test]
fn mcwilliams_streamfunction_follows_the_radial_law() {
    let (n, k0, tau) = (64usize, 4.0, 1.0);
    let g = make_grid(n, 1.0).unwrap();
    let bins = n / 2;
    let mut sum = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    for seed in 0..4 {
        let w = mcwilliams_sample(&g, k0, tau, seed, None).unwrap();
        let psi = inverse_laplacian(&w).unwrap();
        for ((i, j), v) in psi.planes[0].indexed_iter() {
            let r = ((idx(i, n).pow(2) + idx(j, n).pow(2)) as f64).sqrt();
            let b = (r + 0.5).floor() as usize;
            if b < bins {
                sum[b] += v.norm_sqr() / (n as f64).powi(4);
                count[b] += 1;
            }
        }
    }
    for k in 3..bins {
        let got = sum[k] / count[k] as f64;
        let expect = mcwilliams_law(k as f64, k0, tau);
        assert!((got / expect - 1.0).abs() <= 0.15, "bin {k}: {got} vs {expect}");
    }
}

#[test]
fn mcwilliams_energy_is_normalized_and_peaks_near_k0() {
    let g = make_grid(64, 1.0).unwrap();
    let w = mcwilliams_sample(&g, 6.0, 1.0, 3, Some(0.7)).unwrap();
    let u = velocity_of(&w).unwrap();
    assert!((0.5 * l2_norm(&u).powi(2) - 0.7).abs() <= 1e-10);
    let e = energy_spectrum(&u).unwrap();
    let peak = (1..e.values.len()).max_by(|&a, &b| e.values[a].total_cmp(&e.values[b])).unwrap();
    assert!((5..=7).contains(&peak), "peak at {peak}");
    assert!(mcwilliams_sample(&g, 0.5, 1.0, 3, None).is_err());
}

#[test]
fn dataset_shapes_and_times() {
    let gen = generate_dataset(&spec(16, 16), &grf_ic(1), &solver()).unwrap();
    assert!(gen.failed.is_empty());
    assert_eq!(gen.train.inputs.dim(), (2, 10, 16, 16));
    assert_eq!(gen.train.outputs.dim(), (2, 10, 16, 16));
    assert_eq!(gen.test.inputs.dim(), (1, 10, 16, 16));
    assert_eq!(gen.test.ids, vec![2]);
    let all: Vec<f64> = gen.train.input_times.iter().chain(&gen.train.output_times).copied().collect();
    for (k, t) in all.iter().enumerate() {
        assert!((t - 2e-3 * k as f64).abs() <= 1e-15);
    }
    for snap in gen.train.inputs.outer_iter().flat_map(|t| t.outer_iter().map(|s| s.sum()).collect::<Vec<_>>()) {
        assert!(snap.abs() <= 1e-10);
    }
}

#[test]
fn taylor_green_dataset_starts_at_the_exact_field() {
    let ic = IcSpec { kind: IcKind::TaylorGreen { kappa: 1 }, seed: 0, normalize_energy: None };
    let data = generate_dataset(&spec(32, 16), &ic, &solver()).unwrap().train;
    let g = make_grid(16, 1.0).unwrap();
    for k in 0..2 {
        let (_, w) = taylor_green(1 + k as u32, 1e-3, 0.0, &g).unwrap();
        let first = data.input_field(k, 0).unwrap();
        assert!(rel_max(&first.planes[0], &w.planes[0]) <= 1e-12);
        let (_, last) = taylor_green(1 + k as u32, 1e-3, *data.output_times.last().unwrap(), &g).unwrap();
        let end = data.output_field(k, 9).unwrap();
        assert!(rel_max(&end.planes[0], &last.planes[0]) <= 1e-5);
    }
}

#[test]
fn downsampling_truncates_the_solver_field() {
    let ic = grf_ic(5);
    let fine = generate_dataset(&spec(32, 32), &ic, &solver()).unwrap().train;
    let coarse = generate_dataset(&spec(32, 16), &ic, &solver()).unwrap().train;
    for m in [0, 9] {
        let f = fine.output_field(1, m).unwrap();
        let direct = resample(&f, 16).unwrap();
        let stored = coarse.output_field(1, m).unwrap();
        assert!(rel_max(&stored.planes[0], &direct.planes[0]) <= 1e-12);
        let back = resample(&resample(&stored, 32).unwrap(), 16).unwrap();
        assert!(rel_max(&back.planes[0], &stored.planes[0]) <= 1e-14);
    }
}

#[test]
fn generation_does_not_depend_on_the_thread_count() {
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| generate_dataset(&spec(16, 16), &grf_ic(8), &solver()).unwrap())
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a.train.inputs, b.train.inputs);
    assert_eq!(a.test.outputs, b.test.outputs);
}

#[test]
fn inconsistent_specs_are_rejected() {
    let mut s = spec(16, 32);
    assert!(generate_dataset(&s, &grf_ic(1), &solver()).is_err());
    s = spec(16, 16);
    s.dt = 2e-3;
    assert!(generate_dataset(&s, &grf_ic(1), &solver()).is_err());
    s = spec(16, 16);
    s.ell = 1;
    assert!(s.validate().is_err());
}

#[test]
fn metadata_lists_the_generation_parameters() {
    let data = generate_dataset(&spec(16, 16), &grf_ic(4), &solver()).unwrap().test;
    let meta = data.metadata(&grf_ic(4));
    for key in ["n=16", "ell=10", "n_t=10", "nu=", "delta_t=", "seed=4", "ic=grf", "alpha=", "tau=", "energy="] {
        assert!(meta.lines().any(|l| l.starts_with(key)), "missing {key}");
    }
}
