mod common;

use std::f64::consts::PI;

use common::*;
use ndarray::Array2;
use num_complex::Complex64;
use proptest::prelude::*;
use spectral_refine::grid::*;
use spectral_refine::norms::{l2_norm, seminorm};

fn k_sq_times(f: &SpectralField) -> Array2<Complex64> {
    ndarray::Zip::from(&f.planes[0]).and(&f.grid.k_sq).map_collect(|v, q| *v * *q)
}

/// `(∇⊥ψ)·∇ω` with `ψ = (−Δ)⁻¹ω`, evaluated on an `m`-point grid from explicit
/// Fourier sums and projected back to `n` bins.
fn dense_convection_vs(omega: &SpectralField, m: usize) -> Array2<Complex64> {
    let g = &omega.grid;
    let w = &omega.planes[0];
    let psi = ndarray::Zip::from(w).and(&g.k_sq).map_collect(|v, q| if *q > 0.0 { *v / *q } else { Complex64::new(0.0, 0.0) });
    let u1 = dft_eval(&deriv(&psi, 1, g.l), m);
    let u2 = dft_eval(&deriv(&psi, 0, g.l).mapv(|z| -z), m);
    let wx = dft_eval(&deriv(w, 0, g.l), m);
    let wy = dft_eval(&deriv(w, 1, g.l), m);
    let prod = &u1 * &wx + &u2 * &wy;
    dft_project(&prod, g.n)
}

#[test]
fn convection_vs_matches_dense_oracle() {
    let g = make_grid(64, 1.0).unwrap();
    let w = random_field(&g, 11, 21);
    let lib = convection_vs(&w).unwrap();
    let oracle = mask_two_thirds(&dense_convection_vs(&w, 192));
    assert!(rel_max(&lib.planes[0], &oracle) <= 1e-10);
}

#[test]
fn taylor_green_convection_vanishes() {
    let g = make_grid(128, 1.0).unwrap();
    let w = transform(&g, &g.sample(|x, y| 2.0 * (2.0 * PI * x).sin() * (2.0 * PI * y).sin())).unwrap();
    let c = convection_vs(&w).unwrap();
    assert!(l2_norm(&c) <= 1e-10 * seminorm(&w, 1.0) * l2_norm(&w));
    let quad = dft_eval(&dense_convection_vs(&w, 128), 128);
    assert!(quad.iter().all(|v| v.abs() <= 1e-9));
}

#[test]
fn convection_of_constants_is_zero() {
    let g = make_grid(16, 1.0).unwrap();
    let zero = SpectralField::zeros(g.clone(), false);
    assert_eq!(l2_norm(&convection_vs(&zero).unwrap()), 0.0);
    let ones = Array2::from_elem((16, 16), 1.0);
    let u = transform_vector(&g, &ones, &ones.mapv(|v| -2.0 * v)).unwrap();
    assert!(l2_norm(&convection_vp(&u).unwrap()) <= 1e-14);
}

#[test]
fn convection_vp_matches_dense_oracle() {
    let g = make_grid(64, 1.0).unwrap();
    let psi = transform(&g, &g.sample(|x, y| (2.0 * PI * x).sin() * (2.0 * PI * y).sin())).unwrap();
    let u = rot_grad(&psi).unwrap();
    let lib = convection_vp(&u).unwrap();
    let p = [dft_eval(&u.planes[0], 96), dft_eval(&u.planes[1], 96)];
    for c in 0..2 {
        let dx = dft_eval(&deriv(&u.planes[c], 0, 1.0), 96);
        let dy = dft_eval(&deriv(&u.planes[c], 1, 1.0), 96);
        let oracle = mask_two_thirds(&dft_project(&(&p[0] * &dx + &p[1] * &dy), 64));
        assert!(rel_max(&lib.planes[c], &oracle) <= 1e-10, "component {c}");
    }
}

#[test]
fn projected_taylor_green_convection_vanishes() {
    let g = make_grid(64, 1.0).unwrap();
    let (u, _) = spectral_refine::datagen::taylor_green(1, 1e-3, 0.0, &g).unwrap();
    let c = convection_vp(&u).unwrap();
    assert!(l2_norm(&c) > 1e-3);
    assert!(l2_norm(&leray_project(&c).unwrap()) <= 1e-10 * l2_norm(&c));
}

#[test]
fn gradient_velocity_breaks_skew_symmetry() {
    let g = make_grid(32, 1.0).unwrap();
    let z = gradient(&random_field(&g, 1, 6)).unwrap();
    let u = random_velocity(&g, 2, 6);
    let v = random_velocity(&g, 3, 6);
    let scale = seminorm(&z, 1.0) * seminorm(&u, 1.0) * seminorm(&v, 1.0);
    let sum = trilinear_form(&z, &u, &v).unwrap() + trilinear_form(&z, &v, &u).unwrap();
    assert!(sum.abs() / scale > 1e-6);
}

#[test]
fn trilinear_form_rejects_mixed_grids() {
    let a = make_grid(16, 1.0).unwrap();
    let b = make_grid(32, 1.0).unwrap();
    let z = random_velocity(&a, 1, 4);
    assert!(trilinear_form(&z, &random_velocity(&b, 2, 4), &random_velocity(&b, 3, 4)).is_err());
}

#[test]
fn gradients_are_annihilated_by_projection() {
    let g = make_grid(32, 1.0).unwrap();
    let phi = transform(&g, &g.sample(|x, _| (2.0 * PI * x).sin())).unwrap();
    let p = leray_project(&gradient(&phi).unwrap()).unwrap();
    assert!(l2_norm(&p) <= 1e-13);
}

#[test]
fn resample_round_trip_keeps_retained_modes() {
    let g = make_grid(32, 1.0).unwrap();
    let f = random_field(&g, 5, 15);
    let back = resample(&resample(&f, 64).unwrap(), 32).unwrap();
    assert!(rel_max(&back.planes[0], &f.planes[0]) <= 1e-14);
}

fn grid_n() -> impl Strategy<Value = usize> {
    prop_oneof![Just(8usize), Just(16), Just(32)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn parseval_holds(n in grid_n(), seed in any::<u64>(), l in 0.5f64..7.0) {
        let g = make_grid(n, l).unwrap();
        let f = random_field(&g, seed, n as i64 / 2);
        let q = quad_l2(&f.to_physical()[0], l);
        prop_assert!((l2_norm(&f) - q).abs() <= 1e-12 * q);
    }

    #[test]
    fn curl_of_rot_grad_is_negative_laplacian(n in grid_n(), seed in any::<u64>()) {
        let g = make_grid(n, 1.0).unwrap();
        let psi = drop_nyquist(&random_field(&g, seed, n as i64 / 2));
        let w = curl2d(&rot_grad(&psi).unwrap()).unwrap();
        prop_assert!(rel_max(&w.planes[0], &k_sq_times(&psi)) <= 1e-12);
        let div = divergence(&rot_grad(&psi).unwrap()).unwrap();
        let scale = k_sq_times(&psi).iter().map(|v| v.norm()).fold(0.0, f64::max);
        prop_assert!(div.planes[0].iter().all(|v| v.norm() <= 1e-12 * scale));
    }

    #[test]
    fn leray_is_an_idempotent_divergence_free_projector(n in grid_n(), seed in any::<u64>()) {
        let g = make_grid(n, 1.0).unwrap();
        let u = random_velocity(&g, seed, n as i64 / 2);
        let p = leray_project(&u).unwrap();
        let pp = leray_project(&p).unwrap();
        prop_assert!(l2_norm(&pp.sub(&p).unwrap()) <= 1e-13 * l2_norm(&u));
        let scale = u.planes[0].iter().map(|v| v.norm()).fold(0.0, f64::max) * 2.0 * PI * n as f64;
        let div = divergence(&p).unwrap();
        prop_assert!(div.planes[0].iter().all(|v| v.norm() <= 1e-12 * scale));
        let solenoidal = rot_grad(&drop_nyquist(&random_field(&g, seed ^ 1, n as i64 / 2))).unwrap();
        let fixed = leray_project(&solenoidal).unwrap();
        prop_assert!(l2_norm(&fixed.sub(&solenoidal).unwrap()) <= 1e-12 * l2_norm(&solenoidal));
    }

    #[test]
    fn operators_keep_conjugate_symmetry(seed in any::<u64>()) {
        let g = make_grid(32, 1.0).unwrap();
        let w = random_field(&g, seed, 16);
        let u = random_velocity(&g, seed, 16);
        for f in [
            convection_vs(&w).unwrap(),
            convection_vp(&u).unwrap(),
            leray_project(&u).unwrap(),
            inverse_laplacian(&w).unwrap(),
            dealias(&w),
            curl2d(&u).unwrap(),
        ] {
            prop_assert!(f.imag_residue() <= 1e-12);
        }
    }

    #[test]
    fn dealias_is_idempotent(seed in any::<u64>()) {
        let g = make_grid(16, 1.0).unwrap();
        let f = random_field(&g, seed, 8);
        let once = dealias(&f);
        prop_assert_eq!(dealias(&once).planes, once.planes);
    }

    #[test]
    fn trilinear_form_is_skew(seed in any::<u64>()) {
        let g = make_grid(16, 1.0).unwrap();
        let z = rot_grad(&random_field(&g, seed, 7)).unwrap();
        let u = random_velocity(&g, seed ^ 2, 7);
        let v = random_velocity(&g, seed ^ 3, 7);
        let scale = seminorm(&z, 1.0) * seminorm(&u, 1.0) * seminorm(&v, 1.0);
        let sum = trilinear_form(&z, &u, &v).unwrap() + trilinear_form(&z, &v, &u).unwrap();
        prop_assert!(sum.abs() <= 1e-10 * scale);
        prop_assert!(trilinear_form(&z, &v, &v).unwrap().abs() <= 1e-10 * scale);
    }
}
