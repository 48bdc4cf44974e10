mod common;

use std::f64::consts::PI;

use common::*;
use spectral_refine::datagen::{grf_sample, taylor_green};
use spectral_refine::grid::*;
use spectral_refine::norms::{neg_norm, seminorm};
use spectral_refine::residual::*;
use spectral_refine::timestep::{advance, Scheme, SolverConfig, SolverState};

fn tg_rate(kappa: u32, nu: f64) -> f64 {
    -2.0 * (2.0 * PI * kappa as f64).powi(2) * nu
}

#[test]
fn exact_taylor_green_has_no_residual() {
    let g = make_grid(64, 1.0).unwrap();
    let nu = 1e-3;
    for t in [0.0, 0.7] {
        let (u, w) = taylor_green(1, nu, t, &g).unwrap();
        let rate = tg_rate(1, nu);
        let rvs = residual_vs(&w, &w.scale(rate), None, nu).unwrap();
        assert!(neg_norm(&rvs, 0.0).unwrap() <= 1e-10);
        let rvp = residual_vp(&u, &u.scale(rate), None, nu).unwrap();
        assert!(neg_norm(&rvp, 0.0).unwrap() <= 1e-10);
        let cfg = EstimatorConfig::new(nu);
        assert!(eta_m(&w, &w.scale(rate), &cfg).unwrap() <= 1e-10);
    }
}

#[test]
fn unprojected_velocity_convection_is_a_pressure_gradient() {
    let g = make_grid(32, 1.0).unwrap();
    let (u, _) = taylor_green(1, 1e-3, 0.0, &g).unwrap();
    let conv = convection_vp(&u).unwrap();
    let tend = tendency(&u, &EstimatorConfig::new(1e-3)).unwrap();
    assert!(neg_norm(&conv, 0.0).unwrap() > 1e-3);
    assert!(neg_norm(&tend.sub(&u.scale(tg_rate(1, 1e-3))).unwrap(), 0.0).unwrap() <= 1e-12);
}

#[test]
fn zero_fields_give_zero_residual() {
    let g = make_grid(16, 1.0).unwrap();
    for vector in [false, true] {
        let z = SpectralField::zeros(g.clone(), vector);
        let r = if vector { residual_vp(&z, &z, None, 1e-3) } else { residual_vs(&z, &z, None, 1e-3) };
        assert_eq!(neg_norm(&r.unwrap(), 0.0).unwrap(), 0.0);
    }
}

#[test]
fn residual_grows_linearly_with_a_perturbation() {
    let g = make_grid(32, 1.0).unwrap();
    let nu = 1e-3;
    let (u, _) = taylor_green(1, nu, 0.0, &g).unwrap();
    let dt = u.scale(tg_rate(1, nu));
    let mode = rot_grad(&transform(&g, &g.sample(|x, y| (2.0 * PI * (x + 2.0 * y)).cos())).unwrap()).unwrap();
    let eta = |eps: f64| neg_norm(&residual_vp(&u.add(&mode.scale(eps)).unwrap(), &dt, None, nu).unwrap(), 0.0).unwrap();
    let (a, b) = (eta(1e-4) / 1e-4, eta(1e-6) / 1e-6);
    assert!(a > 0.0 && (a / b - 1.0).abs() <= 1e-2, "{a} vs {b}");
}

#[test]
fn wrong_inputs_are_rejected() {
    let g = make_grid(16, 1.0).unwrap();
    let w = random_field(&g, 1, 8);
    let u = random_velocity(&g, 1, 8);
    assert!(residual_vs(&u, &u, None, 1e-3).is_err());
    assert!(residual_vp(&w, &w, None, 1e-3).is_err());
    assert!(residual_vs(&w, &random_field(&make_grid(8, 1.0).unwrap(), 1, 4), None, 1e-3).is_err());
    let mut m = w.clone();
    m.planes[0][[0, 0]] = num_complex::Complex64::new(1.0, 0.0);
    assert!(residual_vs(&m, &w, None, 1e-3).is_err());
    let traj = SpectralTrajectory::new(vec![0.0, 0.1], vec![w.clone(), w.clone()]).unwrap();
    assert!(eta_total(&traj, &[w.clone()], &EstimatorConfig::new(1e-3)).is_err());
}

#[test]
fn rough_fields_give_finite_estimates() {
    let g = make_grid(32, 1.0).unwrap();
    let w = random_field(&g, 9, 16).scale(1e3);
    let eta = eta_m(&w, &w, &EstimatorConfig::new(1e-3)).unwrap();
    assert!(eta.is_finite() && eta > 0.0);
}

#[test]
fn estimator_scales_with_the_residual() {
    let g = make_grid(16, 1.0).unwrap();
    let zero = SpectralField::zeros(g.clone(), false);
    let d = random_field(&g, 4, 8);
    let cfg = EstimatorConfig::new(1e-3);
    assert_eq!(eta_m(&zero, &zero, &cfg).unwrap(), 0.0);
    let a = eta_m(&zero, &d, &cfg).unwrap();
    let b = eta_m(&zero, &d.scale(-3.0), &cfg).unwrap();
    assert!((b - 3.0 * a).abs() <= 1e-14 * b);
    assert!((a - seminorm(&d, -1.0)).abs() <= 1e-14 * a);
}

#[test]
fn report_totals_are_permutation_invariant() {
    let g = make_grid(16, 1.0).unwrap();
    let cfg = EstimatorConfig::new(1e-2);
    let snaps: Vec<SpectralField> = (0..5).map(|s| random_field(&g, s, 6)).collect();
    let dts: Vec<SpectralField> = (10..15).map(|s| random_field(&g, s, 6)).collect();
    let times: Vec<f64> = (0..5).map(|k| 0.1 * k as f64).collect();
    let traj = SpectralTrajectory::new(times.clone(), snaps.clone()).unwrap();
    let rep = eta_total(&traj, &dts, &cfg).unwrap();
    let sq: f64 = rep.per_step.iter().map(|s| s.eta * s.eta).sum();
    assert!((rep.eta_total.powi(2) - sq).abs() <= 1e-12 * sq);
    assert_eq!(rep.formulation, Formulation::Vs);
    assert!(rep.per_step.iter().all(|s| s.terms.len() == 3));

    let order = [3usize, 0, 4, 1, 2];
    let ptraj = SpectralTrajectory::new(times, order.iter().map(|&i| snaps[i].clone()).collect()).unwrap();
    let pdts: Vec<SpectralField> = order.iter().map(|&i| dts[i].clone()).collect();
    let prep = eta_total(&ptraj, &pdts, &cfg).unwrap();
    assert!((prep.eta_total - rep.eta_total).abs() <= 1e-14 * rep.eta_total);

    let single = SpectralTrajectory::new(vec![0.0], vec![snaps[2].clone()]).unwrap();
    let one = eta_total(&single, &dts[2..3], &cfg).unwrap();
    assert_eq!(one.eta_total, eta_m(&snaps[2], &dts[2], &cfg).unwrap());

    let csv = rep.to_csv();
    assert!(csv.starts_with("t,eta\n"));
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.lines().last().unwrap().starts_with("# eta_total="));
}

#[test]
fn finite_differences_are_exact_for_quadratics() {
    let g = make_grid(16, 1.0).unwrap();
    let phi = random_field(&g, 2, 6);
    let p = |t: f64| 1.0 + 2.0 * t - 3.0 * t * t;
    let dp = |t: f64| 2.0 - 6.0 * t;
    let times: Vec<f64> = (0..6).map(|k| 0.25 * k as f64).collect();
    let traj = SpectralTrajectory::new(times.clone(), times.iter().map(|&t| phi.scale(p(t))).collect()).unwrap();
    let d = centered_dt(&traj).unwrap();
    for (t, f) in times.iter().zip(&d) {
        assert!(rel_max(&f.planes[0], &phi.scale(dp(*t)).planes[0]) <= 1e-12);
    }
    let short = SpectralTrajectory::new(vec![0.0, 1.0], vec![phi.clone(), phi.clone()]).unwrap();
    assert!(centered_dt(&short).is_err());
}

fn solver_trajectory(every: usize) -> SpectralTrajectory {
    let g = make_grid(32, 1.0).unwrap();
    let w = drop_nyquist(&grf_sample(&g, 2.5, 7.0, 3).unwrap()).scale(5.0);
    let cfg = SolverConfig::new(Scheme::Rk2Cn, 1e-4, 1e-2).unwrap();
    advance(&SolverState { t: 0.0, field: w }, &cfg, 0.04, every).unwrap()
}

#[test]
fn ground_truth_residual_shrinks_with_the_spacing() {
    let cfg = EstimatorConfig::new(1e-2);
    let eta_at = |every: usize| {
        let traj = solver_trajectory(every);
        let d = centered_dt(&traj).unwrap();
        let k = traj.times.iter().position(|t| (t - 0.02).abs() < 1e-9).unwrap();
        eta_m(&traj.snapshots[k], &d[k], &cfg).unwrap()
    };
    let (coarse, fine) = (eta_at(40), eta_at(20));
    assert!(coarse / fine >= 3.0, "{coarse} vs {fine}");
    let trap = |every: usize| {
        let traj = solver_trajectory(every);
        let rest = SpectralTrajectory::new(traj.times[1..].to_vec(), traj.snapshots[1..].to_vec()).unwrap();
        trajectory_report((traj.times[0], &traj.snapshots[0]), &rest, &cfg).unwrap().eta_total
    };
    let (c, f) = (trap(40), trap(20));
    assert!(c / f >= 2.0, "{c} vs {f}");
}

/// `η²` of `ω + εw` against `‖εw‖²_{L²(H¹)} + ‖ε∂_t w‖²_{L²(H⁻¹)}` with `w = sin(πt)φ`.
fn efficiency_ratio(seed: u64) -> f64 {
    let g = make_grid(32, 1.0).unwrap();
    let nu = 1e-2;
    let eps = 1e-3;
    let phi = random_field(&g, seed, 4);
    let cfg = EstimatorConfig::new(nu);
    let h = 0.1;
    let (mut eta_sq, mut rhs) = (0.0, 0.0);
    for m in 0..=10 {
        let t = m as f64 * h;
        let (_, w) = taylor_green(1, nu, t, &g).unwrap();
        let field = w.add(&phi.scale(eps * (PI * t).sin())).unwrap();
        let dt = w.scale(tg_rate(1, nu)).add(&phi.scale(eps * PI * (PI * t).cos())).unwrap();
        let weight = if m == 0 || m == 10 { 0.5 * h } else { h };
        eta_sq += weight * eta_m(&field, &dt, &cfg).unwrap().powi(2);
        let pert = eps * (PI * t).sin();
        let dpert = eps * PI * (PI * t).cos();
        rhs += weight * ((pert * seminorm(&phi, 1.0)).powi(2) + (dpert * seminorm(&phi, -1.0)).powi(2));
    }
    eta_sq / rhs
}

#[test]
fn estimator_is_bounded_by_the_perturbation_size() {
    let c0 = efficiency_ratio(100);
    for seed in 101..110 {
        let c = efficiency_ratio(seed);
        assert!(c <= 2.0 * c0 && c >= c0 / 2.0, "seed {seed}: {c} vs {c0}");
    }
}

#[test]
fn trapezoid_residuals_need_aligned_tendencies() {
    let g = make_grid(16, 1.0).unwrap();
    let w = random_field(&g, 1, 4);
    let traj = SpectralTrajectory::new(vec![0.1, 0.2], vec![w.clone(), w.clone()]).unwrap();
    assert!(trapezoid_residuals((0.0, &w), &traj, &[w.clone(), w.clone()]).is_err());
    assert!(trapezoid_residuals((0.2, &w), &traj, &[w.clone(), w.clone(), w.clone()]).is_err());
    let r = trapezoid_residuals((0.0, &w), &traj, &[w.clone(), w.clone(), w.clone()]).unwrap();
    let rep = report_from_residuals(&traj.times, &r, 0.0).unwrap();
    assert!((rep.eta_total - 2f64.sqrt() * seminorm(&w, -1.0)).abs() <= 1e-12 * rep.eta_total);
}
