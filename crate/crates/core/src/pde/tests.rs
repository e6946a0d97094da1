use super::*;
use crate::coeffs::{example_field_3d, Example3d, FnField};
use proptest::prelude::*;
use std::sync::Arc;

fn heat(d: usize) -> FieldRef {
    Arc::new(FnField::unit_diffusion(d, d))
}

/// Gaussian density with variance `v` in dimension `d`.
fn density(v: f64, x: &[f64]) -> f64 {
    let r2: f64 = x.iter().map(|a| a * a).sum();
    (2.0 * std::f64::consts::PI * v).powf(-(x.len() as f64) / 2.0) * (-r2 / (2.0 * v)).exp()
}

fn max_rel_error(solve: &EvolutionSolve, k: usize, exact: impl Fn(&[f64]) -> f64) -> f64 {
    let u = solve.at(k).unwrap();
    let mut err = 0.0_f64;
    let mut peak = 0.0_f64;
    for (n, un) in u.iter().enumerate() {
        let e = exact(&solve.grid.coords(n));
        err = err.max((un - e).abs());
        peak = peak.max(e.abs());
    }
    err / peak
}

#[test]
fn heat_gaussian_one_dimension() {
    let g = SpaceTimeGrid::new(1, 4.0, 0.05, 1e-3, 0.2).unwrap();
    let v = 0.1;
    let s = solve_backward(heat(1), &|x| density(v, x), &g).unwrap();
    assert!(s.warnings.is_empty(), "{:?}", s.warnings);
    for k in [0, 100, 190] {
        let tau = g.t0 - g.time(k);
        let e = max_rel_error(&s, k, |x| density(v + tau, x));
        assert!(e < 0.01, "k = {k}: relative error {e}");
    }
}

#[test]
fn heat_gaussian_two_dimensions_coarse() {
    let g = SpaceTimeGrid::new(2, 3.0, 0.1, 2e-3, 0.1).unwrap();
    let v = 0.2;
    let s = solve_backward(heat(2), &|x| density(v, x), &g).unwrap();
    let e = max_rel_error(&s, 0, |x| density(v + g.t0, x));
    assert!(e < 0.02, "relative error {e}");
}

#[test]
fn linear_data_is_preserved_in_the_interior() {
    let g = SpaceTimeGrid::new(1, 4.0, 0.05, 1e-2, 0.2).unwrap();
    let s = solve_backward(heat(1), &|x| x[0], &g).unwrap();
    let u = s.at(0).unwrap();
    for (n, un) in u.iter().enumerate() {
        let x = g.coords(n)[0];
        if x.abs() <= 1.0 {
            assert!((un - x).abs() < 1e-6, "x = {x}: {un}");
        }
    }
}

#[test]
fn constant_drift_shifts_the_heat_solution() {
    let c = 0.5;
    let g = SpaceTimeGrid::new(1, 4.0, 0.02, 1e-3, 0.2).unwrap();
    let v = 0.1;
    let field: FieldRef = Arc::new(FnField::constant_drift(1, 1, vec![c]));
    let s = solve_backward(field, &|x| density(v, x), &g).unwrap();
    let e = max_rel_error(&s, 0, |x| density(v + g.t0, &[x[0] + c * g.t0]));
    assert!(e < 0.02, "relative error {e}");
}

#[test]
fn q_operator_on_linear_and_quadratic_data() {
    let g = SpaceTimeGrid::new(2, 3.0, 0.1, 1e-2, 0.1).unwrap();
    let field: FieldRef = Arc::new(FnField::unit_diffusion(2, 3));
    let s = solve_backward(field.clone(), &|x| x[0], &g).unwrap();
    let q: Vec<Vec<f64>> = (0..3).map(|k| apply_q(&field, &s, k, 0).unwrap()).collect();
    let s2 = solve_backward(field.clone(), &|x| x[0] * x[0], &g).unwrap();
    let q2 = apply_q(&field, &s2, 0, 0).unwrap();
    let q2b = apply_q(&field, &s2, 1, 0).unwrap();
    for n in 0..g.n_nodes() {
        let x = g.coords(n);
        if x.iter().all(|v| v.abs() <= 1.0) {
            assert!((q[0][n] - 1.0).abs() < 1e-4, "{}", q[0][n]);
            assert!(q[1][n].abs() < 1e-4 && q[2][n] == 0.0);
            assert!((q2[n] - 2.0 * x[0]).abs() < 1e-4, "x = {x:?}: {}", q2[n]);
            assert!(q2b[n].abs() < 1e-4);
        }
    }
    // u = (x¹)² + (t0 − t) for the discrete scheme up to the wall influence.
    let u = s2.at(0).unwrap();
    assert!((u[g.origin()] - g.t0).abs() < 1e-4);
    assert!(matches!(
        apply_q(&field, &s, 3, 0),
        Err(crate::Error::InvalidInput(_))
    ));
    assert!(apply_q(&field, &s, 0, g.n_steps()).is_err());
}

#[test]
fn q_operator_on_example_field_reads_first_row_of_sigma() {
    let beta = 0.4;
    let field: FieldRef = Arc::new(Example3d::without_bounded_drift(1.0, beta, 0.0));
    let g = SpaceTimeGrid::new(3, 3.0, 0.25, 0.05, 0.1).unwrap();
    let s = solve_backward(field.clone(), &|x| x[0], &g).unwrap();
    let du = s.gradient(0).unwrap();
    for k in 0..12 {
        let q = apply_q(&field, &s, k, 0).unwrap();
        for n in 0..g.n_nodes() {
            let x = g.coords(n);
            if x.iter().all(|v| v.abs() <= 0.5) {
                let sig = field.sigma(0.0, &x);
                // The wall at distance 2.5 perturbs D₁u slightly; Q^k must
                // still reduce to σ^{1k} D₁u, with D₁u ≈ 1 and D₂u, D₃u ≈ 0.
                assert!((du[0][n] - 1.0).abs() < 1e-3, "x = {x:?}: {}", du[0][n]);
                assert!((q[n] - sig[(0, k)] * du[0][n]).abs() < 1e-3);
            }
        }
    }
}

#[test]
fn restart_replays_identical_solves() {
    let g = SpaceTimeGrid::new(2, 2.0, 0.2, 0.02, 0.2).unwrap();
    let field: FieldRef = Arc::new(FnField::unit_diffusion(2, 2).with_drift_morrey(
        |t, x: &[f64]| nalgebra::DVector::from_vec(vec![(1.0 + t) * x[1], -x[0]]),
    ));
    let prop = Propagator::new(field, g.clone()).unwrap();
    let f = g.sample(&|x| (-(x[0] - 0.3).powi(2) - x[1] * x[1]).exp());
    let full = solve_with(&prop, f, g.n_steps(), 0, StorePolicy::All).unwrap();
    let r = 4;
    let restart = solve_with(&prop, full.at(r).unwrap().to_vec(), r, 0, StorePolicy::All).unwrap();
    for k in 0..=r {
        assert_eq!(full.at(k).unwrap(), restart.at(k).unwrap());
    }
}

#[test]
fn contraction_positivity_and_mass() {
    let g = SpaceTimeGrid::new(1, 4.0, 0.05, 5e-3, 0.5).unwrap();
    let field: FieldRef = Arc::new(FnField::unit_diffusion(1, 1).with_drift_morrey(
        |_, x: &[f64]| nalgebra::DVector::from_element(1, -3.0 * x[0].signum() * x[0].abs().sqrt()),
    ));
    let bump = |x: &[f64]| {
        if x[0].abs() < 0.5 {
            1.0 - 2.0 * x[0].abs()
        } else {
            0.0
        }
    };
    let s = solve_backward(field, &bump, &g).unwrap();
    assert!(s.warnings.is_empty());
    for u in &s.u {
        assert!(u.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
    }
    let s = solve_backward(heat(1), &bump, &g).unwrap();
    let mass = |u: &[f64]| u.iter().sum::<f64>() * g.h;
    let m0 = mass(&s.terminal);
    assert!((mass(s.at(0).unwrap()) - m0).abs() < 1e-6 * m0);
}

#[test]
fn origin_densities_reproduce_point_values() {
    let g = SpaceTimeGrid::new(2, 1.5, 0.25, 0.05, 0.2).unwrap();
    let field: FieldRef = Arc::new(FnField::constant_drift(2, 2, vec![0.3, -0.2]));
    let prop = Propagator::new(field, g.clone()).unwrap();
    let h = g.sample(&|x| (x[0] + 2.0 * x[1]).cos());
    let psi = prop.origin_densities(g.n_steps()).unwrap();
    for j in [1, 2, g.n_steps()] {
        let s = solve_with(&prop, h.clone(), j, 0, StorePolicy::FinalOnly).unwrap();
        let direct = s.origin_value(0).unwrap();
        let dual: f64 = psi[j].iter().zip(&h).map(|(a, b)| a * b).sum();
        assert!((direct - dual).abs() < 1e-8, "j = {j}: {direct} vs {dual}");
    }
}

#[test]
fn solver_failure_is_reported() {
    let g = SpaceTimeGrid::new(2, 2.0, 0.1, 0.1, 0.2).unwrap();
    let prop = Propagator::with_control(
        heat(2),
        g.clone(),
        SolverControl {
            tol: 1e-10,
            max_iter: 1,
        },
    )
    .unwrap();
    let f = g.sample(&|x| (-x[0] * x[0]).exp());
    assert!(matches!(
        solve_with(&prop, f, 2, 0, StorePolicy::All),
        Err(crate::Error::SolverDiverged { .. })
    ));
}

#[test]
fn smooth_data_has_flat_gradient_norm() {
    let g = SpaceTimeGrid::new(1, 4.0, 0.02, 1e-3, 0.064).unwrap();
    let f = |x: &[f64]| (-x[0] * x[0] / 2.0).exp();
    let s = solve_backward(heat(1), &f, &g).unwrap();
    let fit = fit_gradient_decay(&s, 2.5).unwrap();
    assert!(fit.slope.abs() < 0.05, "slope {}", fit.slope);
    assert!(fit.compliant);
    let s3 = solve_backward(heat(1), &|x| 3.0 * f(x), &g).unwrap();
    let fit3 = fit_gradient_decay(&s3, 2.5).unwrap();
    assert!((fit.slope - fit3.slope).abs() < 1e-9);
}

/// `‖D_x u(τ)‖_{L_p}` for `u(τ, x) = (w/√s) e^{−x²/(2s)}`, `s = w² + τ`.
fn heat_gradient_norm(w: f64, tau: f64, p: f64) -> f64 {
    let s = w * w + tau;
    let amp = w / s.sqrt();
    let pp = amp.powf(p)
        * s.powf(-p)
        * 2.0
        * (2.0 * s / p).powf((p + 1.0) / 2.0)
        * 0.5
        * statrs::function::gamma::gamma((p + 1.0) / 2.0);
    pp.powf(1.0 / p)
}

#[test]
fn sharp_bump_gradient_norm_matches_heat_oracle() {
    let h = 0.02;
    let w = 4.0 * h;
    let p0 = 2.5;
    let g = SpaceTimeGrid::new(1, 3.0, h, 2.5e-4, 0.064).unwrap();
    let s = solve_backward(heat(1), &|x| (-x[0] * x[0] / (2.0 * w * w)).exp(), &g).unwrap();
    let fit = fit_gradient_decay(&s, p0).unwrap();
    let exact: Vec<(f64, f64)> = fit
        .points
        .iter()
        .map(|(tau, _)| (tau.ln(), heat_gradient_norm(w, *tau, p0).ln()))
        .collect();
    let (exact_slope, _) = diagnostics::least_squares(&exact);
    assert!(
        (fit.slope - exact_slope).abs() < 0.05,
        "{} vs {exact_slope}",
        fit.slope
    );
    for (tau, n) in &fit.points {
        let e = heat_gradient_norm(w, *tau, p0);
        assert!((n - e).abs() < 0.05 * e, "τ = {tau}: {n} vs {e}");
    }
    assert!(fit.compliant, "slope {} below {}", fit.slope, fit.threshold);
}

#[test]
fn too_few_times_is_insufficient_data() {
    let g = SpaceTimeGrid::new(1, 1.0, 0.1, 0.25, 1.0).unwrap();
    let s = solve_backward(heat(1), &|x| (-x[0] * x[0]).exp(), &g).unwrap();
    assert!(matches!(
        fit_gradient_decay(&s, 2.5),
        Err(crate::Error::InsufficientData(_))
    ));
}

#[test]
fn gaussian_tail_fit_is_finite_and_linear() {
    let g = SpaceTimeGrid::new(1, 5.0, 0.05, 5e-3, 0.25).unwrap();
    let bump = |x: &[f64]| {
        if x[0].abs() < 0.5 {
            (1.0 - 4.0 * x[0] * x[0]).powi(2)
        } else {
            0.0
        }
    };
    let s = solve_backward(heat(1), &bump, &g).unwrap();
    let fit = check_gaussian_tail(&s, &[0.0], 0.5, 2.0);
    assert!(fit.points > 0);
    assert!(fit.n.is_finite() && fit.n > 0.0, "N = {}", fit.n);
    assert!(fit.c >= 0.0 && (fit.c - 1.0).abs() < 1e-12);
    let s2 = solve_backward(heat(1), &|x| 2.0 * bump(x), &g).unwrap();
    let fit2 = check_gaussian_tail(&s2, &[0.0], 0.5, 2.0);
    assert!((fit2.c - 2.0 * fit.c).abs() < 1e-12);
    assert!((fit2.n - fit.n).abs() < 1e-6 * fit.n);
}

#[test]
fn binary_and_text_dumps_round_trip() {
    let g = SpaceTimeGrid::new(2, 1.0, 0.25, 0.1, 0.2).unwrap();
    let s = solve_backward(heat(2), &|x| x[0] * x[1], &g).unwrap();
    let mut buf = Vec::new();
    write_binary(&s, &mut buf).unwrap();
    let dump = read_binary(buf.as_slice()).unwrap();
    assert_eq!(dump.d, 2);
    assert_eq!(dump.m, g.m());
    assert_eq!(dump.times, s.times());
    assert_eq!(dump.arrays[0][0], s.u[0]);
    assert_eq!(dump.arrays[1][2], gradient(&g, &s.u[1])[1]);
    assert!(read_binary(&b"nope"[..]).is_err());
    let mut txt = Vec::new();
    write_text(&s, &mut txt).unwrap();
    let txt = String::from_utf8(txt).unwrap();
    let mut lines = txt.lines();
    assert_eq!(lines.next().unwrap(), "t x1 x2 u du1 du2");
    assert_eq!(lines.count(), g.n_nodes() * s.indices.len());
}

#[test]
fn time_dependent_example_field_solves() {
    let xi: Arc<dyn crate::TimeFn> = Arc::new(crate::coeffs::IndicatorTime {
        a: 0.0,
        b: 0.05,
        value: 1.0,
    });
    let eta: crate::coeffs::SpaceTimeVecFn = Arc::new(|_, _| [0.3, 0.0, 0.0]);
    let field: FieldRef = Arc::new(example_field_3d(1.0, 0.2, 0.1, xi, eta, 0.3));
    let g = SpaceTimeGrid::new(3, 1.0, 0.25, 0.025, 0.1).unwrap();
    let s = solve_backward(
        field,
        &|x| (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp(),
        &g,
    )
    .unwrap();
    assert!(s.warnings.is_empty(), "{:?}", s.warnings);
    assert!(s.u.iter().flatten().all(|v| v.is_finite()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn solves_are_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -1.0f64..1.0) {
        let g = SpaceTimeGrid::new(1, 2.0, 0.1, 0.05, 0.2).unwrap();
        let field: FieldRef = Arc::new(FnField::constant_drift(1, 1, vec![c]));
        let prop = Propagator::new(field, g.clone()).unwrap();
        let f = g.sample(&|x| (-x[0] * x[0]).exp());
        let h = g.sample(&|x| x[0].sin());
        let mix: Vec<f64> = f.iter().zip(&h).map(|(x, y)| a * x + b * y).collect();
        let n = g.n_steps();
        let sf = solve_with(&prop, f, n, 0, StorePolicy::FinalOnly).unwrap();
        let sh = solve_with(&prop, h, n, 0, StorePolicy::FinalOnly).unwrap();
        let sm = solve_with(&prop, mix, n, 0, StorePolicy::FinalOnly).unwrap();
        for i in 0..g.n_nodes() {
            let lin = a * sf.u[0][i] + b * sh.u[0][i];
            prop_assert!((sm.u[0][i] - lin).abs() < 1e-12 * (1.0 + lin.abs()));
        }
    }

    #[test]
    fn sup_norm_contracts(c in -2.0f64..2.0, shift in -1.0f64..1.0) {
        let g = SpaceTimeGrid::new(1, 2.0, 0.1, 0.05, 0.3).unwrap();
        let field: FieldRef = Arc::new(FnField::constant_drift(1, 1, vec![c]));
        let s = solve_backward(field, &|x| (3.0 * (x[0] - shift)).cos() * (-x[0] * x[0]).exp(), &g).unwrap();
        let fsup = s.terminal.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for u in &s.u {
            prop_assert!(u.iter().all(|v| v.abs() <= fsup * (1.0 + 1e-12)));
        }
    }
}
