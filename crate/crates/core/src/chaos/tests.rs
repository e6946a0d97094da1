use super::*;
use crate::coeffs::{FieldRef, FnField};
use crate::sde::{McEstimate, WienerPath};
use std::sync::Arc;

const T0: f64 = 1.0;

fn unit_prop(d1: usize, n_t: usize) -> Propagator {
    let field: FieldRef = Arc::new(FnField::unit_diffusion(1, d1));
    let dt = 0.5 * T0 / n_t as f64;
    Propagator::new(field, SpaceTimeGrid::new(1, 10.0, 0.1, dt, T0).unwrap()).unwrap()
}

fn plan(n_t: usize, m_max: usize) -> ChaosPlan {
    ChaosPlan {
        n_t,
        m_max,
        ..Default::default()
    }
}

#[test]
fn linear_data_has_only_first_order_kernels() {
    let prop = unit_prop(2, 8);
    let set = compute_kernels(&prop, &|x| x[0], &plan(8, 3)).unwrap();
    assert!(set.c.abs() < 1e-9);
    for (r, &g) in set.kernel(&[0]).unwrap().iter().enumerate() {
        assert!((g - 1.0).abs() < 1e-6, "node {r}: {g}");
    }
    assert!(set.kernel(&[1]).unwrap().iter().all(|g| g.abs() < 1e-12));
    for order in 2..=3 {
        assert!(set.kernels[order - 1]
            .iter()
            .flatten()
            .all(|g| g.abs() < 1e-6));
    }
    assert!((set.tail_norm(0).unwrap() - T0).abs() < 1e-6);
    assert!(set.tail_norm(1).unwrap() < 1e-10);
    assert!(set.parseval_gap().abs() < 1e-6 * T0);
    assert!(set.tail_norm(3).is_err());
    // 1 + d1 n_t + d1² C(n_t, 2) sweeps, pruned where no lower node exists.
    assert!(set.sweeps as u128 <= estimated_sweeps(3, 8, 2));
}

#[test]
fn quadratic_data_reproduces_hermite_structure() {
    let n_t = 16;
    let prop = unit_prop(1, n_t);
    let set = compute_kernels(&prop, &|x| x[0] * x[0], &plan(n_t, 3)).unwrap();
    assert!((set.c - T0).abs() < 1e-6, "c = {}", set.c);
    assert!(set.kernel(&[0]).unwrap().iter().all(|g| g.abs() < 1e-6));
    assert!(set
        .kernel(&[0, 0])
        .unwrap()
        .iter()
        .all(|g| (g - 2.0).abs() < 1e-5));
    assert!(set
        .kernel(&[0, 0, 0])
        .unwrap()
        .iter()
        .all(|g| g.abs() < 1e-5));
    // tail(0) = ∫ 4 t dt = 2t0² (midpoint rule is exact for linear integrands).
    assert!((set.tail_norm(0).unwrap() - 2.0 * T0 * T0).abs() < 1e-4);
    // tail(1) = 4 · (ordered simplex volume) = 2t0² (1 − 1/n_t).
    let expect = 2.0 * T0 * T0 * (1.0 - 1.0 / n_t as f64);
    assert!((set.tail_norm(1).unwrap() - expect).abs() < 1e-4);
    assert!(set.tail_norm(2).unwrap() < 1e-8);
    // T f²(0) = E w⁴ = 3t0², so the order-1 defect is small.
    assert!((set.tf2 - 3.0 * T0 * T0).abs() < 0.05 * 3.0 * T0 * T0);
    assert!(
        set.parseval_gap().abs() < 0.05 * set.tf2,
        "{}",
        set.parseval_gap()
    );
}

#[test]
fn constant_drift_shifts_the_order_zero_term() {
    let c = 0.3;
    let n_t = 8;
    let field: FieldRef = Arc::new(FnField::constant_drift(1, 1, vec![c]));
    let prop = Propagator::new(
        field,
        SpaceTimeGrid::new(1, 10.0, 0.1, 0.5 * T0 / n_t as f64, T0).unwrap(),
    )
    .unwrap();
    let set = compute_kernels(&prop, &|x| x[0], &plan(n_t, 2)).unwrap();
    assert!((set.c - c * T0).abs() < 1e-6, "{}", set.c);
    assert!(set
        .kernel(&[0])
        .unwrap()
        .iter()
        .all(|g| (g - 1.0).abs() < 1e-6));
}

#[test]
fn constant_data_has_no_fluctuation() {
    let prop = unit_prop(1, 4);
    let set = compute_kernels(&prop, &|_| 1.0, &plan(4, 2)).unwrap();
    // Only the wall at distance 10 separates T1 from 1.
    assert!((set.c - 1.0).abs() < 1e-6);
    assert!(set.parseval_gap().abs() < 1e-6);
}

#[test]
fn cost_guard_refuses_large_requests() {
    let prop = unit_prop(1, 4);
    let err = compute_kernels(&prop, &|x| x[0], &plan(40, 5)).unwrap_err();
    match err {
        crate::Error::CostGuard { estimated, cap } => {
            assert_eq!(estimated, 1 + 40 + 780 + 9880 + 91_390);
            assert_eq!(cap, DEFAULT_COST_CAP);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn misaligned_pde_step_is_rejected() {
    let field: FieldRef = Arc::new(FnField::unit_diffusion(1, 1));
    let prop = Propagator::new(field, SpaceTimeGrid::new(1, 2.0, 0.1, 0.1, 1.0).unwrap()).unwrap();
    assert!(matches!(
        compute_kernels(&prop, &|x| x[0], &plan(8, 1)),
        Err(crate::Error::InvalidInput(_))
    ));
}

#[test]
fn tails_decrease_for_smooth_data() {
    let n_t = 8;
    let bump = |x: &[f64]| (-(x[0] - 0.2).powi(2)).exp();
    let prop = unit_prop(1, n_t);
    let set = compute_kernels(&prop, &bump, &plan(n_t, 3)).unwrap();
    for m in 0..2 {
        assert!(
            set.tails[m + 1] <= set.tails[m] * (1.0 + 1e-6),
            "{:?}",
            set.tails
        );
    }
    let ladder = set.parseval_ladder();
    assert!(ladder
        .windows(2)
        .all(|w| w[1].partial_sum >= w[0].partial_sum));
    assert!(ladder
        .iter()
        .all(|r| r.partial_sum <= set.tf2 * (1.0 + 1e-3)));
}

#[test]
fn kernel_dump_round_trips() {
    let prop = unit_prop(2, 4);
    let set = compute_kernels(&prop, &|x| x[0] * x[0], &plan(4, 2)).unwrap();
    let mut buf = Vec::new();
    write_kernels(&set, &mut buf).unwrap();
    let dump = read_kernels(buf.as_slice()).unwrap();
    assert_eq!(dump.m, 2);
    assert_eq!(dump.d1, 2);
    assert_eq!(dump.kernels, set.kernels);
    assert_eq!(dump.c, set.c);
    let recs = set.diagnostics(0.05);
    assert_eq!(recs.len(), 1 + set.tails.len());
    assert!(serde_json::to_string(&recs[0])
        .unwrap()
        .contains("\"order\":1"));
}

#[test]
fn constant_kernels_give_closed_form_iterated_integrals() {
    let g1 = SimplexGrid::new(T0, 10, 1).unwrap();
    let g2 = SimplexGrid::new(T0, 10, 2).unwrap();
    let ones1 = vec![1.0; g1.count(1)];
    let ones2 = vec![1.0; g2.count(2)];
    for seed in 0..5 {
        let p = WienerPath::sample(2, T0, 1e-2, 17, seed).unwrap();
        let w = p.terminal();
        let i1 = iterated_ito(&g1, &ones1, &[0], &p).unwrap();
        assert!((i1 - w[0]).abs() < 1e-12);
        let i2 = iterated_ito(&g2, &ones2, &[0, 0], &p).unwrap();
        let qv: f64 = (0..p.n_steps()).map(|k| p.increment(k)[0].powi(2)).sum();
        assert!((i2 - 0.5 * (w[0] * w[0] - qv)).abs() < 1e-12);
    }
}

#[test]
fn second_order_hermite_identity_in_mean_square() {
    let g2 = SimplexGrid::new(T0, 10, 2).unwrap();
    let ones = vec![1.0; g2.count(2)];
    let dt = 1e-2;
    let mut errs = Vec::new();
    let mut cross = Vec::new();
    for i in 0..4000 {
        let p = WienerPath::sample(2, T0, dt, 99, i).unwrap();
        let w = p.terminal();
        let i2 = iterated_ito(&g2, &ones, &[0, 0], &p).unwrap();
        errs.push((i2 - 0.5 * (w[0] * w[0] - T0)).powi(2));
        let a = iterated_ito(&g2, &ones, &[0, 1], &p).unwrap();
        let b = iterated_ito(&g2, &ones, &[1, 0], &p).unwrap();
        cross.push(a * b);
    }
    // E|Σ Δw² − t0|²/4 = t0·dt/2.
    let ms = McEstimate::from_samples(&errs);
    assert!(ms.mean < 2.0 * T0 * dt / 2.0, "{ms:?}");
    let c = McEstimate::from_samples(&cross);
    assert!(c.z_score(0.0) < 3.0, "{c:?}");
}

#[test]
fn reconstruction_of_linear_and_quadratic_data() {
    let n_t = 10;
    let prop = unit_prop(1, n_t);
    let lin = compute_kernels(&prop, &|x| x[0], &plan(n_t, 2)).unwrap();
    let quad = compute_kernels(&prop, &|x| x[0] * x[0], &plan(n_t, 2)).unwrap();
    let rq = Reconstructor::new(&quad, 2).unwrap();
    for s in 0..5 {
        let p = WienerPath::sample(1, T0, 1e-2, 3, s).unwrap();
        let w = p.terminal()[0];
        assert!((reconstruct(&lin, &p, 1).unwrap() - w).abs() < 1e-5);
        let qv: f64 = (0..p.n_steps()).map(|k| p.increment(k)[0].powi(2)).sum();
        // c + 2·(w² − Σ Δw²)/2 with c ≈ t0.
        let comps = rq.components(&p).unwrap();
        assert_eq!(comps.len(), 3);
        assert!((rq.eval(&p).unwrap() - (T0 + w * w - qv)).abs() < 1e-4);
    }
    let bad = WienerPath::sample(1, 2.0 * T0, 1e-2, 3, 0).unwrap();
    assert!(reconstruct(&lin, &bad, 1).is_err());
    let coarse = WienerPath::sample(1, T0, 0.3 * T0, 3, 0);
    assert!(coarse.is_err() || reconstruct(&lin, &coarse.unwrap(), 1).is_err());
    assert!(Reconstructor::new(&lin, 3).is_err());
}

#[test]
fn multi_index_ranks_round_trip() {
    for r in 0..27 {
        let mi = multi_index_unrank(3, 3, r);
        assert_eq!(multi_index_rank(&mi, 3), r);
    }
    assert_eq!(multi_index_rank(&[1, 0], 12), 12);
}
