//! Independent solution routes agree on random instances.

use mdr_core::feedforward;
use mdr_core::model::{CostSpec, DisturbanceProfile, SystemModel};
use mdr_core::riccati;
use mdr_core::verify::{check_instance, draw_instance, InstanceBounds};
use mdr_core::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64) -> mdr_core::verify::RandomInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        if let Some(inst) = draw_instance(&mut rng, &InstanceBounds::default()) {
            return inst;
        }
    }
}

/// Textbook LQR recursion with state weight `Q` and input weight `W`.
fn textbook_lqr_gains(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    w: &DMatrix<f64>,
    p_final: &DMatrix<f64>,
    horizon: usize,
) -> Vec<DMatrix<f64>> {
    let mut p = p_final.clone();
    let mut gains = vec![DMatrix::zeros(0, 0); horizon + 1];
    for k in (0..=horizon).rev() {
        let s = w + b.transpose() * &p * b;
        let gain = s.clone().lu().solve(&(b.transpose() * &p * a)).unwrap();
        let acl = a - b * &gain;
        p = q + gain.transpose() * w * &gain + acl.transpose() * &p * &acl;
        gains[k] = gain;
    }
    gains
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn riccati_controller_matches_dense_minimiser(seed in any::<u64>()) {
        let rep = check_instance(&instance(seed)).unwrap();
        prop_assert!(rep.input_error <= 1e-8, "{:?}", rep);
        prop_assert!(rep.cost_error <= 1e-8, "{:?}", rep);
        prop_assert!(rep.predicted_cost_error <= 1e-8, "{:?}", rep);
    }

    #[test]
    fn optimality_conditions_hold_along_optimal_run(seed in any::<u64>()) {
        let rep = check_instance(&instance(seed)).unwrap();
        prop_assert!(rep.stationarity <= 1e-8, "{:?}", rep);
        prop_assert!(rep.costate_link <= 1e-8, "{:?}", rep);
    }

    #[test]
    fn closed_form_matches_recursion(seed in any::<u64>()) {
        let rep = check_instance(&instance(seed)).unwrap();
        prop_assert!(rep.closed_form_error <= 1e-9, "{:?}", rep);
    }

    #[test]
    fn no_disturbance_no_reference_reduces_to_lqr(seed in any::<u64>()) {
        let inst = instance(seed);
        let model = &inst.model;
        let n = model.n();
        let cost = inst.cost.clone().with_reference(DVector::zeros(n)).unwrap();
        let ric = riccati::solve_finite_horizon(model, &cost, inst.horizon, true).unwrap();
        let w = model.b().transpose() * cost.r() * model.b();
        let gains = textbook_lqr_gains(model.a(), model.b(), cost.q(), &w, cost.p_terminal(), inst.horizon);
        for k in 0..=inst.horizon {
            let scale = gains[k].amax().max(1.0);
            prop_assert!((ric.gain(k) - &gains[k]).amax() <= 1e-10 * scale);
        }
        let ff = feedforward::solve_recursive(&ric, model, &cost, &DisturbanceProfile::zero(model.disturbance_dim())).unwrap();
        prop_assert!(ff.h_all().iter().chain(ff.f_all()).all(|v| v.amax() == 0.0));
    }

    #[test]
    fn feedforward_is_linear_in_disturbance_and_reference(seed in any::<u64>(), alpha in -3.0f64..3.0) {
        let inst = instance(seed);
        let model = &inst.model;
        let ric = riccati::solve_finite_horizon(model, &inst.cost, inst.horizon, true).unwrap();
        let solve = |d: &[DVector<f64>], r: DVector<f64>| {
            let cost = inst.cost.clone().with_reference(r).unwrap();
            feedforward::solve_recursive(&ric, model, &cost, &DisturbanceProfile::table(d)).unwrap()
        };
        let r1 = inst.cost.reference().clone();
        let r2 = r1.map(|v| v.sin());
        let d2: Vec<_> = inst.d.iter().map(|v| v.map(|x| x.cos())).collect();
        let mixed_d: Vec<_> = inst.d.iter().zip(&d2).map(|(a, b)| a * alpha + b).collect();
        let f1 = solve(&inst.d, r1.clone());
        let f2 = solve(&d2, r2.clone());
        let mixed = solve(&mixed_d, &r1 * alpha + &r2);
        for k in 0..=inst.horizon + 1 {
            let expect = f1.f(k) * alpha + f2.f(k);
            prop_assert!((mixed.f(k) - &expect).amax() <= 1e-9 * expect.amax().max(1.0));
        }
        for k in 0..=inst.horizon {
            let expect = f1.h(k) * alpha + f2.h(k);
            prop_assert!((mixed.h(k) - &expect).amax() <= 1e-9 * expect.amax().max(1.0));
        }
    }

    #[test]
    fn riccati_iterates_are_symmetric_psd_and_grow_with_horizon(seed in any::<u64>()) {
        let inst = instance(seed);
        let model = &inst.model;
        let cost = inst.cost.clone().with_p_terminal(DMatrix::zeros(model.n(), model.n())).unwrap();
        let short = riccati::solve_finite_horizon(model, &cost, inst.horizon, true).unwrap();
        let long = riccati::solve_finite_horizon(model, &cost, inst.horizon + 1, true).unwrap();
        for p in short.p_all() {
            let scale = p.amax().max(1.0);
            prop_assert!((p - p.transpose()).amax() <= 1e-12 * scale);
            prop_assert!(p.symmetric_eigenvalues().min() >= -1e-9 * scale);
        }
        // one extra stage cannot lower the optimal cost-to-go
        let diff = long.p(0) - short.p(0);
        let diff = (&diff + diff.transpose()) * 0.5;
        prop_assert!(diff.symmetric_eigenvalues().min() >= -1e-8 * long.p(0).amax().max(1.0));
    }
}

#[test]
fn scalar_riccati_chain_by_hand() {
    // A = B = Q = R = 1, P_terminal = 1: Upsilon = 2, M = 1, P_0 = 1 + 1 - 1/2
    let s = |v: f64| DMatrix::from_element(1, 1, v);
    let model = SystemModel::new(s(1.0), s(1.0), s(1.0), s(1.0)).unwrap();
    let cost = CostSpec::new(s(1.0), s(1.0), s(1.0), DVector::zeros(1)).unwrap();
    let ric = riccati::solve_finite_horizon(&model, &cost, 0, true).unwrap();
    assert!((ric.p(0)[(0, 0)] - 1.5).abs() < 1e-15);
    assert!((ric.upsilon(0)[(0, 0)] - 2.0).abs() < 1e-15);
}
