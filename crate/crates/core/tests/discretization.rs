use mdr_core::model::discretize_zoh;
use mdr_core::{DMatrix, DVector};

/// `sum_{j<terms} M^j t^j / j!` and `sum_{j<terms} M^j t^{j+1} / (j+1)!`.
fn taylor_zoh(a: &DMatrix<f64>, ts: f64, terms: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut phi = DMatrix::<f64>::zeros(n, n);
    let mut gamma = DMatrix::<f64>::zeros(n, n);
    for j in 0..terms {
        phi += &term;
        gamma += &term * (ts / (j as f64 + 1.0));
        term = &term * a * (ts / (j as f64 + 1.0));
    }
    (phi, gamma)
}

fn aero_engine() -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    (
        DMatrix::from_row_slice(2, 2, &[-1.76, -1.34, 2.70, -7.21]),
        DMatrix::from_column_slice(2, 1, &[0.57, 0.82]),
        DMatrix::from_column_slice(2, 1, &[0.98, 2.26]),
        DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
    )
}

#[test]
fn aero_engine_zoh_matches_taylor_series() {
    let (a, b, e, c) = aero_engine();
    let ts = 0.02;
    let model = discretize_zoh(&a, &b, &e, &c, ts).unwrap();
    let (phi, gamma) = taylor_zoh(&a, ts, 20);
    assert!((model.a() - &phi).amax() <= 1e-12);
    assert!((model.b() - &gamma * &b).amax() <= 1e-12);
    assert!((model.e() - &gamma * &e).amax() <= 1e-12);
    assert_eq!(model.c_o(), &c);
    // rounded values
    assert!((model.a()[(0, 0)] - 0.96474).abs() < 1e-5);
    assert!((model.b()[0] - 0.010992).abs() < 1e-6);
    assert!((model.e()[1] - 0.042581).abs() < 1e-6);
}

#[test]
fn zoh_step_response_matches_fine_euler_integration() {
    let (a, b, e, c) = aero_engine();
    let ts = 0.02;
    let model = discretize_zoh(&a, &b, &e, &c, ts).unwrap();
    let u = DVector::from_element(1, 0.7);
    let d = DVector::from_element(1, -0.3);
    let x0 = DVector::from_vec(vec![0.1, -0.2]);
    let discrete = model.step(&x0, &u, &d);

    // classical RK4 on the held-input ODE
    let f = |x: &DVector<f64>| &a * x + &b * &u + &e * &d;
    let sub = 2000;
    let h = ts / sub as f64;
    let mut x = x0.clone();
    for _ in 0..sub {
        let k1 = f(&x);
        let k2 = f(&(&x + &k1 * (h / 2.0)));
        let k3 = f(&(&x + &k2 * (h / 2.0)));
        let k4 = f(&(&x + &k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    assert!((discrete - x).amax() <= 1e-13);
}

#[test]
fn zoh_rejects_nonpositive_sample_time() {
    let (a, b, e, c) = aero_engine();
    assert!(discretize_zoh(&a, &b, &e, &c, 0.0).is_err());
    assert!(discretize_zoh(&a, &b, &e, &c, -0.1).is_err());
}
