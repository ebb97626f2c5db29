//! Riccati recursions for the tracking cost.
//!
//! Backward from `P_{N+1}`:
//!
//! ```text
//! Upsilon_k = B'(R + P_{k+1})B
//! M_k       = B' P_{k+1} A
//! P_k       = Q + A' P_{k+1} A - M_k' Upsilon_k^{-1} M_k
//! ```
//!
//! In strict mode every `Upsilon_k` must be positive definite, which is exactly
//! the condition for a unique minimiser. Otherwise the inverse is replaced by
//! the SVD pseudo-inverse and the range condition `Upsilon Upsilon^+ M = M` is
//! checked at each step instead.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{check_detectability, CostSpec, SystemModel};

/// `Upsilon_k` must have smallest eigenvalue above this in strict mode.
pub const PD_FLOOR: f64 = 1e-10;
/// Tolerance for the range condition in pseudo-inverse mode.
pub const REGULARITY_TOL: f64 = 1e-9;

pub const DEFAULT_GARE_TOL: f64 = 1e-12;
pub const DEFAULT_GARE_MAX_ITERS: usize = 100_000;

/// Finite-horizon solution over steps `0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    horizon: usize,
    strict: bool,
    /// `P_0 ..= P_{N+1}`
    p: Vec<DMatrix<f64>>,
    upsilon: Vec<DMatrix<f64>>,
    /// `Upsilon_k^{-1}`, or `Upsilon_k^+` in pseudo-inverse mode.
    upsilon_inv: Vec<DMatrix<f64>>,
    m: Vec<DMatrix<f64>>,
    k: Vec<DMatrix<f64>>,
    regular: Vec<bool>,
}

impl RiccatiSolution {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn is_strict(&self) -> bool {
        self.strict
    }

    /// `P_k` for `k` in `0..=N+1`.
    pub fn p(&self, k: usize) -> &DMatrix<f64> {
        &self.p[k]
    }

    pub fn upsilon(&self, k: usize) -> &DMatrix<f64> {
        &self.upsilon[k]
    }

    pub fn upsilon_inv(&self, k: usize) -> &DMatrix<f64> {
        &self.upsilon_inv[k]
    }

    pub fn m(&self, k: usize) -> &DMatrix<f64> {
        &self.m[k]
    }

    /// Feedback gain `K_k = Upsilon_k^{-1} M_k`.
    pub fn gain(&self, k: usize) -> &DMatrix<f64> {
        &self.k[k]
    }

    pub fn regular(&self, k: usize) -> bool {
        self.regular[k]
    }

    pub fn p_all(&self) -> &[DMatrix<f64>] {
        &self.p
    }

    pub fn gains(&self) -> &[DMatrix<f64>] {
        &self.k
    }

    /// `A - B K_k`.
    pub fn closed_loop(&self, model: &SystemModel, k: usize) -> DMatrix<f64> {
        model.a() - model.b() * &self.k[k]
    }

    pub(crate) fn check_index(&self, k: usize) -> Result<()> {
        if k > self.horizon {
            return Err(Error::Index {
                k,
                horizon: self.horizon,
            });
        }
        Ok(())
    }
}

/// `(Upsilon, M)` for a given cost-to-go `P`.
pub fn upsilon_and_m(model: &SystemModel, cost: &CostSpec, p_next: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let b = model.b();
    let upsilon = linalg::symmetrize(&(b.transpose() * (cost.r() + p_next) * b));
    let m = b.transpose() * p_next * model.a();
    (upsilon, m)
}

/// Backward recursion from `cost.p_terminal()` over `0..=horizon`.
pub fn solve_finite_horizon(
    model: &SystemModel,
    cost: &CostSpec,
    horizon: usize,
    strict: bool,
) -> Result<RiccatiSolution> {
    cost.check_model(model)?;
    cost.check_psd()?;

    let steps = horizon + 1;
    let mut p = vec![DMatrix::zeros(0, 0); steps + 1];
    let mut upsilon = Vec::with_capacity(steps);
    let mut upsilon_inv = Vec::with_capacity(steps);
    let mut m_seq = Vec::with_capacity(steps);
    let mut k_seq = Vec::with_capacity(steps);
    let mut regular = Vec::with_capacity(steps);

    p[steps] = linalg::symmetrize(cost.p_terminal());
    let a = model.a();
    for step in (0..steps).rev() {
        let p_next = &p[step + 1];
        let (ups, m) = upsilon_and_m(model, cost, p_next);
        let inv = if strict {
            let min_eig = linalg::min_sym_eigenvalue(&ups);
            if !(min_eig > PD_FLOOR) {
                return Err(Error::Solvability {
                    step,
                    min_eigenvalue: min_eig,
                });
            }
            spd_inverse(&ups)
        } else {
            let pinv = linalg::pinv(&ups);
            let residual = regularity_residual(&ups, &pinv, &m);
            if residual > REGULARITY_TOL * (1.0 + linalg::max_abs(&m)) {
                return Err(Error::Regularity { step, residual });
            }
            pinv
        };
        let gain = &inv * &m;
        let p_k = cost.q() + a.transpose() * p_next * a - m.transpose() * &gain;
        p[step] = linalg::symmetrize(&p_k);
        upsilon.push(ups);
        upsilon_inv.push(inv);
        m_seq.push(m);
        k_seq.push(gain);
        regular.push(true);
    }
    upsilon.reverse();
    upsilon_inv.reverse();
    m_seq.reverse();
    k_seq.reverse();

    Ok(RiccatiSolution {
        horizon,
        strict,
        p,
        upsilon,
        upsilon_inv,
        m: m_seq,
        k: k_seq,
        regular,
    })
}

fn spd_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    match m.clone().cholesky() {
        Some(ch) => linalg::symmetrize(&ch.inverse()),
        None => m.clone().try_inverse().unwrap_or_else(|| linalg::pinv(m)),
    }
}

fn regularity_residual(upsilon: &DMatrix<f64>, pinv: &DMatrix<f64>, m: &DMatrix<f64>) -> f64 {
    linalg::max_abs(&(upsilon * pinv * m - m))
}

/// `Upsilon Upsilon^+ M = M` within `tol * (1 + |M|)`, max-abs norm.
pub fn check_regularity(upsilon: &DMatrix<f64>, m: &DMatrix<f64>, tol: f64) -> bool {
    let pinv = linalg::pinv(upsilon);
    regularity_residual(upsilon, &pinv, m) <= tol * (1.0 + linalg::max_abs(m))
}

/// Stationary solution of `P = Q + A'PA - M' Upsilon^+ M`.
#[derive(Debug, Clone, PartialEq)]
pub struct GareSolution {
    pub p: DMatrix<f64>,
    pub upsilon: DMatrix<f64>,
    pub upsilon_pinv: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub k: DMatrix<f64>,
    /// Spectral radius of `A - B K`.
    pub closed_loop_radius: f64,
    pub iterations: usize,
    /// `|P - map(P)|` in the max-abs norm.
    pub residual: f64,
    /// Whether `(A, Q^1/2)` passed the PBH test; results are not certified otherwise.
    pub detectable: bool,
}

impl GareSolution {
    /// `A - B K`.
    pub fn closed_loop(&self, model: &SystemModel) -> DMatrix<f64> {
        model.a() - model.b() * &self.k
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GareOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for GareOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_GARE_TOL,
            max_iters: DEFAULT_GARE_MAX_ITERS,
        }
    }
}

/// One application of the pseudo-inverse Riccati map.
pub fn gare_map(model: &SystemModel, cost: &CostSpec, p: &DMatrix<f64>) -> DMatrix<f64> {
    let (ups, m) = upsilon_and_m(model, cost, p);
    let pinv = linalg::pinv(&ups);
    let a = model.a();
    linalg::symmetrize(&(cost.q() + a.transpose() * p * a - m.transpose() * pinv * m))
}

/// Iterates the Riccati map from `P = 0` until successive iterates differ by at most `tol`,
/// and requires the resulting closed loop to be Schur stable.
pub fn solve_gare(model: &SystemModel, cost: &CostSpec, tol: f64, max_iters: usize) -> Result<GareSolution> {
    let sol = iterate_gare(model, cost, tol, max_iters)?;
    if !(sol.closed_loop_radius < 1.0) {
        return Err(Error::Stabilization {
            spectral_radius: sol.closed_loop_radius,
        });
    }
    Ok(sol)
}

/// The fixed-point iteration alone. The closed loop may be unstable; check
/// `closed_loop_radius` and `detectable` before relying on the result.
pub fn iterate_gare(model: &SystemModel, cost: &CostSpec, tol: f64, max_iters: usize) -> Result<GareSolution> {
    cost.check_model(model)?;
    cost.check_psd()?;
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    let detectable = check_detectability(model.a(), cost.q())?;

    let n = model.n();
    let mut p = DMatrix::zeros(n, n);
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iters {
        let next = gare_map(model, cost, &p);
        change = linalg::max_abs(&(&next - &p));
        p = next;
        iterations += 1;
        if !change.is_finite() {
            break;
        }
        if change <= tol {
            break;
        }
    }
    if !(change <= tol) {
        return Err(Error::Convergence {
            iterations,
            residual: change,
        });
    }

    let residual = linalg::max_abs(&(&p - gare_map(model, cost, &p)));
    let (upsilon, m) = upsilon_and_m(model, cost, &p);
    let upsilon_pinv = linalg::pinv(&upsilon);
    let k = &upsilon_pinv * &m;
    let closed_loop_radius = linalg::spectral_radius(&(model.a() - model.b() * &k));
    Ok(GareSolution {
        p,
        upsilon,
        upsilon_pinv,
        m,
        k,
        closed_loop_radius,
        iterations,
        residual,
        detectable,
    })
}

pub fn solve_gare_default(model: &SystemModel, cost: &CostSpec) -> Result<GareSolution> {
    let opts = GareOptions::default();
    solve_gare(model, cost, opts.tol, opts.max_iters)
}
