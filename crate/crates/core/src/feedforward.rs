//! Disturbance and reference compensation sequences `h_k`, `f_k`.
//!
//! Backward from `f_{N+1} = -P_{N+1} r`:
//!
//! ```text
//! h_k = B'(R + P_{k+1}) E d_k + B' f_{k+1}
//! f_k = A' P_{k+1} E d_k + A' f_{k+1} - M_k' Upsilon_k^{-1} h_k - Q r
//! ```
//!
//! Eliminating `h_k` gives the linear recursion `f_k = Abar_k' f_{k+1} + F_k d_k - Q r`
//! with `Abar_k = A - B K_k` and `F_k = (Abar_k' P_{k+1} - M_k' Upsilon_k^{-1} B' R) E`,
//! which is what the closed form unrolls and what the stationary fixed point solves.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{CostSpec, DisturbanceProfile, SystemModel};
use crate::riccati::{GareSolution, RiccatiSolution};

#[derive(Debug, Clone, PartialEq)]
pub struct FeedforwardSolution {
    /// `h_0 ..= h_N`
    h: Vec<DVector<f64>>,
    /// `f_0 ..= f_{N+1}`
    f: Vec<DVector<f64>>,
}

impl FeedforwardSolution {
    pub fn horizon(&self) -> usize {
        self.h.len() - 1
    }

    pub fn h(&self, k: usize) -> &DVector<f64> {
        &self.h[k]
    }

    pub fn f(&self, k: usize) -> &DVector<f64> {
        &self.f[k]
    }

    pub fn h_all(&self) -> &[DVector<f64>] {
        &self.h
    }

    pub fn f_all(&self) -> &[DVector<f64>] {
        &self.f
    }

    /// Largest elementwise difference over both sequences.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let diff = |a: &[DVector<f64>], b: &[DVector<f64>]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| linalg::max_abs_vec(&(x - y)))
                .fold(0.0, f64::max)
        };
        diff(&self.h, &other.h).max(diff(&self.f, &other.f))
    }
}

/// One backward step: `(h_k, f_k)` from `f_{k+1}`.
pub fn backward_step(
    model: &SystemModel,
    cost: &CostSpec,
    p_next: &DMatrix<f64>,
    m: &DMatrix<f64>,
    upsilon_inv: &DMatrix<f64>,
    d: &DVector<f64>,
    f_next: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let (a, b, e) = (model.a(), model.b(), model.e());
    let ed = e * d;
    let h = b.transpose() * ((cost.r() + p_next) * &ed) + b.transpose() * f_next;
    let f = a.transpose() * (p_next * &ed) + a.transpose() * f_next
        - m.transpose() * (upsilon_inv * &h)
        - cost.q() * cost.reference();
    (h, f)
}

fn check_inputs(
    riccati: &RiccatiSolution,
    model: &SystemModel,
    cost: &CostSpec,
    d: &DisturbanceProfile,
) -> Result<()> {
    cost.check_model(model)?;
    let n = model.n();
    if riccati.p(0).nrows() != n || riccati.gain(0).shape() != (model.m(), n) {
        return Err(Error::Dimension(format!(
            "Riccati solution is for n = {}, m = {}; model has n = {n}, m = {}",
            riccati.p(0).nrows(),
            riccati.gain(0).nrows(),
            model.m()
        )));
    }
    d.check()?;
    if d.dim() != model.disturbance_dim() {
        return Err(Error::Dimension(format!(
            "disturbance profile has dimension {}, E has {} columns",
            d.dim(),
            model.disturbance_dim()
        )));
    }
    Ok(())
}

/// Backward recursion over the Riccati solution's horizon.
pub fn solve_recursive(
    riccati: &RiccatiSolution,
    model: &SystemModel,
    cost: &CostSpec,
    d: &DisturbanceProfile,
) -> Result<FeedforwardSolution> {
    check_inputs(riccati, model, cost, d)?;
    let horizon = riccati.horizon();
    let mut h = vec![DVector::zeros(0); horizon + 1];
    let mut f = vec![DVector::zeros(0); horizon + 2];
    f[horizon + 1] = -(riccati.p(horizon + 1) * cost.reference());
    for k in (0..=horizon).rev() {
        let (h_k, f_k) = backward_step(
            model,
            cost,
            riccati.p(k + 1),
            riccati.m(k),
            riccati.upsilon_inv(k),
            &d.sample(k),
            &f[k + 1],
        );
        h[k] = h_k;
        f[k] = f_k;
    }
    Ok(FeedforwardSolution { h, f })
}

/// Matrices of the explicit (unrolled) form.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedFormTerms {
    /// `H_k = B'(R + P_{k+1}) E`, `k = 0..=N`
    pub h_gain: Vec<DMatrix<f64>>,
    /// `Abar_k = A - B K_k`, `k = 0..=N`
    pub abar: Vec<DMatrix<f64>>,
    /// `F_k = (Abar_k' P_{k+1} - M_k' Upsilon_k^{-1} B' R) E`, `k = 0..=N`
    pub f_gain: Vec<DMatrix<f64>>,
    /// `Rs_k = Abar_k' Rs_{k+1} + Q`, `Rs_{N+1} = P_{N+1}`, `k = 0..=N+1`
    pub rscript: Vec<DMatrix<f64>>,
}

impl ClosedFormTerms {
    pub fn new(riccati: &RiccatiSolution, model: &SystemModel, cost: &CostSpec) -> Self {
        let horizon = riccati.horizon();
        let (b, e) = (model.b(), model.e());
        let mut h_gain = Vec::with_capacity(horizon + 1);
        let mut abar = Vec::with_capacity(horizon + 1);
        let mut f_gain = Vec::with_capacity(horizon + 1);
        for k in 0..=horizon {
            let p_next = riccati.p(k + 1);
            let ab = riccati.closed_loop(model, k);
            h_gain.push(b.transpose() * (cost.r() + p_next) * e);
            f_gain.push(
                (ab.transpose() * p_next - riccati.m(k).transpose() * riccati.upsilon_inv(k) * b.transpose() * cost.r())
                    * e,
            );
            abar.push(ab);
        }
        let mut rscript = vec![DMatrix::zeros(0, 0); horizon + 2];
        rscript[horizon + 1] = riccati.p(horizon + 1).clone();
        for k in (0..=horizon).rev() {
            rscript[k] = abar[k].transpose() * &rscript[k + 1] + cost.q();
        }
        Self {
            h_gain,
            abar,
            f_gain,
            rscript,
        }
    }

    /// `sum_{s=k}^{N} Abar_k' ... Abar_{s-1}' F_s d_s`; the empty product is the identity.
    fn propagated_sum(&self, k: usize, d: &[DVector<f64>]) -> DVector<f64> {
        let n = self.rscript[0].nrows();
        let horizon = self.abar.len() - 1;
        let mut transition = DMatrix::<f64>::identity(n, n);
        let mut sum = DVector::<f64>::zeros(n);
        for s in k..=horizon {
            sum += &transition * (&self.f_gain[s] * &d[s]);
            transition *= self.abar[s].transpose();
        }
        sum
    }
}

/// Evaluates the unrolled sums directly instead of recursing on `f`.
///
/// `f_k = sum_{s=k}^{N} Abar_k'...Abar_{s-1}' F_s d_s - Rs_k r` and
/// `h_k = H_k d_k + B' f_{k+1}`.
pub fn solve_closed_form(
    riccati: &RiccatiSolution,
    model: &SystemModel,
    cost: &CostSpec,
    d: &DisturbanceProfile,
) -> Result<FeedforwardSolution> {
    check_inputs(riccati, model, cost, d)?;
    let horizon = riccati.horizon();
    let terms = ClosedFormTerms::new(riccati, model, cost);
    let ds = d.materialize(horizon + 1);
    let r = cost.reference();

    let f: Vec<DVector<f64>> = (0..=horizon + 1)
        .map(|k| {
            let tail = if k <= horizon {
                terms.propagated_sum(k, &ds)
            } else {
                DVector::zeros(model.n())
            };
            tail - &terms.rscript[k] * r
        })
        .collect();
    let h = (0..=horizon)
        .map(|k| &terms.h_gain[k] * &ds[k] + model.b().transpose() * &f[k + 1])
        .collect();
    Ok(FeedforwardSolution { h, f })
}

/// Constant-signal fixed point of the backward equations under the stationary gain.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyFeedforward {
    pub h: DVector<f64>,
    pub f: DVector<f64>,
}

/// `F = (Abar' P - M' Upsilon^+ B' R) E` for the stationary solution.
pub fn stationary_f_gain(gare: &GareSolution, model: &SystemModel, cost: &CostSpec) -> DMatrix<f64> {
    let abar = gare.closed_loop(model);
    (abar.transpose() * &gare.p - gare.m.transpose() * &gare.upsilon_pinv * model.b().transpose() * cost.r()) * model.e()
}

/// Solves `(I - Abar') f = F d - Q r`, then `h = B'(R + P) E d + B' f`.
pub fn solve_steady(
    gare: &GareSolution,
    model: &SystemModel,
    cost: &CostSpec,
    d_limit: &DVector<f64>,
    r: &DVector<f64>,
) -> Result<SteadyFeedforward> {
    cost.check_model(model)?;
    model.check_disturbance(d_limit)?;
    model.check_state(r, "reference")?;
    let n = model.n();
    let abar = gare.closed_loop(model);
    let radius = linalg::spectral_radius(&abar);
    if !(radius < 1.0) {
        return Err(Error::Stabilization {
            spectral_radius: radius,
        });
    }
    let rhs = stationary_f_gain(gare, model, cost) * d_limit - cost.q() * r;
    let lhs = DMatrix::identity(n, n) - abar.transpose();
    let f = lhs.lu().solve(&rhs).ok_or(Error::Stabilization {
        spectral_radius: radius,
    })?;
    let b = model.b();
    let h = b.transpose() * ((cost.r() + &gare.p) * (model.e() * d_limit)) + b.transpose() * &f;
    Ok(SteadyFeedforward { h, f })
}

/// `h_0 .. h_{len-1}` for the stationary law with a time-varying disturbance.
///
/// The backward equations are run with the stationary `P`, `M`, `Upsilon^+`,
/// starting from the constant-signal fixed point for `d_len`, so the result is
/// exact whenever the disturbance is constant from `len` on.
pub fn stationary_sequence(
    gare: &GareSolution,
    model: &SystemModel,
    cost: &CostSpec,
    d: &DisturbanceProfile,
    len: usize,
) -> Result<Vec<DVector<f64>>> {
    d.check()?;
    if d.dim() != model.disturbance_dim() {
        return Err(Error::Dimension(format!(
            "disturbance profile has dimension {}, E has {} columns",
            d.dim(),
            model.disturbance_dim()
        )));
    }
    let steady = solve_steady(gare, model, cost, &d.sample(len), cost.reference())?;
    let mut f_next = steady.f;
    let mut h = vec![DVector::zeros(0); len];
    for k in (0..len).rev() {
        let (h_k, f_k) = backward_step(model, cost, &gare.p, &gare.m, &gare.upsilon_pinv, &d.sample(k), &f_next);
        h[k] = h_k;
        f_next = f_k;
    }
    Ok(h)
}
