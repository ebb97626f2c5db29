//! Closed-loop rollout, cost evaluation and optimality checks.

use nalgebra::{DMatrix, DVector};

use crate::control::{self, ControllerConfig, Policy};
use crate::error::{Error, Result};
use crate::feedforward::FeedforwardSolution;
use crate::linalg;
use crate::model::{CostSpec, DisturbanceProfile, SystemModel};
use crate::riccati::RiccatiSolution;

/// Upper bound on `m * (N + 1)` for the dense oracle.
pub const ORACLE_MAX_UNKNOWNS: usize = 2000;

/// A simulated run. `x` and `z` have `steps + 1` entries, `u`, `d` and `cost_cum` have `steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    model: SystemModel,
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub d: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
    /// Running sum of stage costs through step `k` (terminal term excluded).
    pub cost_cum: Vec<f64>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.u.len()
    }

    pub fn model(&self) -> &SystemModel {
        &self.model
    }

    /// `B u_k + E d_k`.
    pub fn effort(&self, k: usize) -> DVector<f64> {
        self.model.b() * &self.u[k] + self.model.e() * &self.d[k]
    }

    /// Largest deviation from `x[k+1] = A x[k] + B u[k] + E d[k]`.
    pub fn dynamics_residual(&self) -> f64 {
        (0..self.steps())
            .map(|k| {
                let predicted = self.model.step(&self.x[k], &self.u[k], &self.d[k]);
                linalg::max_abs_vec(&(&self.x[k + 1] - predicted))
            })
            .fold(0.0, f64::max)
    }
}

/// `(x - r)' Q (x - r) + (B u + E d)' R (B u + E d)`.
pub fn stage_cost(
    model: &SystemModel,
    cost: &CostSpec,
    x: &DVector<f64>,
    u: &DVector<f64>,
    d: &DVector<f64>,
) -> f64 {
    let dx = x - cost.reference();
    let w = model.b() * u + model.e() * d;
    dx.dot(&(cost.q() * &dx)) + w.dot(&(cost.r() * &w))
}

pub fn terminal_cost(cost: &CostSpec, x: &DVector<f64>) -> f64 {
    let dx = x - cost.reference();
    dx.dot(&(cost.p_terminal() * &dx))
}

/// Rolls the plant forward under `policy` for `steps` inputs.
pub fn simulate(
    model: &SystemModel,
    cost: &CostSpec,
    policy: &mut dyn Policy,
    x0: &DVector<f64>,
    steps: usize,
    d: &DisturbanceProfile,
) -> Result<Trajectory> {
    rollout(model, cost, x0, steps, d, |k, x, d_k| {
        policy.input(k, x, d_k).map_err(|e| e.at_step(k))
    })
}

/// [`control::prepare`] followed by [`simulate`].
pub fn simulate_config(
    model: &SystemModel,
    cost: &CostSpec,
    config: &ControllerConfig,
    x0: &DVector<f64>,
    steps: usize,
    d: &DisturbanceProfile,
) -> Result<Trajectory> {
    let mut policy = control::prepare(config, model, cost, d, steps)?;
    simulate(model, cost, policy.as_mut(), x0, steps, d)
}

/// Applies a fixed input sequence.
pub fn simulate_open_loop(
    model: &SystemModel,
    cost: &CostSpec,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
    d: &DisturbanceProfile,
) -> Result<Trajectory> {
    rollout(model, cost, x0, inputs.len(), d, |k, _, _| Ok(inputs[k].clone()))
}

fn rollout(
    model: &SystemModel,
    cost: &CostSpec,
    x0: &DVector<f64>,
    steps: usize,
    d: &DisturbanceProfile,
    mut input: impl FnMut(usize, &DVector<f64>, &DVector<f64>) -> Result<DVector<f64>>,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::Domain("simulation needs at least one step".into()));
    }
    cost.check_model(model)?;
    model.check_state(x0, "initial state")?;
    d.check()?;
    if d.dim() != model.disturbance_dim() {
        return Err(Error::Dimension(format!(
            "disturbance profile has dimension {}, E has {} columns",
            d.dim(),
            model.disturbance_dim()
        )));
    }

    let mut x = Vec::with_capacity(steps + 1);
    let mut u = Vec::with_capacity(steps);
    let mut ds = Vec::with_capacity(steps);
    let mut z = Vec::with_capacity(steps + 1);
    let mut cost_cum = Vec::with_capacity(steps);
    let mut running = 0.0;

    x.push(x0.clone());
    z.push(model.regulated(x0));
    for k in 0..steps {
        let d_k = d.sample(k);
        let u_k = input(k, &x[k], &d_k)?;
        if u_k.len() != model.m() {
            return Err(Error::Dimension(format!(
                "controller produced {} inputs, plant has {}",
                u_k.len(),
                model.m()
            ))
            .at_step(k));
        }
        running += stage_cost(model, cost, &x[k], &u_k, &d_k);
        let next = model.step(&x[k], &u_k, &d_k);
        z.push(model.regulated(&next));
        x.push(next);
        u.push(u_k);
        ds.push(d_k);
        cost_cum.push(running);
    }
    Ok(Trajectory {
        model: model.clone(),
        x,
        u,
        d: ds,
        z,
        cost_cum,
    })
}

/// Stage costs over the whole trajectory plus the terminal term on the last state.
pub fn evaluate_cost(traj: &Trajectory, cost: &CostSpec) -> f64 {
    let stages: f64 = (0..traj.steps())
        .map(|k| stage_cost(&traj.model, cost, &traj.x[k], &traj.u[k], &traj.d[k]))
        .sum();
    stages + terminal_cost(cost, &traj.x[traj.steps()])
}

/// Optimal value from the Riccati and feedforward solutions, without simulating:
///
/// ```text
/// J = x0' P_0 x0 + 2 x0' f_0 + r' P_{N+1} r
///     + sum_k [ r' Q r + d_k' E'(R + P_{k+1}) E d_k + 2 d_k' E' f_{k+1} - h_k' Upsilon_k^{-1} h_k ]
/// ```
pub fn predicted_optimal_cost(
    riccati: &RiccatiSolution,
    ff: &FeedforwardSolution,
    x0: &DVector<f64>,
    model: &SystemModel,
    cost: &CostSpec,
    d: &DisturbanceProfile,
) -> f64 {
    let horizon = riccati.horizon();
    let r = cost.reference();
    let e = model.e();
    let mut j = x0.dot(&(riccati.p(0) * x0)) + 2.0 * x0.dot(ff.f(0)) + r.dot(&(riccati.p(horizon + 1) * r));
    let rqr = r.dot(&(cost.q() * r));
    for k in 0..=horizon {
        let ed = e * d.sample(k);
        let h = ff.h(k);
        j += rqr + ed.dot(&((cost.r() + riccati.p(k + 1)) * &ed)) + 2.0 * ed.dot(ff.f(k + 1))
            - h.dot(&(riccati.upsilon_inv(k) * h));
    }
    j
}

/// Minimiser of the cost found by solving the stacked normal equations.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// `u_0 .. u_N` stacked.
    pub u_opt: DVector<f64>,
    pub j_opt: f64,
    /// Eigenvalue ratio of the normal matrix.
    pub condition: f64,
}

impl OracleResult {
    pub fn inputs(&self, m: usize) -> Vec<DVector<f64>> {
        self.u_opt
            .as_slice()
            .chunks(m)
            .map(DVector::from_column_slice)
            .collect()
    }
}

/// Dense minimisation of the cost over `u_0 .. u_N` with the disturbance sequence `d`
/// (`d.len() >= N + 1`). The reference is taken from `cost`.
///
/// Every state is written as an affine function of the stacked inputs,
/// `x_k = G_k U + c_k`, the quadratic is assembled exactly, and its normal
/// equations are solved by Cholesky.
pub fn brute_force_optimal(
    model: &SystemModel,
    cost: &CostSpec,
    x0: &DVector<f64>,
    d: &[DVector<f64>],
    horizon: usize,
) -> Result<OracleResult> {
    cost.check_model(model)?;
    model.check_state(x0, "initial state")?;
    let (n, m) = (model.n(), model.m());
    let unknowns = m * (horizon + 1);
    if unknowns > ORACLE_MAX_UNKNOWNS {
        return Err(Error::Domain(format!(
            "oracle limited to {ORACLE_MAX_UNKNOWNS} unknowns, got {unknowns}"
        )));
    }
    if d.len() < horizon + 1 {
        return Err(Error::Dimension(format!(
            "need {} disturbance samples, got {}",
            horizon + 1,
            d.len()
        )));
    }
    for d_k in &d[..=horizon] {
        model.check_disturbance(d_k)?;
    }

    let (a, b, e) = (model.a(), model.b(), model.e());
    let r = cost.reference();

    // x_k = G U + c, w_k = B u_k + E d_k = W U + e_k
    let mut g = DMatrix::<f64>::zeros(n, unknowns);
    let mut c = x0.clone();
    let mut hess = DMatrix::<f64>::zeros(unknowns, unknowns);
    let mut grad = DVector::<f64>::zeros(unknowns);
    let mut constant = 0.0;

    let mut accumulate = |g: &DMatrix<f64>, offset: DVector<f64>, weight: &DMatrix<f64>| {
        let wg = weight * g;
        hess += g.transpose() * &wg;
        grad += g.transpose() * (weight * &offset);
        constant += offset.dot(&(weight * &offset));
    };

    for k in 0..=horizon {
        accumulate(&g, &c - r, cost.q());
        let mut w = DMatrix::<f64>::zeros(n, unknowns);
        w.columns_mut(k * m, m).copy_from(b);
        let ed = e * &d[k];
        accumulate(&w, ed.clone(), cost.r());
        g = a * &g + &w;
        c = a * &c + ed;
    }
    accumulate(&g, &c - r, cost.p_terminal());

    let hess = linalg::symmetrize(&hess);
    let eig = hess.symmetric_eigenvalues();
    let lam_max = eig.max();
    let lam_min = eig.min();
    let condition = if lam_min > 0.0 { lam_max / lam_min } else { f64::INFINITY };
    if !(lam_min > 1e-14 * lam_max.max(f64::MIN_POSITIVE)) {
        return Err(Error::NonUnique { condition });
    }
    let chol = hess.clone().cholesky().ok_or(Error::NonUnique { condition })?;
    let u_opt = -chol.solve(&grad);
    let j_opt = u_opt.dot(&(&hess * &u_opt)) + 2.0 * grad.dot(&u_opt) + constant;
    Ok(OracleResult {
        u_opt,
        j_opt,
        condition,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostateResiduals {
    /// `max_k |B'RB u_k + B' lambda_k + B'R E d_k|`
    pub stationarity: f64,
    /// `max_k |lambda_{k-1} - P_k x_k - f_k|`
    pub costate_link: f64,
}

/// Checks the optimality conditions along a trajectory of `N + 1` steps.
///
/// The costate is run backward from `lambda_N = P_{N+1}(x_{N+1} - r)` with
/// `lambda_{k-1} = Q (x_k - r) + A' lambda_k`.
pub fn costate_residuals(
    traj: &Trajectory,
    riccati: &RiccatiSolution,
    ff: &FeedforwardSolution,
    model: &SystemModel,
    cost: &CostSpec,
) -> Result<CostateResiduals> {
    let horizon = riccati.horizon();
    if traj.steps() != horizon + 1 || ff.horizon() != horizon {
        return Err(Error::Dimension(format!(
            "trajectory has {} steps, solutions cover {}",
            traj.steps(),
            horizon + 1
        )));
    }
    let (a, b) = (model.a(), model.b());
    let r = cost.reference();

    // lambda[j] holds lambda_{j-1}, j = 0..=N+1
    let mut lambda = vec![DVector::zeros(0); horizon + 2];
    lambda[horizon + 1] = riccati.p(horizon + 1) * (&traj.x[horizon + 1] - r);
    for k in (0..=horizon).rev() {
        lambda[k] = cost.q() * (&traj.x[k] - r) + a.transpose() * &lambda[k + 1];
    }

    let brb = b.transpose() * cost.r() * b;
    let bre = b.transpose() * cost.r() * model.e();
    let stationarity = (0..=horizon)
        .map(|k| {
            let res = &brb * &traj.u[k] + b.transpose() * &lambda[k + 1] + &bre * &traj.d[k];
            linalg::max_abs_vec(&res)
        })
        .fold(0.0, f64::max);
    let costate_link = (0..=horizon + 1)
        .map(|k| linalg::max_abs_vec(&(&lambda[k] - riccati.p(k) * &traj.x[k] - ff.f(k))))
        .fold(0.0, f64::max);
    Ok(CostateResiduals {
        stationarity,
        costate_link,
    })
}
