//! Random problem instances and cross-checks between independent solution routes.

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use crate::control::FiniteHorizonPolicy;
use crate::error::Result;
use crate::feedforward;
use crate::linalg;
use crate::model::{CostSpec, DisturbanceProfile, SystemModel};
use crate::riccati;
use crate::sim;

/// Smallest eigenvalue of every `Upsilon_k` accepted by the generator.
pub const MIN_UPSILON_EIGENVALUE: f64 = 1e-6;
/// Largest oracle condition number accepted by the generator.
pub const MAX_ORACLE_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceBounds {
    pub max_n: usize,
    pub max_m: usize,
    pub max_horizon: usize,
    pub radius_range: (f64, f64),
}

impl Default for InstanceBounds {
    fn default() -> Self {
        Self {
            max_n: 4,
            max_m: 2,
            max_horizon: 20,
            radius_range: (0.3, 1.2),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub model: SystemModel,
    pub cost: CostSpec,
    pub x0: DVector<f64>,
    /// `d_0 .. d_N`
    pub d: Vec<DVector<f64>>,
    pub horizon: usize,
}

impl RandomInstance {
    pub fn profile(&self) -> DisturbanceProfile {
        DisturbanceProfile::table(&self.d)
    }
}

fn normal(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn normal_vec(rng: &mut impl Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// One draw. Returns `None` when the draw fails the conditioning filters.
pub fn draw_instance(rng: &mut impl Rng, bounds: &InstanceBounds) -> Option<RandomInstance> {
    let n = rng.random_range(1..=bounds.max_n);
    let m = rng.random_range(1..=bounds.max_m.min(n));
    let p = rng.random_range(1..=n);
    let horizon = rng.random_range(1..=bounds.max_horizon);

    let mut a = normal(rng, n, n);
    let radius = linalg::spectral_radius(&a);
    if radius < 1e-8 {
        return None;
    }
    let target = rng.random_range(bounds.radius_range.0..=bounds.radius_range.1);
    a *= target / radius;

    let b = normal(rng, n, m);
    let e = normal(rng, n, p);
    let outputs = rng.random_range(1..=n);
    let c_o = normal(rng, outputs, n);
    let model = SystemModel::new(a, b, e, c_o).ok()?;

    let cq = normal(rng, n, n);
    let dr = normal(rng, n, n);
    let p_terminal = if rng.random_bool(0.5) {
        let f = normal(rng, n, n);
        f.transpose() * f
    } else {
        DMatrix::zeros(n, n)
    };
    let cost = CostSpec::new(cq.transpose() * &cq, dr.transpose() * &dr, p_terminal, normal_vec(rng, n)).ok()?;

    let x0 = normal_vec(rng, n);
    let d = (0..=horizon).map(|_| normal_vec(rng, p)).collect();

    let ric = riccati::solve_finite_horizon(&model, &cost, horizon, true).ok()?;
    let well_posed = (0..=horizon).all(|k| linalg::min_sym_eigenvalue(ric.upsilon(k)) >= MIN_UPSILON_EIGENVALUE);
    if !well_posed {
        return None;
    }
    let instance = RandomInstance {
        model,
        cost,
        x0,
        d,
        horizon,
    };
    let oracle = sim::brute_force_optimal(&instance.model, &instance.cost, &instance.x0, &instance.d, horizon).ok()?;
    (oracle.condition <= MAX_ORACLE_CONDITION).then_some(instance)
}

/// `count` accepted instances from a seeded stream.
pub fn generate_instances(seed: u64, count: usize, bounds: &InstanceBounds) -> Vec<RandomInstance> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        if let Some(inst) = draw_instance(&mut rng, bounds) {
            out.push(inst);
        }
    }
    out
}

/// Discrepancies between the recursive solution, the closed form, the dense oracle and simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceReport {
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    /// `max |u_sim - u_oracle| / max(1, max |u_oracle|)`
    pub input_error: f64,
    /// `|J_sim - J_oracle| / max(1, |J_oracle|)`
    pub cost_error: f64,
    /// `|J_predicted - J_oracle| / max(1, |J_oracle|)`
    pub predicted_cost_error: f64,
    /// Closed form against recursion, relative to the largest feedforward entry.
    pub closed_form_error: f64,
    pub stationarity: f64,
    pub costate_link: f64,
    pub oracle_condition: f64,
}

fn rel(diff: f64, scale: f64) -> f64 {
    diff / scale.abs().max(1.0)
}

pub fn check_instance(inst: &RandomInstance) -> Result<InstanceReport> {
    let (model, cost) = (&inst.model, &inst.cost);
    let profile = inst.profile();
    let mut policy = FiniteHorizonPolicy::new(model, cost, &profile, inst.horizon, true)?;
    let traj = sim::simulate(model, cost, &mut policy, &inst.x0, inst.horizon + 1, &profile)?;
    let oracle = sim::brute_force_optimal(model, cost, &inst.x0, &inst.d, inst.horizon)?;

    let u_oracle = oracle.inputs(model.m());
    let u_scale = linalg::max_abs_vec(&oracle.u_opt);
    let u_diff = traj
        .u
        .iter()
        .zip(&u_oracle)
        .map(|(a, b)| linalg::max_abs_vec(&(a - b)))
        .fold(0.0, f64::max);

    let j_sim = sim::evaluate_cost(&traj, cost);
    let j_pred = sim::predicted_optimal_cost(&policy.riccati, &policy.feedforward, &inst.x0, model, cost, &profile);

    let closed = feedforward::solve_closed_form(&policy.riccati, model, cost, &profile)?;
    let ff_scale = policy
        .feedforward
        .f_all()
        .iter()
        .chain(policy.feedforward.h_all())
        .map(linalg::max_abs_vec)
        .fold(0.0, f64::max);

    let residuals = sim::costate_residuals(&traj, &policy.riccati, &policy.feedforward, model, cost)?;
    Ok(InstanceReport {
        n: model.n(),
        m: model.m(),
        horizon: inst.horizon,
        input_error: rel(u_diff, u_scale),
        cost_error: rel(j_sim - oracle.j_opt, oracle.j_opt).abs(),
        predicted_cost_error: rel(j_pred - oracle.j_opt, oracle.j_opt).abs(),
        closed_form_error: rel(closed.max_abs_diff(&policy.feedforward), ff_scale),
        stationarity: residuals.stationarity,
        costate_link: residuals.costate_link,
        oracle_condition: oracle.condition,
    })
}
