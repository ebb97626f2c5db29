//! Control laws: optimal finite-horizon, stationary, receding-horizon, and
//! the two comparison baselines (state feedback with disturbance
//! compensation, discrete PID).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedforward::{self, FeedforwardSolution};
use crate::linalg;
use crate::model::{CostSpec, DisturbanceProfile, SystemModel};
use crate::riccati::{self, GareSolution, RiccatiSolution};

/// `u_k = -K_k x - Upsilon_k^{-1} h_k` (pseudo-inverse in non-strict mode).
pub fn finite_horizon_control(
    k: usize,
    x: &DVector<f64>,
    riccati: &RiccatiSolution,
    ff: &FeedforwardSolution,
) -> Result<DVector<f64>> {
    riccati.check_index(k)?;
    if ff.horizon() != riccati.horizon() {
        return Err(Error::Dimension(format!(
            "feedforward horizon {} differs from Riccati horizon {}",
            ff.horizon(),
            riccati.horizon()
        )));
    }
    let gain = riccati.gain(k);
    if x.len() != gain.ncols() {
        return Err(Error::Dimension(format!("state has length {}, expected {}", x.len(), gain.ncols())));
    }
    Ok(-(gain * x) - riccati.upsilon_inv(k) * ff.h(k))
}

/// `u = -K x - Upsilon^+ h`. With `h = 0` this is the plain stabilising law.
pub fn stationary_control(x: &DVector<f64>, gare: &GareSolution, h: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != gare.k.ncols() {
        return Err(Error::Dimension(format!("state has length {}, expected {}", x.len(), gare.k.ncols())));
    }
    if h.len() != gare.k.nrows() {
        return Err(Error::Dimension(format!("h has length {}, expected {}", h.len(), gare.k.nrows())));
    }
    Ok(-(&gare.k * x) - &gare.upsilon_pinv * h)
}

/// First input of the horizon-`T` problem with the disturbance frozen at `d_now`
/// and terminal weight `p_terminal`. Recomputes the full backward pass.
pub fn receding_horizon_control(
    x: &DVector<f64>,
    d_now: &DVector<f64>,
    model: &SystemModel,
    cost: &CostSpec,
    horizon: usize,
    p_terminal: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    if horizon == 0 {
        return Err(Error::Domain("receding horizon must be at least 1".into()));
    }
    model.check_state(x, "state")?;
    model.check_disturbance(d_now)?;
    let cost = cost.clone().with_p_terminal(p_terminal.clone())?;
    let ric = riccati::solve_finite_horizon(model, &cost, horizon, true)?;
    let ff = feedforward::solve_recursive(&ric, model, &cost, &DisturbanceProfile::constant(d_now.clone()))?;
    finite_horizon_control(0, x, &ric, &ff)
}

/// `u = k_x x + K_d d`.
pub fn sfc_control(
    x: &DVector<f64>,
    d_now: &DVector<f64>,
    k_x: &DMatrix<f64>,
    k_d: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    if k_x.ncols() != x.len() || k_d.ncols() != d_now.len() || k_x.nrows() != k_d.nrows() {
        return Err(Error::Dimension(format!(
            "k_x is {}x{}, K_d is {}x{}, state {}, disturbance {}",
            k_x.nrows(),
            k_x.ncols(),
            k_d.nrows(),
            k_d.ncols(),
            x.len(),
            d_now.len()
        )));
    }
    Ok(k_x * x + k_d * d_now)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

/// PID memory. Start every run from [`ControllerState::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    /// Running sum of `e * Ts`.
    pub integral: DVector<f64>,
    pub prev_error: DVector<f64>,
    pub step: usize,
}

impl ControllerState {
    pub fn new(dim: usize) -> Self {
        Self {
            integral: DVector::zeros(dim),
            prev_error: DVector::zeros(dim),
            step: 0,
        }
    }
}

/// Positional PID with derivative on error:
/// `u = Kp e + Ki sum(e Ts) + Kd (e - e_prev) / Ts`.
pub fn pid_control(
    state: &ControllerState,
    error: &DVector<f64>,
    gains: PidGains,
    ts: f64,
) -> Result<(DVector<f64>, ControllerState)> {
    if !(ts > 0.0) {
        return Err(Error::Domain(format!("sample time must be positive, got {ts}")));
    }
    if error.len() != state.integral.len() {
        return Err(Error::Dimension(format!(
            "error has length {}, controller state has {}",
            error.len(),
            state.integral.len()
        )));
    }
    let integral = &state.integral + error * ts;
    let derivative = (error - &state.prev_error) / ts;
    let u = error * gains.kp + &integral * gains.ki + derivative * gains.kd;
    let next = ControllerState {
        integral,
        prev_error: error.clone(),
        step: state.step + 1,
    };
    Ok((u, next))
}

/// Controller selection as it appears in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerConfig {
    /// Optimal law over the whole run with full knowledge of the disturbance.
    /// `horizon` defaults to `steps - 1`.
    FiniteHorizon {
        #[serde(default)]
        horizon: Option<usize>,
        #[serde(default = "default_true")]
        strict: bool,
    },
    /// Stationary gain with the infinite-horizon feedforward.
    Stationary {
        #[serde(default)]
        tol: Option<f64>,
        #[serde(default)]
        max_iters: Option<usize>,
    },
    /// Horizon-`T` problem re-solved each step with the current disturbance held constant.
    /// `p_terminal` defaults to the cost's terminal weight.
    RecedingHorizon {
        horizon: usize,
        #[serde(default)]
        p_terminal: Option<Vec<Vec<f64>>>,
    },
    StateFeedbackCompensation {
        k_x: Vec<Vec<f64>>,
        k_d: Vec<Vec<f64>>,
    },
    Pid {
        kp: f64,
        ki: f64,
        kd: f64,
        sample_time: f64,
    },
}

fn default_true() -> bool {
    true
}

impl ControllerConfig {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::FiniteHorizon { .. } => "finite_horizon",
            Self::Stationary { .. } => "stationary",
            Self::RecedingHorizon { .. } => "receding_horizon",
            Self::StateFeedbackCompensation { .. } => "state_feedback_compensation",
            Self::Pid { .. } => "pid",
        }
    }
}

/// A prepared controller that produces one input per step.
pub trait Policy {
    fn input(&mut self, k: usize, x: &DVector<f64>, d_now: &DVector<f64>) -> Result<DVector<f64>>;

    /// Spectral radius of the (initial) state-feedback closed loop, where defined.
    fn closed_loop_radius(&self) -> Option<f64> {
        None
    }
}

pub struct FiniteHorizonPolicy {
    pub riccati: RiccatiSolution,
    pub feedforward: FeedforwardSolution,
    radius: f64,
}

impl FiniteHorizonPolicy {
    pub fn new(
        model: &SystemModel,
        cost: &CostSpec,
        d: &DisturbanceProfile,
        horizon: usize,
        strict: bool,
    ) -> Result<Self> {
        let riccati = riccati::solve_finite_horizon(model, cost, horizon, strict)?;
        let feedforward = feedforward::solve_recursive(&riccati, model, cost, d)?;
        let radius = linalg::spectral_radius(&riccati.closed_loop(model, 0));
        Ok(Self {
            riccati,
            feedforward,
            radius,
        })
    }
}

impl Policy for FiniteHorizonPolicy {
    fn input(&mut self, k: usize, x: &DVector<f64>, _d_now: &DVector<f64>) -> Result<DVector<f64>> {
        finite_horizon_control(k, x, &self.riccati, &self.feedforward)
    }

    fn closed_loop_radius(&self) -> Option<f64> {
        Some(self.radius)
    }
}

/// Upper bound on the extra preview used by [`StationaryPolicy`].
pub const MAX_PREVIEW_MARGIN: usize = 100_000;

pub struct StationaryPolicy {
    pub gare: GareSolution,
    pub h: Vec<DVector<f64>>,
}

impl StationaryPolicy {
    pub fn new(
        model: &SystemModel,
        cost: &CostSpec,
        d: &DisturbanceProfile,
        steps: usize,
        tol: f64,
        max_iters: usize,
    ) -> Result<Self> {
        let gare = riccati::solve_gare(model, cost, tol, max_iters)?;
        // The sequence assumes the disturbance freezes after its last sample. That
        // assumption leaks backwards through powers of Abar', so preview far enough
        // past the run for it to fall below 1e-12.
        let rho = gare.closed_loop_radius;
        let margin = if rho > 0.0 {
            ((1e-12f64).ln() / rho.ln()).ceil().min(MAX_PREVIEW_MARGIN as f64) as usize
        } else {
            1
        };
        let mut h = feedforward::stationary_sequence(&gare, model, cost, d, steps + margin)?;
        h.truncate(steps);
        Ok(Self { gare, h })
    }
}

impl Policy for StationaryPolicy {
    fn input(&mut self, k: usize, x: &DVector<f64>, _d_now: &DVector<f64>) -> Result<DVector<f64>> {
        let h = self.h.get(k).ok_or(Error::Index {
            k,
            horizon: self.h.len().saturating_sub(1),
        })?;
        stationary_control(x, &self.gare, h)
    }

    fn closed_loop_radius(&self) -> Option<f64> {
        Some(self.gare.closed_loop_radius)
    }
}

pub struct RecedingHorizonPolicy {
    model: SystemModel,
    cost: CostSpec,
    horizon: usize,
    p_terminal: DMatrix<f64>,
    radius: f64,
}

impl RecedingHorizonPolicy {
    pub fn new(model: &SystemModel, cost: &CostSpec, horizon: usize, p_terminal: DMatrix<f64>) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Domain("receding horizon must be at least 1".into()));
        }
        let probe = cost.clone().with_p_terminal(p_terminal.clone())?;
        let ric = riccati::solve_finite_horizon(model, &probe, horizon, true)?;
        let radius = linalg::spectral_radius(&ric.closed_loop(model, 0));
        Ok(Self {
            model: model.clone(),
            cost: cost.clone(),
            horizon,
            p_terminal,
            radius,
        })
    }
}

impl Policy for RecedingHorizonPolicy {
    fn input(&mut self, _k: usize, x: &DVector<f64>, d_now: &DVector<f64>) -> Result<DVector<f64>> {
        receding_horizon_control(x, d_now, &self.model, &self.cost, self.horizon, &self.p_terminal)
    }

    fn closed_loop_radius(&self) -> Option<f64> {
        Some(self.radius)
    }
}

pub struct SfcPolicy {
    pub k_x: DMatrix<f64>,
    pub k_d: DMatrix<f64>,
    radius: f64,
}

impl SfcPolicy {
    pub fn new(model: &SystemModel, k_x: DMatrix<f64>, k_d: DMatrix<f64>) -> Result<Self> {
        if k_x.shape() != (model.m(), model.n()) || k_d.shape() != (model.m(), model.disturbance_dim()) {
            return Err(Error::Dimension(format!(
                "k_x must be {}x{} and K_d {}x{}",
                model.m(),
                model.n(),
                model.m(),
                model.disturbance_dim()
            )));
        }
        let radius = linalg::spectral_radius(&(model.a() + model.b() * &k_x));
        Ok(Self { k_x, k_d, radius })
    }
}

impl Policy for SfcPolicy {
    fn input(&mut self, _k: usize, x: &DVector<f64>, d_now: &DVector<f64>) -> Result<DVector<f64>> {
        sfc_control(x, d_now, &self.k_x, &self.k_d)
    }

    fn closed_loop_radius(&self) -> Option<f64> {
        Some(self.radius)
    }
}

/// PID on the regulated error `c_o r - c_o x`; needs `l = m`.
pub struct PidPolicy {
    c_o: DMatrix<f64>,
    target: DVector<f64>,
    gains: PidGains,
    ts: f64,
    state: ControllerState,
}

impl PidPolicy {
    pub fn new(model: &SystemModel, reference: &DVector<f64>, gains: PidGains, ts: f64) -> Result<Self> {
        if model.l() != model.m() {
            return Err(Error::Dimension(format!(
                "PID needs as many regulated outputs as inputs (l = {}, m = {})",
                model.l(),
                model.m()
            )));
        }
        if !(ts > 0.0) {
            return Err(Error::Domain(format!("sample time must be positive, got {ts}")));
        }
        model.check_state(reference, "reference")?;
        Ok(Self {
            c_o: model.c_o().clone(),
            target: model.c_o() * reference,
            gains,
            ts,
            state: ControllerState::new(model.l()),
        })
    }
}

impl Policy for PidPolicy {
    fn input(&mut self, _k: usize, x: &DVector<f64>, _d_now: &DVector<f64>) -> Result<DVector<f64>> {
        let error = &self.target - &self.c_o * x;
        let (u, next) = pid_control(&self.state, &error, self.gains, self.ts)?;
        self.state = next;
        Ok(u)
    }
}

/// Builds the runtime controller for a run of `steps` inputs.
pub fn prepare(
    config: &ControllerConfig,
    model: &SystemModel,
    cost: &CostSpec,
    d: &DisturbanceProfile,
    steps: usize,
) -> Result<Box<dyn Policy>> {
    let to_matrix = |rows: &[Vec<f64>], name: &str| {
        linalg::from_rows(rows).ok_or_else(|| Error::Dimension(format!("{name} has ragged rows")))
    };
    Ok(match config {
        ControllerConfig::FiniteHorizon { horizon, strict } => {
            let horizon = horizon.unwrap_or(steps.saturating_sub(1));
            Box::new(FiniteHorizonPolicy::new(model, cost, d, horizon, *strict)?)
        }
        ControllerConfig::Stationary { tol, max_iters } => {
            let defaults = riccati::GareOptions::default();
            Box::new(StationaryPolicy::new(
                model,
                cost,
                d,
                steps,
                tol.unwrap_or(defaults.tol),
                max_iters.unwrap_or(defaults.max_iters),
            )?)
        }
        ControllerConfig::RecedingHorizon { horizon, p_terminal } => {
            let p_terminal = match p_terminal {
                Some(rows) => to_matrix(rows, "p_terminal")?,
                None => cost.p_terminal().clone(),
            };
            Box::new(RecedingHorizonPolicy::new(model, cost, *horizon, p_terminal)?)
        }
        ControllerConfig::StateFeedbackCompensation { k_x, k_d } => Box::new(SfcPolicy::new(
            model,
            to_matrix(k_x, "k_x")?,
            to_matrix(k_d, "k_d")?,
        )?),
        ControllerConfig::Pid {
            kp,
            ki,
            kd,
            sample_time,
        } => Box::new(PidPolicy::new(
            model,
            cost.reference(),
            PidGains {
                kp: *kp,
                ki: *ki,
                kd: *kd,
            },
            *sample_time,
        )?),
    })
}
