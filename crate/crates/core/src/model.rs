//! Plant, cost and disturbance descriptions.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Symmetry tolerance for weight matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Smallest eigenvalue still accepted as PSD.
pub const PSD_FLOOR: f64 = -1e-10;
/// Relative rank cutoff for the PBH detectability test.
pub const PBH_RCOND: f64 = 1e-9;

/// Discrete-time plant `x[k+1] = A x[k] + B u[k] + E d[k]` with regulated output `z = c_o x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    e: DMatrix<f64>,
    c_o: DMatrix<f64>,
}

impl SystemModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, e: DMatrix<f64>, c_o: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::Dimension(format!(
                "A must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "B must be {n}xm with m >= 1, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if e.nrows() != n || e.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "E must have {n} rows and at least one column, got {}x{}",
                e.nrows(),
                e.ncols()
            )));
        }
        if c_o.ncols() != n || c_o.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "c_o must be lx{n} with l >= 1, got {}x{}",
                c_o.nrows(),
                c_o.ncols()
            )));
        }
        for (name, m) in [("A", &a), ("B", &b), ("E", &e), ("c_o", &c_o)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("{name} has non-finite entries")));
            }
        }
        Ok(Self { a, b, e, c_o })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn e(&self) -> &DMatrix<f64> {
        &self.e
    }

    pub fn c_o(&self) -> &DMatrix<f64> {
        &self.c_o
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Regulated output dimension.
    pub fn l(&self) -> usize {
        self.c_o.nrows()
    }

    /// Disturbance dimension (columns of E).
    pub fn disturbance_dim(&self) -> usize {
        self.e.ncols()
    }

    /// One step of the plant.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u + &self.e * d
    }

    pub fn regulated(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c_o * x
    }

    /// `Q = c_o' c_o`.
    pub fn output_weight(&self) -> DMatrix<f64> {
        self.c_o.transpose() * &self.c_o
    }

    pub(crate) fn check_state(&self, x: &DVector<f64>, what: &str) -> Result<()> {
        if x.len() != self.n() {
            return Err(Error::Dimension(format!(
                "{what} has length {}, expected {}",
                x.len(),
                self.n()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_disturbance(&self, d: &DVector<f64>) -> Result<()> {
        if d.len() != self.disturbance_dim() {
            return Err(Error::Dimension(format!(
                "disturbance has length {}, expected {}",
                d.len(),
                self.disturbance_dim()
            )));
        }
        Ok(())
    }
}

/// Weights of the tracking cost. `r` weights `B u + E d`, so it is `n x n` like `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    p_terminal: DMatrix<f64>,
    reference: DVector<f64>,
}

impl CostSpec {
    /// Checks shapes only; definiteness is reported by [`validate`] and enforced by the solvers.
    pub fn new(
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        p_terminal: DMatrix<f64>,
        reference: DVector<f64>,
    ) -> Result<Self> {
        let n = q.nrows();
        for (name, m) in [("Q", &q), ("R", &r), ("P_terminal", &p_terminal)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::Dimension(format!(
                    "{name} must be {n}x{n}, got {}x{}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("{name} has non-finite entries")));
            }
        }
        if reference.len() != n {
            return Err(Error::Dimension(format!(
                "reference has length {}, expected {n}",
                reference.len()
            )));
        }
        if reference.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("reference has non-finite entries".into()));
        }
        Ok(Self {
            q,
            r,
            p_terminal,
            reference,
        })
    }

    /// Cost with `Q = c_o' c_o`.
    pub fn from_output(
        model: &SystemModel,
        r: DMatrix<f64>,
        p_terminal: DMatrix<f64>,
        reference: DVector<f64>,
    ) -> Result<Self> {
        Self::new(model.output_weight(), r, p_terminal, reference)
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn p_terminal(&self) -> &DMatrix<f64> {
        &self.p_terminal
    }

    pub fn reference(&self) -> &DVector<f64> {
        &self.reference
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn with_p_terminal(mut self, p_terminal: DMatrix<f64>) -> Result<Self> {
        if p_terminal.shape() != self.q.shape() {
            return Err(Error::Dimension("P_terminal shape differs from Q".into()));
        }
        self.p_terminal = p_terminal;
        Ok(self)
    }

    pub fn with_reference(mut self, reference: DVector<f64>) -> Result<Self> {
        if reference.len() != self.n() {
            return Err(Error::Dimension("reference length differs from Q".into()));
        }
        self.reference = reference;
        Ok(self)
    }

    pub fn psd_flags(&self) -> PsdFlags {
        PsdFlags {
            q: is_psd(&self.q),
            r: is_psd(&self.r),
            p_terminal: is_psd(&self.p_terminal),
        }
    }

    /// Errors with [`Error::NotPsd`] naming the first offending weight.
    pub fn check_psd(&self) -> Result<()> {
        for (name, m) in [("Q", &self.q), ("R", &self.r), ("P_terminal", &self.p_terminal)] {
            if !is_psd(m) {
                return Err(Error::NotPsd {
                    name,
                    asymmetry: linalg::asymmetry(m),
                    min_eigenvalue: linalg::min_sym_eigenvalue(m),
                });
            }
        }
        Ok(())
    }

    pub(crate) fn check_model(&self, model: &SystemModel) -> Result<()> {
        if self.n() != model.n() {
            return Err(Error::Dimension(format!(
                "cost is {}-dimensional, model has n = {}",
                self.n(),
                model.n()
            )));
        }
        Ok(())
    }
}

fn is_psd(m: &DMatrix<f64>) -> bool {
    linalg::asymmetry(m) <= SYMMETRY_TOL && linalg::min_sym_eigenvalue(m) >= PSD_FLOOR
}

/// A known disturbance signal. All kinds are zero before `start_step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisturbanceProfile {
    /// Step to `value` at `start_step`.
    Constant {
        value: Vec<f64>,
        #[serde(default)]
        start_step: usize,
    },
    /// `amplitude * sin(frequency * (k - start_step) + phase)`, frequency in rad/step.
    Sinusoid {
        amplitude: Vec<f64>,
        #[serde(default = "unit_frequency")]
        frequency: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        start_step: usize,
    },
    /// Moves from zero towards `level` by `|rate|` per step, then holds.
    Ramp {
        rate: Vec<f64>,
        level: Vec<f64>,
        #[serde(default)]
        start_step: usize,
    },
    /// Explicit samples from `start_step`; holds the last entry past the end.
    Table {
        values: Vec<Vec<f64>>,
        #[serde(default)]
        start_step: usize,
    },
}

fn unit_frequency() -> f64 {
    1.0
}

impl DisturbanceProfile {
    pub fn zero(dim: usize) -> Self {
        Self::Constant {
            value: vec![0.0; dim],
            start_step: 0,
        }
    }

    pub fn constant(value: DVector<f64>) -> Self {
        Self::Constant {
            value: value.iter().copied().collect(),
            start_step: 0,
        }
    }

    pub fn table(values: &[DVector<f64>]) -> Self {
        Self::Table {
            values: values.iter().map(|v| v.iter().copied().collect()).collect(),
            start_step: 0,
        }
    }

    pub fn start_step(&self) -> usize {
        match self {
            Self::Constant { start_step, .. }
            | Self::Sinusoid { start_step, .. }
            | Self::Ramp { start_step, .. }
            | Self::Table { start_step, .. } => *start_step,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Constant { value, .. } => value.len(),
            Self::Sinusoid { amplitude, .. } => amplitude.len(),
            Self::Ramp { level, .. } => level.len(),
            Self::Table { values, .. } => values.first().map_or(0, Vec::len),
        }
    }

    /// Structural checks: non-empty, consistent lengths, finite parameters.
    pub fn check(&self) -> Result<()> {
        let dim = self.dim();
        if dim == 0 {
            return Err(Error::Dimension("disturbance profile has zero dimension".into()));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        let ok = match self {
            Self::Constant { value, .. } => finite(value),
            Self::Sinusoid {
                amplitude,
                frequency,
                phase,
                ..
            } => finite(amplitude) && frequency.is_finite() && phase.is_finite(),
            Self::Ramp { rate, level, .. } => {
                if rate.len() != dim {
                    return Err(Error::Dimension(format!(
                        "ramp rate has length {}, level has {dim}",
                        rate.len()
                    )));
                }
                finite(rate) && finite(level)
            }
            Self::Table { values, .. } => {
                if values.iter().any(|v| v.len() != dim) {
                    return Err(Error::Dimension("ragged disturbance table".into()));
                }
                values.iter().all(|v| finite(v))
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain("disturbance profile has non-finite parameters".into()))
        }
    }

    /// `d_k`. Zero before `start_step`.
    pub fn sample(&self, k: usize) -> DVector<f64> {
        let dim = self.dim();
        let start = self.start_step();
        if k < start {
            return DVector::zeros(dim);
        }
        let t = k - start;
        match self {
            Self::Constant { value, .. } => DVector::from_column_slice(value),
            Self::Sinusoid {
                amplitude,
                frequency,
                phase,
                ..
            } => {
                let s = (frequency * t as f64 + phase).sin();
                DVector::from_iterator(dim, amplitude.iter().map(|a| a * s))
            }
            Self::Ramp { rate, level, .. } => DVector::from_iterator(
                dim,
                rate.iter().zip(level).map(|(r, l)| {
                    let travelled = (r.abs() * t as f64).min(l.abs());
                    travelled.copysign(*l)
                }),
            ),
            Self::Table { values, .. } => {
                let row = values.get(t).or_else(|| values.last());
                row.map_or_else(|| DVector::zeros(dim), |v| DVector::from_column_slice(v))
            }
        }
    }

    /// `d_0 .. d_{len-1}`.
    pub fn materialize(&self, len: usize) -> Vec<DVector<f64>> {
        (0..len).map(|k| self.sample(k)).collect()
    }
}

/// `d_k` for the given profile.
pub fn sample_disturbance(profile: &DisturbanceProfile, k: usize) -> DVector<f64> {
    profile.sample(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DisturbanceClass {
    /// `E = B Gamma` for some `Gamma`.
    Matched,
    Mismatched,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PsdFlags {
    pub q: bool,
    pub r: bool,
    pub p_terminal: bool,
}

impl PsdFlags {
    pub fn all(&self) -> bool {
        self.q && self.r && self.p_terminal
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub dimension_ok: bool,
    pub psd_flags: PsdFlags,
    pub detectable: bool,
    pub disturbance_class: DisturbanceClass,
    pub messages: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.dimension_ok && self.psd_flags.all()
    }
}

/// Matched iff `rank([B E]) = rank(B)`.
pub fn classify_disturbance(b: &DMatrix<f64>, e: &DMatrix<f64>) -> DisturbanceClass {
    if b.nrows() != e.nrows() {
        return DisturbanceClass::Mismatched;
    }
    let mut be = DMatrix::zeros(b.nrows(), b.ncols() + e.ncols());
    be.columns_mut(0, b.ncols()).copy_from(b);
    be.columns_mut(b.ncols(), e.ncols()).copy_from(e);
    if linalg::rank(&be, linalg::RANK_RCOND) == linalg::rank(b, linalg::RANK_RCOND) {
        DisturbanceClass::Matched
    } else {
        DisturbanceClass::Mismatched
    }
}

/// Collects every check into a report. Never fails.
pub fn validate(model: &SystemModel, cost: &CostSpec) -> ValidationReport {
    let mut messages = Vec::new();
    let mut dimension_ok = true;
    if cost.n() != model.n() {
        dimension_ok = false;
        messages.push(format!(
            "cost weights are {}x{} but the state has dimension {}",
            cost.n(),
            cost.n(),
            model.n()
        ));
    }
    if model.disturbance_dim() != model.m() {
        dimension_ok = false;
        messages.push(format!(
            "E has {} columns but B has {}; disturbance must share the input dimension",
            model.disturbance_dim(),
            model.m()
        ));
    }

    let psd_flags = cost.psd_flags();
    for (flag, name) in [
        (psd_flags.q, "Q"),
        (psd_flags.r, "R"),
        (psd_flags.p_terminal, "P_terminal"),
    ] {
        if !flag {
            messages.push(format!("{name} is not symmetric positive semidefinite"));
        }
    }

    let detectable = if dimension_ok && psd_flags.q {
        check_detectability(model.a(), cost.q()).unwrap_or(false)
    } else {
        false
    };
    if !detectable {
        messages.push("(A, Q^1/2) is not detectable; stationary results are not certified".into());
    }

    let disturbance_class = classify_disturbance(model.b(), model.e());
    if disturbance_class == DisturbanceClass::Mismatched {
        messages.push("disturbance is mismatched: no Gamma with B Gamma = E".into());
    }

    ValidationReport {
        dimension_ok,
        psd_flags,
        detectable,
        disturbance_class,
        messages,
    }
}

/// PBH test: every eigenvalue `lambda` of `A` with `|lambda| >= 1` must give
/// `rank([A - lambda I; Q^1/2]) = n`.
pub fn check_detectability(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<bool> {
    let n = a.nrows();
    if !a.is_square() || n == 0 {
        return Err(Error::Dimension(format!("A must be square, got {}x{}", a.nrows(), a.ncols())));
    }
    if q.shape() != (n, n) {
        return Err(Error::Dimension(format!("Q must be {n}x{n}")));
    }
    let q_half = linalg::psd_sqrt(q).map(|v| Complex::new(v, 0.0));
    let a_c = a.map(|v| Complex::new(v, 0.0));
    for lambda in a.complex_eigenvalues().iter() {
        if lambda.norm() < 1.0 {
            continue;
        }
        let mut pbh = DMatrix::<Complex<f64>>::zeros(2 * n, n);
        pbh.rows_mut(0, n)
            .copy_from(&(&a_c - DMatrix::<Complex<f64>>::identity(n, n) * *lambda));
        pbh.rows_mut(n, n).copy_from(&q_half);
        let sv = pbh.singular_values();
        let sigma_max = sv.max();
        let rank = sv.iter().filter(|&&s| s > PBH_RCOND * sigma_max).count();
        if rank < n {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Zero-order-hold discretisation: `A_d = exp(A_c Ts)`, `B_d = (int_0^Ts exp(A_c s) ds) B_c`,
/// with the same integral applied to `E_c`.
pub fn discretize_zoh(
    a_c: &DMatrix<f64>,
    b_c: &DMatrix<f64>,
    e_c: &DMatrix<f64>,
    c_o: &DMatrix<f64>,
    ts: f64,
) -> Result<SystemModel> {
    if !(ts > 0.0) || !ts.is_finite() {
        return Err(Error::Domain(format!("sample time must be positive, got {ts}")));
    }
    let n = a_c.nrows();
    if !a_c.is_square() || n == 0 {
        return Err(Error::Dimension("continuous A must be square".into()));
    }
    let (a_d, gamma) = zoh_blocks(a_c, ts);
    SystemModel::new(a_d, &gamma * b_c, &gamma * e_c, c_o.clone())
}

/// `(exp(A Ts), int_0^Ts exp(A s) ds)` from the exponential of `[[A, I], [0, 0]] * Ts`.
fn zoh_blocks(a_c: &DMatrix<f64>, ts: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a_c.nrows();
    let mut aug = DMatrix::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a_c * ts));
    aug.view_mut((0, n), (n, n))
        .copy_from(&(DMatrix::identity(n, n) * ts));
    let exp = aug.exp();
    (
        exp.view((0, 0), (n, n)).into_owned(),
        exp.view((0, n), (n, n)).into_owned(),
    )
}
