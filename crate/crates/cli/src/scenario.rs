//! Scenario files: one JSON document per experiment, matrices as row-major nested arrays.

use std::collections::BTreeMap;
use std::path::Path;

use mdr_core::control::ControllerConfig;
use mdr_core::linalg;
use mdr_core::model::{discretize_zoh, CostSpec, DisturbanceProfile, SystemModel};
use mdr_core::{DMatrix, DVector, Error};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub type Rows = Vec<Vec<f64>>;

pub const DEFAULT_SETTLING_BAND: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub system: SystemSpec,
    pub cost: CostConfig,
    pub x0: Vec<f64>,
    pub steps: usize,
    /// Zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<DisturbanceProfile>,
    /// Zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceSpec>,
    pub controllers: Vec<ControllerEntry>,
    #[serde(default = "all_outputs")]
    pub outputs: Vec<OutputKind>,
    #[serde(default = "default_band")]
    pub settling_band: f64,
    /// Free-form labels and units carried into reports.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub display: BTreeMap<String, serde_json::Value>,
}

fn all_outputs() -> Vec<OutputKind> {
    vec![OutputKind::Csv, OutputKind::Svg, OutputKind::Summary]
}

fn default_band() -> f64 {
    DEFAULT_SETTLING_BAND
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    Discrete {
        a: Rows,
        b: Rows,
        e: Rows,
        c_o: Rows,
    },
    /// Discretised with a zero-order hold at `sample_time`.
    Continuous {
        a: Rows,
        b: Rows,
        e: Rows,
        c_o: Rows,
        sample_time: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    /// Defaults to `c_o' c_o`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Rows>,
    pub r: Rows,
    /// Defaults to zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_terminal: Option<Rows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSpec {
    /// Full state reference `r`.
    State(Vec<f64>),
    /// Target for `c_o x`; mapped to `r = c_o^+ z`.
    Regulated(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerEntry {
    /// Used in file names; letters, digits, `_` and `-` only.
    pub label: String,
    pub controller: ControllerConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Csv,
    Svg,
    Summary,
}

/// A scenario with every default filled in and every matrix built.
#[derive(Debug, Clone)]
pub struct Setup {
    pub model: SystemModel,
    pub cost: CostSpec,
    pub x0: DVector<f64>,
    pub steps: usize,
    pub disturbance: DisturbanceProfile,
    /// Step at which the disturbance switches on.
    pub onset: usize,
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> mdr_core::Result<DMatrix<f64>> {
    linalg::from_rows(rows).ok_or_else(|| Error::Dimension(format!("{name} has rows of different lengths")))
}

fn safe_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl Scenario {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| CliError::parse(path, &e))
    }

    pub fn parse(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn resolve_model(&self) -> mdr_core::Result<SystemModel> {
        match &self.system {
            SystemSpec::Discrete { a, b, e, c_o } => {
                SystemModel::new(matrix("A", a)?, matrix("B", b)?, matrix("E", e)?, matrix("c_o", c_o)?)
            }
            SystemSpec::Continuous {
                a,
                b,
                e,
                c_o,
                sample_time,
            } => {
                // validate shapes before discretising
                let (a, b, e, c_o) = (matrix("A", a)?, matrix("B", b)?, matrix("E", e)?, matrix("c_o", c_o)?);
                SystemModel::new(a.clone(), b.clone(), e.clone(), c_o.clone())?;
                discretize_zoh(&a, &b, &e, &c_o, *sample_time)
            }
        }
    }

    /// Builds the cost for `model`, mapping a regulated reference through `c_o^+`.
    pub fn resolve_cost(&self, model: &SystemModel) -> mdr_core::Result<CostSpec> {
        let n = model.n();
        let q = match &self.cost.q {
            Some(q) => matrix("Q", q)?,
            None => model.output_weight(),
        };
        let r = matrix("R", &self.cost.r)?;
        let p_terminal = match &self.cost.p_terminal {
            Some(p) => matrix("P_terminal", p)?,
            None => DMatrix::zeros(n, n),
        };
        let reference = match &self.reference {
            None => DVector::zeros(n),
            Some(ReferenceSpec::State(r)) => DVector::from_column_slice(r),
            Some(ReferenceSpec::Regulated(z)) => {
                let z = DVector::from_column_slice(z);
                if z.len() != model.l() {
                    return Err(Error::Dimension(format!(
                        "regulated reference has length {}, c_o has {} rows",
                        z.len(),
                        model.l()
                    )));
                }
                let r = linalg::pinv(model.c_o()) * &z;
                let miss = (model.c_o() * &r - &z).amax();
                if miss > 1e-9 * (1.0 + z.amax()) {
                    return Err(Error::Domain(format!(
                        "regulated reference is not attainable by any state (residual {miss:.3e})"
                    )));
                }
                r
            }
        };
        let cost = CostSpec::new(q, r, p_terminal, reference)?;
        cost.check_psd()?;
        Ok(cost)
    }

    pub fn resolve(&self) -> mdr_core::Result<Setup> {
        if !safe_name(&self.name) {
            return Err(Error::Domain(format!(
                "scenario name {:?} must be non-empty and use only letters, digits, '_' or '-'",
                self.name
            )));
        }
        if self.steps == 0 {
            return Err(Error::Domain("steps must be at least 1".into()));
        }
        if self.controllers.is_empty() {
            return Err(Error::Domain("no controllers configured".into()));
        }
        for (i, c) in self.controllers.iter().enumerate() {
            if !safe_name(&c.label) {
                return Err(Error::Domain(format!(
                    "controller label {:?} must be non-empty and use only letters, digits, '_' or '-'",
                    c.label
                )));
            }
            if self.controllers[..i].iter().any(|o| o.label == c.label) {
                return Err(Error::Domain(format!("duplicate controller label {:?}", c.label)));
            }
        }
        if !(self.settling_band > 0.0) || !self.settling_band.is_finite() {
            return Err(Error::Domain(format!("settling band must be positive, got {}", self.settling_band)));
        }

        let model = self.resolve_model()?;
        let cost = self.resolve_cost(&model)?;
        let x0 = DVector::from_column_slice(&self.x0);
        if x0.len() != model.n() {
            return Err(Error::Dimension(format!("x0 has length {}, expected {}", x0.len(), model.n())));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("x0 has non-finite entries".into()));
        }
        let disturbance = self
            .disturbance
            .clone()
            .unwrap_or_else(|| DisturbanceProfile::zero(model.disturbance_dim()));
        disturbance.check()?;
        if disturbance.dim() != model.disturbance_dim() {
            return Err(Error::Dimension(format!(
                "disturbance has dimension {}, E has {} columns",
                disturbance.dim(),
                model.disturbance_dim()
            )));
        }
        let onset = disturbance.start_step();
        Ok(Setup {
            model,
            cost,
            x0,
            steps: self.steps,
            disturbance,
            onset,
        })
    }

    pub fn wants(&self, kind: OutputKind) -> bool {
        self.outputs.contains(&kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "toy",
        "system": {"kind": "discrete", "a": [[1.0]], "b": [[1.0]], "e": [[1.0]], "c_o": [[1.0]]},
        "cost": {"r": [[1.0]]},
        "x0": [1.0],
        "steps": 5,
        "controllers": [{"label": "opt", "controller": {"kind": "finite_horizon"}}]
    }"#;

    #[test]
    fn minimal_scenario_fills_defaults() {
        let sc = Scenario::parse(MINIMAL).unwrap();
        assert_eq!(sc.outputs.len(), 3);
        assert_eq!(sc.settling_band, DEFAULT_SETTLING_BAND);
        let setup = sc.resolve().unwrap();
        assert_eq!(setup.cost.q()[(0, 0)], 1.0);
        assert_eq!(setup.cost.p_terminal()[(0, 0)], 0.0);
        assert_eq!(setup.disturbance.sample(3)[0], 0.0);
        assert_eq!(setup.onset, 0);
    }

    #[test]
    fn unknown_fields_rejected_with_position() {
        let text = MINIMAL.replace("\"steps\": 5", "\"steps\": 5, \"stepz\": 4");
        let err = Scenario::parse(&text).unwrap_err();
        assert!(err.to_string().contains("stepz"));
        assert_eq!(err.line(), 6);
    }

    #[test]
    fn zero_steps_is_a_validation_error() {
        let sc = Scenario::parse(&MINIMAL.replace("\"steps\": 5", "\"steps\": 0")).unwrap();
        let err = sc.resolve().unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn regulated_reference_maps_through_output_map() {
        let text = r#"{
            "name": "two",
            "system": {"kind": "discrete", "a": [[1.0, 0.0], [0.0, 1.0]], "b": [[1.0], [0.0]],
                       "e": [[0.0], [1.0]], "c_o": [[2.0, 0.0]]},
            "cost": {"r": [[1.0, 0.0], [0.0, 1.0]]},
            "x0": [0.0, 0.0],
            "steps": 3,
            "reference": {"regulated": [4.0]},
            "controllers": [{"label": "opt", "controller": {"kind": "finite_horizon"}}]
        }"#;
        let setup = Scenario::parse(text).unwrap().resolve().unwrap();
        assert!((setup.cost.reference()[0] - 2.0).abs() < 1e-15);
        assert_eq!(setup.cost.reference()[1], 0.0);
    }

    #[test]
    fn duplicate_labels_and_bad_names_rejected() {
        let mut sc = Scenario::parse(MINIMAL).unwrap();
        sc.controllers.push(sc.controllers[0].clone());
        assert!(sc.resolve().is_err());
        let mut sc = Scenario::parse(MINIMAL).unwrap();
        sc.name = "../x".into();
        assert!(sc.resolve().is_err());
    }

    #[test]
    fn ragged_matrix_is_a_dimension_error() {
        let sc = Scenario::parse(&MINIMAL.replace("\"a\": [[1.0]]", "\"a\": [[1.0], [1.0, 2.0]]")).unwrap();
        assert!(matches!(sc.resolve(), Err(Error::Dimension(_))));
    }

    #[test]
    fn scenario_round_trips_through_json() {
        let sc = Scenario::parse(MINIMAL).unwrap();
        let again = Scenario::parse(&serde_json::to_string(&sc).unwrap()).unwrap();
        assert_eq!(sc, again);
    }
}
