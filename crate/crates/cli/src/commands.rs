use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use mdr_core::control;
use mdr_core::linalg;
use mdr_core::model::{classify_disturbance, DisturbanceClass};
use mdr_core::riccati::{self, GareOptions, GareSolution};
use mdr_core::sim::{self, Trajectory};
use mdr_core::verify::{self, InstanceBounds};
use mdr_core::DMatrix;

use crate::error::{CliError, CliResult};
use crate::report::{self, ControllerSummary, ResolvedMatrices, RunSummary};
use crate::scenario::{OutputKind, Scenario, Setup};

/// Outcome of one controller within a scenario.
#[derive(Debug)]
pub struct ControllerRun {
    pub label: String,
    pub kind: &'static str,
    pub result: Result<Trajectory, mdr_core::Error>,
    pub spectral_radius: Option<f64>,
}

/// Resolves the scenario and simulates every controller, one thread each.
pub fn simulate_scenario(scenario: &Scenario) -> CliResult<(Setup, Vec<ControllerRun>)> {
    let setup = scenario.resolve().map_err(CliError::from_core)?;
    let runs = std::thread::scope(|scope| {
        let handles: Vec<_> = scenario
            .controllers
            .iter()
            .map(|entry| {
                let setup = &setup;
                scope.spawn(move || {
                    let mut radius = None;
                    let result = control::prepare(&entry.controller, &setup.model, &setup.cost, &setup.disturbance, setup.steps)
                        .and_then(|mut policy| {
                            radius = policy.closed_loop_radius();
                            sim::simulate(&setup.model, &setup.cost, policy.as_mut(), &setup.x0, setup.steps, &setup.disturbance)
                        });
                    ControllerRun {
                        label: entry.label.clone(),
                        kind: entry.controller.kind_name(),
                        result,
                        spectral_radius: radius,
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("controller thread panicked"))
            .collect()
    });
    Ok((setup, runs))
}

pub fn summarize(scenario: &Scenario, setup: &Setup, runs: &[ControllerRun]) -> RunSummary {
    let controllers = runs
        .iter()
        .map(|run| match &run.result {
            Ok(traj) => ControllerSummary::from_trajectory(
                &run.label,
                run.kind,
                traj,
                &setup.cost,
                setup.onset,
                scenario.settling_band,
                run.spectral_radius,
            ),
            Err(err) => ControllerSummary::failed(&run.label, run.kind, err),
        })
        .collect();
    RunSummary {
        scenario: scenario.name.clone(),
        steps: setup.steps,
        onset_step: setup.onset,
        settling_band: scenario.settling_band,
        controllers,
        resolved: ResolvedMatrices::new(&setup.model, &setup.cost),
        input: scenario.clone(),
    }
}

#[derive(Debug)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub files: Vec<PathBuf>,
}

impl RunOutput {
    pub fn failed_controllers(&self) -> Vec<&ControllerSummary> {
        self.summary.controllers.iter().filter(|c| c.error.is_some()).collect()
    }
}

fn write_file(path: PathBuf, contents: &str, files: &mut Vec<PathBuf>) -> CliResult<()> {
    std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
    files.push(path);
    Ok(())
}

/// Simulates the scenario and writes the requested artifacts into `out_dir`.
pub fn run_scenario(scenario: &Scenario, out_dir: &Path) -> CliResult<RunOutput> {
    let (setup, runs) = simulate_scenario(scenario)?;
    let summary = summarize(scenario, &setup, &runs);
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;

    let mut files = Vec::new();
    let name = &scenario.name;
    if scenario.wants(OutputKind::Csv) {
        for run in &runs {
            if let Ok(traj) = &run.result {
                let path = out_dir.join(format!("{name}.{}.csv", run.label));
                write_file(path, &report::trajectory_csv(traj, &setup.cost), &mut files)?;
            }
        }
    }
    if scenario.wants(OutputKind::Svg) {
        let series: Vec<(&str, Vec<f64>)> = runs
            .iter()
            .filter_map(|run| {
                let traj = run.result.as_ref().ok()?;
                Some((run.label.as_str(), traj.z.iter().map(|z| z[0]).collect()))
            })
            .collect();
        let y_label = scenario
            .display
            .get("regulated_label")
            .and_then(|v| v.as_str())
            .unwrap_or("z1");
        let title = scenario.description.as_deref().unwrap_or(name);
        let onset = (setup.onset > 0).then_some(setup.onset);
        let svg = report::overlay_svg(title, y_label, &series, onset);
        write_file(out_dir.join(format!("{name}.svg")), &svg, &mut files)?;
    }
    if scenario.wants(OutputKind::Summary) {
        let json = serde_json::to_string_pretty(&summary).expect("summary serialises");
        write_file(out_dir.join(format!("{name}.summary.json")), &(json + "\n"), &mut files)?;
    }
    Ok(RunOutput { summary, files })
}

pub fn load_summary(path: &Path) -> CliResult<RunSummary> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::parse(path, &e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub source: String,
    pub summary: ControllerSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub scenario: String,
    pub rows: Vec<ComparisonRow>,
}

/// Tabulates every controller of every summary. All summaries must come from the same scenario.
pub fn compare(summaries: &[(String, RunSummary)]) -> CliResult<Comparison> {
    let Some((_, first)) = summaries.first() else {
        return Err(CliError::Mismatch("no summaries given".into()));
    };
    if let Some((src, other)) = summaries.iter().find(|(_, s)| s.scenario != first.scenario) {
        return Err(CliError::Mismatch(format!(
            "{src} is from scenario {:?}, expected {:?}",
            other.scenario, first.scenario
        )));
    }
    let rows = summaries
        .iter()
        .flat_map(|(src, s)| {
            s.controllers.iter().map(move |c| ComparisonRow {
                source: src.clone(),
                summary: c.clone(),
            })
        })
        .collect();
    Ok(Comparison {
        scenario: first.scenario.clone(),
        rows,
    })
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.6e}"))
}

fn opt_step(v: Option<usize>) -> String {
    v.map_or_else(|| "-".into(), |v| v.to_string())
}

const COLUMNS: [&str; 8] = [
    "source",
    "controller",
    "kind",
    "final_cost",
    "steady_state_error",
    "peak_error",
    "settling_step",
    "spectral_radius",
];

impl Comparison {
    fn cells(&self) -> Vec<[String; 8]> {
        self.rows
            .iter()
            .map(|r| {
                let s = &r.summary;
                [
                    r.source.clone(),
                    s.label.clone(),
                    s.kind.clone(),
                    opt_num(s.final_cost),
                    opt_num(s.steady_state_error),
                    opt_num(s.peak_error),
                    opt_step(s.settling_step),
                    opt_num(s.spectral_radius),
                ]
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let cells = self.cells();
        let mut widths = COLUMNS.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = format!("scenario: {}\n", self.scenario);
        let line = |out: &mut String, row: &[&str]| {
            let padded: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            out.push_str(padded.join("  ").trim_end());
            out.push('\n');
        };
        line(&mut out, &COLUMNS);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        line(&mut out, &rule.iter().map(String::as_str).collect::<Vec<_>>());
        for row in &cells {
            line(&mut out, &row.iter().map(String::as_str).collect::<Vec<_>>());
        }
        for r in self.rows.iter().filter(|r| r.summary.error.is_some()) {
            let _ = writeln!(out, "note: {} failed: {}", r.summary.label, r.summary.error.as_deref().unwrap_or(""));
        }
        out
    }

    /// Missing values are written as empty fields.
    pub fn to_csv(&self) -> String {
        let mut out = COLUMNS.join(",");
        out.push('\n');
        for row in self.cells() {
            let fields: Vec<String> = row
                .into_iter()
                .map(|c| if c == "-" { String::new() } else { c })
                .collect();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct GareReport {
    pub scenario: String,
    pub solution: GareSolution,
    pub class: DisturbanceClass,
}

impl GareReport {
    /// Detectable and Schur stable.
    pub fn certified(&self) -> bool {
        self.solution.detectable && self.solution.closed_loop_radius < 1.0
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if !self.solution.detectable {
            w.push("(A, Q^1/2) is not detectable; the stationary solution is not certified".to_owned());
        }
        if !(self.solution.closed_loop_radius < 1.0) {
            w.push(format!(
                "closed loop A - B K has spectral radius {:.6} >= 1; the stationary law does not stabilise the plant",
                self.solution.closed_loop_radius
            ));
        }
        w
    }
}

fn write_matrix(f: &mut fmt::Formatter<'_>, name: &str, m: &DMatrix<f64>) -> fmt::Result {
    writeln!(f, "{name} =")?;
    for row in linalg::to_rows(m) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>24.16e}")).collect();
        writeln!(f, "  [{}]", cells.join(" "))?;
    }
    Ok(())
}

impl fmt::Display for GareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.solution;
        writeln!(f, "scenario: {}", self.scenario)?;
        write_matrix(f, "P", &s.p)?;
        write_matrix(f, "K", &s.k)?;
        writeln!(f, "spectral radius of A - B K: {:.16e}", s.closed_loop_radius)?;
        writeln!(f, "residual: {:.3e} after {} iterations", s.residual, s.iterations)?;
        writeln!(f, "detectable: {}", s.detectable)?;
        let class = match self.class {
            DisturbanceClass::Matched => "matched",
            DisturbanceClass::Mismatched => "mismatched",
        };
        writeln!(f, "disturbance: {class}")?;
        writeln!(f, "certified: {}", if self.certified() { "yes" } else { "no" })?;
        for w in self.warnings() {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

/// Stationary Riccati solution for the scenario's plant and weights.
/// Non-convergence is a solver error; an undetectable or unstable result is reported, not rejected.
pub fn gare_report(scenario: &Scenario) -> CliResult<GareReport> {
    let model = scenario.resolve_model().map_err(CliError::from_core)?;
    let cost = scenario.resolve_cost(&model).map_err(CliError::from_core)?;
    let opts = GareOptions::default();
    let solution = riccati::iterate_gare(&model, &cost, opts.tol, opts.max_iters).map_err(CliError::from_core)?;
    Ok(GareReport {
        scenario: scenario.name.clone(),
        solution,
        class: classify_disturbance(model.b(), model.e()),
    })
}

/// Tolerances of the random-instance checks.
pub const INPUT_TOL: f64 = 1e-8;
pub const COST_TOL: f64 = 1e-8;
pub const RESIDUAL_TOL: f64 = 1e-8;
pub const CLOSED_FORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SelfTestReport {
    pub seed: u64,
    pub instances: usize,
    pub failures: usize,
    pub worst_input: f64,
    pub worst_cost: f64,
    pub worst_residual: f64,
    pub worst_closed_form: f64,
}

impl SelfTestReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

impl fmt::Display for SelfTestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "instances: {} (seed {})", self.instances, self.seed)?;
        writeln!(f, "worst input error:       {:.3e} (tol {INPUT_TOL:.0e})", self.worst_input)?;
        writeln!(f, "worst cost error:        {:.3e} (tol {COST_TOL:.0e})", self.worst_cost)?;
        writeln!(f, "worst costate residual:  {:.3e} (tol {RESIDUAL_TOL:.0e})", self.worst_residual)?;
        writeln!(f, "worst closed-form error: {:.3e} (tol {CLOSED_FORM_TOL:.0e})", self.worst_closed_form)?;
        writeln!(f, "failures: {}", self.failures)
    }
}

/// Cross-checks the optimal controller against the dense oracle on random instances.
pub fn selftest(seed: u64, count: usize) -> CliResult<SelfTestReport> {
    let mut rep = SelfTestReport {
        seed,
        instances: count,
        failures: 0,
        worst_input: 0.0,
        worst_cost: 0.0,
        worst_residual: 0.0,
        worst_closed_form: 0.0,
    };
    for inst in verify::generate_instances(seed, count, &InstanceBounds::default()) {
        let Ok(r) = verify::check_instance(&inst) else {
            rep.failures += 1;
            continue;
        };
        let cost = r.cost_error.max(r.predicted_cost_error);
        let residual = r.stationarity.max(r.costate_link);
        rep.worst_input = rep.worst_input.max(r.input_error);
        rep.worst_cost = rep.worst_cost.max(cost);
        rep.worst_residual = rep.worst_residual.max(residual);
        rep.worst_closed_form = rep.worst_closed_form.max(r.closed_form_error);
        let ok = r.input_error <= INPUT_TOL
            && cost <= COST_TOL
            && residual <= RESIDUAL_TOL
            && r.closed_form_error <= CLOSED_FORM_TOL;
        if !ok {
            rep.failures += 1;
        }
    }
    Ok(rep)
}
