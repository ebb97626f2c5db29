//! Per-run metrics, CSV trajectories and the SVG overlay.

use std::fmt::Write as _;

use mdr_core::linalg;
use mdr_core::model::{CostSpec, SystemModel};
use mdr_core::sim::{self, Trajectory};
use serde::{Deserialize, Serialize};

use crate::scenario::{Rows, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub scenario: String,
    pub steps: usize,
    pub onset_step: usize,
    pub settling_band: f64,
    pub controllers: Vec<ControllerSummary>,
    /// Matrices actually simulated (after discretisation and defaults).
    pub resolved: ResolvedMatrices,
    /// The scenario file as parsed.
    pub input: Scenario,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedMatrices {
    pub a: Rows,
    pub b: Rows,
    pub e: Rows,
    pub c_o: Rows,
    pub q: Rows,
    pub r: Rows,
    pub p_terminal: Rows,
    pub reference: Vec<f64>,
}

impl ResolvedMatrices {
    pub fn new(model: &SystemModel, cost: &CostSpec) -> Self {
        Self {
            a: linalg::to_rows(model.a()),
            b: linalg::to_rows(model.b()),
            e: linalg::to_rows(model.e()),
            c_o: linalg::to_rows(model.c_o()),
            q: linalg::to_rows(cost.q()),
            r: linalg::to_rows(cost.r()),
            p_terminal: linalg::to_rows(cost.p_terminal()),
            reference: cost.reference().iter().copied().collect(),
        }
    }
}

/// Metrics are absent when the controller failed or the run diverged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSummary {
    pub label: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Stage costs plus terminal term.
    pub final_cost: Option<f64>,
    /// Mean of `|z - c_o r|` over the last tenth of the run.
    pub steady_state_error: Option<f64>,
    /// Largest `|z - c_o r|` from the disturbance onset on.
    pub peak_error: Option<f64>,
    /// First step from the onset on after which the error stays inside the band.
    pub settling_step: Option<usize>,
    pub spectral_radius: Option<f64>,
}

impl ControllerSummary {
    pub fn failed(label: &str, kind: &str, err: &mdr_core::Error) -> Self {
        Self {
            label: label.to_owned(),
            kind: kind.to_owned(),
            error: Some(err.to_string()),
            final_cost: None,
            steady_state_error: None,
            peak_error: None,
            settling_step: None,
            spectral_radius: None,
        }
    }

    pub fn from_trajectory(
        label: &str,
        kind: &str,
        traj: &Trajectory,
        cost: &CostSpec,
        onset: usize,
        band: f64,
        spectral_radius: Option<f64>,
    ) -> Self {
        let err = regulated_error(traj, cost);
        let finite = |v: f64| v.is_finite().then_some(v);
        let diverged = err.iter().any(|v| !v.is_finite());
        Self {
            label: label.to_owned(),
            kind: kind.to_owned(),
            error: diverged.then(|| "trajectory left the finite range".to_owned()),
            final_cost: finite(sim::evaluate_cost(traj, cost)),
            steady_state_error: finite(steady_state_error(&err)),
            peak_error: peak_after(&err, onset).and_then(finite),
            settling_step: if diverged { None } else { settling_step(&err, onset, band) },
            spectral_radius: spectral_radius.and_then(finite),
        }
    }
}

/// `max_i |z_k - c_o r|_i` for `k = 0 ..= steps`.
pub fn regulated_error(traj: &Trajectory, cost: &CostSpec) -> Vec<f64> {
    let target = traj.model().regulated(cost.reference());
    traj.z.iter().map(|z| linalg::max_abs_vec(&(z - &target))).collect()
}

/// Mean over the last tenth of the samples (at least one).
pub fn steady_state_error(err: &[f64]) -> f64 {
    let window = err.len().div_ceil(10).max(1).min(err.len());
    err[err.len() - window..].iter().sum::<f64>() / window as f64
}

pub fn peak_after(err: &[f64], onset: usize) -> Option<f64> {
    err.get(onset..).filter(|s| !s.is_empty()).map(|s| s.iter().copied().fold(0.0, f64::max))
}

/// `None` when the final sample is still outside the band.
pub fn settling_step(err: &[f64], onset: usize, band: f64) -> Option<usize> {
    if onset >= err.len() {
        return None;
    }
    match err[onset..].iter().rposition(|e| !(*e <= band)) {
        None => Some(onset),
        Some(i) if onset + i + 1 < err.len() => Some(onset + i + 1),
        Some(_) => None,
    }
}

fn push_value(out: &mut String, v: f64) {
    // 17 significant digits round-trip every f64
    let _ = write!(out, ",{v:.16e}");
}

/// One row per state sample `k = 0 ..= steps`. The final row has empty input and
/// disturbance fields and its `cost_cum` includes the terminal term.
pub fn trajectory_csv(traj: &Trajectory, cost: &CostSpec) -> String {
    let model = traj.model();
    let (n, m, p, l) = (model.n(), model.m(), model.disturbance_dim(), model.l());
    let mut out = String::from("k");
    for (prefix, count) in [("x", n), ("u", m), ("d", p), ("z", l)] {
        for i in 1..=count {
            let _ = write!(out, ",{prefix}{i}");
        }
    }
    out.push_str(",cost_cum\n");

    let steps = traj.steps();
    for k in 0..=steps {
        let _ = write!(out, "{k}");
        traj.x[k].iter().for_each(|&v| push_value(&mut out, v));
        if k < steps {
            traj.u[k].iter().for_each(|&v| push_value(&mut out, v));
            traj.d[k].iter().for_each(|&v| push_value(&mut out, v));
        } else {
            out.push_str(&",".repeat(m + p));
        }
        traj.z[k].iter().for_each(|&v| push_value(&mut out, v));
        let cum = if k < steps {
            traj.cost_cum[k]
        } else {
            sim::evaluate_cost(traj, cost)
        };
        push_value(&mut out, cum);
        out.push('\n');
    }
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let raw = span / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Line chart of one regulated series per controller against the step index,
/// with a dashed marker at the disturbance onset.
pub fn overlay_svg(title: &str, y_label: &str, series: &[(&str, Vec<f64>)], onset: Option<usize>) -> String {
    let (width, height) = (800.0, 420.0);
    let (left, right, top, bottom) = (80.0, 20.0, 40.0, 60.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;

    let len = series.iter().map(|(_, s)| s.len()).max().unwrap_or(0).max(2);
    let values = series.iter().flat_map(|(_, s)| s.iter().copied()).filter(|v| v.is_finite());
    let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (-1.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = lo.abs().max(1.0) * 0.5;
        lo -= pad;
        hi += pad;
    }
    let pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;

    let x_of = |k: f64| left + plot_w * k / (len - 1) as f64;
    let y_of = |v: f64| top + plot_h * (hi - v.clamp(lo, hi)) / (hi - lo);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        width / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444"/>"##
    );

    for t in nice_ticks(lo, hi, 6) {
        let y = y_of(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{left}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            left + plot_w,
            left - 6.0,
            y + 4.0,
            format_tick(t)
        );
    }
    for t in nice_ticks(0.0, (len - 1) as f64, 8) {
        let x = x_of(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{top}" x2="{x:.2}" y2="{:.2}" stroke="#eee"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            top + plot_h,
            top + plot_h + 16.0,
            t
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">step k</text>"#,
        left + plot_w / 2.0,
        height - 20.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0,
        escape(y_label)
    );

    if let Some(k) = onset.filter(|k| *k < len) {
        let x = x_of(k as f64);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{top}" x2="{x:.2}" y2="{:.2}" stroke="#888" stroke-dasharray="6 4"/><text x="{:.2}" y="{:.2}" fill="#666">onset</text>"##,
            top + plot_h,
            x + 4.0,
            top + 14.0
        );
    }

    for (i, (label, values)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut points = String::new();
        for (k, v) in values.iter().enumerate().filter(|(_, v)| v.is_finite()) {
            let _ = write!(points, "{:.2},{:.2} ", x_of(k as f64), y_of(*v));
        }
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.trim_end()
        );
        let ly = top + 16.0 + 16.0 * i as f64;
        let lx = left + plot_w - 170.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{ly:.2}">{}</text>"#,
            ly - 4.0,
            lx + 24.0,
            ly - 4.0,
            lx + 30.0,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e-3 && v.abs() < 1e4 {
        let s = format!("{v:.6}");
        s.trim_end_matches('0').trim_end_matches('.').to_owned()
    } else {
        format!("{v:.2e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settling_rules() {
        let err = [5.0, 0.0, 2.0, 0.5, 0.1, 0.0];
        assert_eq!(settling_step(&err, 0, 1.0), Some(3));
        assert_eq!(settling_step(&err, 4, 1.0), Some(4));
        assert_eq!(settling_step(&[0.0, 2.0], 0, 1.0), None);
        assert_eq!(settling_step(&[0.0], 3, 1.0), None);
        assert_eq!(settling_step(&[0.0, f64::NAN, 0.0], 0, 1.0), Some(2));
    }

    #[test]
    fn steady_window_is_last_tenth() {
        let mut err = vec![100.0; 90];
        err.extend([1.0; 10]);
        assert_eq!(steady_state_error(&err), 1.0);
        // 11 samples use a window of 2
        let err: Vec<f64> = (0..11).map(f64::from).collect();
        assert_eq!(steady_state_error(&err), 9.5);
        assert_eq!(steady_state_error(&[3.0]), 3.0);
    }

    #[test]
    fn peak_ignores_pre_onset_samples() {
        assert_eq!(peak_after(&[9.0, 1.0, 2.0], 1), Some(2.0));
        assert_eq!(peak_after(&[9.0], 1), None);
    }

    #[test]
    fn ticks_cover_range() {
        let t = nice_ticks(-0.013, 0.027, 5);
        assert!(t.first().unwrap() >= &-0.013 && t.last().unwrap() <= &0.027);
        assert!(t.len() >= 3);
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let svg = overlay_svg("a<b", "z", &[("one", vec![0.0, 1.0, f64::NAN]), ("two", vec![1.0; 3])], Some(1));
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.contains("stroke-dasharray"));
    }
}
