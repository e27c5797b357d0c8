//! Output writers: certification JSON/CSV, validation CSV, fault metadata and
//! the two SVG figures. Every writer is a pure function of its inputs, so two
//! runs with the same configuration produce identical bytes.

use std::fmt::Write as _;

use nalgebra::Vector3;
use serde_json::{json, Value};

use crate::fault::FaultMask;
use crate::linsys::LinearSystem;
use crate::resilience::ResilienceReport;
use crate::validate::{ValidationSummary, ValidationTable};

pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Config echo stamped on every output file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Provenance {
    pub command: String,
    pub seed: u64,
    /// Ordered `(key, value)` pairs, echoed verbatim.
    pub config: Vec<(String, String)>,
}

impl Provenance {
    pub fn new(command: impl Into<String>, seed: u64) -> Self {
        Self {
            command: command.into(),
            seed,
            config: Vec::new(),
        }
    }

    pub fn with(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.config.push((key.into(), value.to_string()));
        self
    }

    /// One line per entry, without comment markers.
    pub fn lines(&self) -> Vec<String> {
        let mut out = vec![
            format!("tool: {TOOL_NAME} {TOOL_VERSION}"),
            format!("command: {}", self.command),
            format!("seed: {}", self.seed),
        ];
        out.extend(self.config.iter().map(|(k, v)| format!("{k}: {v}")));
        out
    }

    pub fn to_json(&self) -> Value {
        let config: serde_json::Map<String, Value> = self
            .config
            .iter()
            .map(|(k, v)| (k.clone(), Value::String(v.clone())))
            .collect();
        json!({
            "tool": TOOL_NAME,
            "version": TOOL_VERSION,
            "command": self.command,
            "seed": self.seed,
            "config": config,
        })
    }

    fn csv_header(&self, out: &mut String) {
        for line in self.lines() {
            let _ = writeln!(out, "# {line}");
        }
    }

    fn xml_comment(&self, out: &mut String) {
        out.push_str("<!--\n");
        for line in self.lines() {
            // "--" is not allowed inside XML comments.
            let _ = writeln!(out, "  {}", line.replace("--", "- -"));
        }
        out.push_str("-->\n");
    }
}

fn json_f64(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

/// Per-pose JSON object. `components` lists each component's state at the
/// last evaluated `k` (the breaking `k`, or `n_sectors` if none broke).
pub fn pose_json(report: &ResilienceReport) -> Value {
    let mut components = Vec::new();
    if let Some(last_k) = report.steps.last().map(|s| s.k) {
        for step in report.steps.iter().filter(|s| s.k == last_k) {
            components.push(json!({
                "name": step.component.name(),
                "k": step.k,
                "worst_sectors": step.worst_sectors,
                "p_hazard": json_f64(step.p_hazard),
                "mu": json_f64(step.mu),
                "sigma": json_f64(step.sigma),
            }));
        }
    }
    json!({
        "pose_id": report.pose_id,
        "R": json_f64(report.resilience),
        "breaking_k": report.breaking_k,
        "degenerate": report.degenerate,
        "components": components,
        "point_fraction": json_f64(report.point_fraction),
        "condition": report.condition.map(json_f64),
        "monotonicity_violation": report.monotonicity_violation,
        "error": report.error,
    })
}

pub fn certify_json(reports: &[ResilienceReport], provenance: &Provenance) -> String {
    let doc = json!({
        "provenance": provenance.to_json(),
        "poses": reports.iter().map(pose_json).collect::<Vec<_>>(),
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("json values always serialize");
    s.push('\n');
    s
}

pub fn certify_csv(reports: &[ResilienceReport], provenance: &Provenance) -> String {
    let mut out = String::new();
    provenance.csv_header(&mut out);
    out.push_str("pose_id,x,y,yaw,R,breaking_k,degenerate\n");
    for r in reports {
        let (yaw, _, _) = r.pose.ypr();
        let k = r.breaking_k.map(|k| k.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.pose_id, r.pose.translation.x, r.pose.translation.y, yaw, r.resilience, k, r.degenerate
        );
    }
    out
}

pub fn validation_csv(table: &ValidationTable, provenance: &Provenance) -> String {
    let mut out = String::new();
    provenance.csv_header(&mut out);
    for (trial, d, reason) in &table.skipped {
        let _ = writeln!(out, "# skipped trial {trial} d={d}: {reason}");
    }
    out.push_str("trial,component,d,theory_error,icp_error,signed_diff,icp_converged\n");
    for r in &table.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.trial,
            r.component.name(),
            r.d,
            r.theory_error,
            r.icp_error,
            r.signed_diff,
            r.icp_converged
        );
    }
    out
}

/// `row,f,nx,ny,nz` with sensor-frame normals of the faulted rows.
pub fn fault_csv(system: &LinearSystem, mask: &FaultMask, f: &[f64], provenance: &Provenance) -> String {
    let mut out = String::new();
    provenance.csv_header(&mut out);
    out.push_str("row,f,nx,ny,nz\n");
    for (&row, fk) in mask.rows().iter().zip(f) {
        let n: Vector3<f64> = system.normals[row];
        let _ = writeln!(out, "{row},{fk},{},{},{}", n.x, n.y, n.z);
    }
    out
}

fn svg_open(out: &mut String, width: f64, height: f64, provenance: &Provenance) {
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    provenance.xml_comment(out);
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    let _ = writeln!(out, "<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>");
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// R versus pose index. Degenerate poses are drawn as red crosses at zero.
pub fn resilience_strip_svg(reports: &[ResilienceReport], hazard_threshold: f64, provenance: &Provenance) -> String {
    let (w, h) = (720.0, 300.0);
    let (left, right, top, bottom) = (50.0, 20.0, 40.0, 40.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let n = reports.len().max(1);
    let x_of = |i: usize| {
        left + if n == 1 {
            pw / 2.0
        } else {
            pw * i as f64 / (n - 1) as f64
        }
    };
    let y_of = |r: f64| top + ph * (1.0 - r.clamp(0.0, 1.0));

    let mut out = String::new();
    svg_open(&mut out, w, h, provenance);
    let _ = writeln!(
        out,
        "<text x=\"{left}\" y=\"16\" font-size=\"13\">Degree of resilience per pose</text>"
    );
    let _ = writeln!(
        out,
        "<text x=\"{left}\" y=\"30\" class=\"threshold\">hazard threshold 1 - p_safe = {hazard_threshold}</text>"
    );
    let _ = writeln!(
        out,
        "<rect x=\"{left}\" y=\"{top}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#888\"/>"
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = y_of(tick);
        let _ = writeln!(
            out,
            "<line x1=\"{left}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#ddd\"/><text x=\"{}\" y=\"{}\" text-anchor=\"end\">{tick}</text>",
            left + pw,
            left - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">pose index</text>",
        left + pw / 2.0,
        h - 8.0
    );

    let pts: Vec<String> = reports
        .iter()
        .enumerate()
        .map(|(i, r)| format!("{},{}", x_of(i), y_of(r.resilience)))
        .collect();
    if pts.len() > 1 {
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f77b4\"/>",
            pts.join(" ")
        );
    }
    out.push_str("<g class=\"poses\">\n");
    for (i, r) in reports.iter().enumerate() {
        let (x, y) = (x_of(i), y_of(r.resilience));
        let id = escape(&r.pose_id);
        if r.degenerate || r.error.is_some() {
            let _ = writeln!(
                out,
                "<path d=\"M{} {} L{} {} M{} {} L{} {}\" stroke=\"#d62728\" data-pose=\"{id}\" data-r=\"{}\"/>",
                x - 3.0,
                y - 3.0,
                x + 3.0,
                y + 3.0,
                x - 3.0,
                y + 3.0,
                x + 3.0,
                y - 3.0,
                r.resilience
            );
        } else {
            let _ = writeln!(
                out,
                "<circle cx=\"{x}\" cy=\"{y}\" r=\"3\" fill=\"#1f77b4\" data-pose=\"{id}\" data-r=\"{}\"/>",
                r.resilience
            );
        }
    }
    out.push_str("</g>\n</svg>\n");
    out
}

/// Gaussian kernel density on a fixed grid, Silverman bandwidth.
fn density(sorted: &[f64], grid: &[f64]) -> Vec<f64> {
    let n = sorted.len() as f64;
    if sorted.len() < 2 {
        return vec![0.0; grid.len()];
    }
    let mean = sorted.iter().sum::<f64>() / n;
    let sd = (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let bw = 1.06 * sd * n.powf(-0.2);
    if !(bw > 0.0) {
        return vec![0.0; grid.len()];
    }
    grid.iter()
        .map(|g| {
            sorted
                .iter()
                .map(|v| (-0.5 * ((g - v) / bw).powi(2)).exp())
                .sum::<f64>()
                / (n * bw)
        })
        .collect()
}

/// Violin-style summary of signed differences: one group per
/// (component, d), with density outline, inner 50 % box, median tick and the
/// false-negative ratio.
pub fn validation_svg(table: &ValidationTable, provenance: &Provenance) -> String {
    let summaries: Vec<ValidationSummary> = table.summaries();
    let groups = summaries.len().max(1);
    let slot = 90.0;
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 60.0);
    let ph = 260.0;
    let w = left + right + slot * groups as f64;
    let h = top + ph + bottom;

    let mut lo = 0.0f64;
    let mut hi = 0.0f64;
    for s in &summaries {
        if s.count > 0 {
            lo = lo.min(s.min);
            hi = hi.max(s.max);
        }
    }
    if hi - lo <= 0.0 {
        hi = lo + 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let y_of = |v: f64| top + ph * (hi - v) / (hi - lo);

    let mut out = String::new();
    svg_open(&mut out, w, h, provenance);
    let _ = writeln!(
        out,
        "<text x=\"{left}\" y=\"18\" font-size=\"13\">Signed difference theory - ICP (m)</text>"
    );
    let _ = writeln!(
        out,
        "<rect x=\"{left}\" y=\"{top}\" width=\"{}\" height=\"{ph}\" fill=\"none\" stroke=\"#888\"/>",
        w - left - right
    );
    let y0 = y_of(0.0);
    let _ = writeln!(
        out,
        "<line x1=\"{left}\" y1=\"{y0}\" x2=\"{}\" y2=\"{y0}\" stroke=\"#444\" stroke-dasharray=\"4 3\"/>",
        w - right
    );
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.4}</text>",
            left - 6.0,
            y_of(v) + 4.0,
            v
        );
    }

    for (gi, s) in summaries.iter().enumerate() {
        let cx = left + slot * (gi as f64 + 0.5);
        let mut diffs: Vec<f64> = table
            .rows
            .iter()
            .filter(|r| r.component == s.component && r.d == s.d && r.icp_converged)
            .map(|r| r.signed_diff)
            .collect();
        diffs.sort_by(f64::total_cmp);
        let _ = writeln!(
            out,
            "<g class=\"group\" data-component=\"{}\" data-d=\"{}\" data-median=\"{}\" data-fn=\"{}\">",
            s.component.name(),
            s.d,
            s.median,
            s.false_negative_ratio
        );
        if s.count > 0 {
            let grid: Vec<f64> = (0..=40).map(|i| s.min + (s.max - s.min) * i as f64 / 40.0).collect();
            let dens = density(&diffs, &grid);
            let peak = dens.iter().cloned().fold(0.0f64, f64::max);
            if peak > 0.0 {
                let half = 0.4 * slot;
                let mut path = String::new();
                for (g, dv) in grid.iter().zip(&dens) {
                    let cmd = if path.is_empty() { 'M' } else { 'L' };
                    let _ = write!(path, "{cmd}{:.3} {:.3} ", cx + half * dv / peak, y_of(*g));
                }
                for (g, dv) in grid.iter().zip(&dens).rev() {
                    let _ = write!(path, "L{:.3} {:.3} ", cx - half * dv / peak, y_of(*g));
                }
                path.push('Z');
                let _ = writeln!(out, "<path d=\"{path}\" fill=\"#aec7e8\" stroke=\"#1f77b4\"/>");
            }
            let _ = writeln!(
                out,
                "<rect x=\"{}\" y=\"{}\" width=\"8\" height=\"{}\" fill=\"#333\"/>",
                cx - 4.0,
                y_of(s.q75),
                (y_of(s.q25) - y_of(s.q75)).max(0.5)
            );
            let _ = writeln!(
                out,
                "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"white\" stroke-width=\"2\"/>",
                cx - 4.0,
                y_of(s.median),
                cx + 4.0,
                y_of(s.median)
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{cx}\" y=\"{}\" text-anchor=\"middle\">{} d={}</text>",
            top + ph + 16.0,
            s.component.name(),
            s.d
        );
        let _ = writeln!(
            out,
            "<text x=\"{cx}\" y=\"{}\" text-anchor=\"middle\">FN {:.1}%</text>",
            top + ph + 32.0,
            100.0 * s.false_negative_ratio
        );
        if s.icp_failures > 0 {
            let _ = writeln!(
                out,
                "<text x=\"{cx}\" y=\"{}\" text-anchor=\"middle\" fill=\"#d62728\">{} failed</text>",
                top + ph + 48.0,
                s.icp_failures
            );
        }
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fault::Component;
    use crate::geometry::Pose;
    use crate::validate::ValidationRow;

    fn report(id: &str, r: f64, degenerate: bool) -> ResilienceReport {
        ResilienceReport {
            pose_id: id.into(),
            pose: Pose::from_xyz_ypr(1.0, 2.0, 0.0, 0.5, 0.0, 0.0),
            resilience: r,
            breaking_k: if degenerate { None } else { Some(3) },
            degenerate,
            condition: None,
            point_fraction: 0.1,
            steps: Vec::new(),
            monotonicity_violation: false,
            error: None,
        }
    }

    #[test]
    fn csv_has_provenance_then_header() {
        let prov = Provenance::new("certify", 7).with("map", "--odd--name");
        let csv = certify_csv(&[report("a", 0.2, false), report("b", 0.0, true)], &prov);
        let lines: Vec<&str> = csv.lines().collect();
        assert!(lines[0].starts_with("# tool: "));
        assert_eq!(lines[2], "# seed: 7");
        assert_eq!(lines[4], "pose_id,x,y,yaw,R,breaking_k,degenerate");
        assert_eq!(lines[5], "a,1,2,0.5,0.2,3,false");
        assert_eq!(lines[6], "b,1,2,0.5,0,,true");
    }

    #[test]
    fn json_shape() {
        let prov = Provenance::new("certify", 1);
        let doc: Value = serde_json::from_str(&certify_json(&[report("p0", 0.1, false)], &prov)).unwrap();
        assert_eq!(doc["poses"][0]["pose_id"], "p0");
        assert_eq!(doc["poses"][0]["R"], 0.1);
        assert_eq!(doc["poses"][0]["breaking_k"], 3);
        assert!(doc["poses"][0]["components"].as_array().unwrap().is_empty());
        assert_eq!(doc["provenance"]["seed"], 1);
    }

    #[test]
    fn svg_comment_never_contains_double_dash() {
        let prov = Provenance::new("certify", 0).with("args", "--map x --d 0.3");
        let svg = resilience_strip_svg(&[report("a", 0.5, false)], 0.01, &prov);
        let body = &svg[svg.find("<!--").unwrap() + 4..svg.find("-->").unwrap()];
        assert!(!body.contains("--"));
    }

    #[test]
    fn validation_svg_handles_empty_and_single_groups() {
        let prov = Provenance::new("validate", 0);
        let empty = ValidationTable {
            rows: vec![],
            skipped: vec![],
        };
        assert!(validation_svg(&empty, &prov).ends_with("</svg>\n"));
        let one = ValidationTable {
            rows: vec![ValidationRow {
                trial: 0,
                component: Component::X,
                d: 0.3,
                theory_error: 0.1,
                icp_error: 0.1,
                signed_diff: 0.0,
                icp_converged: true,
            }],
            skipped: vec![],
        };
        assert!(validation_svg(&one, &prov).contains("data-median=\"0\""));
    }
}
