//! Deterministic report files: schema-tagged CSV tables, the fixed-order
//! summary digest, and the FAILED marker.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::carleman::RatioRow;
use crate::error::Result;
use crate::field::Trajectory;
use crate::inverse::{ObservabilityFit, StabilityReport};
use crate::linearization::ConvergenceReport;

/// Render one float in the canonical report format.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.12e}")
}

/// Write a CSV with the schema tag line, a header, and data rows.
pub fn write_csv(
    path: &Path,
    schema: &str,
    header: &str,
    rows: &[Vec<String>],
) -> Result<()> {
    let mut out = format!("# schema={schema} v1\n{header}\n");
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Trajectory samples: one row per (time, node).
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut rows = Vec::new();
    for (j, &t) in traj.times.iter().enumerate() {
        for (i, v) in traj.fields[j].values.iter().enumerate() {
            rows.push(vec![
                fmt_float(t),
                i.to_string(),
                fmt_float(v.re),
                fmt_float(v.im),
            ]);
        }
    }
    write_csv(path, "trajectory", "t,node,re,im", &rows)
}

pub fn write_ratio_csv(path: &Path, rows: &[RatioRow]) -> Result<()> {
    let data: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                fmt_float(r.s),
                fmt_float(r.lambda),
                r.suite_id.clone(),
                fmt_float(r.lhs),
                fmt_float(r.rhs),
                match r.ratio {
                    Some(v) => fmt_float(v),
                    None => "degenerate".to_string(),
                },
            ]
        })
        .collect();
    write_csv(path, "carleman-ratios", "s,lambda,suite_id,lhs,rhs,ratio", &data)
}

pub fn write_convergence_csv(path: &Path, report: &ConvergenceReport) -> Result<()> {
    let rows: Vec<Vec<String>> = report
        .epsilons
        .iter()
        .zip(&report.errors)
        .map(|(&e, &err)| vec![fmt_float(e), fmt_float(err), format!("{:.6}", report.fitted_order)])
        .collect();
    write_csv(path, "convergence", "epsilon,error,fitted_order", &rows)
}

pub fn write_stability_csv(path: &Path, report: &StabilityReport) -> Result<()> {
    let rows: Vec<Vec<String>> = report
        .entries
        .iter()
        .map(|e| {
            vec![
                e.member_id.clone(),
                fmt_float(e.pert_norm),
                fmt_float(e.delta),
                match e.ratio {
                    Some(v) => fmt_float(v),
                    None => "degenerate".to_string(),
                },
                e.pass.to_string(),
            ]
        })
        .collect();
    write_csv(
        path,
        "stability",
        "member_id,pert_norm,delta,ratio,pass",
        &rows,
    )
}

/// Fixed-order human-readable digest. `failed` puts the FAILED marker line
/// first so a summary of a broken run is unambiguous.
pub struct Summary {
    lines: Vec<String>,
    failed: bool,
}

impl Summary {
    pub fn new() -> Self {
        Summary {
            lines: Vec::new(),
            failed: false,
        }
    }

    pub fn push(&mut self, label: &str, value: impl std::fmt::Display) {
        self.lines.push(format!("{label}: {value}"));
    }

    pub fn push_check(&mut self, label: &str, pass: bool) {
        self.lines
            .push(format!("{label}: {}", if pass { "pass" } else { "FAIL" }));
        if !pass {
            self.failed = true;
        }
    }

    pub fn mark_failed(&mut self, why: &str) {
        self.failed = true;
        self.lines.push(format!("error: {why}"));
    }

    pub fn failed(&self) -> bool {
        self.failed
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        if self.failed {
            out.push_str("FAILED\n");
        }
        for l in &self.lines {
            let _ = writeln!(out, "{l}");
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render())?;
        Ok(())
    }
}

impl Default for Summary {
    fn default() -> Self {
        Self::new()
    }
}

pub fn observability_lines(summary: &mut Summary, fit: &ObservabilityFit) {
    summary.push("observability C", fmt_float(fit.c));
    summary.push("observability mu", fmt_float(fit.mu));
    summary.push_check("observability fit", fit.pass);
}

/// Drop a FAILED marker file next to partial outputs.
pub fn write_failed_marker(dir: &Path, why: &str) -> Result<()> {
    fs::write(dir.join("FAILED"), format!("{why}\n"))?;
    Ok(())
}
