//! Run reports: one entry per requested task, a file manifest and an exit
//! status, rendered as deterministic plain text.

use std::fmt::Write as _;

/// Outcome of one task.
#[derive(Debug, Clone)]
pub struct TaskReport {
    pub task: String,
    pub ok: bool,
    pub lines: Vec<String>,
}

/// Everything a scenario run produced.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub scenario: String,
    pub dimension: usize,
    pub system: String,
    pub tasks: Vec<TaskReport>,
    pub files: Vec<String>,
}

impl RunReport {
    pub fn all_ok(&self) -> bool {
        self.tasks.iter().all(|t| t.ok)
    }

    /// Render the plain-text report. Free of timestamps and absolute paths,
    /// so identical runs produce identical bytes.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scenario: {}", self.scenario);
        let _ = writeln!(out, "dimension: {}", self.dimension);
        let _ = writeln!(out, "system: {}", self.system);
        for task in &self.tasks {
            let _ = writeln!(out);
            let _ = writeln!(out, "[task {}]", task.task);
            let _ = writeln!(out, "status: {}", if task.ok { "ok" } else { "failed" });
            for line in &task.lines {
                let _ = writeln!(out, "{line}");
            }
        }
        let _ = writeln!(out);
        if self.files.is_empty() {
            let _ = writeln!(out, "files: none");
        } else {
            let _ = writeln!(out, "files: {}", self.files.join(", "));
        }
        let _ = writeln!(
            out,
            "status: {}",
            if self.all_ok() { "ok" } else { "failed" }
        );
        out
    }
}

/// Fixed-width scientific rendering used everywhere in reports.
pub fn num(v: f64) -> String {
    format!("{v:.6e}")
}

pub fn vec_nums(vals: &[f64]) -> String {
    let parts: Vec<String> = vals.iter().map(|v| num(*v)).collect();
    format!("({})", parts.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_renders_deterministically() {
        let report = RunReport {
            scenario: "a.toml".into(),
            dimension: 1,
            system: "quadratic".into(),
            tasks: vec![TaskReport {
                task: "geodesic".into(),
                ok: true,
                lines: vec![format!("final q: {}", vec_nums(&[0.5]))],
            }],
            files: vec!["geodesic.csv".into()],
        };
        let a = report.render();
        let b = report.render();
        assert_eq!(a, b);
        assert!(a.contains("status: ok"));
        assert!(a.contains("final q: (5.000000e-1)"));
    }
}
