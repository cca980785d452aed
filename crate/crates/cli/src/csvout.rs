//! Deterministic CSV emission: header row, uniform time sampling from dense
//! output, `{:.12e}` formatting, LF line endings, no trailing whitespace.

use std::io::Write;
use std::path::Path;

use geoflow_core::{GeodesicTrajectory, JacobiTrajectory};

fn format_row(values: &[f64]) -> String {
    let mut row = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            row.push(',');
        }
        row.push_str(&format!("{v:.12e}"));
    }
    row
}

fn header(n: usize, jacobi: bool) -> String {
    let mut cols = vec!["t".to_string()];
    for i in 1..=n {
        cols.push(format!("q{i}"));
    }
    for i in 1..=n {
        cols.push(format!("dq{i}"));
    }
    if jacobi {
        for i in 1..=n {
            cols.push(format!("u{i}"));
        }
        for i in 1..=n {
            cols.push(format!("w{i}"));
        }
    }
    cols.join(",")
}

fn sample_times(span: (f64, f64), samples: usize) -> impl Iterator<Item = f64> {
    let (a, b) = span;
    let steps = (samples - 1) as f64;
    (0..samples).map(move |s| a + (b - a) * s as f64 / steps)
}

/// Write a geodesic trajectory as `t,q1..qn,dq1..dqn`.
pub fn emit_geodesic_csv(
    traj: &GeodesicTrajectory,
    samples: usize,
    path: &Path,
) -> std::io::Result<()> {
    let n = traj.dim();
    let mut out = Vec::new();
    writeln!(out, "{}", header(n, false))?;
    for t in sample_times(traj.span(), samples) {
        let (pos, vel) = traj.sample(t);
        let mut row = Vec::with_capacity(2 * n + 1);
        row.push(t);
        row.extend_from_slice(&pos[1..]);
        row.extend_from_slice(&vel[1..]);
        writeln!(out, "{}", format_row(&row))?;
    }
    std::fs::write(path, out)
}

/// Write a geodesic with its deviation field as
/// `t,q1..qn,dq1..dqn,u1..un,w1..wn`.
pub fn emit_jacobi_csv(
    geo: &GeodesicTrajectory,
    jac: &JacobiTrajectory,
    samples: usize,
    path: &Path,
) -> std::io::Result<()> {
    let n = geo.dim();
    let mut out = Vec::new();
    writeln!(out, "{}", header(n, true))?;
    for t in sample_times(geo.span(), samples) {
        let (pos, vel) = geo.sample(t);
        let (u, w) = jac.sample(t);
        let mut row = Vec::with_capacity(4 * n + 1);
        row.push(t);
        row.extend_from_slice(&pos[1..]);
        row.extend_from_slice(&vel[1..]);
        row.extend_from_slice(&u[1..]);
        row.extend_from_slice(&w[1..]);
        writeln!(out, "{}", format_row(&row))?;
    }
    std::fs::write(path, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_use_exponent_format() {
        assert_eq!(format_row(&[1.0, 2.0]), "1.000000000000e0,2.000000000000e0");
        assert_eq!(format_row(&[-0.5]), "-5.000000000000e-1");
        assert_eq!(format_row(&[0.0]), "0.000000000000e0");
    }

    #[test]
    fn headers_enumerate_columns() {
        assert_eq!(header(2, false), "t,q1,q2,dq1,dq2");
        assert_eq!(header(1, true), "t,q1,dq1,u1,w1");
    }
}
