//! Measured trajectories as CSV: `k,u_m_1..u_m_m,x_m_1..x_m_n`.
//!
//! Row `k` holds `uᵐ(k)` and `xᵐ(k)`; the final row `k = T` leaves the input
//! columns empty. Values are written in shortest round-trip form.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use noisylmi::simkit::MeasuredTrajectory;

use crate::error::{CliError, CliResult};

pub fn header(n: usize, m: usize) -> String {
    let mut cols = vec!["k".to_string()];
    cols.extend((1..=m).map(|i| format!("u_m_{i}")));
    cols.extend((1..=n).map(|i| format!("x_m_{i}")));
    cols.join(",")
}

pub fn write_csv(traj: &MeasuredTrajectory) -> String {
    let (n, m, t) = (traj.n(), traj.m(), traj.horizon());
    let mut out = header(n, m);
    out.push('\n');
    for k in 0..=t {
        let _ = write!(out, "{k}");
        for i in 0..m {
            out.push(',');
            if k < t {
                let _ = write!(out, "{}", traj.u_m[k][i]);
            }
        }
        for i in 0..n {
            let _ = write!(out, ",{}", traj.x_m[k][i]);
        }
        out.push('\n');
    }
    out
}

pub fn parse_csv(text: &str, path: &Path) -> CliResult<MeasuredTrajectory> {
    let err = |line: usize, message: String| CliError::Parse {
        path: path.to_owned(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let cols: Vec<&str> = head.split(',').map(str::trim).collect();
    if cols.first() != Some(&"k") {
        return Err(err(1, "first column must be 'k'".into()));
    }
    let m = cols.iter().filter(|c| c.starts_with("u_m_")).count();
    let n = cols.iter().filter(|c| c.starts_with("x_m_")).count();
    if n == 0 || m == 0 || cols.len() != 1 + m + n || header(n, m) != cols.join(",") {
        return Err(err(1, format!("expected header '{}'", header(n.max(1), m.max(1)))));
    }
    let mut u_m = Vec::new();
    let mut x_m = Vec::new();
    let mut last_input_missing = false;
    for (idx, line) in lines {
        let lineno = idx + 1;
        if last_input_missing {
            return Err(err(lineno, "rows after the final state row".into()));
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 1 + m + n {
            return Err(err(lineno, format!("expected {} fields, found {}", 1 + m + n, fields.len())));
        }
        let k: usize = fields[0]
            .parse()
            .map_err(|_| err(lineno, format!("bad step index '{}'", fields[0])))?;
        if k != x_m.len() {
            return Err(err(lineno, format!("expected k = {}, found {k}", x_m.len())));
        }
        let num = |s: &str| -> CliResult<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(lineno, format!("bad number '{s}'")))
        };
        let u_fields = &fields[1..1 + m];
        if u_fields.iter().all(|s| s.is_empty()) {
            last_input_missing = true;
        } else {
            let u = u_fields.iter().map(|s| num(s)).collect::<CliResult<Vec<f64>>>()?;
            u_m.push(DVector::from_vec(u));
        }
        let x = fields[1 + m..].iter().map(|s| num(s)).collect::<CliResult<Vec<f64>>>()?;
        x_m.push(DVector::from_vec(x));
    }
    if !last_input_missing {
        return Err(err(text.lines().count(), "missing final state row with empty inputs".into()));
    }
    MeasuredTrajectory::from_measurements(u_m, x_m).map_err(|e| err(text.lines().count(), e.to_string()))
}

pub fn load_csv(path: &Path) -> CliResult<MeasuredTrajectory> {
    parse_csv(&crate::error::read_file(path)?, path)
}
