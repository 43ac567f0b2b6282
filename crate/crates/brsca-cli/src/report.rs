//! Run reports, trajectory CSV files, and atomic writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use brsca_core::{ObstacleField, Trajectory};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunReport {
    pub scenario_id: String,
    pub solver: String,
    /// Seconds spent inside the solve call only.
    pub wall_time_s: f64,
    pub cost: f64,
    /// Recomputed from the trajectory, never trusted from the solver.
    pub collision_free: bool,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub eps: f64,
    pub status: String,
}

/// Writes via a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, contents: &str) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
        f.write_all(contents.as_bytes())
            .map_err(|e| CliError::io(&tmp, e))?;
        f.sync_all().map_err(|e| CliError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))?;
    Ok(())
}

/// CSV layout: `t,x1..xn,u1..um,h_min`; the final row (t = T) has empty input
/// fields. States are world coordinates; `h_min` is the smallest barrier
/// value across obstacles at that state.
pub fn trajectory_to_csv(traj: &Trajectory, field: &ObstacleField) -> CliResult<String> {
    let n = traj.states[0].len();
    let m = if traj.inputs.is_empty() {
        0
    } else {
        traj.inputs[0].len()
    };
    let mut out = String::new();
    out.push('t');
    for i in 1..=n {
        out.push_str(&format!(",x{i}"));
    }
    for j in 1..=m {
        out.push_str(&format!(",u{j}"));
    }
    out.push_str(",h_min\n");
    for (t, x) in traj.states.iter().enumerate() {
        out.push_str(&t.to_string());
        for v in x.iter() {
            out.push_str(&format!(",{v}"));
        }
        if t < traj.inputs.len() {
            for v in traj.inputs[t].iter() {
                out.push_str(&format!(",{v}"));
            }
        } else {
            for _ in 0..m {
                out.push(',');
            }
        }
        let h_min = if field.is_empty() {
            f64::INFINITY
        } else {
            field.min_h(x)?
        };
        out.push_str(&format!(",{h_min}\n"));
    }
    Ok(out)
}

pub fn trajectory_from_csv(text: &str, n: usize, m: usize) -> CliResult<Trajectory> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::input("empty trajectory file"))?;
    let expected_cols = 1 + n + m + 1;
    if header.split(',').count() != expected_cols {
        return Err(CliError::input(format!(
            "trajectory header has {} columns, expected {expected_cols}",
            header.split(',').count()
        )));
    }
    let mut states = Vec::new();
    let mut inputs = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected_cols {
            return Err(CliError::input(format!(
                "trajectory row {} has {} columns, expected {expected_cols}",
                lineno + 2,
                fields.len()
            )));
        }
        let parse = |s: &str, what: &str| -> CliResult<f64> {
            s.parse::<f64>().map_err(|_| {
                CliError::input(format!("row {}: bad {what} value '{s}'", lineno + 2))
            })
        };
        let mut x = DVector::zeros(n);
        for i in 0..n {
            x[i] = parse(fields[1 + i], "state")?;
        }
        states.push(x);
        let u_fields = &fields[1 + n..1 + n + m];
        if u_fields.iter().all(|s| s.is_empty()) {
            continue; // terminal row
        }
        let mut u = DVector::zeros(m);
        for j in 0..m {
            u[j] = parse(u_fields[j], "input")?;
        }
        inputs.push(u);
    }
    if states.len() != inputs.len() + 1 {
        return Err(CliError::input(format!(
            "trajectory has {} states and {} inputs; expected T+1 states for T inputs",
            states.len(),
            inputs.len()
        )));
    }
    Ok(Trajectory { states, inputs })
}

pub fn read_to_string(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}
