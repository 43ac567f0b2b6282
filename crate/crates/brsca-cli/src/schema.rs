//! On-disk JSON schema for scenarios. Matrices are row-major nested arrays;
//! this layout is an external contract, so the DTOs here are converted
//! explicitly instead of deriving serde on the solver types.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScenarioFile {
    pub system: SystemFile,
    pub cost: CostFile,
    pub obstacles: Vec<ObstacleFile>,
    pub input_constraints: Option<InputFile>,
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workspace: Option<WorkspaceFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type")]
pub enum SystemFile {
    #[serde(rename = "double-integrator-2d")]
    DoubleIntegrator2d { dt: f64 },
    #[serde(rename = "custom")]
    Custom {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        #[serde(skip_serializing_if = "Option::is_none")]
        state_map: Option<Vec<Vec<f64>>>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CostFile {
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub horizon: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type")]
pub enum ObstacleFile {
    #[serde(rename = "ellipse")]
    Ellipse {
        center: Vec<f64>,
        shape: Vec<Vec<f64>>,
        level: f64,
        certificate: Vec<Vec<f64>>,
    },
    #[serde(rename = "composite")]
    Composite {
        members: Vec<MemberFile>,
        certificate: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MemberFile {
    pub center: Vec<f64>,
    pub shape: Vec<Vec<f64>>,
    pub level: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type")]
pub enum InputFile {
    #[serde(rename = "box")]
    Box { limit: f64 },
    #[serde(rename = "affine")]
    Affine { g: Vec<Vec<f64>>, e: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WorkspaceFile {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> CliResult<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(CliError::input(format!("{what}: empty matrix")));
    }
    let ncols = rows[0].len();
    if ncols == 0 {
        return Err(CliError::input(format!("{what}: matrix with zero columns")));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::input(format!("{what}: ragged matrix rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

pub fn vector_from(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

pub fn vector_to(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}
