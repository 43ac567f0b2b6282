//! In-memory scenarios and their compilation into solver problems.
//!
//! Solving happens in goal-shifted coordinates (the goal is the regulator
//! origin); trajectories are shifted back to world coordinates for output.

use nalgebra::{DMatrix, DVector};

use brsca_core::{
    CostSpec, Ellipse, InputConstraints, LtiSystem, ObstacleField, ObstacleKind,
    SemiConvexObstacle, Trajectory, WorkspaceBounds,
};

use crate::error::{CliError, CliResult};
use crate::schema::{
    matrix_to_rows, rows_to_matrix, vector_from, vector_to, CostFile, InputFile, MemberFile,
    ObstacleFile, ScenarioFile, SystemFile, WorkspaceFile,
};

#[derive(Debug, Clone, PartialEq)]
pub enum SystemModel {
    DoubleIntegrator2d { dt: f64 },
    Custom {
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        state_map: Option<DMatrix<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InputModel {
    Unconstrained,
    Box { limit: f64 },
    Affine { g: DMatrix<f64>, e: DVector<f64> },
}

/// A complete scenario in world coordinates. `start` and `goal` live in the
/// barrier (workspace) space for the built-in template and in the full state
/// space for custom systems.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub system: SystemModel,
    pub cost: CostModel,
    pub obstacles: Vec<SemiConvexObstacle>,
    pub input: InputModel,
    pub start: DVector<f64>,
    pub goal: DVector<f64>,
    pub seed: u64,
    pub coverage_rate: Option<f64>,
    pub workspace: WorkspaceBounds,
}

/// A scenario compiled for solving: everything shifted so the goal is the
/// origin, plus an unshifted field for world-coordinate reporting.
#[derive(Debug, Clone)]
pub struct Problem {
    pub sys: LtiSystem,
    pub cost: CostSpec,
    pub field: ObstacleField,
    pub input: InputConstraints,
    pub x0: DVector<f64>,
    /// Full-state goal; add it to shifted states to get world coordinates.
    pub goal_state: DVector<f64>,
    /// Obstacles in world coordinates with the same state map.
    pub world_field: ObstacleField,
}

impl Problem {
    /// Shifted solver trajectory -> world coordinates.
    pub fn to_world(&self, traj: &Trajectory) -> Trajectory {
        Trajectory {
            states: traj.states.iter().map(|x| x + &self.goal_state).collect(),
            inputs: traj.inputs.clone(),
        }
    }

    /// World-coordinate trajectory -> shifted solver coordinates.
    pub fn to_shifted(&self, traj: &Trajectory) -> Trajectory {
        Trajectory {
            states: traj.states.iter().map(|x| x - &self.goal_state).collect(),
            inputs: traj.inputs.clone(),
        }
    }
}

fn shift_obstacle(obs: &SemiConvexObstacle, offset: &DVector<f64>) -> SemiConvexObstacle {
    let kind = match obs.kind() {
        ObstacleKind::Ellipse(e) => ObstacleKind::Ellipse(
            Ellipse::new(&e.center - offset, e.shape.clone(), e.level).expect("shifted ellipse"),
        ),
        ObstacleKind::Composite(ms) => ObstacleKind::Composite(
            ms.iter()
                .map(|e| {
                    Ellipse::new(&e.center - offset, e.shape.clone(), e.level)
                        .expect("shifted ellipse")
                })
                .collect(),
        ),
    };
    SemiConvexObstacle::new(kind, obs.certificate().clone(), obs.id()).expect("shifted obstacle")
}

impl Scenario {
    /// Compiles the scenario into a solver problem, validating all invariants.
    pub fn build(&self) -> CliResult<Problem> {
        let (a, b, state_map) = match &self.system {
            SystemModel::DoubleIntegrator2d { dt } => {
                if *dt <= 0.0 {
                    return Err(CliError::input("timestep dt must be positive"));
                }
                let dt = *dt;
                let a = DMatrix::from_row_slice(
                    4,
                    4,
                    &[
                        1.0, 0.0, dt, 0.0, //
                        0.0, 1.0, 0.0, dt, //
                        0.0, 0.0, 1.0, 0.0, //
                        0.0, 0.0, 0.0, 1.0,
                    ],
                );
                let b = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 0.0, dt, 0.0, 0.0, dt]);
                let z = DMatrix::from_row_slice(
                    2,
                    4,
                    &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
                );
                (a, b, Some(z))
            }
            SystemModel::Custom { a, b, state_map } => (a.clone(), b.clone(), state_map.clone()),
        };

        let sys = LtiSystem::new(a.clone(), b)?;
        let n = sys.state_dim();

        // lift start/goal to full states for the template
        let (x0_world, goal_state) = match &self.system {
            SystemModel::DoubleIntegrator2d { .. } => {
                if self.start.len() != 2 || self.goal.len() != 2 {
                    return Err(CliError::input(
                        "template scenarios use planar start/goal points",
                    ));
                }
                let lift = |p: &DVector<f64>| {
                    DVector::from_vec(vec![p[0], p[1], 0.0, 0.0])
                };
                (lift(&self.start), lift(&self.goal))
            }
            SystemModel::Custom { .. } => {
                if self.start.len() != n || self.goal.len() != n {
                    return Err(CliError::input(format!(
                        "custom scenarios use full-state start/goal of length {n}"
                    )));
                }
                (self.start.clone(), self.goal.clone())
            }
        };

        // the goal must be an equilibrium of the drift dynamics
        let drift = (&a * &goal_state - &goal_state).amax();
        if drift > 1e-9 {
            return Err(CliError::input(format!(
                "goal is not an equilibrium: ||(A - I) goal|| = {drift:.3e}"
            )));
        }

        let x0 = &x0_world - &goal_state;
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(CliError::input("goal-shifted start is not finite"));
        }

        let cost = CostSpec::new(
            self.cost.q.clone(),
            self.cost.r.clone(),
            self.cost.p.clone(),
            self.cost.horizon,
        )?;
        cost.validate_against(&sys)?;

        let input = match &self.input {
            InputModel::Unconstrained => InputConstraints::none(self.cost.horizon, sys.input_dim()),
            InputModel::Box { limit } => {
                InputConstraints::symmetric_box(*limit, sys.input_dim(), self.cost.horizon)?
            }
            InputModel::Affine { g, e } => {
                InputConstraints::uniform(g.clone(), e.clone(), self.cost.horizon)?
            }
        };

        // the barrier-space offset is the goal seen through the state map
        let goal_ws = match &state_map {
            Some(z) => z * &goal_state,
            None => goal_state.clone(),
        };

        let world_field = ObstacleField::new(
            self.obstacles.clone(),
            self.workspace.clone(),
            state_map.clone(),
        )?;
        let shifted_obstacles: Vec<SemiConvexObstacle> = self
            .obstacles
            .iter()
            .map(|o| shift_obstacle(o, &goal_ws))
            .collect();
        let shifted_bounds = WorkspaceBounds::new(
            &self.workspace.lo - &goal_ws,
            &self.workspace.hi - &goal_ws,
        )?;
        let field = ObstacleField::new(shifted_obstacles, shifted_bounds, state_map)?;

        Ok(Problem {
            sys,
            cost,
            field,
            input,
            x0,
            goal_state,
            world_field,
        })
    }

    pub fn to_file(&self) -> ScenarioFile {
        ScenarioFile {
            system: match &self.system {
                SystemModel::DoubleIntegrator2d { dt } => SystemFile::DoubleIntegrator2d { dt: *dt },
                SystemModel::Custom { a, b, state_map } => SystemFile::Custom {
                    a: matrix_to_rows(a),
                    b: matrix_to_rows(b),
                    state_map: state_map.as_ref().map(matrix_to_rows),
                },
            },
            cost: CostFile {
                q: matrix_to_rows(&self.cost.q),
                r: matrix_to_rows(&self.cost.r),
                p: matrix_to_rows(&self.cost.p),
                horizon: self.cost.horizon,
            },
            obstacles: self.obstacles.iter().map(obstacle_to_file).collect(),
            input_constraints: match &self.input {
                InputModel::Unconstrained => None,
                InputModel::Box { limit } => Some(InputFile::Box { limit: *limit }),
                InputModel::Affine { g, e } => Some(InputFile::Affine {
                    g: matrix_to_rows(g),
                    e: vector_to(e),
                }),
            },
            start: vector_to(&self.start),
            goal: vector_to(&self.goal),
            seed: self.seed,
            coverage_rate: self.coverage_rate,
            workspace: Some(WorkspaceFile {
                lo: vector_to(&self.workspace.lo),
                hi: vector_to(&self.workspace.hi),
            }),
        }
    }

    pub fn from_file(file: &ScenarioFile) -> CliResult<Scenario> {
        let system = match &file.system {
            SystemFile::DoubleIntegrator2d { dt } => SystemModel::DoubleIntegrator2d { dt: *dt },
            SystemFile::Custom { a, b, state_map } => SystemModel::Custom {
                a: rows_to_matrix(a, "system.a")?,
                b: rows_to_matrix(b, "system.b")?,
                state_map: state_map
                    .as_ref()
                    .map(|m| rows_to_matrix(m, "system.state_map"))
                    .transpose()?,
            },
        };
        let cost = CostModel {
            q: rows_to_matrix(&file.cost.q, "cost.q")?,
            r: rows_to_matrix(&file.cost.r, "cost.r")?,
            p: rows_to_matrix(&file.cost.p, "cost.p")?,
            horizon: file.cost.horizon,
        };
        let mut obstacles = Vec::with_capacity(file.obstacles.len());
        for (id, o) in file.obstacles.iter().enumerate() {
            obstacles.push(obstacle_from_file(o, id)?);
        }
        let input = match &file.input_constraints {
            None => InputModel::Unconstrained,
            Some(InputFile::Box { limit }) => InputModel::Box { limit: *limit },
            Some(InputFile::Affine { g, e }) => InputModel::Affine {
                g: rows_to_matrix(g, "input_constraints.g")?,
                e: vector_from(e),
            },
        };
        let workspace = match &file.workspace {
            Some(w) => WorkspaceBounds::new(vector_from(&w.lo), vector_from(&w.hi))?,
            None => default_workspace(&obstacles, &file.start, &file.goal)?,
        };
        Ok(Scenario {
            system,
            cost,
            obstacles,
            input,
            start: vector_from(&file.start),
            goal: vector_from(&file.goal),
            seed: file.seed,
            coverage_rate: file.coverage_rate,
            workspace,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("scenario serialization")
    }

    pub fn from_json(text: &str) -> CliResult<Scenario> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(CliError::from_json)?;
        Scenario::from_file(&file)
    }
}

fn obstacle_to_file(obs: &SemiConvexObstacle) -> ObstacleFile {
    match obs.kind() {
        ObstacleKind::Ellipse(e) => ObstacleFile::Ellipse {
            center: vector_to(&e.center),
            shape: matrix_to_rows(&e.shape),
            level: e.level,
            certificate: matrix_to_rows(obs.certificate()),
        },
        ObstacleKind::Composite(ms) => ObstacleFile::Composite {
            members: ms
                .iter()
                .map(|e| MemberFile {
                    center: vector_to(&e.center),
                    shape: matrix_to_rows(&e.shape),
                    level: e.level,
                })
                .collect(),
            certificate: matrix_to_rows(obs.certificate()),
        },
    }
}

fn obstacle_from_file(file: &ObstacleFile, id: usize) -> CliResult<SemiConvexObstacle> {
    let obs = match file {
        ObstacleFile::Ellipse {
            center,
            shape,
            level,
            certificate,
        } => SemiConvexObstacle::new(
            ObstacleKind::Ellipse(Ellipse::new(
                vector_from(center),
                rows_to_matrix(shape, "obstacle.shape")?,
                *level,
            )?),
            rows_to_matrix(certificate, "obstacle.certificate")?,
            id,
        )?,
        ObstacleFile::Composite {
            members,
            certificate,
        } => {
            let mut ms = Vec::with_capacity(members.len());
            for m in members {
                ms.push(Ellipse::new(
                    vector_from(&m.center),
                    rows_to_matrix(&m.shape, "member.shape")?,
                    m.level,
                )?);
            }
            SemiConvexObstacle::new(
                ObstacleKind::Composite(ms),
                rows_to_matrix(certificate, "obstacle.certificate")?,
                id,
            )?
        }
    };
    Ok(obs)
}

/// Fallback bounds when a scenario file omits them: the envelope of obstacle
/// centers, start and goal, padded by a third of its extent.
fn default_workspace(
    obstacles: &[SemiConvexObstacle],
    start: &[f64],
    goal: &[f64],
) -> CliResult<WorkspaceBounds> {
    let dim = start.len().min(goal.len()).min(2).max(2);
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    let mut absorb = |p: &[f64]| {
        for d in 0..dim.min(p.len()) {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    };
    absorb(start);
    absorb(goal);
    for o in obstacles {
        let center = match o.kind() {
            ObstacleKind::Ellipse(e) => e.center.clone(),
            ObstacleKind::Composite(ms) => ms[0].center.clone(),
        };
        let c: Vec<f64> = center.iter().copied().collect();
        absorb(&c);
    }
    let mut lov = DVector::zeros(dim);
    let mut hiv = DVector::zeros(dim);
    for d in 0..dim {
        let pad = ((hi[d] - lo[d]).abs()).max(1.0) / 3.0;
        lov[d] = lo[d] - pad;
        hiv[d] = hi[d] + pad;
    }
    Ok(WorkspaceBounds::new(lov, hiv)?)
}

/// Standard weights for the planar double-integrator template.
pub fn template_cost(horizon: usize) -> CostModel {
    CostModel {
        q: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 0.1, 0.1])),
        r: DMatrix::identity(2, 2),
        p: DMatrix::from_diagonal(&DVector::from_vec(vec![10.0, 10.0, 1.0, 1.0])),
        horizon,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn demo_scenario() -> Scenario {
        let obstacles = vec![SemiConvexObstacle::ellipse_tight(
            DVector::from_vec(vec![2.0, 2.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            1.0,
            0,
        )
        .unwrap()];
        Scenario {
            system: SystemModel::DoubleIntegrator2d { dt: 0.1 },
            cost: template_cost(50),
            obstacles,
            input: InputModel::Box { limit: 0.7 },
            start: DVector::from_vec(vec![4.0, 3.6]),
            goal: DVector::from_vec(vec![0.0, 0.0]),
            seed: 17,
            coverage_rate: Some(0.25),
            workspace: WorkspaceBounds::new(
                DVector::from_vec(vec![0.0, 0.0]),
                DVector::from_vec(vec![4.0, 4.0]),
            )
            .unwrap(),
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let scenario = demo_scenario();
        let text = scenario.to_json();
        let parsed = Scenario::from_json(&text).unwrap();
        assert_eq!(scenario, parsed);
        // and serialization is deterministic
        assert_eq!(text, parsed.to_json());
    }

    #[test]
    fn template_builds_shifted_problem() {
        let scenario = demo_scenario();
        let problem = scenario.build().unwrap();
        assert_eq!(problem.sys.state_dim(), 4);
        assert_eq!(problem.sys.input_dim(), 2);
        // start lifted with zero velocity, goal at origin -> x0 = start
        assert_abs_diff_eq!(problem.x0[0], 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(problem.x0[1], 3.6, epsilon = 1e-15);
        assert_abs_diff_eq!(problem.x0[2], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn nonzero_goal_shifts_obstacles() {
        let mut scenario = demo_scenario();
        scenario.goal = DVector::from_vec(vec![1.0, 0.5]);
        let problem = scenario.build().unwrap();
        // shifted obstacle center = world center - goal
        let shifted = &problem.field.obstacles()[0];
        match shifted.kind() {
            ObstacleKind::Ellipse(e) => {
                assert_abs_diff_eq!(e.center[0], 1.0, epsilon = 1e-15);
                assert_abs_diff_eq!(e.center[1], 1.5, epsilon = 1e-15);
            }
            _ => panic!("expected ellipse"),
        }
        // a state at the world goal maps to the shifted origin
        let x_goal_world = DVector::from_vec(vec![1.0, 0.5, 0.0, 0.0]);
        let h_world = problem.world_field.min_h(&x_goal_world).unwrap();
        let h_shifted = problem.field.min_h(&(x_goal_world - &problem.goal_state)).unwrap();
        assert_abs_diff_eq!(h_world, h_shifted, epsilon = 1e-12);
    }

    #[test]
    fn moving_goal_requires_equilibrium() {
        let mut scenario = demo_scenario();
        // custom system whose goal cannot be held: pure doubling dynamics
        scenario.system = SystemModel::Custom {
            a: DMatrix::from_row_slice(1, 1, &[2.0]),
            b: DMatrix::from_row_slice(1, 1, &[1.0]),
            state_map: None,
        };
        scenario.obstacles.clear();
        scenario.cost = CostModel {
            q: DMatrix::identity(1, 1),
            r: DMatrix::identity(1, 1),
            p: DMatrix::identity(1, 1),
            horizon: 10,
        };
        scenario.start = DVector::from_vec(vec![1.0]);
        scenario.goal = DVector::from_vec(vec![0.5]);
        scenario.workspace = WorkspaceBounds::new(
            DVector::from_vec(vec![-4.0]),
            DVector::from_vec(vec![4.0]),
        )
        .unwrap();
        let err = scenario.build().unwrap_err();
        assert!(matches!(err, CliError::Input(_)));
    }

    #[test]
    fn malformed_json_reports_position() {
        let err = Scenario::from_json("{ \"system\": {").unwrap_err();
        match err {
            CliError::Json { line, .. } => assert_eq!(line, 1),
            other => panic!("expected json error, got {other}"),
        }
    }
}
