//! Comparison baseline: shortest collision-free grid path (A* over the true
//! barriers) tracked by a proportional controller on the state error, with
//! inputs clipped to the box bounds.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DVector;

use brsca_core::{evaluate_cost, rollout, Trajectory};

use crate::error::{CliError, CliResult};
use crate::scenario::Problem;

#[derive(Debug, Clone, Copy)]
pub struct BaselineConfig {
    /// Grid cell size; default is the larger workspace extent / 200.
    pub grid_cell: Option<f64>,
    /// Position gain of the tracking controller.
    pub kp: f64,
    /// Velocity gain.
    pub kd: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            grid_cell: None,
            kp: 4.0,
            kd: 4.0,
        }
    }
}

struct HeapNode {
    f: f64,
    idx: usize,
}

impl PartialEq for HeapNode {
    fn eq(&self, other: &Self) -> bool {
        self.f == other.f
    }
}
impl Eq for HeapNode {}
impl PartialOrd for HeapNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapNode {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on f
        other.f.total_cmp(&self.f)
    }
}

struct Grid {
    nx: usize,
    ny: usize,
    cell: f64,
    origin: (f64, f64),
    blocked: Vec<bool>,
}

impl Grid {
    fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    fn center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.origin.0 + ix as f64 * self.cell,
            self.origin.1 + iy as f64 * self.cell,
        )
    }

    fn nearest_cell(&self, x: f64, y: f64) -> (usize, usize) {
        let ix = ((x - self.origin.0) / self.cell)
            .round()
            .clamp(0.0, (self.nx - 1) as f64) as usize;
        let iy = ((y - self.origin.1) / self.cell)
            .round()
            .clamp(0.0, (self.ny - 1) as f64) as usize;
        (ix, iy)
    }

    /// Nearest unblocked cell within a small search radius.
    fn nearest_free(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let (cx, cy) = self.nearest_cell(x, y);
        for radius in 0..=5i64 {
            for dx in -radius..=radius {
                for dy in -radius..=radius {
                    if dx.abs().max(dy.abs()) != radius {
                        continue;
                    }
                    let ix = cx as i64 + dx;
                    let iy = cy as i64 + dy;
                    if ix < 0 || iy < 0 || ix >= self.nx as i64 || iy >= self.ny as i64 {
                        continue;
                    }
                    if !self.blocked[self.index(ix as usize, iy as usize)] {
                        return Some((ix as usize, iy as usize));
                    }
                }
            }
        }
        None
    }
}

fn build_grid(problem: &Problem, cell: f64) -> Grid {
    let bounds = problem.field.bounds();
    let extent = bounds.extent();
    let nx = (extent[0] / cell).ceil() as usize + 1;
    let ny = (extent[1] / cell).ceil() as usize + 1;
    let clearance = 3.0 * cell;
    let mut blocked = vec![false; nx * ny];
    for iy in 0..ny {
        for ix in 0..nx {
            let (cx, cy) = (
                bounds.lo[0] + ix as f64 * cell,
                bounds.lo[1] + iy as f64 * cell,
            );
            let mut hit = false;
            'probe: for (px, py) in [
                (cx, cy),
                (cx + clearance, cy),
                (cx - clearance, cy),
                (cx, cy + clearance),
                (cx, cy - clearance),
                (cx + clearance, cy + clearance),
                (cx - clearance, cy + clearance),
                (cx + clearance, cy - clearance),
                (cx - clearance, cy - clearance),
            ] {
                let p = DVector::from_vec(vec![px, py]);
                for o in problem.field.obstacles() {
                    if o.eval_h(&p).map(|h| h < 0.0).unwrap_or(true) {
                        hit = true;
                        break 'probe;
                    }
                }
            }
            blocked[iy * nx + ix] = hit;
        }
    }
    Grid {
        nx,
        ny,
        cell,
        origin: (bounds.lo[0], bounds.lo[1]),
        blocked,
    }
}

/// A* over the occupancy grid; returns cell-center waypoints.
fn astar(grid: &Grid, start: (usize, usize), goal: (usize, usize)) -> Option<Vec<(f64, f64)>> {
    let n = grid.nx * grid.ny;
    let mut g_cost = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();

    let h = |idx: usize| -> f64 {
        let ix = (idx % grid.nx) as f64;
        let iy = (idx / grid.nx) as f64;
        let gx = goal.0 as f64;
        let gy = goal.1 as f64;
        grid.cell * ((ix - gx).powi(2) + (iy - gy).powi(2)).sqrt()
    };

    let start_idx = grid.index(start.0, start.1);
    let goal_idx = grid.index(goal.0, goal.1);
    g_cost[start_idx] = 0.0;
    heap.push(HeapNode {
        f: h(start_idx),
        idx: start_idx,
    });

    while let Some(HeapNode { idx, .. }) = heap.pop() {
        if closed[idx] {
            continue;
        }
        closed[idx] = true;
        if idx == goal_idx {
            let mut path = Vec::new();
            let mut cur = idx;
            while cur != usize::MAX {
                let ix = cur % grid.nx;
                let iy = cur / grid.nx;
                path.push(grid.center(ix, iy));
                cur = parent[cur];
            }
            path.reverse();
            return Some(path);
        }
        let ix = (idx % grid.nx) as i64;
        let iy = (idx / grid.nx) as i64;
        for dx in -1i64..=1 {
            for dy in -1i64..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let qx = ix + dx;
                let qy = iy + dy;
                if qx < 0 || qy < 0 || qx >= grid.nx as i64 || qy >= grid.ny as i64 {
                    continue;
                }
                let q = grid.index(qx as usize, qy as usize);
                if closed[q] || grid.blocked[q] {
                    continue;
                }
                let step = if dx != 0 && dy != 0 {
                    grid.cell * std::f64::consts::SQRT_2
                } else {
                    grid.cell
                };
                let cand = g_cost[idx] + step;
                if cand < g_cost[q] {
                    g_cost[q] = cand;
                    parent[q] = idx;
                    heap.push(HeapNode { f: cand + h(q), idx: q });
                }
            }
        }
    }
    None
}

/// Uniform arc-length resampling of a polyline into `count` points.
fn resample(path: &[(f64, f64)], count: usize) -> Vec<(f64, f64)> {
    assert!(count >= 2);
    let mut cumulative = vec![0.0f64];
    for pair in path.windows(2) {
        let d = ((pair[1].0 - pair[0].0).powi(2) + (pair[1].1 - pair[0].1).powi(2)).sqrt();
        cumulative.push(cumulative.last().unwrap() + d);
    }
    let total = *cumulative.last().unwrap();
    if total <= 1e-12 {
        return vec![path[0]; count];
    }
    let mut out = Vec::with_capacity(count);
    let mut seg = 0usize;
    for i in 0..count {
        let target = total * i as f64 / (count - 1) as f64;
        while seg + 1 < cumulative.len() - 1 && cumulative[seg + 1] < target {
            seg += 1;
        }
        let span = (cumulative[seg + 1] - cumulative[seg]).max(1e-12);
        let frac = (target - cumulative[seg]) / span;
        out.push((
            path[seg].0 + frac * (path[seg + 1].0 - path[seg].0),
            path[seg].1 + frac * (path[seg + 1].1 - path[seg].1),
        ));
    }
    out
}

fn template_timestep(problem: &Problem) -> CliResult<f64> {
    let a = problem.sys.a();
    let n_ok = problem.sys.state_dim() == 4 && problem.sys.input_dim() == 2;
    if !n_ok {
        return Err(CliError::input(
            "the tracked-path baseline requires the planar double-integrator template",
        ));
    }
    let dt = a[(0, 2)];
    if dt <= 0.0 || (a[(1, 3)] - dt).abs() > 1e-12 {
        return Err(CliError::input(
            "the tracked-path baseline requires the planar double-integrator template",
        ));
    }
    Ok(dt)
}

/// Plans a grid path in the (goal-shifted) workspace, tracks it with the
/// proportional controller, and returns the tracked trajectory (in shifted
/// coordinates) with its cost under the scenario objective.
pub fn baseline_tracked_path(
    problem: &Problem,
    config: &BaselineConfig,
) -> CliResult<(Trajectory, f64)> {
    let dt = template_timestep(problem)?;
    let horizon = problem.cost.horizon();
    let bounds = problem.field.bounds();
    let extent = bounds.extent();
    let cell = config
        .grid_cell
        .unwrap_or_else(|| extent[0].max(extent[1]) / 200.0);
    if cell <= 0.0 {
        return Err(CliError::input("grid cell size must be positive"));
    }

    let grid = build_grid(problem, cell);
    let start_pos = (problem.x0[0], problem.x0[1]);
    let goal_pos = (0.0, 0.0);
    let start_cell = grid
        .nearest_free(start_pos.0, start_pos.1)
        .ok_or_else(|| CliError::Baseline("start has no free cell nearby".into()))?;
    let goal_cell = grid
        .nearest_free(goal_pos.0, goal_pos.1)
        .ok_or_else(|| CliError::Baseline("goal has no free cell nearby".into()))?;

    let mut path = astar(&grid, start_cell, goal_cell)
        .ok_or_else(|| CliError::Baseline("no collision-free grid path exists".into()))?;
    path.insert(0, start_pos);
    path.push(goal_pos);

    let refs = resample(&path, horizon + 1);
    let mut vel_refs: Vec<(f64, f64)> = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        if t < horizon {
            vel_refs.push((
                (refs[t + 1].0 - refs[t].0) / dt,
                (refs[t + 1].1 - refs[t].1) / dt,
            ));
        } else {
            vel_refs.push((0.0, 0.0));
        }
    }

    let limit = match &problem_input_model(problem) {
        Some(l) => *l,
        None => f64::INFINITY,
    };

    let mut x = problem.x0.clone();
    let mut inputs = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let ex = x[0] - refs[t].0;
        let ey = x[1] - refs[t].1;
        let evx = x[2] - vel_refs[t].0;
        let evy = x[3] - vel_refs[t].1;
        let ux = (-config.kp * ex - config.kd * evx).clamp(-limit, limit);
        let uy = (-config.kp * ey - config.kd * evy).clamp(-limit, limit);
        let u = DVector::from_vec(vec![ux, uy]);
        x = problem.sys.step(&x, &u);
        inputs.push(u);
    }
    let traj = rollout(&problem.sys, &problem.x0, &inputs)?;
    let cost = evaluate_cost(&traj, &problem.cost)?;
    Ok((traj, cost))
}

/// The symmetric box limit when the scenario uses one; `None` leaves inputs
/// unclipped.
fn problem_input_model(problem: &Problem) -> Option<f64> {
    let stage = problem.input.stage(0);
    if stage.rows() == 0 {
        return None;
    }
    // recognize the paired-row box encoding
    let m = problem.sys.input_dim();
    if stage.rows() == 2 * m {
        let limit = -stage.e[0];
        if limit > 0.0 && stage.e.iter().all(|&v| (v + limit).abs() < 1e-12) {
            return Some(limit);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{generate_with, GeneratorConfig};
    use crate::scenario::{template_cost, InputModel, Scenario, SystemModel};
    use brsca_core::{check_trajectory_safe, riccati_unconstrained, SemiConvexObstacle, WorkspaceBounds};

    fn obstacle_free_scenario() -> Scenario {
        Scenario {
            system: SystemModel::DoubleIntegrator2d { dt: 0.1 },
            cost: template_cost(100),
            obstacles: Vec::new(),
            input: InputModel::Box { limit: 0.7 },
            start: DVector::from_vec(vec![4.0, 3.6]),
            goal: DVector::from_vec(vec![0.0, 0.0]),
            seed: 0,
            coverage_rate: None,
            workspace: WorkspaceBounds::new(
                DVector::from_vec(vec![0.0, 0.0]),
                DVector::from_vec(vec![4.0, 4.0]),
            )
            .unwrap(),
        }
    }

    #[test]
    fn obstacle_free_baseline_is_near_straight_and_suboptimal() {
        let scenario = obstacle_free_scenario();
        let problem = scenario.build().unwrap();
        let (traj, cost) = baseline_tracked_path(&problem, &BaselineConfig::default()).unwrap();

        // near-straight: every state stays close to the start-goal segment
        let (sx, sy) = (4.0, 3.6);
        let len2 = sx * sx + sy * sy;
        for x in &traj.states {
            let dot = (x[0] * sx + x[1] * sy) / len2;
            let proj = (dot.clamp(0.0, 1.0) * sx, dot.clamp(0.0, 1.0) * sy);
            let dist = ((x[0] - proj.0).powi(2) + (x[1] - proj.1).powi(2)).sqrt();
            assert!(dist < 0.35, "state strays {dist} from the straight line");
        }

        // the optimal regulator can only be cheaper (wide box so it is exact)
        let mut unconstrained = scenario.clone();
        unconstrained.input = InputModel::Unconstrained;
        let free = unconstrained.build().unwrap();
        let lqr = riccati_unconstrained(&free.sys, &free.cost).unwrap();
        let lqr_cost = brsca_core::evaluate_cost(
            &lqr.rollout(&free.sys, &free.x0).unwrap(),
            &free.cost,
        )
        .unwrap();
        assert!(cost >= lqr_cost);
    }

    #[test]
    fn single_circle_detour_is_collision_free() {
        let mut scenario = obstacle_free_scenario();
        scenario.obstacles = vec![SemiConvexObstacle::ellipse_tight(
            DVector::from_vec(vec![2.0, 1.8]),
            DMatrix::identity(2, 2) * 4.0, // radius 0.5
            1.0,
            0,
        )
        .unwrap()];
        let problem = scenario.build().unwrap();
        let (traj, _) = baseline_tracked_path(&problem, &BaselineConfig::default()).unwrap();
        assert!(check_trajectory_safe(&problem.field, &traj).unwrap().is_empty());
    }

    #[test]
    fn generated_field_baseline_succeeds() {
        let scenario = generate_with(11, &GeneratorConfig::default()).unwrap();
        let problem = scenario.build().unwrap();
        let (traj, cost) = baseline_tracked_path(&problem, &BaselineConfig::default()).unwrap();
        assert!(cost.is_finite());
        assert!(check_trajectory_safe(&problem.field, &traj).unwrap().is_empty());
    }
}
