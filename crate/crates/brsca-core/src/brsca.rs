//! Outer loop: detect violated barrier constraints, convexify them about
//! backward feasible reference points, and re-solve the convexified
//! constrained LQR until the trajectory is certified collision-free and the
//! cost stops improving.

use nalgebra::DVector;

use crate::clqr::{
    dual_ascent, AscentOptions, DualAscentOutput, DualState, SurrogateSet, ValueFunction,
};
use crate::error::Error;
use crate::lti::{CostSpec, InputConstraints, LtiSystem, Trajectory};
use crate::obstacle::{check_trajectory_safe, ObstacleField, SemiConvexObstacle};
use crate::sca::convexify_mapped;
use crate::Result;

/// Margin used when a violated state has no feasible predecessor and must be
/// projected onto the safe side of the barrier instead.
pub const PROJECTION_MARGIN: f64 = 1e-3;

/// How violated constraints pick their linearization point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceRule {
    /// Closest earlier strictly feasible state (falling back to a boundary
    /// projection when none exists).
    BackwardFeasible,
    /// The currently violated state itself. This reproduces the incremental
    /// variant that the backward rule exists to fix; kept only for comparison
    /// tests.
    #[doc(hidden)]
    CurrentState,
}

/// Included `(t, obstacle_id)` pairs with their current surrogates. Keys only
/// ever grow; re-linearization replaces surrogates in place.
#[derive(Debug, Clone, Default)]
pub struct ActiveConstraintSet {
    surrogates: SurrogateSet,
    generation: usize,
}

impl ActiveConstraintSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn surrogates(&self) -> &SurrogateSet {
        &self.surrogates
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn len(&self) -> usize {
        self.surrogates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surrogates.is_empty()
    }

    pub fn contains(&self, t: usize, id: usize) -> bool {
        self.surrogates.contains(t, id)
    }

    pub fn keys(&self) -> Vec<(usize, usize)> {
        self.surrogates.keys().copied().collect()
    }
}

/// All `(t, obstacle_id)` with `h_id(x_t) <= 0` for interior times, ordered by
/// time then id. Boundary contact counts as violated here (the safety
/// certificate is the stricter `check_trajectory_safe`).
pub fn detect_violations(field: &ObstacleField, traj: &Trajectory) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for t in 1..traj.horizon() {
        let z = field.project_state(&traj.states[t])?;
        for obs in field.obstacles() {
            if obs.eval_h(&z)? <= 0.0 {
                out.push((t, obs.id()));
            }
        }
    }
    Ok(out)
}

/// A selected linearization point for one violated constraint.
#[derive(Debug, Clone)]
pub struct ReferenceChoice {
    /// Full-state reference (its barrier-space projection is what the
    /// surrogate is built about).
    pub x_ref: DVector<f64>,
    /// True when no earlier feasible state existed and the violated state was
    /// projected onto `h = PROJECTION_MARGIN` instead.
    pub fallback: bool,
}

/// Walks backward from the violation to the closest earlier state strictly
/// feasible w.r.t. that obstacle; projects the violated state onto the safe
/// side when no such state exists.
pub fn select_reference(
    field: &ObstacleField,
    traj: &Trajectory,
    violation: (usize, usize),
) -> Result<ReferenceChoice> {
    let (t, id) = violation;
    let obs = field
        .obstacle(id)
        .ok_or_else(|| Error::state(format!("unknown obstacle id {id}")))?;
    for tau in (0..t).rev() {
        let z = field.project_state(&traj.states[tau])?;
        if obs.eval_h(&z)? > 0.0 {
            return Ok(ReferenceChoice {
                x_ref: traj.states[tau].clone(),
                fallback: false,
            });
        }
    }
    let z_t = field.project_state(&traj.states[t])?;
    let z_ref = project_to_margin(obs, &z_t)?;
    let x_ref = embed_reference(field, &traj.states[t], &z_ref)?;
    Ok(ReferenceChoice {
        x_ref,
        fallback: true,
    })
}

/// Radial projection of a violated point onto `{h = PROJECTION_MARGIN}`,
/// walking the ray from the active member's center through the point.
fn project_to_margin(obs: &SemiConvexObstacle, z: &DVector<f64>) -> Result<DVector<f64>> {
    let member = match obs.kind() {
        crate::obstacle::ObstacleKind::Ellipse(e) => e,
        crate::obstacle::ObstacleKind::Composite(ms) => &ms[obs.active_member(z)],
    };
    let mut dir = z - &member.center;
    let mut quad = (dir.transpose() * &member.shape * &dir)[(0, 0)];
    if quad < 1e-14 {
        // at the center (or in a null direction of the shape): pick the
        // stiffest direction of the member instead
        let eig = nalgebra::SymmetricEigen::new(member.shape.clone());
        let (idx, &val) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        if val < 1e-14 {
            return Err(Error::Reference(format!(
                "obstacle {} is degenerate along every direction",
                obs.id()
            )));
        }
        dir = eig.eigenvectors.column(idx).into_owned();
        quad = val;
    }

    // closed-form exit scale for the active member, then bisect on the full
    // barrier (members other than the active one can only raise h)
    let target = PROJECTION_MARGIN;
    let s_member = ((member.level + target) / quad).sqrt();
    let at = |s: f64| member.center.clone() + &dir * s;
    let h_at = |s: f64| obs.eval_h(&at(s));

    let mut s_hi = s_member.max(1.0);
    let mut tries = 0;
    while h_at(s_hi)? < target {
        s_hi *= 2.0;
        tries += 1;
        if tries > 60 {
            return Err(Error::Reference(format!(
                "projection ray for obstacle {} never exits the unsafe region",
                obs.id()
            )));
        }
    }
    let mut s_lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (s_lo + s_hi);
        if h_at(mid)? < target {
            s_lo = mid;
        } else {
            s_hi = mid;
        }
    }
    let z_ref = at(s_hi);
    debug_assert!(obs.eval_h(&z_ref)? > 0.0);
    Ok(z_ref)
}

/// Lifts a barrier-space reference back to a full state: keeps the violated
/// state and moves only the mapped coordinates (minimum-norm correction).
fn embed_reference(
    field: &ObstacleField,
    x_full: &DVector<f64>,
    z_ref: &DVector<f64>,
) -> Result<DVector<f64>> {
    match field.state_map() {
        None => Ok(z_ref.clone()),
        Some(zmap) => {
            let delta = z_ref - zmap * x_full;
            let gram = zmap * zmap.transpose();
            let y = gram.clone().lu().solve(&delta).ok_or_else(|| {
                Error::Reference("state map is rank-deficient; cannot lift reference".into())
            })?;
            Ok(x_full + zmap.transpose() * y)
        }
    }
}

/// Outer-loop configuration. `eps` is the inner dual-ascent tolerance;
/// `outer_eps` (defaulting to `eps`) gates the cost-stagnation exit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrscaConfig {
    pub eps: f64,
    pub outer_eps: Option<f64>,
    pub alpha0: f64,
    pub inner_cap: usize,
    pub max_outer: usize,
    pub max_inner_passes: usize,
}

impl Default for BrscaConfig {
    fn default() -> Self {
        BrscaConfig {
            eps: 0.7,
            outer_eps: None,
            alpha0: 0.05,
            inner_cap: 5000,
            max_outer: 50,
            max_inner_passes: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// `check_trajectory_safe` against the true barriers came back empty.
    Feasible,
    /// The iteration budget ran out before certification.
    Infeasible,
}

/// Reference chosen for one violated entry during one inner pass.
#[derive(Debug, Clone)]
pub struct ReferenceRecord {
    pub pass: usize,
    pub t: usize,
    pub id: usize,
    pub x_ref: DVector<f64>,
    pub fallback: bool,
}

/// One outer iteration of the audit log.
#[derive(Debug, Clone)]
pub struct AuditRecord {
    pub outer_iter: usize,
    /// Violated pairs found at the top of this iteration.
    pub violations: Vec<(usize, usize)>,
    /// Pairs newly added to the active set.
    pub included: Vec<(usize, usize)>,
    pub references: Vec<ReferenceRecord>,
    pub inner_passes: usize,
    pub inner_iterations: usize,
    pub cost: f64,
    /// The inner solver hit its cap and was retried with a halved step.
    pub retried: bool,
    /// Still unconverged after the retry; the best iterate was adopted.
    pub unconverged: bool,
}

#[derive(Debug, Clone)]
pub struct BrscaResult {
    pub status: SolveStatus,
    pub trajectory: Trajectory,
    pub value: ValueFunction,
    pub duals: DualState,
    pub cost: f64,
    pub outer_iterations: usize,
    pub audit: Vec<AuditRecord>,
}

impl BrscaResult {
    pub fn is_feasible(&self) -> bool {
        self.status == SolveStatus::Feasible
    }
}

/// Runs dual ascent, retrying once with a halved initial step on a
/// convergence failure, and falling back to the best iterate if the retry
/// fails too. Non-convergence errors propagate.
fn run_inner(
    sys: &LtiSystem,
    cost: &CostSpec,
    surrogates: &SurrogateSet,
    input: &InputConstraints,
    x0: &DVector<f64>,
    init: DualState,
    config: &BrscaConfig,
) -> Result<(DualAscentOutput, bool, bool)> {
    let opts = AscentOptions::new(config.eps)
        .with_alpha0(config.alpha0)
        .with_max_iters(config.inner_cap);
    match dual_ascent(sys, cost, surrogates, input, x0, init.clone(), &opts) {
        Ok(out) => Ok((out, false, false)),
        Err(Error::Convergence { best, .. }) => {
            let halved = opts.with_alpha0(config.alpha0 * 0.5);
            match dual_ascent(sys, cost, surrogates, input, x0, init, &halved) {
                Ok(out) => Ok((out, true, false)),
                Err(Error::Convergence { best: best2, .. }) => {
                    let pick = if best2.dual_value >= best.dual_value {
                        best2
                    } else {
                        best
                    };
                    Ok((*pick, true, true))
                }
                Err(e) => Err(e),
            }
        }
        Err(e) => Err(e),
    }
}

/// Full solve with the backward feasible reference rule.
pub fn brsca_solve(
    sys: &LtiSystem,
    cost: &CostSpec,
    field: &ObstacleField,
    input: &InputConstraints,
    x0: &DVector<f64>,
    config: &BrscaConfig,
) -> Result<BrscaResult> {
    solve_with_reference_rule(sys, cost, field, input, x0, config, ReferenceRule::BackwardFeasible)
}

/// Same loop with a pluggable reference rule; exists so tests can compare the
/// backward rule against linearizing about the violated state itself.
#[doc(hidden)]
pub fn solve_with_reference_rule(
    sys: &LtiSystem,
    cost: &CostSpec,
    field: &ObstacleField,
    input: &InputConstraints,
    x0: &DVector<f64>,
    config: &BrscaConfig,
    rule: ReferenceRule,
) -> Result<BrscaResult> {
    let outer_eps = config.outer_eps.unwrap_or(config.eps);
    let mut active = ActiveConstraintSet::new();
    let mut audit: Vec<AuditRecord> = Vec::new();

    // seed: the problem without collision-free constraints (input constraints
    // still apply through their multipliers)
    let seed_duals = DualState::zeros_for(active.surrogates(), input);
    let (mut current, seed_retried, seed_unconverged) =
        run_inner(sys, cost, active.surrogates(), input, x0, seed_duals, config)?;
    audit.push(AuditRecord {
        outer_iter: 0,
        violations: Vec::new(),
        included: Vec::new(),
        references: Vec::new(),
        inner_passes: 1,
        inner_iterations: current.iterations,
        cost: current.cost,
        retried: seed_retried,
        unconverged: seed_unconverged,
    });

    for outer in 1..=config.max_outer {
        let violations = detect_violations(field, &current.trajectory)?;

        // the inner loop below always runs until the cost stops improving, so
        // a violation-free iterate here satisfies the joint exit condition
        if violations.is_empty() {
            let certified = check_trajectory_safe(field, &current.trajectory)?;
            debug_assert!(certified.is_empty());
            return Ok(BrscaResult {
                status: if certified.is_empty() {
                    SolveStatus::Feasible
                } else {
                    SolveStatus::Infeasible
                },
                trajectory: current.trajectory,
                value: current.value,
                duals: current.duals,
                cost: current.cost,
                outer_iterations: outer,
                audit,
            });
        }

        let mut included = Vec::new();
        for &(t, id) in &violations {
            if !active.contains(t, id) {
                included.push((t, id));
            }
        }

        let mut record = AuditRecord {
            outer_iter: outer,
            violations: violations.clone(),
            included: included.clone(),
            references: Vec::new(),
            inner_passes: 0,
            inner_iterations: 0,
            cost: current.cost,
            retried: false,
            unconverged: false,
        };

        // make sure every included key exists before the first pass builds
        // surrogates for all of them
        let mut keys = active.keys();
        keys.extend(included.iter().copied());
        keys.sort_unstable();
        keys.dedup();

        let mut pass_cost = f64::INFINITY;
        for pass in 1..=config.max_inner_passes {
            let mut rebuilt = SurrogateSet::new();
            for &(t, id) in &keys {
                let obs = field
                    .obstacle(id)
                    .ok_or_else(|| Error::state(format!("unknown obstacle id {id}")))?;
                let x_t = &current.trajectory.states[t];
                let z_t = field.project_state(x_t)?;
                let surrogate = if obs.eval_h(&z_t)? > 0.0 {
                    // included but currently satisfied: follow the iterate
                    convexify_mapped(obs, field.state_map(), x_t, t)?
                } else {
                    let choice = match rule {
                        ReferenceRule::BackwardFeasible => {
                            select_reference(field, &current.trajectory, (t, id))?
                        }
                        ReferenceRule::CurrentState => ReferenceChoice {
                            x_ref: x_t.clone(),
                            fallback: false,
                        },
                    };
                    record.references.push(ReferenceRecord {
                        pass,
                        t,
                        id,
                        x_ref: choice.x_ref.clone(),
                        fallback: choice.fallback,
                    });
                    convexify_mapped(obs, field.state_map(), &choice.x_ref, t)?
                };
                rebuilt.insert(surrogate);
            }

            let init = current.duals.aligned_to(&rebuilt, input);
            let (out, retried, unconverged) =
                run_inner(sys, cost, &rebuilt, input, x0, init, config)?;
            active.surrogates = rebuilt;
            active.generation += 1;
            record.inner_passes = pass;
            record.inner_iterations += out.iterations;
            record.retried |= retried;
            record.unconverged |= unconverged;
            let new_cost = out.cost;
            current = out;
            record.cost = new_cost;

            // keep passing while the cost strictly improves
            if pass > 1 && new_cost >= pass_cost - outer_eps {
                break;
            }
            pass_cost = new_cost;
        }

        audit.push(record);
    }

    Ok(BrscaResult {
        status: SolveStatus::Infeasible,
        trajectory: current.trajectory,
        value: current.value,
        duals: current.duals,
        cost: current.cost,
        outer_iterations: config.max_outer,
        audit,
    })
}
