//! Energy-optimal, collision-free motion planning for discrete-time linear
//! systems.
//!
//! The solver stack, bottom to top:
//!
//! - [`lti`]: LTI plant model, quadratic cost, trajectory rollout, and the
//!   unconstrained Riccati baseline.
//! - [`obstacle`]: semi-convex barrier functions (`h >= 0` is safe), their
//!   gradients, and curvature-certificate validation.
//! - [`sca`]: conservative quadratic surrogates that convexify one barrier
//!   constraint about one reference point.
//! - [`clqr`]: the convexified constrained LQR, solved by projected dual
//!   ascent with a closed-form backward recursion of the cost-to-go for
//!   every fixed multiplier.
//! - [`brsca`]: the outer loop — detect violated barriers, pick backward
//!   feasible reference points, convexify, re-solve until the trajectory is
//!   certified collision-free and the cost stops improving.

pub mod brsca;
pub mod clqr;
pub mod error;
pub mod lti;
pub mod obstacle;
pub mod sca;

mod linalg;

pub use brsca::{
    brsca_solve, detect_violations, select_reference, ActiveConstraintSet, AuditRecord,
    BrscaConfig, BrscaResult, ReferenceRule, SolveStatus,
};
pub use clqr::{
    backward_recursion, dual_ascent, dual_gradients, kkt_residuals, stability_check,
    AscentOptions, DualAscentOutput, DualGradient, DualState, IterRecord, KktReport,
    StabilityReport, StageCostAggregate, StepSchedule, SurrogateSet, ValueFunction,
};
pub use error::Error;
pub use lti::{
    evaluate_cost, riccati_unconstrained, rollout, CostSpec, InputConstraints, LtiSystem,
    StageConstraint, Trajectory,
};
pub use obstacle::{
    check_trajectory_safe, Ellipse, ObstacleField, ObstacleKind, SemiConvexObstacle, Violation,
    WorkspaceBounds,
};
pub use sca::{convexify, convexify_mapped, surrogate_margin, QuadraticSurrogate};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
