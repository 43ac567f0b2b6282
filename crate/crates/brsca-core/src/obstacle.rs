//! Semi-convex barrier functions. Safe means `h(x) >= 0`; the unsafe interior
//! of an obstacle is `h(x) < 0`.

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::linalg;
use crate::lti::Trajectory;
use crate::Result;

/// Slack allowed on the safe side when certifying a whole trajectory.
pub const SAFETY_TOL: f64 = 1e-9;

/// Tie tolerance between composite members when picking the active gradient.
pub const TIE_TOL: f64 = 1e-12;

/// `h(x) = (x - p)' E (x - p) - r2`: safe outside the ellipse.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipse {
    pub center: DVector<f64>,
    pub shape: DMatrix<f64>,
    pub level: f64,
}

impl Ellipse {
    pub fn new(center: DVector<f64>, shape: DMatrix<f64>, level: f64) -> Result<Self> {
        let n = center.len();
        if shape.nrows() != n || shape.ncols() != n {
            return Err(Error::dim(format!(
                "shape matrix is {}x{} but center has length {n}",
                shape.nrows(),
                shape.ncols()
            )));
        }
        if level <= 0.0 {
            return Err(Error::invalid("ellipse level r^2 must be positive"));
        }
        if linalg::min_eigenvalue_sym(&shape) < -1e-10 {
            return Err(Error::invalid("ellipse shape matrix must be PSD"));
        }
        Ok(Ellipse { center, shape, level })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.center;
        (d.transpose() * &self.shape * &d)[(0, 0)] - self.level
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (&self.shape * (x - &self.center)) * 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObstacleKind {
    Ellipse(Ellipse),
    /// `h = max_j h_j` over the members: the unsafe region is the
    /// intersection of the member interiors.
    Composite(Vec<Ellipse>),
}

/// A barrier function together with the curvature certificate `H` that bounds
/// its negative curvature: `-h(x) + 1/2 (x - x0)' H (x - x0)` stays convex in
/// the directions the solver exploits. For an ellipse this is exactly
/// `H >= 2E`; a composite is certified member by member.
#[derive(Debug, Clone, PartialEq)]
pub struct SemiConvexObstacle {
    kind: ObstacleKind,
    certificate: DMatrix<f64>,
    id: usize,
}

/// Outcome of a certificate check. On failure `witness` carries the offending
/// eigenpair of `H - 2E` (or of `H` itself when `H` is not PSD).
#[derive(Debug, Clone)]
pub struct CertifyOutcome {
    pub ok: bool,
    pub witness: Option<(f64, DVector<f64>)>,
}

impl SemiConvexObstacle {
    pub fn new(kind: ObstacleKind, certificate: DMatrix<f64>, id: usize) -> Result<Self> {
        let dim = match &kind {
            ObstacleKind::Ellipse(e) => e.dim(),
            ObstacleKind::Composite(members) => {
                let dim = members
                    .first()
                    .map(Ellipse::dim)
                    .ok_or_else(|| Error::invalid("composite obstacle needs at least one member"))?;
                if members.iter().any(|m| m.dim() != dim) {
                    return Err(Error::dim("composite members have mixed dimensions"));
                }
                dim
            }
        };
        if certificate.nrows() != dim || certificate.ncols() != dim {
            return Err(Error::dim(format!(
                "certificate is {}x{} but the obstacle lives in dimension {dim}",
                certificate.nrows(),
                certificate.ncols()
            )));
        }
        Ok(SemiConvexObstacle {
            kind,
            certificate,
            id,
        })
    }

    /// Convenience constructor for a single ellipse with certificate `2E`
    /// (the tightest valid one).
    pub fn ellipse_tight(center: DVector<f64>, shape: DMatrix<f64>, level: f64, id: usize) -> Result<Self> {
        let cert = linalg::symmetrize(&shape) * 2.0;
        let e = Ellipse::new(center, shape, level)?;
        Self::new(ObstacleKind::Ellipse(e), cert, id)
    }

    pub fn kind(&self) -> &ObstacleKind {
        &self.kind
    }

    pub fn certificate(&self) -> &DMatrix<f64> {
        &self.certificate
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            ObstacleKind::Ellipse(e) => e.dim(),
            ObstacleKind::Composite(members) => members[0].dim(),
        }
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::dim(format!(
                "point has length {} but obstacle {} lives in dimension {}",
                x.len(),
                self.id,
                self.dim()
            )));
        }
        Ok(())
    }

    /// Index of the member attaining the max; ties go to the smaller index.
    pub fn active_member(&self, x: &DVector<f64>) -> usize {
        match &self.kind {
            ObstacleKind::Ellipse(_) => 0,
            ObstacleKind::Composite(members) => {
                let mut best = 0;
                let mut best_v = members[0].value(x);
                for (j, m) in members.iter().enumerate().skip(1) {
                    let v = m.value(x);
                    if v > best_v + TIE_TOL {
                        best = j;
                        best_v = v;
                    }
                }
                best
            }
        }
    }

    /// Barrier value `h(x)`.
    pub fn eval_h(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x)?;
        Ok(match &self.kind {
            ObstacleKind::Ellipse(e) => e.value(x),
            ObstacleKind::Composite(members) => members
                .iter()
                .map(|m| m.value(x))
                .fold(f64::NEG_INFINITY, f64::max),
        })
    }

    /// Barrier gradient; for a composite, the active member's gradient with a
    /// deterministic smaller-index tie-break.
    pub fn grad_h(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        Ok(match &self.kind {
            ObstacleKind::Ellipse(e) => e.gradient(x),
            ObstacleKind::Composite(members) => members[self.active_member(x)].gradient(x),
        })
    }

    /// Checks the curvature certificate analytically: `H` PSD and
    /// `lambda_min(H - 2E_j) >= -1e-10` for every member.
    pub fn certify_semiconvex(&self) -> CertifyOutcome {
        let (hval, hvec) = linalg::min_eigenpair_sym(&self.certificate);
        if hval < -1e-10 {
            return CertifyOutcome {
                ok: false,
                witness: Some((hval, hvec)),
            };
        }
        let members: &[Ellipse] = match &self.kind {
            ObstacleKind::Ellipse(e) => std::slice::from_ref(e),
            ObstacleKind::Composite(ms) => ms,
        };
        for m in members {
            let gap = &self.certificate - m.shape.scale(2.0);
            let (val, vec) = linalg::min_eigenpair_sym(&gap);
            if val < -1e-10 {
                return CertifyOutcome {
                    ok: false,
                    witness: Some((val, vec)),
                };
            }
        }
        CertifyOutcome {
            ok: true,
            witness: None,
        }
    }
}

/// Axis-aligned box used for sampling and scenario generation.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkspaceBounds {
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl WorkspaceBounds {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::dim("workspace bound vectors differ in length"));
        }
        if lo.iter().zip(hi.iter()).any(|(a, b)| a >= b) {
            return Err(Error::invalid("workspace bounds must satisfy lo < hi"));
        }
        Ok(WorkspaceBounds { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn extent(&self) -> DVector<f64> {
        &self.hi - &self.lo
    }
}

/// A collection of obstacles plus the (optional) linear map from system state
/// to the space the barriers are defined on. `None` means the barriers act on
/// the state directly.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleField {
    obstacles: Vec<SemiConvexObstacle>,
    bounds: WorkspaceBounds,
    state_map: Option<DMatrix<f64>>,
}

/// One entry of a trajectory safety report.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub t: usize,
    pub id: usize,
    pub h: f64,
}

impl ObstacleField {
    pub fn new(
        obstacles: Vec<SemiConvexObstacle>,
        bounds: WorkspaceBounds,
        state_map: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let dim = bounds.dim();
        for o in &obstacles {
            if o.dim() != dim {
                return Err(Error::dim(format!(
                    "obstacle {} has dimension {} but the workspace has {dim}",
                    o.id(),
                    o.dim()
                )));
            }
        }
        let mut ids: Vec<usize> = obstacles.iter().map(|o| o.id()).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != obstacles.len() {
            return Err(Error::invalid("obstacle ids must be unique"));
        }
        if let Some(z) = &state_map {
            if z.nrows() != dim {
                return Err(Error::dim(format!(
                    "state map has {} rows but the workspace dimension is {dim}",
                    z.nrows()
                )));
            }
        }
        let field = ObstacleField {
            obstacles,
            bounds,
            state_map,
        };
        if !field.obstacles.is_empty() && !field.safe_set_nonempty() {
            return Err(Error::invalid(
                "safety set appears empty: no sampled workspace point satisfies all h_i >= 0",
            ));
        }
        Ok(field)
    }

    /// Deterministic grid sweep over the workspace looking for a point that
    /// satisfies every barrier.
    fn safe_set_nonempty(&self) -> bool {
        let dim = self.bounds.dim();
        let per_axis = ((4096f64).powf(1.0 / dim as f64).floor() as usize).max(2);
        let mut idx = vec![0usize; dim];
        let mut point = DVector::zeros(dim);
        loop {
            for d in 0..dim {
                let frac = idx[d] as f64 / (per_axis - 1) as f64;
                point[d] = self.bounds.lo[d] + frac * (self.bounds.hi[d] - self.bounds.lo[d]);
            }
            if self
                .obstacles
                .iter()
                .all(|o| o.eval_h(&point).map(|h| h >= 0.0).unwrap_or(false))
            {
                return true;
            }
            // odometer increment
            let mut d = 0;
            loop {
                idx[d] += 1;
                if idx[d] < per_axis {
                    break;
                }
                idx[d] = 0;
                d += 1;
                if d == dim {
                    return false;
                }
            }
        }
    }

    pub fn obstacles(&self) -> &[SemiConvexObstacle] {
        &self.obstacles
    }

    pub fn obstacle(&self, id: usize) -> Option<&SemiConvexObstacle> {
        self.obstacles.iter().find(|o| o.id() == id)
    }

    pub fn bounds(&self) -> &WorkspaceBounds {
        &self.bounds
    }

    pub fn state_map(&self) -> Option<&DMatrix<f64>> {
        self.state_map.as_ref()
    }

    pub fn is_empty(&self) -> bool {
        self.obstacles.is_empty()
    }

    /// Maps a system state into the barrier space.
    pub fn project_state(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.state_map {
            None => {
                if x.len() != self.bounds.dim() {
                    return Err(Error::dim(format!(
                        "state length {} vs workspace dimension {}",
                        x.len(),
                        self.bounds.dim()
                    )));
                }
                Ok(x.clone())
            }
            Some(z) => {
                if x.len() != z.ncols() {
                    return Err(Error::dim(format!(
                        "state length {} vs state map columns {}",
                        x.len(),
                        z.ncols()
                    )));
                }
                Ok(z * x)
            }
        }
    }

    /// Minimum barrier value across obstacles at a system state; `+inf` for an
    /// empty field.
    pub fn min_h(&self, x: &DVector<f64>) -> Result<f64> {
        let z = self.project_state(x)?;
        let mut best = f64::INFINITY;
        for o in &self.obstacles {
            best = best.min(o.eval_h(&z)?);
        }
        Ok(best)
    }
}

/// Reports every `(t, id)` with `h_id(x_t) < -1e-9` for the interior times
/// `t = 1..T-1`, sorted by time then id. Empty report means safe.
pub fn check_trajectory_safe(field: &ObstacleField, traj: &Trajectory) -> Result<Vec<Violation>> {
    let mut out = Vec::new();
    let horizon = traj.horizon();
    for t in 1..horizon {
        let z = field.project_state(&traj.states[t])?;
        for o in field.obstacles() {
            let h = o.eval_h(&z)?;
            if h < -SAFETY_TOL {
                out.push(Violation { t, id: o.id(), h });
            }
        }
    }
    out.sort_by_key(|v| (v.t, v.id));
    Ok(out)
}
