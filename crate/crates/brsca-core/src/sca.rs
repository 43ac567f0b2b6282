//! Conservative quadratic surrogates for barrier constraints.
//!
//! About a reference point `x0`, the barrier `h` is replaced by
//!
//! ```text
//! f(x) = -h(x0) - grad_h(x0)'(x - x0) + 1/2 (x - x0)' H (x - x0)
//! ```
//!
//! with `H` the obstacle's curvature certificate. `f` is convex, matches `-h`
//! to first order at `x0`, and dominates `-h` everywhere, so `f(x) <= 0`
//! implies `h(x) >= 0`: the convexified safe region is a subset of the true
//! one.

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::linalg;
use crate::obstacle::SemiConvexObstacle;
use crate::Result;

/// Coefficients of `f(x) = 1/2 x' H x + c' x + d`, pinned to one obstacle,
/// one time index and the reference point used to build them. Immutable:
/// re-linearization creates a new surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSurrogate {
    h: DMatrix<f64>,
    c: DVector<f64>,
    d: f64,
    obstacle_id: usize,
    t: usize,
    x_ref: DVector<f64>,
}

impl QuadraticSurrogate {
    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn obstacle_id(&self) -> usize {
        self.obstacle_id
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn x_ref(&self) -> &DVector<f64> {
        &self.x_ref
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// `f(x)`; non-positive means inside the convexified safe region.
    pub fn margin(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x.transpose() * &self.h * x)[(0, 0)] + self.c.dot(x) + self.d
    }

    /// `grad f(x) = H x + c`.
    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.h * x + &self.c
    }

    /// Test-oriented constructor from raw coefficients.
    pub fn from_parts(
        h: DMatrix<f64>,
        c: DVector<f64>,
        d: f64,
        obstacle_id: usize,
        t: usize,
    ) -> Result<Self> {
        let n = c.len();
        if h.nrows() != n || h.ncols() != n {
            return Err(Error::dim("surrogate H/c dimension mismatch"));
        }
        if t == 0 {
            return Err(Error::invalid("surrogate time index must be >= 1"));
        }
        let x_ref = DVector::zeros(n);
        Ok(QuadraticSurrogate {
            h,
            c,
            d,
            obstacle_id,
            t,
            x_ref,
        })
    }
}

/// Builds the surrogate for `obs` about `x_ref` (both in the obstacle's own
/// space), attached to time index `t`.
pub fn convexify(obs: &SemiConvexObstacle, x_ref: &DVector<f64>, t: usize) -> Result<QuadraticSurrogate> {
    convexify_mapped(obs, None, x_ref, t)
}

/// Builds the surrogate when the barrier acts on `z = Z x` for a system state
/// `x`: the coefficients are lifted through the map so the result lives in the
/// full state space. `x_ref` is the full state reference.
pub fn convexify_mapped(
    obs: &SemiConvexObstacle,
    state_map: Option<&DMatrix<f64>>,
    x_ref: &DVector<f64>,
    t: usize,
) -> Result<QuadraticSurrogate> {
    if t == 0 {
        return Err(Error::invalid(
            "surrogates attach to interior times t in 1..T-1",
        ));
    }
    let outcome = obs.certify_semiconvex();
    if !outcome.ok {
        let detail = outcome
            .witness
            .map(|(v, _)| format!("certificate gap eigenvalue {v:.3e}"))
            .unwrap_or_else(|| "certificate check failed".into());
        return Err(Error::Certificate {
            id: obs.id(),
            detail,
        });
    }

    let z_ref = match state_map {
        None => x_ref.clone(),
        Some(z) => {
            if x_ref.len() != z.ncols() {
                return Err(Error::dim(format!(
                    "reference has length {} but state map has {} columns",
                    x_ref.len(),
                    z.ncols()
                )));
            }
            z * x_ref
        }
    };

    let h_val = obs.eval_h(&z_ref)?;
    let grad = obs.grad_h(&z_ref)?;
    let cert = linalg::symmetrize(obs.certificate());

    // native-space expansion of f(z) about z_ref
    let c_native = -&grad - &cert * &z_ref;
    let d = -h_val + grad.dot(&z_ref) + 0.5 * (z_ref.transpose() * &cert * &z_ref)[(0, 0)];

    let (h_full, c_full) = match state_map {
        None => (cert, c_native),
        Some(z) => (z.transpose() * &cert * z, z.transpose() * c_native),
    };

    Ok(QuadraticSurrogate {
        h: h_full,
        c: c_full,
        d,
        obstacle_id: obs.id(),
        t,
        x_ref: x_ref.clone(),
    })
}

/// `f(x)` for a surrogate; kept as a free function mirroring the margin
/// method.
pub fn surrogate_margin(s: &QuadraticSurrogate, x: &DVector<f64>) -> f64 {
    s.margin(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::obstacle::{Ellipse, ObstacleKind};
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vec2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    fn unit_circle() -> SemiConvexObstacle {
        SemiConvexObstacle::ellipse_tight(vec2(0.0, 0.0), DMatrix::identity(2, 2), 1.0, 0).unwrap()
    }

    #[test]
    fn exact_at_reference() {
        let obs = unit_circle();
        let x_ref = vec2(2.0, 0.0);
        let s = convexify(&obs, &x_ref, 1).unwrap();
        // f(x_ref) = -h(x_ref) = -3
        assert_abs_diff_eq!(s.margin(&x_ref), -3.0, epsilon = 1e-12);
    }

    #[test]
    fn exactness_cancels_for_random_references() {
        let obs = SemiConvexObstacle::ellipse_tight(
            vec2(0.5, -0.25),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.0]),
            0.9,
            3,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let x_ref = vec2(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let s = convexify(&obs, &x_ref, 2).unwrap();
            let resid = s.margin(&x_ref) + obs.eval_h(&x_ref).unwrap();
            assert!(resid.abs() <= 1e-12, "residual {resid:.3e}");
        }
    }

    #[test]
    fn conservative_hand_instance() {
        let obs = unit_circle();
        let s = convexify(&obs, &vec2(2.0, 0.0), 1).unwrap();
        let x = vec2(0.0, 3.0);
        // -3 - (4,0).(-2,3) + ||(-2,3)||^2 = 18
        assert_abs_diff_eq!(s.margin(&x), 18.0, epsilon = 1e-12);
        assert!(s.margin(&x) >= -obs.eval_h(&x).unwrap());
        assert_abs_diff_eq!(-obs.eval_h(&x).unwrap(), -8.0, epsilon = 1e-12);
    }

    #[test]
    fn margin_signs_at_reference() {
        let obs = unit_circle();
        // strictly safe reference: negative margin
        let s = convexify(&obs, &vec2(2.0, 0.0), 1).unwrap();
        assert!(s.margin(&vec2(2.0, 0.0)) < 0.0);
        // boundary reference: zero margin
        let s = convexify(&obs, &vec2(1.0, 0.0), 1).unwrap();
        assert_abs_diff_eq!(s.margin(&vec2(1.0, 0.0)), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn margin_hand_expansion_inside_segment() {
        let obs = unit_circle();
        let s = convexify(&obs, &vec2(2.0, 0.0), 1).unwrap();
        // -3 - (4,0).(-0.5,0) + 0.25 = -0.75
        assert_abs_diff_eq!(s.margin(&vec2(1.5, 0.0)), -0.75, epsilon = 1e-12);
    }

    #[test]
    fn uncertified_obstacle_is_refused() {
        let bad = SemiConvexObstacle::new(
            ObstacleKind::Ellipse(Ellipse::new(vec2(0.0, 0.0), DMatrix::identity(2, 2), 1.0).unwrap()),
            DMatrix::identity(2, 2), // needs 2I
            5,
        )
        .unwrap();
        let err = convexify(&bad, &vec2(2.0, 0.0), 1).unwrap_err();
        assert!(matches!(err, Error::Certificate { id: 5, .. }));
    }

    #[test]
    fn conservativeness_sampled() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let obstacles = vec![
            unit_circle(),
            SemiConvexObstacle::ellipse_tight(
                vec2(1.0, -0.5),
                DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 3.0]),
                0.6,
                1,
            )
            .unwrap(),
        ];
        for obs in &obstacles {
            for _ in 0..5 {
                let x_ref = vec2(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
                let s = convexify(obs, &x_ref, 1).unwrap();
                for _ in 0..1000 {
                    let x = vec2(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
                    let lhs = s.margin(&x);
                    let rhs = -obs.eval_h(&x).unwrap();
                    assert!(lhs >= rhs - 1e-9, "conservativeness violated: {lhs} < {rhs}");
                }
            }
        }
    }

    #[test]
    fn surrogate_h_is_psd_and_equals_certificate() {
        let obs = unit_circle();
        let s = convexify(&obs, &vec2(1.5, 0.3), 1).unwrap();
        assert!(crate::linalg::min_eigenvalue_sym(s.h()) >= -1e-10);
        assert!((s.h() - obs.certificate()).amax() < 1e-14);
    }

    #[test]
    fn gradient_matches_negated_barrier_gradient_at_reference() {
        let obs = SemiConvexObstacle::ellipse_tight(
            vec2(-0.4, 0.9),
            DMatrix::from_row_slice(2, 2, &[1.4, -0.3, -0.3, 0.8]),
            1.2,
            0,
        )
        .unwrap();
        let x_ref = vec2(1.7, 0.4);
        let s = convexify(&obs, &x_ref, 1).unwrap();
        let diff = s.gradient(&x_ref) + obs.grad_h(&x_ref).unwrap();
        assert!(diff.amax() <= 1e-9);
    }

    #[test]
    fn lifted_surrogate_only_sees_mapped_coordinates() {
        let obs = unit_circle();
        let z = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let x_ref = DVector::from_vec(vec![2.0, 0.0, -5.0, 3.0]);
        let s = convexify_mapped(&obs, Some(&z), &x_ref, 1).unwrap();
        // exactness at the reference regardless of the ignored velocity entries
        assert_abs_diff_eq!(s.margin(&x_ref), -3.0, epsilon = 1e-12);
        // velocity coordinates do not change the margin
        let mut x2 = x_ref.clone();
        x2[2] = 100.0;
        x2[3] = -7.0;
        assert_abs_diff_eq!(s.margin(&x2), s.margin(&x_ref), epsilon = 1e-12);
    }
}
