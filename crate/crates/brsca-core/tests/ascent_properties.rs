//! Dual-ascent properties: weak duality, monotone dual value, gradient
//! correctness, and complementary slackness against a projected-gradient
//! oracle.

use brsca_core::{
    backward_recursion, dual_ascent, dual_gradients, evaluate_cost, kkt_residuals, rollout,
    AscentOptions, CostSpec, DualState, Error, InputConstraints, LtiSystem, QuadraticSurrogate,
    SurrogateSet,
};
use brsca_testkit::{lagrangian_value, InstanceSampler, InstanceShape};
use nalgebra::{DMatrix, DVector};

fn vec2(a: f64, b: f64) -> DVector<f64> {
    DVector::from_vec(vec![a, b])
}

/// Point mass on the plane with unit timestep.
fn point_mass() -> LtiSystem {
    LtiSystem::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap()
}

fn cost_2d(horizon: usize) -> CostSpec {
    CostSpec::new(
        DMatrix::identity(2, 2) * 0.5,
        DMatrix::identity(2, 2),
        DMatrix::identity(2, 2) * 4.0,
        horizon,
    )
    .unwrap()
}

/// A hand-checkable instance: one conservative surrogate pinned at t = 3 built
/// about a feasible reference above the obstacle, plus a generous input box.
fn halfspace_like_instance() -> (LtiSystem, CostSpec, SurrogateSet, InputConstraints, DVector<f64>) {
    let sys = point_mass();
    let cost = cost_2d(6);
    let obs = brsca_core::SemiConvexObstacle::ellipse_tight(
        vec2(1.5, 0.0),
        DMatrix::identity(2, 2),
        0.25,
        0,
    )
    .unwrap();
    let surrogate = brsca_core::convexify(&obs, &vec2(1.5, 1.2), 3).unwrap();
    let surrogates: SurrogateSet = [surrogate].into_iter().collect();
    let input = InputConstraints::symmetric_box(2.0, 2, 6).unwrap();
    let x0 = vec2(3.0, 0.0);
    (sys, cost, surrogates, input, x0)
}

#[test]
fn weak_duality_against_verified_feasible_point() {
    let (sys, cost, surrogates, input, x0) = halfspace_like_instance();

    // hand-built feasible inputs passing above the obstacle through the
    // surrogate's reference point at t = 3
    let u_feas = vec![
        vec2(-0.5, 1.2),
        vec2(-0.5, 0.0),
        vec2(-0.5, 0.0),
        vec2(-0.5, -0.6),
        vec2(-0.5, -0.6),
        vec2(-0.5, 0.0),
    ];
    let traj = rollout(&sys, &x0, &u_feas).unwrap();
    // independent feasibility verification
    for ((t, _), s) in surrogates.iter() {
        assert!(s.margin(&traj.states[*t]) <= 0.0, "surrogate violated at t={t}");
    }
    for t in 0..traj.horizon() {
        assert!(input.stage(t).margins(&traj.inputs[t]).max() <= 0.0);
    }
    let j_feas = evaluate_cost(&traj, &cost).unwrap();

    let out = dual_ascent(
        &sys,
        &cost,
        &surrogates,
        &input,
        &x0,
        DualState::zeros_for(&surrogates, &input),
        &AscentOptions::new(1e-8).with_alpha0(0.05).with_max_iters(4000).traced(),
    );
    let trace = match out {
        Ok(o) => o.trace,
        Err(Error::Convergence { best, .. }) => best.trace,
        Err(e) => panic!("unexpected error {e}"),
    };
    assert!(trace.len() > 10);
    for rec in &trace {
        assert!(
            rec.dual_value <= j_feas + 1e-6,
            "weak duality violated at iter {}: D = {} > J_feas = {}",
            rec.iter,
            rec.dual_value,
            j_feas
        );
    }
}

#[test]
fn dual_value_is_nondecreasing_under_diminishing_steps() {
    let (sys, cost, surrogates, input, x0) = halfspace_like_instance();
    let out = dual_ascent(
        &sys,
        &cost,
        &surrogates,
        &input,
        &x0,
        DualState::zeros_for(&surrogates, &input),
        &AscentOptions::new(1e-8).with_alpha0(0.05).with_max_iters(3000).traced(),
    );
    let trace = match out {
        Ok(o) => o.trace,
        Err(Error::Convergence { best, .. }) => best.trace,
        Err(e) => panic!("unexpected error {e}"),
    };
    for pair in trace.windows(2) {
        assert!(
            pair[1].dual_value >= pair[0].dual_value - 1e-6,
            "dual value dropped: {} -> {}",
            pair[0].dual_value,
            pair[1].dual_value
        );
    }
}

#[test]
fn gradient_matches_finite_differences_of_dual_function() {
    let mut sampler = InstanceSampler::new(314);
    let mut done = 0;
    while done < 10 {
        let inst = sampler.instance(InstanceShape {
            max_state_dim: 3,
            max_input_dim: 2,
            max_horizon: 5,
            max_surrogates: 2,
            with_input_constraints: true,
        });
        if inst.surrogates.is_empty() && inst.input.is_empty() {
            continue;
        }
        // keep duals strictly interior so the +- step stays in the orthant
        let mut duals = inst.duals.clone();
        for (t, id) in inst.surrogates.keys().copied().collect::<Vec<_>>() {
            duals.set_lambda(t, id, duals.lambda_at(t, id) + 0.2);
        }
        for t in 0..inst.cost.horizon() {
            for j in 0..inst.input.stage(t).rows() {
                let v = duals.mu()[t][j];
                duals.set_mu(t, j, v + 0.2);
            }
        }

        let dual_value = |d: &DualState| -> f64 {
            let vf = backward_recursion(&inst.sys, &inst.cost, &inst.surrogates, &inst.input, d)
                .expect("recursion");
            vf.value_at(0, &inst.x0)
        };

        let vf = backward_recursion(&inst.sys, &inst.cost, &inst.surrogates, &inst.input, &duals)
            .expect("recursion");
        let traj = vf.rollout(&inst.sys, &inst.x0).expect("rollout");
        let grad = dual_gradients(&traj, &inst.surrogates, &inst.input);

        let step = 1e-5;
        let check = |analytic: f64, fd: f64| {
            let denom = analytic.abs().max(fd.abs()).max(1e-6);
            assert!(
                (analytic - fd).abs() / denom <= 1e-4,
                "gradient mismatch: analytic {analytic}, fd {fd}"
            );
        };
        for ((t, id), g) in &grad.lambda {
            let mut plus = duals.clone();
            plus.set_lambda(*t, *id, duals.lambda_at(*t, *id) + step);
            let mut minus = duals.clone();
            minus.set_lambda(*t, *id, duals.lambda_at(*t, *id) - step);
            check(*g, (dual_value(&plus) - dual_value(&minus)) / (2.0 * step));
        }
        for t in 0..inst.cost.horizon() {
            for j in 0..inst.input.stage(t).rows() {
                let base = duals.mu()[t][j];
                let mut plus = duals.clone();
                plus.set_mu(t, j, base + step);
                let mut minus = duals.clone();
                minus.set_mu(t, j, base - step);
                check(grad.mu[t][j], (dual_value(&plus) - dual_value(&minus)) / (2.0 * step));
            }
        }
        done += 1;
    }
}

/// Projected gradient descent on the stacked inputs for the same convex
/// problem: min J(U) s.t. one linear surrogate constraint. Independent route
/// used to cross-check the saddle point.
fn primal_projected_gradient_oracle(
    sys: &LtiSystem,
    cost: &CostSpec,
    c: &DVector<f64>,
    d: f64,
    t_con: usize,
    x0: &DVector<f64>,
) -> f64 {
    let horizon = cost.horizon();
    let m = sys.input_dim();
    let mut u: Vec<DVector<f64>> = vec![DVector::zeros(m); horizon];

    let cost_of = |u: &[DVector<f64>]| -> f64 {
        let traj = rollout(sys, x0, u).unwrap();
        evaluate_cost(&traj, cost).unwrap()
    };

    // the constraint c'x_{t_con} + d <= 0 is linear in U with coefficients
    // a_t = B' (A')^{t_con-1-t} c for t < t_con
    let mut a_coefs: Vec<DVector<f64>> = vec![DVector::zeros(m); horizon];
    for (t, coef) in a_coefs.iter_mut().enumerate().take(t_con) {
        let mut v = c.clone();
        for _ in 0..(t_con - 1 - t) {
            v = sys.a().transpose() * v;
        }
        *coef = sys.b().transpose() * v;
    }
    let b_offset = {
        let mut v = x0.clone();
        for _ in 0..t_con {
            v = sys.a() * &v;
        }
        c.dot(&v) + d
    };
    let norm2: f64 = a_coefs.iter().map(|a| a.norm_squared()).sum();

    let project = |u: &mut Vec<DVector<f64>>| {
        let val: f64 = b_offset + u.iter().zip(&a_coefs).map(|(ut, at)| at.dot(ut)).sum::<f64>();
        if val > 0.0 && norm2 > 0.0 {
            let scale = val / norm2;
            for (ut, at) in u.iter_mut().zip(&a_coefs) {
                *ut -= at * scale;
            }
        }
    };

    project(&mut u);
    let mut step = 1.0;
    for _ in 0..5000 {
        // finite-difference gradient of the quadratic; kept independent of
        // any solver code on purpose
        let mut grad: Vec<DVector<f64>> = Vec::with_capacity(horizon);
        let h = 1e-6;
        let base = cost_of(&u);
        let mut grad_norm2 = 0.0;
        for t in 0..horizon {
            let mut g = DVector::zeros(m);
            for j in 0..m {
                let mut up = u.clone();
                up[t][j] += h;
                g[j] = (cost_of(&up) - base) / h;
            }
            grad_norm2 += g.norm_squared();
            grad.push(g);
        }
        if grad_norm2 < 1e-16 {
            break;
        }
        // backtracking projected step
        loop {
            let mut cand: Vec<DVector<f64>> = u
                .iter()
                .zip(&grad)
                .map(|(ut, gt)| ut - gt * step)
                .collect();
            project(&mut cand);
            if cost_of(&cand) <= base - 1e-4 * step * grad_norm2 {
                u = cand;
                step *= 1.3;
                break;
            }
            step *= 0.5;
            if step < 1e-14 {
                return base;
            }
        }
    }
    cost_of(&u)
}

#[test]
fn complementary_slackness_at_convergence() {
    // 1D double integrator; halfspace surrogate forces position >= 0.8 at t=4
    let dt = 0.5;
    let sys = LtiSystem::new(
        DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, dt]),
    )
    .unwrap();
    let cost = CostSpec::new(
        DMatrix::identity(2, 2),
        DMatrix::identity(1, 1),
        DMatrix::identity(2, 2) * 2.0,
        8,
    )
    .unwrap();
    let c = vec2(-1.0, 0.0);
    let d = 0.8;
    let surrogate =
        QuadraticSurrogate::from_parts(DMatrix::zeros(2, 2), c.clone(), d, 0, 4).unwrap();
    let surrogates: SurrogateSet = [surrogate].into_iter().collect();
    let input = InputConstraints::none(8, 1);
    let x0 = vec2(2.0, 0.0);

    let out = match dual_ascent(
        &sys,
        &cost,
        &surrogates,
        &input,
        &x0,
        DualState::zeros_for(&surrogates, &input),
        &AscentOptions::new(1e-12).with_alpha0(2.0).with_max_iters(60000),
    ) {
        Ok(o) => o,
        Err(Error::Convergence { best, .. }) => *best,
        Err(e) => panic!("unexpected {e}"),
    };

    let report = kkt_residuals(&out.trajectory, &out.duals, &surrogates, &input);
    assert!(report.max_primal <= 1e-3, "primal violation {}", report.max_primal);
    assert!(
        report.max_slack_lambda <= 1e-3,
        "complementary slackness {}",
        report.max_slack_lambda
    );
    assert!(report.min_dual >= 0.0);

    // independent primal oracle lands on the same optimal cost
    let oracle_cost = primal_projected_gradient_oracle(&sys, &cost, &c, d, 4, &x0);
    assert!(
        (out.cost - oracle_cost).abs() / oracle_cost.max(1.0) <= 1e-3,
        "cost {} vs oracle {}",
        out.cost,
        oracle_cost
    );
    // and weak duality binds tightly at the saddle (zero duality gap)
    let lag = lagrangian_value(&out.trajectory, &cost, &surrogates, &input, &out.duals);
    assert!((lag - out.dual_value).abs() <= 1e-6);
}
