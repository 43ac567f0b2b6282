//! Backward recursion vs. an independent dense solve of the same Lagrangian
//! over the stacked input vector.

use brsca_core::{backward_recursion, riccati_unconstrained, DualState, SurrogateSet};
use brsca_testkit::{lagrangian_value, relative_input_error, solve_stacked, InstanceSampler, InstanceShape};
use nalgebra::DVector;

#[test]
fn recursion_matches_dense_oracle_on_random_instances() {
    let mut sampler = InstanceSampler::new(2024);
    let mut checked = 0;
    while checked < 60 {
        let inst = sampler.instance(InstanceShape::default());
        let vf = backward_recursion(&inst.sys, &inst.cost, &inst.surrogates, &inst.input, &inst.duals)
            .expect("recursion");
        let traj = vf.rollout(&inst.sys, &inst.x0).expect("rollout");
        let dense = solve_stacked(&inst);

        let rel = relative_input_error(&traj.inputs, &dense.inputs);
        assert!(rel <= 1e-8, "input mismatch {rel:.3e}");

        let lag = lagrangian_value(&traj, &inst.cost, &inst.surrogates, &inst.input, &inst.duals);
        let denom = dense.lagrangian.abs().max(1.0);
        assert!(
            (lag - dense.lagrangian).abs() / denom <= 1e-6,
            "Lagrangian mismatch {} vs {}",
            lag,
            dense.lagrangian
        );

        // the cost-to-go at t=0 must equal the dense optimal value
        let v0 = vf.value_at(0, &inst.x0);
        assert!(
            (v0 - dense.lagrangian).abs() / denom <= 1e-6,
            "value function {} vs dense optimum {}",
            v0,
            dense.lagrangian
        );
        checked += 1;
    }
}

#[test]
fn riccati_matches_batch_least_squares() {
    // zero-dual instances reduce the oracle to the batch quadratic solve
    let mut sampler = InstanceSampler::new(99);
    for _ in 0..10 {
        let mut inst = sampler.instance(InstanceShape {
            max_state_dim: 3,
            max_input_dim: 2,
            max_horizon: 5,
            max_surrogates: 0,
            with_input_constraints: false,
        });
        inst.duals = DualState::zeros_for(&inst.surrogates, &inst.input);

        let vf = riccati_unconstrained(&inst.sys, &inst.cost).expect("riccati");
        for x0 in [
            inst.x0.clone(),
            DVector::from_element(inst.sys.state_dim(), 1.0),
            DVector::from_fn(inst.sys.state_dim(), |i, _| (i as f64 + 1.0) * 0.5),
        ] {
            inst.x0 = x0;
            let traj = vf.rollout(&inst.sys, &inst.x0).expect("rollout");
            let dense = solve_stacked(&inst);
            let rel = relative_input_error(&traj.inputs, &dense.inputs);
            assert!(rel <= 1e-8, "gain mismatch {rel:.3e}");
        }
    }
}

#[test]
fn zero_duals_give_zero_feedforward_bitwise() {
    let mut sampler = InstanceSampler::new(7);
    for _ in 0..20 {
        let mut inst = sampler.instance(InstanceShape::default());
        inst.duals = DualState::zeros_for(&inst.surrogates, &inst.input);
        let vf = backward_recursion(&inst.sys, &inst.cost, &inst.surrogates, &inst.input, &inst.duals)
            .expect("recursion");
        let riccati = riccati_unconstrained(&inst.sys, &inst.cost).expect("riccati");
        for t in 0..=inst.cost.horizon() {
            assert!((&vf.f[t] - &riccati.f[t]).amax() <= 1e-10);
            assert!(vf.s[t].amax() <= 1e-12);
        }
        for t in 0..inst.cost.horizon() {
            assert!(vf.l[t].amax() <= 1e-12);
        }
    }
}

#[test]
fn stage_aggregate_never_shrinks_below_q() {
    use brsca_core::StageCostAggregate;
    let mut sampler = InstanceSampler::new(55);
    for _ in 0..20 {
        let inst = sampler.instance(InstanceShape::default());
        for t in 1..inst.cost.horizon() {
            let agg = StageCostAggregate::build(inst.cost.q(), &inst.surrogates, &inst.duals, t);
            let gap = &agg.q_lam - inst.cost.q();
            let min_eig = nalgebra::SymmetricEigen::new(gap.clone())
                .eigenvalues
                .iter()
                .fold(f64::INFINITY, |a, &b| a.min(b));
            assert!(min_eig >= -1e-10, "Q_lambda dipped below Q by {min_eig:.3e}");
        }
    }
    let _ = SurrogateSet::new();
}
