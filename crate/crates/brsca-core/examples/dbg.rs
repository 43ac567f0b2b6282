use brsca_core::*;
use nalgebra::{DMatrix, DVector};

fn vec2(a: f64, b: f64) -> DVector<f64> { DVector::from_vec(vec![a, b]) }

fn main() {
    let sys = LtiSystem::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 0.5).unwrap();
    let cost = CostSpec::new(
        DMatrix::identity(2, 2) * 0.5,
        DMatrix::identity(2, 2),
        DMatrix::identity(2, 2) * 5.0,
        24,
    ).unwrap();
    let obs = SemiConvexObstacle::ellipse_tight(vec2(1.5, 0.0), DMatrix::identity(2, 2), 0.36, 0).unwrap();
    let field = ObstacleField::new(
        vec![obs],
        WorkspaceBounds::new(vec2(-5.0, -5.0), vec2(5.0, 5.0)).unwrap(),
        None,
    ).unwrap();
    let input = InputConstraints::none(24, 2);
    let x0 = vec2(3.0, 0.15);
    let config = BrscaConfig { eps: 0.05, alpha0: 0.5, ..BrscaConfig::default() };
    let result = brsca_solve(&sys, &cost, &field, &input, &x0, &config).unwrap();
    println!("status {:?} cost {} outer {}", result.status, result.cost, result.outer_iterations);
    for rec in &result.audit {
        println!(
            "outer {} violations {:?} included {:?} passes {} inner_iters {} cost {:.4} retried {} unconv {} refs {}",
            rec.outer_iter, rec.violations.len(), rec.included, rec.inner_passes,
            rec.inner_iterations, rec.cost, rec.retried, rec.unconverged, rec.references.len()
        );
    }
    // final trajectory h values
    for (t, x) in result.trajectory.states.iter().enumerate() {
        let h = field.min_h(x).unwrap();
        if h < 0.2 { println!("  t={t} x=({:.3},{:.3}) h={:.4}", x[0], x[1], h); }
    }
}
