//! Test support for the solver crates.
//!
//! The centerpiece is a dense oracle that minimizes the constrained-LQR
//! Lagrangian over the *stacked* input vector by eliminating the states
//! through the dynamics and solving one linear system. It shares no code with
//! the backward recursion it is used to check.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use brsca_core::{
    CostSpec, DualState, InputConstraints, LtiSystem, QuadraticSurrogate, SurrogateSet, Trajectory,
};

/// Everything the dense oracle needs for one instance.
pub struct DenseInstance {
    pub sys: LtiSystem,
    pub cost: CostSpec,
    pub surrogates: SurrogateSet,
    pub input: InputConstraints,
    pub duals: DualState,
    pub x0: DVector<f64>,
}

/// Solution of the stacked minimization.
pub struct DenseSolution {
    pub inputs: Vec<DVector<f64>>,
    pub trajectory: Trajectory,
    /// Lagrangian value at the minimizer.
    pub lagrangian: f64,
}

/// Explicit Lagrangian value of a trajectory under given multipliers:
/// objective + sum lambda * f + sum mu' (G u + e).
pub fn lagrangian_value(
    traj: &Trajectory,
    cost: &CostSpec,
    surrogates: &SurrogateSet,
    input: &InputConstraints,
    duals: &DualState,
) -> f64 {
    let mut value = brsca_core::evaluate_cost(traj, cost).expect("cost evaluation");
    for ((t, id), s) in surrogates.iter() {
        value += duals.lambda_at(*t, *id) * s.margin(&traj.states[*t]);
    }
    for t in 0..traj.horizon() {
        let margins = input.stage(t).margins(&traj.inputs[t]);
        value += duals.mu()[t].dot(&margins);
    }
    value
}

/// Minimizes the Lagrangian over all inputs at once.
///
/// With `x_t = A^t x0 + Gamma_t U` (U the stacked inputs), the Lagrangian is
/// `U' Hq U + g' U + const`; the minimizer solves `2 Hq U = -g`.
pub fn solve_stacked(inst: &DenseInstance) -> DenseSolution {
    let n = inst.sys.state_dim();
    let m = inst.sys.input_dim();
    let horizon = inst.cost.horizon();
    let a = inst.sys.a();
    let b = inst.sys.b();

    // powers of A and the block rows Gamma_t (n x horizon*m):
    // x_t = phi_t + Gamma_t U
    let mut phis: Vec<DVector<f64>> = Vec::with_capacity(horizon + 1);
    phis.push(inst.x0.clone());
    for t in 0..horizon {
        phis.push(a * &phis[t]);
    }
    let mut gammas: Vec<DMatrix<f64>> = Vec::with_capacity(horizon + 1);
    gammas.push(DMatrix::zeros(n, horizon * m));
    for t in 0..horizon {
        // Gamma_{t+1} = A Gamma_t + [0 ... B ... 0] with B in block t
        let mut next = a * &gammas[t];
        next.view_mut((0, t * m), (n, m)).copy_from(b);
        gammas.push(next);
    }

    // quadratic and linear terms in U
    let dim = horizon * m;
    let mut hq = DMatrix::<f64>::zeros(dim, dim);
    let mut g = DVector::<f64>::zeros(dim);

    // state-quadratic contributions: sum_t x_t' Qbar_t x_t + qlin_t' x_t
    for t in 0..=horizon {
        let mut qbar = if t == horizon {
            inst.cost.p().clone()
        } else {
            inst.cost.q().clone()
        };
        let mut qlin = DVector::<f64>::zeros(n);
        if t >= 1 && t < horizon {
            for ((_, id), s) in inst.surrogates.at_time(t) {
                let lam = inst.duals.lambda_at(t, *id);
                qbar += s.h() * (0.5 * lam);
                qlin += s.c() * lam;
            }
        }
        let gamma = &gammas[t];
        hq += gamma.transpose() * &qbar * gamma;
        g += gamma.transpose() * (&qbar * &phis[t] * 2.0 + qlin);
    }

    // input terms: u_t' R u_t and mu_t' G_t u_t
    for t in 0..horizon {
        let mut block = hq.view_mut((t * m, t * m), (m, m));
        block += inst.cost.r();
        let stage = inst.input.stage(t);
        let gt_mu = stage.g.transpose() * &inst.duals.mu()[t];
        let mut seg = g.rows_mut(t * m, m);
        seg += gt_mu;
    }

    // stationarity: 2 Hq U + g = 0
    let u_stacked = (hq * 2.0)
        .lu()
        .solve(&(-&g))
        .expect("stacked system is positive definite");

    let inputs: Vec<DVector<f64>> = (0..horizon)
        .map(|t| u_stacked.rows(t * m, m).into_owned())
        .collect();
    let trajectory = brsca_core::rollout(&inst.sys, &inst.x0, &inputs).expect("rollout");
    let lagrangian = lagrangian_value(
        &trajectory,
        &inst.cost,
        &inst.surrogates,
        &inst.input,
        &inst.duals,
    );
    DenseSolution {
        inputs,
        trajectory,
        lagrangian,
    }
}

/// Relative gap between two stacked input sequences.
pub fn relative_input_error(lhs: &[DVector<f64>], rhs: &[DVector<f64>]) -> f64 {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (a, b) in lhs.iter().zip(rhs) {
        num += (a - b).norm_squared();
        den += b.norm_squared();
    }
    (num / den.max(1e-300)).sqrt()
}

/// Deterministic random-instance generator for oracle comparisons.
pub struct InstanceSampler {
    rng: ChaCha8Rng,
}

/// Shape limits for one sampled instance.
#[derive(Clone, Copy)]
pub struct InstanceShape {
    pub max_state_dim: usize,
    pub max_input_dim: usize,
    pub max_horizon: usize,
    pub max_surrogates: usize,
    pub with_input_constraints: bool,
}

impl Default for InstanceShape {
    fn default() -> Self {
        InstanceShape {
            max_state_dim: 4,
            max_input_dim: 2,
            max_horizon: 6,
            max_surrogates: 3,
            with_input_constraints: true,
        }
    }
}

impl InstanceSampler {
    pub fn new(seed: u64) -> Self {
        InstanceSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn matrix(&mut self, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| self.rng.random_range(-scale..scale))
    }

    fn psd(&mut self, n: usize, scale: f64) -> DMatrix<f64> {
        let l = self.matrix(n, n, scale);
        &l * l.transpose()
    }

    /// Random stabilizable system; resamples until the PBH test passes.
    pub fn system(&mut self, n: usize, m: usize) -> LtiSystem {
        loop {
            let raw = self.matrix(n, n, 1.0);
            // scale the spectrum into a moderate band so instances stay sane
            let radius = raw
                .complex_eigenvalues()
                .iter()
                .fold(0.0f64, |acc, z| acc.max(z.norm()));
            let target = self.rng.random_range(0.5..1.15);
            let a = if radius > 1e-9 { raw * (target / radius) } else { raw };
            let b = self.matrix(n, m, 1.0);
            if let Ok(sys) = LtiSystem::new(a, b) {
                return sys;
            }
        }
    }

    /// Random instance with PD `Q` (hence detectable), random PSD surrogates
    /// at interior times, optional box input constraints, and nonnegative
    /// duals.
    pub fn instance(&mut self, shape: InstanceShape) -> DenseInstance {
        let n = self.rng.random_range(1..=shape.max_state_dim);
        let m = self.rng.random_range(1..=shape.max_input_dim);
        let horizon = self.rng.random_range(2..=shape.max_horizon);

        let sys = self.system(n, m);
        let q = self.psd(n, 0.7) + DMatrix::identity(n, n) * 0.1;
        let r = self.psd(m, 0.5) + DMatrix::identity(m, m) * 0.5;
        let p = self.psd(n, 0.7) + DMatrix::identity(n, n) * 0.1;
        let cost = CostSpec::new(q, r, p, horizon).expect("valid cost");

        let input = if shape.with_input_constraints && self.rng.random_bool(0.8) {
            let limit = self.rng.random_range(0.3..2.0);
            InputConstraints::symmetric_box(limit, m, horizon).expect("box")
        } else {
            InputConstraints::none(horizon, m)
        };

        let mut surrogates = SurrogateSet::new();
        if horizon >= 2 && shape.max_surrogates > 0 {
            let count = self.rng.random_range(0..=shape.max_surrogates);
            for id in 0..count {
                let t = self.rng.random_range(1..horizon);
                if surrogates.contains(t, id) {
                    continue;
                }
                let h = self.psd(n, 0.8);
                let c = DVector::from_fn(n, |_, _| self.rng.random_range(-1.0..1.0));
                let d = self.rng.random_range(-1.0..1.0);
                surrogates.insert(
                    QuadraticSurrogate::from_parts(h, c, d, id, t).expect("surrogate"),
                );
            }
        }

        let mut duals = DualState::zeros_for(&surrogates, &input);
        let keys: Vec<(usize, usize)> = surrogates.keys().copied().collect();
        for (t, id) in keys {
            let v = self.rng.random_range(0.0..1.5);
            duals.set_lambda(t, id, v);
        }
        for t in 0..horizon {
            let rows = input.stage(t).rows();
            for j in 0..rows {
                let v = self.rng.random_range(0.0..1.0);
                duals.set_mu(t, j, v);
            }
        }

        let x0 = DVector::from_fn(n, |_, _| self.rng.random_range(-2.0..2.0));
        DenseInstance {
            sys,
            cost,
            surrogates,
            input,
            duals,
            x0,
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}
