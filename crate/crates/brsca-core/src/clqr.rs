//! Convexified constrained LQR solved by projected dual ascent.
//!
//! For fixed multipliers the inner minimization over inputs has only the
//! dynamics as constraints, so its value function is quadratic-plus-affine in
//! the state and the minimizer is affine state feedback. The backward
//! recursion here is obtained by setting the input derivative of
//! `V_{t+1}(A x + B u) + u'Ru + mu'(G u + e)` to zero and matching quadratic,
//! linear and constant terms; an independent dense oracle pins it down in the
//! test suite.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::linalg;
use crate::lti::{evaluate_cost, rollout, CostSpec, InputConstraints, LtiSystem, Trajectory};
use crate::sca::QuadraticSurrogate;
use crate::Result;

/// Included surrogate constraints keyed by `(t, obstacle_id)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurrogateSet {
    entries: BTreeMap<(usize, usize), QuadraticSurrogate>,
}

impl SurrogateSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts (or replaces, on re-linearization) the surrogate at its own
    /// `(t, obstacle_id)` key.
    pub fn insert(&mut self, s: QuadraticSurrogate) {
        self.entries.insert((s.t(), s.obstacle_id()), s);
    }

    pub fn get(&self, t: usize, id: usize) -> Option<&QuadraticSurrogate> {
        self.entries.get(&(t, id))
    }

    pub fn contains(&self, t: usize, id: usize) -> bool {
        self.entries.contains_key(&(t, id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &QuadraticSurrogate)> {
        self.entries.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &(usize, usize)> {
        self.entries.keys()
    }

    /// Entries attached to time `t`.
    pub fn at_time(&self, t: usize) -> impl Iterator<Item = (&(usize, usize), &QuadraticSurrogate)> {
        self.entries.range((t, 0)..=(t, usize::MAX))
    }

    fn validate(&self, state_dim: usize, horizon: usize) -> Result<()> {
        for ((t, id), s) in &self.entries {
            if *t == 0 || *t >= horizon {
                return Err(Error::state(format!(
                    "surrogate ({t}, {id}) outside interior times 1..{horizon}"
                )));
            }
            if s.dim() != state_dim {
                return Err(Error::dim(format!(
                    "surrogate ({t}, {id}) has dimension {}, state dimension is {state_dim}",
                    s.dim()
                )));
            }
        }
        Ok(())
    }
}

impl FromIterator<QuadraticSurrogate> for SurrogateSet {
    fn from_iter<I: IntoIterator<Item = QuadraticSurrogate>>(iter: I) -> Self {
        let mut set = SurrogateSet::new();
        for s in iter {
            set.insert(s);
        }
        set
    }
}

/// Multipliers of the Lagrangian: `lambda` for included barrier surrogates,
/// `mu_t` for the input constraints at each stage. All entries stay `>= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    lambda: BTreeMap<(usize, usize), f64>,
    mu: Vec<DVector<f64>>,
}

impl DualState {
    /// All-zero multipliers matching a surrogate set and input constraints.
    pub fn zeros_for(surrogates: &SurrogateSet, input: &InputConstraints) -> Self {
        let lambda = surrogates.keys().map(|k| (*k, 0.0)).collect();
        let mu = input
            .stages()
            .iter()
            .map(|s| DVector::zeros(s.rows()))
            .collect();
        DualState { lambda, mu }
    }

    pub fn lambda(&self) -> &BTreeMap<(usize, usize), f64> {
        &self.lambda
    }

    pub fn lambda_at(&self, t: usize, id: usize) -> f64 {
        self.lambda.get(&(t, id)).copied().unwrap_or(0.0)
    }

    pub fn mu(&self) -> &[DVector<f64>] {
        &self.mu
    }

    /// Carries values over to a (possibly grown) key set: kept keys keep their
    /// multipliers, new keys start at zero.
    pub fn aligned_to(&self, surrogates: &SurrogateSet, input: &InputConstraints) -> Self {
        let mut fresh = DualState::zeros_for(surrogates, input);
        for (k, v) in &self.lambda {
            if let Some(slot) = fresh.lambda.get_mut(k) {
                *slot = *v;
            }
        }
        for (t, m) in self.mu.iter().enumerate() {
            if t < fresh.mu.len() && fresh.mu[t].len() == m.len() {
                fresh.mu[t] = m.clone();
            }
        }
        fresh
    }

    /// Sets one barrier multiplier; the key must already exist.
    pub fn set_lambda(&mut self, t: usize, id: usize, value: f64) {
        if let Some(v) = self.lambda.get_mut(&(t, id)) {
            *v = value;
        }
    }

    /// Sets one input-constraint multiplier entry.
    pub fn set_mu(&mut self, t: usize, row: usize, value: f64) {
        self.mu[t][row] = value;
    }

    pub fn keys_match(&self, surrogates: &SurrogateSet) -> bool {
        self.lambda.len() == surrogates.len()
            && self.lambda.keys().all(|k| surrogates.contains(k.0, k.1))
    }

    /// Smallest multiplier entry; `+inf` when there are none.
    pub fn min_entry(&self) -> f64 {
        let mut m = f64::INFINITY;
        for v in self.lambda.values() {
            m = m.min(*v);
        }
        for mu_t in &self.mu {
            for v in mu_t.iter() {
                m = m.min(*v);
            }
        }
        m
    }

    pub fn is_nonnegative(&self) -> bool {
        self.min_entry() >= 0.0 || self.len() == 0
    }

    pub fn len(&self) -> usize {
        self.lambda.len() + self.mu.iter().map(|m| m.len()).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Componentwise projection onto the nonnegative orthant.
    pub fn project_nonneg(&mut self) {
        for v in self.lambda.values_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        for mu_t in &mut self.mu {
            for v in mu_t.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }

    fn ascent_step(&mut self, grad: &DualGradient, alpha: f64) {
        for (k, g) in &grad.lambda {
            if let Some(v) = self.lambda.get_mut(k) {
                *v += alpha * g;
            }
        }
        for (t, g) in grad.mu.iter().enumerate() {
            self.mu[t] += g * alpha;
        }
        self.project_nonneg();
    }
}

/// Per-stage aggregate of the Lagrangian's state-quadratic terms:
/// `Q_lam = Q + 1/2 sum_i lambda_i H_i`, `q_lin = sum_i lambda_i c_i`,
/// `w = sum_i lambda_i d_i`.
#[derive(Debug, Clone)]
pub struct StageCostAggregate {
    pub q_lam: DMatrix<f64>,
    pub q_lin: DVector<f64>,
    pub w: f64,
}

impl StageCostAggregate {
    pub fn build(
        q: &DMatrix<f64>,
        surrogates: &SurrogateSet,
        duals: &DualState,
        t: usize,
    ) -> StageCostAggregate {
        let n = q.nrows();
        let mut q_lam = q.clone();
        let mut q_lin = DVector::zeros(n);
        let mut w = 0.0;
        for ((_, id), s) in surrogates.at_time(t) {
            let lam = duals.lambda_at(t, *id);
            if lam == 0.0 {
                continue;
            }
            q_lam += s.h() * (0.5 * lam);
            q_lin += s.c() * lam;
            w += lam * s.d();
        }
        StageCostAggregate { q_lam, q_lin, w }
    }
}

/// Quadratic-plus-affine cost-to-go `V_t(x) = x'F_t x + S_t'x + r_t` with the
/// affine control law `u_t = -K_t x + l_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    pub f: Vec<DMatrix<f64>>,
    pub s: Vec<DVector<f64>>,
    pub r: Vec<f64>,
    pub k: Vec<DMatrix<f64>>,
    pub l: Vec<DVector<f64>>,
}

impl ValueFunction {
    pub fn horizon(&self) -> usize {
        self.k.len()
    }

    pub fn value_at(&self, t: usize, x: &DVector<f64>) -> f64 {
        (x.transpose() * &self.f[t] * x)[(0, 0)] + self.s[t].dot(x) + self.r[t]
    }

    pub fn control(&self, t: usize, x: &DVector<f64>) -> DVector<f64> {
        -(&self.k[t] * x) + &self.l[t]
    }

    /// Closed-loop simulation under the stored feedback law.
    pub fn rollout(&self, sys: &LtiSystem, x0: &DVector<f64>) -> Result<Trajectory> {
        let mut x = x0.clone();
        let mut inputs = Vec::with_capacity(self.horizon());
        for t in 0..self.horizon() {
            let u = self.control(t, &x);
            x = sys.step(&x, &u);
            inputs.push(u);
        }
        rollout(sys, x0, &inputs)
    }
}

fn validate_problem(
    sys: &LtiSystem,
    cost: &CostSpec,
    surrogates: &SurrogateSet,
    input: &InputConstraints,
    duals: &DualState,
) -> Result<()> {
    let horizon = cost.horizon();
    if input.horizon() != horizon {
        return Err(Error::dim(format!(
            "input constraints cover {} stages, horizon is {horizon}",
            input.horizon()
        )));
    }
    if input.input_dim() != sys.input_dim() {
        return Err(Error::dim(format!(
            "input constraints act on dimension {}, system input dimension is {}",
            input.input_dim(),
            sys.input_dim()
        )));
    }
    surrogates.validate(sys.state_dim(), horizon)?;
    if !duals.keys_match(surrogates) {
        return Err(Error::state(
            "dual lambda keys do not match the surrogate set",
        ));
    }
    if duals.mu().len() != horizon {
        return Err(Error::state(format!(
            "mu covers {} stages, horizon is {horizon}",
            duals.mu().len()
        )));
    }
    for (t, (m, s)) in duals.mu().iter().zip(input.stages()).enumerate() {
        if m.len() != s.rows() {
            return Err(Error::state(format!(
                "mu at t={t} has {} entries, constraint has {} rows",
                m.len(),
                s.rows()
            )));
        }
    }
    if !duals.is_nonnegative() {
        return Err(Error::state("duals must be nonnegative"));
    }
    Ok(())
}

/// Exact minimizer structure of the Lagrangian under fixed multipliers,
/// subject only to the dynamics.
pub fn backward_recursion(
    sys: &LtiSystem,
    cost: &CostSpec,
    surrogates: &SurrogateSet,
    input: &InputConstraints,
    duals: &DualState,
) -> Result<ValueFunction> {
    validate_problem(sys, cost, surrogates, input, duals)?;
    let horizon = cost.horizon();
    let n = sys.state_dim();
    let m = sys.input_dim();
    let a = sys.a();
    let b = sys.b();

    let mut f_seq = vec![DMatrix::zeros(n, n); horizon + 1];
    let mut s_seq = vec![DVector::zeros(n); horizon + 1];
    let mut r_seq = vec![0.0f64; horizon + 1];
    let mut k_seq = vec![DMatrix::zeros(m, n); horizon];
    let mut l_seq = vec![DVector::zeros(m); horizon];

    f_seq[horizon] = linalg::symmetrize(cost.p());

    for t in (0..horizon).rev() {
        let agg = StageCostAggregate::build(cost.q(), surrogates, duals, t);
        let stage = input.stage(t);
        let mu_t = &duals.mu()[t];

        let f_next = f_seq[t + 1].clone();
        let bt_f = b.transpose() * &f_next;
        let innovation = cost.r() + &bt_f * b;
        let factor = linalg::SpdFactor::new(&innovation, &format!("innovation M at t={t}"))?;

        let k = factor.solve_mat(&(&bt_f * a));
        let b_vec = b.transpose() * &s_seq[t + 1] + stage.g.transpose() * mu_t;
        let m_inv_b = factor.solve_vec(&b_vec);
        let l = &m_inv_b * (-0.5);

        let f = linalg::symmetrize(
            &(&agg.q_lam + a.transpose() * &f_next * a - a.transpose() * &f_next * b * &k),
        );
        if !linalg::is_psd_within(&f, 1e-8) {
            return Err(Error::numerical(format!(
                "cost-to-go quadratic lost positive semidefiniteness at t={t}"
            )));
        }
        let s = &agg.q_lin + a.transpose() * &s_seq[t + 1] - k.transpose() * &b_vec;
        let r = r_seq[t + 1] + agg.w + mu_t.dot(&stage.e) - 0.25 * b_vec.dot(&m_inv_b);

        f_seq[t] = f;
        s_seq[t] = s;
        r_seq[t] = r;
        k_seq[t] = k;
        l_seq[t] = l;
    }

    Ok(ValueFunction {
        f: f_seq,
        s: s_seq,
        r: r_seq,
        k: k_seq,
        l: l_seq,
    })
}

/// Gradient of the dual function at the current primal minimizer: the
/// constraint values themselves.
#[derive(Debug, Clone)]
pub struct DualGradient {
    pub lambda: BTreeMap<(usize, usize), f64>,
    pub mu: Vec<DVector<f64>>,
}

impl DualGradient {
    /// Largest gradient magnitude, for diagnostics.
    pub fn amax(&self) -> f64 {
        let mut m: f64 = 0.0;
        for v in self.lambda.values() {
            m = m.max(v.abs());
        }
        for g in &self.mu {
            if g.len() > 0 {
                m = m.max(g.amax());
            }
        }
        m
    }
}

pub fn dual_gradients(
    traj: &Trajectory,
    surrogates: &SurrogateSet,
    input: &InputConstraints,
) -> DualGradient {
    let lambda = surrogates
        .iter()
        .map(|((t, id), s)| ((*t, *id), s.margin(&traj.states[*t])))
        .collect();
    let mu = (0..traj.horizon())
        .map(|t| input.stage(t).margins(&traj.inputs[t]))
        .collect();
    DualGradient { lambda, mu }
}

/// Diminishing step rule `alpha_k = alpha0 / (1 + k)` with an iteration cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub alpha0: f64,
    pub max_iters: usize,
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule {
            alpha0: 0.05,
            max_iters: 5000,
        }
    }
}

impl StepSchedule {
    pub fn alpha(&self, k: usize) -> f64 {
        self.alpha0 / (1.0 + k as f64)
    }
}

/// Knobs for one dual-ascent solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AscentOptions {
    pub schedule: StepSchedule,
    /// Stop once `|J(u^{k+1}) - J(u^k)| <= eps`.
    pub eps: f64,
    pub record_trace: bool,
}

impl AscentOptions {
    pub fn new(eps: f64) -> Self {
        AscentOptions {
            schedule: StepSchedule::default(),
            eps,
            record_trace: false,
        }
    }

    pub fn with_alpha0(mut self, alpha0: f64) -> Self {
        self.schedule.alpha0 = alpha0;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.schedule.max_iters = max_iters;
        self
    }

    pub fn traced(mut self) -> Self {
        self.record_trace = true;
        self
    }
}

/// One row of the optional per-iteration trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub cost: f64,
    pub dual_value: f64,
    pub min_dual: f64,
    pub max_grad: f64,
}

/// Result of a dual-ascent solve. `cost` is the original objective evaluated
/// on the primal trajectory, not the Lagrangian.
#[derive(Debug, Clone)]
pub struct DualAscentOutput {
    pub trajectory: Trajectory,
    pub duals: DualState,
    pub value: ValueFunction,
    pub cost: f64,
    pub dual_value: f64,
    pub iterations: usize,
    pub trace: Vec<IterRecord>,
}

/// Projected gradient ascent on the multipliers, with the primal minimized
/// exactly (backward recursion + closed-loop rollout) at every step.
pub fn dual_ascent(
    sys: &LtiSystem,
    cost: &CostSpec,
    surrogates: &SurrogateSet,
    input: &InputConstraints,
    x0: &DVector<f64>,
    init: DualState,
    opts: &AscentOptions,
) -> Result<DualAscentOutput> {
    if opts.eps <= 0.0 {
        return Err(Error::invalid("tolerance eps must be positive"));
    }
    if opts.schedule.alpha0 <= 0.0 {
        return Err(Error::invalid("step size alpha0 must be positive"));
    }
    cost.validate_against(sys)?;
    if x0.len() != sys.state_dim() {
        return Err(Error::dim(format!(
            "x0 has length {}, state dimension is {}",
            x0.len(),
            sys.state_dim()
        )));
    }
    if !linalg::all_finite_vec(x0) {
        return Err(Error::invalid("x0 must contain only finite entries"));
    }

    let mut duals = init;
    duals.project_nonneg();

    let no_duals = surrogates.is_empty() && input.is_empty();
    let mut trace = Vec::new();
    let mut prev_cost: Option<f64> = None;
    let mut best: Option<DualAscentOutput> = None;
    let mut last_delta = f64::INFINITY;

    for k in 0..opts.schedule.max_iters {
        let value = backward_recursion(sys, cost, surrogates, input, &duals)?;
        let trajectory = value.rollout(sys, x0)?;
        let cost_j = evaluate_cost(&trajectory, cost)?;
        let dual_value = value.value_at(0, x0);
        let grad = dual_gradients(&trajectory, surrogates, input);

        if opts.record_trace {
            trace.push(IterRecord {
                iter: k,
                cost: cost_j,
                dual_value,
                min_dual: duals.min_entry(),
                max_grad: grad.amax(),
            });
        }

        let output = DualAscentOutput {
            trajectory,
            duals: duals.clone(),
            value,
            cost: cost_j,
            dual_value,
            iterations: k + 1,
            trace: Vec::new(),
        };
        if best.as_ref().map_or(true, |b| dual_value > b.dual_value) {
            best = Some(output.clone());
        }

        if no_duals {
            return Ok(DualAscentOutput { trace, ..output });
        }
        if let Some(prev) = prev_cost {
            last_delta = (cost_j - prev).abs();
            if last_delta <= opts.eps {
                return Ok(DualAscentOutput { trace, ..output });
            }
        }
        prev_cost = Some(cost_j);

        duals.ascent_step(&grad, opts.schedule.alpha(k));
    }

    let mut best = best.expect("at least one iterate");
    best.trace = trace;
    Err(Error::Convergence {
        iterations: opts.schedule.max_iters,
        last_delta,
        best: Box::new(best),
    })
}

/// Residuals of the KKT system at a primal/dual pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// Largest constraint value (surrogate margins and input rows); negative
    /// means strictly feasible.
    pub max_primal: f64,
    /// Largest `|lambda * f|`.
    pub max_slack_lambda: f64,
    /// Largest `|mu_j * (G u + e)_j|`.
    pub max_slack_mu: f64,
    /// Smallest multiplier entry; `+inf` when there are none.
    pub min_dual: f64,
}

pub fn kkt_residuals(
    traj: &Trajectory,
    duals: &DualState,
    surrogates: &SurrogateSet,
    input: &InputConstraints,
) -> KktReport {
    let mut max_primal = f64::NEG_INFINITY;
    let mut max_slack_lambda = 0.0f64;
    for ((t, id), s) in surrogates.iter() {
        let margin = s.margin(&traj.states[*t]);
        max_primal = max_primal.max(margin);
        max_slack_lambda = max_slack_lambda.max((duals.lambda_at(*t, *id) * margin).abs());
    }
    let mut max_slack_mu = 0.0f64;
    for t in 0..traj.horizon() {
        let margins = input.stage(t).margins(&traj.inputs[t]);
        for (j, &v) in margins.iter().enumerate() {
            max_primal = max_primal.max(v);
            max_slack_mu = max_slack_mu.max((duals.mu()[t][j] * v).abs());
        }
    }
    KktReport {
        max_primal,
        max_slack_lambda,
        max_slack_mu,
        min_dual: duals.min_entry(),
    }
}

/// Closed-loop spectral radii under the value function's gains.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    /// `rho(A - B K_t)` per stage.
    pub radii: Vec<f64>,
    pub max_radius: f64,
    /// Radius under the most-iterated gain `K_0` (the tail of the backward
    /// pass).
    pub tail_radius: f64,
    pub pass: bool,
}

pub fn stability_check(sys: &LtiSystem, vf: &ValueFunction) -> StabilityReport {
    let radii: Vec<f64> = vf
        .k
        .iter()
        .map(|k| linalg::spectral_radius(&(sys.a() - sys.b() * k)))
        .collect();
    let max_radius = radii.iter().fold(0.0f64, |a, &b| a.max(b));
    let tail_radius = radii.first().copied().unwrap_or(0.0);
    StabilityReport {
        max_radius,
        tail_radius,
        pass: tail_radius < 1.0,
        radii,
    }
}
