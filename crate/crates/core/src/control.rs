//! Optimal control by the forward-backward sweep.
//!
//! The objective is stored in minimization form
//! `J(u) = ∫₀ᵀ f + m + ½‖u‖² dt`, so a larger `J` is a worse strategy. The
//! costates follow the maximization-form Hamiltonian used by
//! [`crate::integrate::adjoint_rhs`], which makes the unconstrained optimum
//! `u = λ·∂F/∂u` and the clamped one its projection onto the admissible set.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{
    fmt17, integrate_adjoint_backward, integrate_forward, rk4_step_vjp, AdjointTrajectory, TimeGrid, Trajectory,
};
use crate::models::{control_gradient, Controls, LifeParams, ModelId, ModelSpec, State};

/// Control values at every grid node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSchedule {
    pub grid: TimeGrid,
    pub values: Vec<Controls>,
}

impl ControlSchedule {
    pub fn zeros(grid: TimeGrid) -> Self {
        ControlSchedule {
            grid,
            values: vec![Controls::default(); grid.len()],
        }
    }

    /// The constant controls carried by `spec` at every node.
    pub fn constant(spec: &ModelSpec, grid: TimeGrid) -> Self {
        ControlSchedule {
            grid,
            values: vec![spec.controls(); grid.len()],
        }
    }

    pub fn channel_names(&self, model: ModelId) -> Vec<&'static str> {
        if model == ModelId::Tyc0 {
            vec!["mu"]
        } else {
            vec!["eta1", "eta2"]
        }
    }

    pub fn channel_values(&self, model: ModelId, i: usize) -> Vec<f64> {
        let u = &self.values[i];
        if model == ModelId::Tyc0 {
            vec![u.mu]
        } else {
            vec![u.eta1, u.eta2]
        }
    }

    /// Values of channel `k` (0 = `μ` or `η₁`, 1 = `η₂`) over the grid.
    pub fn channel(&self, model: ModelId, k: usize) -> Vec<f64> {
        (0..self.values.len()).map(|i| self.channel_values(model, i)[k]).collect()
    }

    /// Checks the admissible set: `0 ≤ μ ≤ mu_max`, `0 ≤ ηᵢ ≤ 1`.
    pub fn check_bounds(&self, model: ModelId, mu_max: f64) -> Result<()> {
        for (i, u) in self.values.iter().enumerate() {
            let ok = if model == ModelId::Tyc0 {
                u.mu >= 0.0 && u.mu <= mu_max
            } else {
                (0.0..=1.0).contains(&u.eta1) && (0.0..=1.0).contains(&u.eta2)
            };
            if !ok {
                return Err(Error::InvalidParams(format!(
                    "control at node {i} outside the admissible set: {u:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn sup_norm(&self, model: ModelId) -> f64 {
        self.values
            .iter()
            .flat_map(|u| {
                if model == ModelId::Tyc0 {
                    vec![u.mu.abs()]
                } else {
                    vec![u.eta1.abs(), u.eta2.abs()]
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Upper bound on the supermale introduction rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum MuCap {
    /// `mu_max = K`
    #[default]
    Capacity,
    Fixed(f64),
    Unbounded,
}

impl MuCap {
    pub fn resolve(self, params: &LifeParams) -> f64 {
        match self {
            MuCap::Capacity => params.cap_k,
            MuCap::Fixed(v) => v,
            MuCap::Unbounded => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Relaxation weight of the projected control in each update.
    pub omega: f64,
    /// Stop when `‖proj(u) − u‖∞ / ‖u‖∞` falls below this.
    pub tol: f64,
    pub max_iters: usize,
    pub mu_cap: MuCap,
    pub costate: Costate,
}

/// Which costate drives the control update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Costate {
    /// Reverse-mode sensitivities of the discretized objective; the update
    /// is the projection formula with the costate consistent with the RK4
    /// scheme and trapezoidal quadrature.
    #[default]
    Discrete,
    /// The classical sweep: costate from the adjoint ODEs integrated
    /// backward with RK4.
    Continuous,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            omega: 0.5,
            tol: 1e-4,
            max_iters: 2000,
            mu_cap: MuCap::Capacity,
            costate: Costate::Discrete,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return Err(Error::InvalidParams(format!("omega must lie in (0, 1], got {}", self.omega)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParams(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParams("max_iters must be at least 1".into()));
        }
        if let MuCap::Fixed(v) = self.mu_cap {
            if !(v > 0.0) {
                return Err(Error::InvalidParams(format!("mu cap must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Pointwise maximizer of the Hamiltonian over the admissible set.
pub fn project_control(spec: &ModelSpec, x: &State, lambda: &[f64; 3], mu_max: f64) -> Controls {
    let grads = control_gradient(spec, x);
    let dot = |g: &[f64; 3]| g[0] * lambda[0] + g[1] * lambda[1] + g[2] * lambda[2];
    if spec.model_id == ModelId::Tyc0 {
        Controls::mu(dot(&grads[0]).max(0.0).min(mu_max))
    } else {
        Controls::eta(dot(&grads[0]).clamp(0.0, 1.0), dot(&grads[1]).clamp(0.0, 1.0))
    }
}

/// Trapezoidal `(∫ f + m + ½‖u‖² dt, ∫ f + m dt)`.
pub fn objective(model: ModelId, states: &Trajectory, schedule: &ControlSchedule) -> (f64, f64) {
    let dt = states.grid.dt();
    let mut total = 0.0;
    let mut pop = 0.0;
    let n = states.states.len();
    for (i, x) in states.states.iter().enumerate() {
        let w = if i == 0 || i == n - 1 { 0.5 * dt } else { dt };
        let p = x.f + x.m;
        pop += w * p;
        total += w * (p + schedule.values[i].quadratic_cost(model));
    }
    (total, pop)
}

/// Re-integrates `schedule` from `init` and evaluates the objective.
pub fn evaluate_schedule(
    spec: &ModelSpec,
    params: &LifeParams,
    init: &State,
    schedule: &ControlSchedule,
) -> Result<(f64, Trajectory)> {
    let tr = integrate_forward(spec, params, init, Some(schedule), &schedule.grid)?;
    let (j, _) = objective(spec.model_id, &tr, schedule);
    Ok((j, tr))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub model: ModelId,
    pub schedule: ControlSchedule,
    pub states: Trajectory,
    pub adjoints: AdjointTrajectory,
    /// Minimization-form objective.
    pub objective: f64,
    pub cost_excluding_controls: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final `‖proj(u) − u‖∞ / ‖u‖∞`.
    pub residual: f64,
    /// Objective after each accepted iteration, starting with the zero control.
    pub history: Vec<f64>,
    /// Why the sweep stopped without converging.
    pub diagnostics: Option<String>,
}

impl SweepResult {
    /// Writes `t,f,m,s,<controls>,lambda1,lambda2,lambda3` rows.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let names = self.schedule.channel_names(self.model);
        writeln!(out, "t,f,m,s,{},lambda1,lambda2,lambda3", names.join(","))?;
        for (i, x) in self.states.states.iter().enumerate() {
            let mut row = vec![self.states.grid.time(i), x.f, x.m, x.s];
            row.extend(self.schedule.channel_values(self.model, i));
            row.extend(self.adjoints.lambdas[i]);
            let cells: Vec<String> = row.into_iter().map(fmt17).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn final_state(&self) -> State {
        self.states.final_state()
    }
}

/// Scalar summary written next to the trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub model: ModelId,
    pub spec: ModelSpec,
    pub params: LifeParams,
    pub config: SweepConfig,
    pub grid: TimeGrid,
    pub init: State,
    pub objective: f64,
    pub cost_excluding_controls: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
    pub diagnostics: Option<String>,
}

impl SweepSummary {
    pub fn new(spec: &ModelSpec, params: &LifeParams, config: &SweepConfig, init: &State, r: &SweepResult) -> Self {
        SweepSummary {
            model: r.model,
            spec: *spec,
            params: *params,
            config: *config,
            grid: r.states.grid,
            init: *init,
            objective: r.objective,
            cost_excluding_controls: r.cost_excluding_controls,
            iterations: r.iterations,
            converged: r.converged,
            residual: r.residual,
            diagnostics: r.diagnostics.clone(),
        }
    }
}

fn fixed_point_gap(model: ModelId, u: &ControlSchedule, p: &ControlSchedule) -> f64 {
    let mut diff = 0.0f64;
    for (a, b) in u.values.iter().zip(&p.values) {
        let d = if model == ModelId::Tyc0 {
            (a.mu - b.mu).abs()
        } else {
            (a.eta1 - b.eta1).abs().max((a.eta2 - b.eta2).abs())
        };
        diff = diff.max(d);
    }
    let scale = u.sup_norm(model).max(p.sup_norm(model)).max(1e-12);
    diff / scale
}

fn project_schedule(spec: &ModelSpec, states: &Trajectory, adj: &AdjointTrajectory, mu_max: f64) -> ControlSchedule {
    ControlSchedule {
        grid: states.grid,
        values: states
            .states
            .iter()
            .zip(&adj.lambdas)
            .map(|(x, l)| project_control(spec, x, l, mu_max))
            .collect(),
    }
}

fn blend(a: &ControlSchedule, b: &ControlSchedule, w: f64) -> ControlSchedule {
    ControlSchedule {
        grid: a.grid,
        values: a
            .values
            .iter()
            .zip(&b.values)
            .map(|(u, p)| Controls {
                mu: (1.0 - w) * u.mu + w * p.mu,
                eta1: (1.0 - w) * u.eta1 + w * p.eta1,
                eta2: (1.0 - w) * u.eta2 + w * p.eta2,
            })
            .collect(),
    }
}

fn quadrature_weight(grid: &TimeGrid, i: usize) -> f64 {
    if i == 0 || i == grid.n_steps {
        0.5 * grid.dt()
    } else {
        grid.dt()
    }
}

/// Gradient of the discrete objective with respect to each node control,
/// by reverse-mode differentiation through the RK4 steps.
pub fn discrete_gradient(
    spec: &ModelSpec,
    params: &LifeParams,
    states: &Trajectory,
    schedule: &ControlSchedule,
) -> Vec<Controls> {
    let grid = &states.grid;
    let n = grid.n_steps;
    let dt = grid.dt();
    let tyc = spec.model_id == ModelId::Tyc0;
    let mut g: Vec<Controls> = schedule
        .values
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let w = quadrature_weight(grid, i);
            if tyc {
                Controls::mu(w * u.mu)
            } else {
                Controls::eta(w * u.eta1, w * u.eta2)
            }
        })
        .collect();
    let running = |i: usize| {
        let w = quadrature_weight(grid, i);
        [w, w, 0.0]
    };
    let mut p = running(n);
    for i in (0..n).rev() {
        let (xc, c0, c1) = rk4_step_vjp(spec, params, &states.states[i], &schedule.values[i], &schedule.values[i + 1], dt, &p);
        for (slot, c) in [(i, c0), (i + 1, c1)] {
            g[slot].mu += c.mu;
            g[slot].eta1 += c.eta1;
            g[slot].eta2 += c.eta2;
        }
        let r = running(i);
        p = [xc[0] + r[0], xc[1] + r[1], xc[2] + r[2]];
    }
    if tyc {
        for c in &mut g {
            c.eta1 = 0.0;
            c.eta2 = 0.0;
        }
    } else {
        for c in &mut g {
            c.mu = 0.0;
        }
    }
    g
}

/// `clamp(u − g/w)` node by node, the projection step with the discrete
/// costate.
fn project_discrete(spec: &ModelSpec, schedule: &ControlSchedule, grad: &[Controls], mu_max: f64) -> ControlSchedule {
    let grid = schedule.grid;
    ControlSchedule {
        grid,
        values: schedule
            .values
            .iter()
            .zip(grad)
            .enumerate()
            .map(|(i, (u, g))| {
                let w = quadrature_weight(&grid, i);
                if spec.model_id == ModelId::Tyc0 {
                    Controls::mu((u.mu - g.mu / w).max(0.0).min(mu_max))
                } else {
                    Controls::eta((u.eta1 - g.eta1 / w).clamp(0.0, 1.0), (u.eta2 - g.eta2 / w).clamp(0.0, 1.0))
                }
            })
            .collect(),
    }
}

/// Relative objective increase tolerated before a step is halved. The
/// costate comes from the continuous adjoint equations, so near the fixed
/// point the update direction can disagree with the discrete objective at
/// the level of the time-discretization error.
pub const OBJECTIVE_SLACK: f64 = 1e-9;

/// Roundoff allowance for the discrete-costate sweep, whose update direction
/// is an exact descent direction.
const ROUNDOFF_SLACK: f64 = 1e-13;

/// Forward-backward sweep from the zero control.
///
/// Each iteration integrates the state forward, the costate backward, and
/// moves the control a fraction `ω` toward its projection. If the objective
/// would increase (or the state leaves the admissible region) the step is
/// halved; the sweep gives up once `ω < 1e-6`.
pub fn forward_backward_sweep(
    spec: &ModelSpec,
    params: &LifeParams,
    init: &State,
    grid: &TimeGrid,
    config: &SweepConfig,
) -> Result<SweepResult> {
    params.validate()?;
    config.validate()?;
    grid.validate()?;
    init.check_nonnegative()?;
    let model = spec.model_id;
    let mu_max = config.mu_cap.resolve(params);

    let mut u = ControlSchedule::zeros(*grid);
    let (mut j, mut states) = evaluate_schedule(spec, params, init, &u)?;
    let mut adj = integrate_adjoint_backward(spec, params, &states, Some(&u), grid)?;
    let mut history = vec![j];
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut diagnostics = None;
    let mut iterations = 0;

    while iterations < config.max_iters {
        let proj = match config.costate {
            Costate::Discrete => project_discrete(spec, &u, &discrete_gradient(spec, params, &states, &u), mu_max),
            Costate::Continuous => project_schedule(spec, &states, &adj, mu_max),
        };
        residual = fixed_point_gap(model, &u, &proj);
        if residual < config.tol {
            converged = true;
            // take the full projection once, so active bounds are hit exactly
            if let Ok((jc, tr)) = evaluate_schedule(spec, params, init, &proj) {
                if jc <= j + ROUNDOFF_SLACK * j.abs() {
                    let next = match config.costate {
                        Costate::Discrete => {
                            project_discrete(spec, &proj, &discrete_gradient(spec, params, &tr, &proj), mu_max)
                        }
                        Costate::Continuous => {
                            let a = integrate_adjoint_backward(spec, params, &tr, Some(&proj), grid)?;
                            project_schedule(spec, &tr, &a, mu_max)
                        }
                    };
                    let r = fixed_point_gap(model, &proj, &next);
                    if r <= residual {
                        residual = r;
                        u = proj;
                        j = jc;
                        states = tr;
                        history.push(j);
                        if config.costate == Costate::Continuous {
                            adj = integrate_adjoint_backward(spec, params, &states, Some(&u), grid)?;
                        }
                    }
                }
            }
            break;
        }
        iterations += 1;
        let slack = match config.costate {
            Costate::Discrete => ROUNDOFF_SLACK,
            Costate::Continuous => OBJECTIVE_SLACK,
        };
        let mut w = config.omega;
        let accepted = loop {
            let cand = blend(&u, &proj, w);
            if let Ok((jc, tr)) = evaluate_schedule(spec, params, init, &cand) {
                if jc <= j + slack * j.abs() {
                    break Some((cand, jc, tr));
                }
            }
            w *= 0.5;
            if w < 1e-6 {
                break None;
            }
        };
        let Some((cand, jc, tr)) = accepted else {
            diagnostics = Some(format!(
                "step size fell below 1e-6 at iteration {iterations} with residual {residual:.3e}"
            ));
            break;
        };
        u = cand;
        j = jc;
        states = tr;
        if config.costate == Costate::Continuous {
            adj = integrate_adjoint_backward(spec, params, &states, Some(&u), grid)?;
        }
        history.push(j);
    }
    if config.costate == Costate::Discrete {
        adj = integrate_adjoint_backward(spec, params, &states, Some(&u), grid)?;
    }
    if !converged && diagnostics.is_none() {
        diagnostics = Some(format!(
            "reached max_iters = {} with residual {residual:.3e}",
            config.max_iters
        ));
    }
    let (objective, pop) = objective(model, &states, &u);
    Ok(SweepResult {
        model,
        schedule: u,
        states,
        adjoints: adj,
        objective,
        cost_excluding_controls: pop,
        iterations,
        converged,
        residual,
        history,
        diagnostics,
    })
}

/// First-order checks on a sweep result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    /// `max |∂H/∂u|` over nodes where the control is strictly inside its
    /// bounds, discrete costate.
    pub max_gradient: f64,
    /// The same with the costate from the adjoint ODEs.
    pub max_gradient_costate: f64,
    pub interior_nodes: usize,
    /// `J(u + εv) − J(u)` for each random feasible direction.
    pub perturbation_deltas: Vec<f64>,
}

impl OptimalityReport {
    pub fn min_delta(&self) -> f64 {
        self.perturbation_deltas.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `max |∂H/∂u|` at nodes where the bounds are inactive, with the discrete
/// costate: the node gradient of the discrete objective divided by its
/// quadrature weight. A node counts as interior when the unclamped update
/// target `u − ∂J/∂u / w` lies strictly inside the admissible interval.
pub fn stationarity_residual(spec: &ModelSpec, params: &LifeParams, result: &SweepResult, mu_max: f64) -> (f64, usize) {
    let grad = discrete_gradient(spec, params, &result.states, &result.schedule);
    let grid = result.states.grid;
    let mut worst = 0.0f64;
    let mut count = 0;
    for (i, (u, g)) in result.schedule.values.iter().zip(&grad).enumerate() {
        let w = quadrature_weight(&grid, i);
        let pairs: Vec<(f64, f64, f64)> = if spec.model_id == ModelId::Tyc0 {
            vec![(u.mu, g.mu / w, mu_max)]
        } else {
            vec![(u.eta1, g.eta1 / w, 1.0), (u.eta2, g.eta2 / w, 1.0)]
        };
        for (v, gw, hi) in pairs {
            let target = v - gw;
            if target > INTERIOR_MARGIN && target < hi - INTERIOR_MARGIN {
                worst = worst.max(gw.abs());
                count += 1;
            }
        }
    }
    (worst, count)
}

const INTERIOR_MARGIN: f64 = 1e-9;

/// `max |u − λ·∂F/∂u|` at nodes with inactive bounds, with `λ` from the
/// adjoint ODEs. Differs from [`stationarity_residual`] by the
/// time-discretization error, which is first order at the two end nodes.
pub fn costate_stationarity_residual(spec: &ModelSpec, result: &SweepResult, mu_max: f64) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut count = 0;
    for ((x, l), u) in result.states.states.iter().zip(&result.adjoints.lambdas).zip(&result.schedule.values) {
        let grads = control_gradient(spec, x);
        let vals: Vec<(f64, f64)> = if spec.model_id == ModelId::Tyc0 {
            vec![(u.mu, mu_max)]
        } else {
            vec![(u.eta1, 1.0), (u.eta2, 1.0)]
        };
        for (g, (v, hi)) in grads.iter().zip(vals) {
            let target = g[0] * l[0] + g[1] * l[1] + g[2] * l[2];
            if target > INTERIOR_MARGIN && target < hi - INTERIOR_MARGIN {
                let dh = v - target;
                worst = worst.max(dh.abs());
                count += 1;
            }
        }
    }
    (worst, count)
}

/// Stationarity residual plus `n_dirs` random perturbations
/// `u + εv`, `v` uniform on `[−1, 1]` per node and channel, clamped back into
/// the admissible set.
pub fn optimality_residual(
    spec: &ModelSpec,
    params: &LifeParams,
    init: &State,
    result: &SweepResult,
    config: &SweepConfig,
    n_dirs: usize,
    epsilon: f64,
    seed: u64,
) -> Result<OptimalityReport> {
    let mu_max = config.mu_cap.resolve(params);
    let (max_gradient, interior_nodes) = stationarity_residual(spec, params, result, mu_max);
    let (max_gradient_costate, _) = costate_stationarity_residual(spec, result, mu_max);
    let (j0, _) = evaluate_schedule(spec, params, init, &result.schedule)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut deltas = Vec::with_capacity(n_dirs);
    for _ in 0..n_dirs {
        let mut cand = result.schedule.clone();
        for u in cand.values.iter_mut() {
            if spec.model_id == ModelId::Tyc0 {
                u.mu = (u.mu + epsilon * rng.random_range(-1.0..=1.0)).clamp(0.0, mu_max);
            } else {
                u.eta1 = (u.eta1 + epsilon * rng.random_range(-1.0..=1.0)).clamp(0.0, 1.0);
                u.eta2 = (u.eta2 + epsilon * rng.random_range(-1.0..=1.0)).clamp(0.0, 1.0);
            }
        }
        let delta = match evaluate_schedule(spec, params, init, &cand) {
            Ok((j, _)) => j - j0,
            Err(_) => f64::INFINITY,
        };
        deltas.push(delta);
    }
    Ok(OptimalityReport {
        max_gradient,
        max_gradient_costate,
        interior_nodes,
        perturbation_deltas: deltas,
    })
}
