//! Fixed-step RK4 integration of the state equations forward in time and of
//! the costate equations backward in time on a shared grid.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::control::ControlSchedule;
use crate::error::{Error, Result};
use crate::models::{control_gradient, rhs_raw, state_jacobian, Controls, LifeParams, ModelSpec, State};

pub const DEFAULT_DT: f64 = 0.05;

/// Roundoff undershoot below zero that is silently clipped.
pub const NEGATIVE_TOL: f64 = 1e-9;

/// Components above `BLOWUP_FACTOR · K` abort the integration.
pub const BLOWUP_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_end: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        let g = TimeGrid { t0, t_end, n_steps };
        g.validate()?;
        Ok(g)
    }

    /// Grid on `[t0, t_end]` whose step is as close to `dt` as an integer
    /// step count allows.
    pub fn with_step(t0: f64, t_end: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParams(format!("dt must be positive, got {dt}")));
        }
        let n = ((t_end - t0) / dt).round().max(1.0) as usize;
        Self::new(t0, t_end, n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::InvalidParams("time grid needs at least one step".into()));
        }
        if !(self.t_end > self.t0) || !self.t0.is_finite() || !self.t_end.is_finite() {
            return Err(Error::InvalidParams(format!(
                "time grid needs t_end > t0, got [{}, {}]",
                self.t0, self.t_end
            )));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.n_steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.t_end
        } else {
            self.t0 + i as f64 * self.dt()
        }
    }

    /// Number of nodes, `n_steps + 1`.
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }

    pub(crate) fn ensure_same(&self, other: &TimeGrid, what: &str) -> Result<()> {
        if self.t0.to_bits() != other.t0.to_bits()
            || self.t_end.to_bits() != other.t_end.to_bits()
            || self.n_steps != other.n_steps
        {
            return Err(Error::GridMismatch(format!(
                "{what}: [{}, {}]/{} vs [{}, {}]/{}",
                self.t0, self.t_end, self.n_steps, other.t0, other.t_end, other.n_steps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub states: Vec<State>,
}

impl Trajectory {
    pub fn final_state(&self) -> State {
        *self.states.last().expect("trajectory has at least one node")
    }

    pub fn totals(&self) -> Vec<f64> {
        self.states.iter().map(State::total).collect()
    }

    /// Writes `t,f,m,s` rows, followed by the control channels when a
    /// schedule is given.
    pub fn write_csv<W: Write>(&self, spec: &ModelSpec, schedule: Option<&ControlSchedule>, out: &mut W) -> std::io::Result<()> {
        let channels = schedule.map(|s| s.channel_names(spec.model_id)).unwrap_or_default();
        write!(out, "t,f,m,s")?;
        for c in &channels {
            write!(out, ",{c}")?;
        }
        writeln!(out)?;
        for (i, x) in self.states.iter().enumerate() {
            write!(out, "{},{},{},{}", fmt17(self.grid.time(i)), fmt17(x.f), fmt17(x.m), fmt17(x.s))?;
            if let Some(s) = schedule {
                for v in s.channel_values(spec.model_id, i) {
                    write!(out, ",{}", fmt17(v))?;
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Costates `(λ₁, λ₂, λ₃)` at every grid node. For the two-dimensional
/// harvesting models `λ₃` stays zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjointTrajectory {
    pub grid: TimeGrid,
    pub lambdas: Vec<[f64; 3]>,
}

fn guard(x: State, t: f64, limit: f64) -> Result<State> {
    let mut out = x.to_array();
    for ((name, v), slot) in x.components().into_iter().zip(out.iter_mut()) {
        if !v.is_finite() || v > limit {
            return Err(Error::BlowUp { t, component: name, value: v, limit });
        }
        if v < 0.0 {
            if v < -NEGATIVE_TOL {
                return Err(Error::NegativeState { component: name, value: v });
            }
            *slot = 0.0;
        }
    }
    Ok(State::from_array(out))
}

/// Stage states may dip marginally below zero; the power-law terms need
/// them nonnegative.
fn clip(x: State) -> State {
    State::new(x.f.max(0.0), x.m.max(0.0), x.s.max(0.0))
}

fn mid_controls(a: &Controls, b: &Controls) -> Controls {
    Controls {
        mu: 0.5 * (a.mu + b.mu),
        eta1: 0.5 * (a.eta1 + b.eta1),
        eta2: 0.5 * (a.eta2 + b.eta2),
    }
}

/// One RK4 step with controls `u0` at the start, `u1` at the end and their
/// mean at the midpoint.
pub fn rk4_step(spec: &ModelSpec, params: &LifeParams, x: &State, u0: &Controls, u1: &Controls, dt: f64) -> State {
    let um = mid_controls(u0, u1);
    let k1 = rhs_raw(spec, params, x, u0);
    let k2 = rhs_raw(spec, params, &clip(x.axpy(0.5 * dt, k1)), &um);
    let k3 = rhs_raw(spec, params, &clip(x.axpy(0.5 * dt, k2)), &um);
    let k4 = rhs_raw(spec, params, &clip(x.axpy(dt, k3)), u1);
    State::new(
        x.f + dt / 6.0 * (k1.f + 2.0 * k2.f + 2.0 * k3.f + k4.f),
        x.m + dt / 6.0 * (k1.m + 2.0 * k2.m + 2.0 * k3.m + k4.m),
        x.s + dt / 6.0 * (k1.s + 2.0 * k2.s + 2.0 * k3.s + k4.s),
    )
}

fn jt_times(j: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        *o = j[0][k] * v[0] + j[1][k] * v[1] + j[2][k] * v[2];
    }
    out
}

fn control_cotangent(spec: &ModelSpec, y: &State, v: &[f64; 3], scale: f64) -> Controls {
    let g = control_gradient(spec, y);
    let dot = |g: &[f64; 3]| scale * (g[0] * v[0] + g[1] * v[1] + g[2] * v[2]);
    if g.len() == 1 {
        Controls::mu(dot(&g[0]))
    } else {
        Controls::eta(dot(&g[0]), dot(&g[1]))
    }
}

fn add_controls(a: &mut Controls, b: &Controls) {
    a.mu += b.mu;
    a.eta1 += b.eta1;
    a.eta2 += b.eta2;
}

/// Reverse-mode sensitivity of [`rk4_step`]: given `a = ∂J/∂x₁` for the step
/// result, returns `(∂J/∂x₀, ∂J/∂u₀, ∂J/∂u₁)` through this step.
pub fn rk4_step_vjp(
    spec: &ModelSpec,
    params: &LifeParams,
    x: &State,
    u0: &Controls,
    u1: &Controls,
    dt: f64,
    a: &[f64; 3],
) -> ([f64; 3], Controls, Controls) {
    let um = mid_controls(u0, u1);
    let k1 = rhs_raw(spec, params, x, u0);
    let y2 = clip(x.axpy(0.5 * dt, k1));
    let k2 = rhs_raw(spec, params, &y2, &um);
    let y3 = clip(x.axpy(0.5 * dt, k2));
    let k3 = rhs_raw(spec, params, &y3, &um);
    let y4 = clip(x.axpy(dt, k3));

    let scaled = |c: f64| [c * a[0], c * a[1], c * a[2]];
    let axpy = |v: [f64; 3], h: f64, w: [f64; 3]| [v[0] + h * w[0], v[1] + h * w[1], v[2] + h * w[2]];

    let mut xc = *a;
    let mut c0 = Controls::default();
    let mut c1 = Controls::default();
    let mut cm = Controls::default();

    // k4 = F(y4, u1), y4 = x + dt k3
    let b4 = scaled(dt / 6.0);
    let y4c = jt_times(&state_jacobian(spec, params, &y4, u1), &b4);
    add_controls(&mut c1, &control_cotangent(spec, &y4, &b4, 1.0));
    xc = axpy(xc, 1.0, y4c);
    // k3 = F(y3, um), y3 = x + dt/2 k2
    let b3 = axpy(scaled(dt / 3.0), dt, y4c);
    let y3c = jt_times(&state_jacobian(spec, params, &y3, &um), &b3);
    add_controls(&mut cm, &control_cotangent(spec, &y3, &b3, 1.0));
    xc = axpy(xc, 1.0, y3c);
    // k2 = F(y2, um), y2 = x + dt/2 k1
    let b2 = axpy(scaled(dt / 3.0), 0.5 * dt, y3c);
    let y2c = jt_times(&state_jacobian(spec, params, &y2, &um), &b2);
    add_controls(&mut cm, &control_cotangent(spec, &y2, &b2, 1.0));
    xc = axpy(xc, 1.0, y2c);
    // k1 = F(x, u0)
    let b1 = axpy(scaled(dt / 6.0), 0.5 * dt, y2c);
    xc = axpy(xc, 1.0, jt_times(&state_jacobian(spec, params, x, u0), &b1));
    add_controls(&mut c0, &control_cotangent(spec, x, &b1, 1.0));

    let half = Controls { mu: 0.5 * cm.mu, eta1: 0.5 * cm.eta1, eta2: 0.5 * cm.eta2 };
    add_controls(&mut c0, &half);
    add_controls(&mut c1, &half);
    (xc, c0, c1)
}

/// Integrates the state equations from `init` over `grid`. Without a
/// schedule the constant controls stored in `spec` are used.
pub fn integrate_forward(
    spec: &ModelSpec,
    params: &LifeParams,
    init: &State,
    schedule: Option<&ControlSchedule>,
    grid: &TimeGrid,
) -> Result<Trajectory> {
    grid.validate()?;
    init.check_nonnegative()?;
    if let Some(s) = schedule {
        s.grid.ensure_same(grid, "control schedule")?;
    }
    let constant = spec.controls();
    let control = |i: usize| match schedule {
        Some(s) => s.values[i],
        None => constant,
    };
    let limit = BLOWUP_FACTOR * params.cap_k;
    let dt = grid.dt();
    let mut states = Vec::with_capacity(grid.len());
    states.push(*init);
    let mut x = *init;
    for i in 0..grid.n_steps {
        let next = rk4_step(spec, params, &x, &control(i), &control(i + 1), dt);
        x = guard(next, grid.time(i + 1), limit)?;
        states.push(x);
    }
    Ok(Trajectory { grid: *grid, states })
}

/// Costate derivative `λ' = c − Jᵀλ` with `c = (1, 1, 0)`, i.e. `−∂H/∂x` for
/// `H = −(f + m) − ½‖u‖² + λ·F(x, u)`.
pub fn adjoint_rhs(spec: &ModelSpec, params: &LifeParams, x: &State, u: &Controls, lambda: &[f64; 3]) -> [f64; 3] {
    let j = state_jacobian(spec, params, x, u);
    let c = [1.0, 1.0, 0.0];
    let mut out = [0.0; 3];
    for k in 0..3 {
        let jt: f64 = (0..3).map(|r| j[r][k] * lambda[r]).sum();
        out[k] = c[k] - jt;
    }
    if spec.model_id.dimension() == 2 {
        out[2] = 0.0;
    }
    out
}

/// The Hamiltonian in maximization form.
pub fn hamiltonian(spec: &ModelSpec, params: &LifeParams, x: &State, u: &Controls, lambda: &[f64; 3]) -> f64 {
    let fx = rhs_raw(spec, params, x, u).to_array();
    -(x.f + x.m) - u.quadratic_cost(spec.model_id) + (0..3).map(|k| lambda[k] * fx[k]).sum::<f64>()
}

/// Integrates the costate equations backward from `λ(T) = 0`, evaluating the
/// state at step midpoints by cubic Hermite interpolation.
pub fn integrate_adjoint_backward(
    spec: &ModelSpec,
    params: &LifeParams,
    states: &Trajectory,
    schedule: Option<&ControlSchedule>,
    grid: &TimeGrid,
) -> Result<AdjointTrajectory> {
    states.grid.ensure_same(grid, "state trajectory")?;
    if states.states.len() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "trajectory has {} nodes, grid has {}",
            states.states.len(),
            grid.len()
        )));
    }
    if let Some(s) = schedule {
        s.grid.ensure_same(grid, "control schedule")?;
    }
    let constant = spec.controls();
    let control = |i: usize| match schedule {
        Some(s) => s.values[i],
        None => constant,
    };
    let dt = grid.dt();
    let n = grid.n_steps;
    let mut lambdas = vec![[0.0; 3]; n + 1];
    let mut lam = [0.0; 3];
    let step = |l: &[f64; 3], h: f64, k: &[f64; 3]| [l[0] + h * k[0], l[1] + h * k[1], l[2] + h * k[2]];
    for i in (0..n).rev() {
        let (x0, x1) = (states.states[i], states.states[i + 1]);
        let (u0, u1) = (control(i), control(i + 1));
        let f0 = rhs_raw(spec, params, &x0, &u0);
        let f1 = rhs_raw(spec, params, &x1, &u1);
        let xm = clip(State::new(
            0.5 * (x0.f + x1.f) + dt / 8.0 * (f0.f - f1.f),
            0.5 * (x0.m + x1.m) + dt / 8.0 * (f0.m - f1.m),
            0.5 * (x0.s + x1.s) + dt / 8.0 * (f0.s - f1.s),
        ));
        let um = mid_controls(&u0, &u1);
        let h = -dt;
        let k1 = adjoint_rhs(spec, params, &x1, &u1, &lam);
        let k2 = adjoint_rhs(spec, params, &xm, &um, &step(&lam, 0.5 * h, &k1));
        let k3 = adjoint_rhs(spec, params, &xm, &um, &step(&lam, 0.5 * h, &k2));
        let k4 = adjoint_rhs(spec, params, &x0, &u0, &step(&lam, h, &k3));
        for k in 0..3 {
            lam[k] += h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
        }
        if lam.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                t: grid.time(i),
                component: "lambda",
                value: f64::NAN,
                limit: f64::INFINITY,
            });
        }
        lambdas[i] = lam;
    }
    Ok(AdjointTrajectory { grid: *grid, lambdas })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelId;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const P: LifeParams = LifeParams::MESOCOSM;

    #[test]
    fn grid_basics() {
        let g = TimeGrid::with_step(0.0, 200.0, 0.05).unwrap();
        assert_eq!(g.n_steps, 4000);
        assert_eq!(g.time(4000), 200.0);
        assert_eq!(g.len(), 4001);
        assert!(TimeGrid::new(0.0, 1.0, 0).is_err());
        assert!(TimeGrid::new(1.0, 1.0, 4).is_err());
    }

    #[test]
    fn equilibrium_is_invariant() {
        let r = crate::equilibria::tyc_mu0_equilibria(&P).unwrap();
        let plus = r.entries[1].point;
        let g = TimeGrid::with_step(0.0, 200.0, DEFAULT_DT).unwrap();
        let tr = integrate_forward(&ModelSpec::new(ModelId::Tyc0), &P, &plus, None, &g).unwrap();
        for x in &tr.states {
            assert!((x.f - plus.f).abs() < 1e-8 && (x.m - plus.m).abs() < 1e-8);
        }
    }

    #[test]
    fn supermale_linear_ode() {
        let c = 40.0;
        let spec = ModelSpec::new(ModelId::Tyc0).with_mu(P.delta * c);
        let g = TimeGrid::with_step(0.0, 200.0, DEFAULT_DT).unwrap();
        let tr = integrate_forward(&spec, &P, &State::ZERO, None, &g).unwrap();
        for (i, x) in tr.states.iter().enumerate() {
            let t = g.time(i);
            assert!((x.s - c * (1.0 - (-P.delta * t).exp())).abs() < 1e-6);
            assert_eq!((x.f, x.m), (0.0, 0.0));
        }
    }

    #[test]
    fn initial_state_is_kept_exactly() {
        let init = State::new(0.1 + 0.2, 15.0, 0.0);
        let g = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let tr = integrate_forward(&ModelSpec::new(ModelId::Fhms1), &P, &init, None, &g).unwrap();
        assert_eq!(tr.states[0], init);
    }

    #[test]
    fn growth_from_above_allee_threshold() {
        let g = TimeGrid::with_step(0.0, 200.0, DEFAULT_DT).unwrap();
        let tr = integrate_forward(&ModelSpec::new(ModelId::Tyc0), &P, &State::new(40.0, 40.0, 0.0), None, &g).unwrap();
        let root = (1.0 - 16.0 * P.delta / (P.beta * P.cap_k)).sqrt();
        let total = P.cap_k / 2.0 * (1.0 + root);
        assert!((tr.final_state().total() - total).abs() < 0.1, "{}", tr.final_state().total());
    }

    #[test]
    fn blow_up_is_reported() {
        let spec = ModelSpec::new(ModelId::Tyc0).with_mu(500.0);
        let g = TimeGrid::with_step(0.0, 200.0, DEFAULT_DT).unwrap();
        match integrate_forward(&spec, &P, &State::ZERO, None, &g) {
            Err(Error::BlowUp { component, limit, .. }) => {
                assert_eq!(component, "s");
                assert_eq!(limit, 4050.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn adjoint_vanishes_at_horizon_and_matches_closed_form() {
        let g = TimeGrid::with_step(0.0, 50.0, 0.05).unwrap();
        let zero = Trajectory { grid: g, states: vec![State::ZERO; g.len()] };
        let spec = ModelSpec::new(ModelId::Tyc0);
        let adj = integrate_adjoint_backward(&spec, &P, &zero, None, &g).unwrap();
        assert_eq!(adj.lambdas[g.n_steps], [0.0; 3]);
        for (i, l) in adj.lambdas.iter().enumerate() {
            let tau = g.t_end - g.time(i);
            let exact = ((-P.delta * tau).exp() - 1.0) / P.delta;
            assert!((l[0] - exact).abs() < 1e-6);
            assert!((l[1] - exact).abs() < 1e-6);
            assert_eq!(l[2], 0.0);
        }
    }

    #[test]
    fn adjoint_rhs_is_hamiltonian_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for id in ModelId::ALL {
            let spec = ModelSpec::new(id);
            for _ in 0..50 {
                let x = State::new(
                    rng.random_range(1.0..200.0),
                    rng.random_range(1.0..200.0),
                    if id == ModelId::Tyc0 { rng.random_range(0.0..100.0) } else { 0.0 },
                );
                let u = Controls {
                    mu: if id == ModelId::Tyc0 { rng.random_range(0.0..20.0) } else { 0.0 },
                    eta1: rng.random_range(0.0..1.0),
                    eta2: rng.random_range(0.0..0.05),
                };
                let lam = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
                let lam = if id.dimension() == 2 { [lam[0], lam[1], 0.0] } else { lam };
                let got = adjoint_rhs(&spec, &P, &x, &u, &lam);
                let xa = x.to_array();
                for k in 0..id.dimension() {
                    let h = 1e-5 * xa[k].max(1.0);
                    let (mut xp, mut xmn) = (xa, xa);
                    xp[k] += h;
                    xmn[k] -= h;
                    let dh = (hamiltonian(&spec, &P, &State::from_array(xp), &u, &lam)
                        - hamiltonian(&spec, &P, &State::from_array(xmn), &u, &lam))
                        / (2.0 * h);
                    let scale = dh.abs().max(1.0);
                    assert!((got[k] + dh).abs() <= 1e-5 * scale, "{id} k={k}: {} vs {}", got[k], -dh);
                }
            }
        }
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let g = TimeGrid::new(0.0, 10.0, 100).unwrap();
        let h = TimeGrid::new(0.0, 10.0, 101).unwrap();
        let tr = integrate_forward(&ModelSpec::new(ModelId::Fhms1), &P, &State::new(100.0, 100.0, 0.0), None, &g).unwrap();
        assert!(matches!(
            integrate_adjoint_backward(&ModelSpec::new(ModelId::Fhms1), &P, &tr, None, &h),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn fourth_order_convergence() {
        let spec = ModelSpec::new(ModelId::Tyc0).with_mu(2.0);
        let init = State::new(120.0, 100.0, 5.0);
        let end = |dt: f64| {
            let g = TimeGrid::with_step(0.0, 40.0, dt).unwrap();
            integrate_forward(&spec, &P, &init, None, &g).unwrap().final_state()
        };
        let reference = end(0.4 / 16.0);
        let err = |dt: f64| {
            let x = end(dt);
            (x.f - reference.f).abs().max((x.m - reference.m).abs()).max((x.s - reference.s).abs())
        };
        let ratio = err(0.8) / err(0.4);
        assert!(ratio > 13.0 && ratio < 19.0, "ratio {ratio}");
    }

    #[test]
    fn deterministic() {
        let spec = ModelSpec::new(ModelId::Fhmh6).with_eta(0.01, 0.01);
        let g = TimeGrid::with_step(0.0, 100.0, 0.05).unwrap();
        let init = State::new(150.0, 170.0, 0.0);
        let a = integrate_forward(&spec, &P, &init, None, &g).unwrap();
        let b = integrate_forward(&spec, &P, &init, None, &g).unwrap();
        assert!(a.states.iter().zip(&b.states).all(|(x, y)| x.to_array().map(f64::to_bits) == y.to_array().map(f64::to_bits)));
    }

    #[test]
    fn csv_header_and_precision() {
        let g = TimeGrid::new(0.0, 1.0, 2).unwrap();
        let spec = ModelSpec::new(ModelId::Tyc0).with_mu(1.0);
        let tr = integrate_forward(&spec, &P, &State::new(10.0, 10.0, 0.0), None, &g).unwrap();
        let sched = ControlSchedule::constant(&spec, g);
        let mut buf = Vec::new();
        tr.write_csv(&spec, Some(&sched), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,f,m,s,mu");
        let row: Vec<f64> = lines.nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(row[1], tr.states[1].f);
        assert_relative_eq!(row[4], 1.0);
    }
}
