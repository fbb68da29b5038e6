//! Right-hand sides of the seven sex-structured population models.
//!
//! Every model shares the mating/logistic birth term `½ f m β L` with
//! `L = 1 − (f + m + s)/K`. Model 0 adds YY supermales `s` that sire only
//! male offspring; Models 1–6 replace supermales by a female removal term
//! `η₁ G₁(f)` and a male term `± η₂ G₂(m)` (stocking for 1–3, harvesting
//! for 4–6) with `G` linear, saturating `x/(x+d)` or power `x^{3/2}`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Birth coefficient, death rate and carrying capacity shared by every model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifeParams {
    /// Per-capita birth coefficient (1/(individual·month)).
    pub beta: f64,
    /// Per-capita death rate (1/month).
    pub delta: f64,
    /// Carrying capacity (individuals).
    pub cap_k: f64,
}

impl LifeParams {
    /// Mesocosm best-fit values for the fancy guppy.
    pub const MESOCOSM: LifeParams = LifeParams {
        beta: 0.0057,
        delta: 0.0648,
        cap_k: 405.0,
    };

    pub fn new(beta: f64, delta: f64, cap_k: f64) -> Result<Self> {
        let p = LifeParams { beta, delta, cap_k };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::InvalidParams(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParams(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if !(self.cap_k.is_finite() && self.cap_k > 0.0) {
            return Err(Error::InvalidParams(format!("K must be > 0, got {}", self.cap_k)));
        }
        Ok(())
    }

    /// `Kβ/δ`, the dimensionless reproduction ratio.
    pub fn alpha(&self) -> f64 {
        self.cap_k * self.beta / self.delta
    }
}

impl Default for LifeParams {
    fn default() -> Self {
        Self::MESOCOSM
    }
}

/// Shape of a harvesting or stocking function `G`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HarvestShape {
    /// `G(x) = x`
    Linear,
    /// `G(x) = x/(x+d)`
    Saturating,
    /// `G(x) = x^{3/2}`
    Power,
}

impl HarvestShape {
    /// `G(x)` with saturation constant `d` (ignored unless saturating).
    pub fn value(self, x: f64, d: f64) -> f64 {
        match self {
            HarvestShape::Linear => x,
            HarvestShape::Saturating => x / (x + d),
            // x·√x rather than powf(1.5) so that x = 0 is exact.
            HarvestShape::Power => x * x.sqrt(),
        }
    }

    /// `G'(x)`.
    pub fn derivative(self, x: f64, d: f64) -> f64 {
        match self {
            HarvestShape::Linear => 1.0,
            HarvestShape::Saturating => d / ((x + d) * (x + d)),
            HarvestShape::Power => 1.5 * x.sqrt(),
        }
    }
}

/// The seven models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelId {
    /// Classical Trojan Y chromosome model with supermale introduction `μ`.
    Tyc0,
    /// Female harvesting, male stocking, linear.
    Fhms1,
    /// Female harvesting, male stocking, saturating.
    Fhms2,
    /// Female harvesting, male stocking, power law.
    Fhms3,
    /// Female and male harvesting, linear.
    Fhmh4,
    /// Female and male harvesting, saturating.
    Fhmh5,
    /// Female and male harvesting, power law.
    Fhmh6,
}

impl ModelId {
    pub const ALL: [ModelId; 7] = [
        ModelId::Tyc0,
        ModelId::Fhms1,
        ModelId::Fhms2,
        ModelId::Fhms3,
        ModelId::Fhmh4,
        ModelId::Fhmh5,
        ModelId::Fhmh6,
    ];

    pub const HARVESTING: [ModelId; 6] = [
        ModelId::Fhms1,
        ModelId::Fhms2,
        ModelId::Fhms3,
        ModelId::Fhmh4,
        ModelId::Fhmh5,
        ModelId::Fhmh6,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelId::Tyc0 => "tyc0",
            ModelId::Fhms1 => "fhms1",
            ModelId::Fhms2 => "fhms2",
            ModelId::Fhms3 => "fhms3",
            ModelId::Fhmh4 => "fhmh4",
            ModelId::Fhmh5 => "fhmh5",
            ModelId::Fhmh6 => "fhmh6",
        }
    }

    /// Model number 0–6.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ModelId> {
        ModelId::ALL.get(i).copied()
    }

    /// Number of dynamic state variables (3 for Model 0, 2 otherwise).
    pub fn dimension(self) -> usize {
        if self == ModelId::Tyc0 {
            3
        } else {
            2
        }
    }

    /// Harvest shape of `G₁`/`G₂`, `None` for Model 0.
    pub fn shape(self) -> Option<HarvestShape> {
        match self {
            ModelId::Tyc0 => None,
            ModelId::Fhms1 | ModelId::Fhmh4 => Some(HarvestShape::Linear),
            ModelId::Fhms2 | ModelId::Fhmh5 => Some(HarvestShape::Saturating),
            ModelId::Fhms3 | ModelId::Fhmh6 => Some(HarvestShape::Power),
        }
    }

    /// +1 when males are stocked, −1 when they are harvested, 0 for Model 0.
    pub fn male_sign(self) -> f64 {
        match self {
            ModelId::Tyc0 => 0.0,
            ModelId::Fhms1 | ModelId::Fhms2 | ModelId::Fhms3 => 1.0,
            ModelId::Fhmh4 | ModelId::Fhmh5 | ModelId::Fhmh6 => -1.0,
        }
    }

    pub fn is_stocking(self) -> bool {
        self.male_sign() > 0.0
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelId {
    type Err = Error;

    /// Accepts `tyc0`, `fhms1`, …, the bare digits `0`–`6`, and `model3`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        let digits = t.trim_start_matches("model");
        if let Ok(i) = digits.parse::<usize>() {
            return ModelId::from_index(i)
                .ok_or_else(|| Error::InvalidParams(format!("unknown model '{s}'")));
        }
        ModelId::ALL
            .iter()
            .copied()
            .find(|m| m.name() == t)
            .ok_or_else(|| Error::InvalidParams(format!("unknown model '{s}'")))
    }
}

/// A model together with its control constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: ModelId,
    /// Supermale introduction rate (individuals/month), Model 0 only.
    #[serde(default)]
    pub mu: f64,
    /// Female removal coefficient.
    #[serde(default)]
    pub eta1: f64,
    /// Male stocking (1–3) or removal (4–6) coefficient.
    #[serde(default)]
    pub eta2: f64,
    /// Saturation constant of `G₁` (Models 2 and 5).
    #[serde(default = "one")]
    pub d1: f64,
    /// Saturation constant of `G₂` (Models 2 and 5).
    #[serde(default = "one")]
    pub d2: f64,
}

fn one() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn new(model_id: ModelId) -> Self {
        ModelSpec {
            model_id,
            mu: 0.0,
            eta1: 0.0,
            eta2: 0.0,
            d1: 1.0,
            d2: 1.0,
        }
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    pub fn with_eta(mut self, eta1: f64, eta2: f64) -> Self {
        self.eta1 = eta1;
        self.eta2 = eta2;
        self
    }

    pub fn with_saturation(mut self, d1: f64, d2: f64) -> Self {
        self.d1 = d1;
        self.d2 = d2;
        self
    }

    /// Constant controls carried by the spec.
    pub fn controls(&self) -> Controls {
        Controls {
            mu: self.mu,
            eta1: self.eta1,
            eta2: self.eta2,
        }
    }

    pub fn validate(&self, params: &LifeParams) -> Result<()> {
        for (name, v) in [("mu", self.mu), ("eta1", self.eta1), ("eta2", self.eta2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParams(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.model_id != ModelId::Tyc0 && self.mu != 0.0 {
            return Err(Error::InvalidParams(format!(
                "mu applies to tyc0 only, got mu = {} for {}",
                self.mu, self.model_id
            )));
        }
        if self.model_id.shape() == Some(HarvestShape::Saturating) && !(self.d1 > 0.0 && self.d2 > 0.0) {
            return Err(Error::InvalidParams(format!(
                "d1 and d2 must be > 0 for {}, got d1 = {}, d2 = {}",
                self.model_id, self.d1, self.d2
            )));
        }
        if self.model_id.is_stocking() && self.eta2 > 0.0 && params.delta <= self.eta2 {
            return Err(Error::InvalidParams(format!(
                "{} with eta2 > 0 requires delta > eta2 (delta = {}, eta2 = {})",
                self.model_id, params.delta, self.eta2
            )));
        }
        Ok(())
    }
}

/// Female, male and supermale densities (individuals).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub f: f64,
    pub m: f64,
    #[serde(default)]
    pub s: f64,
}

impl State {
    pub const ZERO: State = State { f: 0.0, m: 0.0, s: 0.0 };

    pub fn new(f: f64, m: f64, s: f64) -> Self {
        State { f, m, s }
    }

    pub fn total(&self) -> f64 {
        self.f + self.m + self.s
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.f, self.m, self.s]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        State { f: a[0], m: a[1], s: a[2] }
    }

    /// `self + h·other`
    pub fn axpy(self, h: f64, other: State) -> State {
        State {
            f: self.f + h * other.f,
            m: self.m + h * other.m,
            s: self.s + h * other.s,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.f.abs().max(self.m.abs()).max(self.s.abs())
    }

    pub fn is_finite(&self) -> bool {
        self.f.is_finite() && self.m.is_finite() && self.s.is_finite()
    }

    pub(crate) fn components(&self) -> [(&'static str, f64); 3] {
        [("f", self.f), ("m", self.m), ("s", self.s)]
    }

    /// Error if any component is negative.
    pub fn check_nonnegative(&self) -> Result<()> {
        for (component, value) in self.components() {
            if value < 0.0 || value.is_nan() {
                return Err(Error::NegativeState { component, value });
            }
        }
        Ok(())
    }
}

/// Instantaneous control values. Model 0 reads `mu`, the others `eta1`/`eta2`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Controls {
    pub mu: f64,
    pub eta1: f64,
    pub eta2: f64,
}

impl Controls {
    pub fn mu(mu: f64) -> Self {
        Controls { mu, ..Default::default() }
    }

    pub fn eta(eta1: f64, eta2: f64) -> Self {
        Controls { mu: 0.0, eta1, eta2 }
    }

    /// `½ Σ u²` over the channels the model actually uses.
    pub fn quadratic_cost(&self, model: ModelId) -> f64 {
        if model == ModelId::Tyc0 {
            0.5 * self.mu * self.mu
        } else {
            0.5 * (self.eta1 * self.eta1 + self.eta2 * self.eta2)
        }
    }
}

/// `L = 1 − (f+m+s)/K`, unclamped.
pub fn logistic_factor(state: &State, params: &LifeParams) -> f64 {
    1.0 - state.total() / params.cap_k
}

/// Time derivative `(df/dt, dm/dt, ds/dt)`.
///
/// `controls` overrides the constants carried by `spec`. `ds/dt` is zero for
/// the harvesting models.
pub fn rhs(spec: &ModelSpec, params: &LifeParams, state: &State, controls: Option<&Controls>) -> Result<State> {
    state.check_nonnegative()?;
    let u = controls.copied().unwrap_or_else(|| spec.controls());
    Ok(rhs_raw(spec, params, state, &u))
}

/// [`rhs`] without the sign check; callers guarantee a nonnegative state.
pub(crate) fn rhs_raw(spec: &ModelSpec, params: &LifeParams, x: &State, u: &Controls) -> State {
    let LifeParams { beta, delta, .. } = *params;
    let l = logistic_factor(x, params);
    match spec.model_id.shape() {
        None => {
            let mating = 0.5 * x.f * x.m;
            State {
                f: mating * beta * l - delta * x.f,
                m: (mating + x.f * x.s) * beta * l - delta * x.m,
                s: u.mu - delta * x.s,
            }
        }
        Some(shape) => {
            let births = 0.5 * x.f * x.m * beta * l;
            let sign = spec.model_id.male_sign();
            State {
                f: births - delta * x.f - u.eta1 * shape.value(x.f, spec.d1),
                m: births - delta * x.m + sign * u.eta2 * shape.value(x.m, spec.d2),
                s: 0.0,
            }
        }
    }
}

/// 3×3 state Jacobian `∂F/∂(f,m,s)`. For the harvesting models the third
/// row and column are zero.
pub fn state_jacobian(spec: &ModelSpec, params: &LifeParams, x: &State, u: &Controls) -> [[f64; 3]; 3] {
    let LifeParams { beta, delta, cap_k } = *params;
    let l = logistic_factor(x, params);
    match spec.model_id.shape() {
        None => {
            let fm_half = 0.5 * x.f * x.m;
            let male_births = fm_half + x.f * x.s;
            let j11 = 0.5 * x.m * beta * l - fm_half * beta / cap_k - delta;
            let j12 = 0.5 * x.f * beta * l - fm_half * beta / cap_k;
            let j13 = -fm_half * beta / cap_k;
            let j21 = (0.5 * x.m + x.s) * beta * l - male_births * beta / cap_k;
            let j22 = 0.5 * x.f * beta * l - male_births * beta / cap_k - delta;
            let j23 = x.f * beta * l - male_births * beta / cap_k;
            [[j11, j12, j13], [j21, j22, j23], [0.0, 0.0, -delta]]
        }
        Some(shape) => {
            let fm_half = 0.5 * x.f * x.m;
            let db_df = 0.5 * x.m * beta * l - fm_half * beta / cap_k;
            let db_dm = 0.5 * x.f * beta * l - fm_half * beta / cap_k;
            let sign = spec.model_id.male_sign();
            [
                [db_df - delta - u.eta1 * shape.derivative(x.f, spec.d1), db_dm, 0.0],
                [db_df, db_dm - delta + sign * u.eta2 * shape.derivative(x.m, spec.d2), 0.0],
                [0.0, 0.0, 0.0],
            ]
        }
    }
}

/// Sensitivity of the right-hand side to each control channel.
///
/// Model 0 has the single channel `μ` with `∂F/∂μ = (0,0,1)`; the harvesting
/// models have `∂F/∂η₁ = (−G₁(f),0,0)` and `∂F/∂η₂ = (0, ±G₂(m), 0)`.
pub fn control_gradient(spec: &ModelSpec, x: &State) -> Vec<[f64; 3]> {
    match spec.model_id.shape() {
        None => vec![[0.0, 0.0, 1.0]],
        Some(shape) => vec![
            [-shape.value(x.f, spec.d1), 0.0, 0.0],
            [0.0, spec.model_id.male_sign() * shape.value(x.m, spec.d2), 0.0],
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const P: LifeParams = LifeParams::MESOCOSM;

    #[test]
    fn logistic_factor_examples() {
        assert_eq!(logistic_factor(&State::ZERO, &P), 1.0);
        assert_eq!(logistic_factor(&State::new(202.5, 202.5, 0.0), &P), 0.0);
        assert_relative_eq!(
            logistic_factor(&State::new(100.0, 100.0, 100.0), &P),
            1.0 - 300.0 / 405.0,
            max_relative = 1e-15
        );
        assert!(logistic_factor(&State::new(300.0, 300.0, 0.0), &P) < 0.0);
    }

    #[test]
    fn tyc_source_term_and_boundary_equilibrium() {
        let spec = ModelSpec::new(ModelId::Tyc0).with_mu(10.0);
        let d = rhs(&spec, &P, &State::ZERO, None).unwrap();
        assert_eq!(d, State::new(0.0, 0.0, 10.0));

        let boundary = State::new(0.0, 0.0, 10.0 / P.delta);
        let d = rhs(&spec, &P, &boundary, None).unwrap();
        assert!(d.max_abs() < 1e-12, "{d:?}");
    }

    #[test]
    fn fhmh4_interior_equilibrium_is_a_root() {
        let k = P.cap_k;
        let fp = k / 4.0 * (1.0 + (1.0 - 16.0 * P.delta / (P.beta * k)).sqrt());
        let d = rhs(&ModelSpec::new(ModelId::Fhmh4), &P, &State::new(fp, fp, 0.0), None).unwrap();
        assert!(d.max_abs() < 1e-9, "{d:?}");
    }

    #[test]
    fn origin_is_an_equilibrium_of_every_model() {
        for id in ModelId::ALL {
            let spec = ModelSpec::new(id).with_eta(0.3, 0.02);
            let d = rhs(&spec, &P, &State::ZERO, None).unwrap();
            assert_eq!(d, State::ZERO, "{id}");
        }
    }

    #[test]
    fn negative_state_is_rejected() {
        let err = rhs(&ModelSpec::new(ModelId::Fhms3), &P, &State::new(-1.0, 1.0, 0.0), None).unwrap_err();
        assert!(matches!(err, Error::NegativeState { component: "f", .. }));
    }

    #[test]
    fn harvest_shapes() {
        assert_eq!(HarvestShape::Power.value(4.0, 0.0), 8.0);
        assert_eq!(HarvestShape::Power.value(0.0, 0.0), 0.0);
        assert_eq!(HarvestShape::Saturating.value(3.0, 1.0), 0.75);
        assert_eq!(HarvestShape::Saturating.derivative(1.0, 1.0), 0.25);
        assert_eq!(HarvestShape::Power.derivative(4.0, 0.0), 3.0);
    }

    #[test]
    fn model_id_parsing() {
        assert_eq!("fhmh4".parse::<ModelId>().unwrap(), ModelId::Fhmh4);
        assert_eq!("3".parse::<ModelId>().unwrap(), ModelId::Fhms3);
        assert_eq!("Model0".parse::<ModelId>().unwrap(), ModelId::Tyc0);
        assert!("7".parse::<ModelId>().is_err());
        assert!("fhms9".parse::<ModelId>().is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(ModelSpec::new(ModelId::Fhms1).with_eta(0.1, 0.07).validate(&P).is_err());
        assert!(ModelSpec::new(ModelId::Fhmh4).with_eta(0.1, 0.07).validate(&P).is_ok());
        assert!(ModelSpec::new(ModelId::Fhms2).with_saturation(0.0, 1.0).validate(&P).is_err());
        assert!(ModelSpec::new(ModelId::Tyc0).with_mu(-1.0).validate(&P).is_err());
        assert!(LifeParams::new(0.01, 1.0, 10.0).is_err());
        assert!(LifeParams::new(0.0, 0.5, 10.0).is_err());
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let x = State::new(120.0, 90.0, 35.0);
        for id in ModelId::ALL {
            let spec = ModelSpec::new(id).with_eta(0.4, 0.03).with_saturation(2.0, 3.0);
            let u = if id == ModelId::Tyc0 { Controls::mu(5.0) } else { spec.controls() };
            let x = if id == ModelId::Tyc0 { x } else { State { s: 0.0, ..x } };
            let jac = state_jacobian(&spec, &P, &x, &u);
            let base = x.to_array();
            for col in 0..id.dimension() {
                let h = 1e-6 * base[col].abs().max(1.0);
                let mut up = base;
                let mut dn = base;
                up[col] += h;
                dn[col] -= h;
                let fu = rhs_raw(&spec, &P, &State::from_array(up), &u).to_array();
                let fd = rhs_raw(&spec, &P, &State::from_array(dn), &u).to_array();
                for row in 0..3 {
                    let fdiff = (fu[row] - fd[row]) / (2.0 * h);
                    assert!(
                        (fdiff - jac[row][col]).abs() <= 1e-5 * fdiff.abs().max(1e-3),
                        "{id} J[{row}][{col}] = {} vs {}",
                        jac[row][col],
                        fdiff
                    );
                }
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn state2() -> impl Strategy<Value = State> {
            (0.0..400.0f64, 0.0..400.0f64).prop_map(|(f, m)| State::new(f, m, 0.0))
        }

        proptest! {
            #[test]
            fn stocking_mirrors_harvesting(x in state2(), e1 in 0.0..1.0f64, e2 in 0.0..1.0f64) {
                let stock = rhs_raw(&ModelSpec::new(ModelId::Fhms1), &P, &x, &Controls::eta(e1, e2));
                let harvest = rhs_raw(&ModelSpec::new(ModelId::Fhmh4), &P, &x, &Controls::eta(e1, -e2));
                prop_assert_eq!(stock.m, harvest.m);
                prop_assert_eq!(stock.f, harvest.f);
            }

            #[test]
            fn tyc_without_supermales_is_model_one(x in state2()) {
                let tyc = rhs_raw(&ModelSpec::new(ModelId::Tyc0), &P, &x, &Controls::default());
                let fhms = rhs_raw(&ModelSpec::new(ModelId::Fhms1), &P, &x, &Controls::default());
                prop_assert_eq!(tyc, fhms);
            }
        }
    }
}
