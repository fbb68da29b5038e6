//! Enumeration and classification of equilibria.
//!
//! Closed forms cover Model 0 (the `μ = 0` quadratic and the `μ > 0` cubic in
//! the male density) and the linear harvesting/stocking Models 1 and 4. The
//! saturating and power-law models are solved numerically by Newton's method
//! on the per-capita equilibrium conditions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{rhs_raw, HarvestShape, LifeParams, ModelId, ModelSpec, State};
use crate::poly::{cubic_discriminant, cubic_real_roots};
use crate::stability::{boundary_threshold_verdict, classify_point, Verdict};

/// Relative band separating knife-edge threshold equalities.
pub const THRESHOLD_REL_TOL: f64 = 1e-10;

/// Coefficients of `a m³ + b m² + c m + d = 0`, the male density at an
/// interior equilibrium of Model 0 with `s* = μ/δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub s_star: f64,
}

impl CubicCoefficients {
    pub fn discriminant(&self) -> f64 {
        cubic_discriminant(self.a, self.b, self.c, self.d)
    }

    /// Largest magnitude among the terms of the discriminant, used to scale
    /// the zero band.
    fn discriminant_scale(&self) -> f64 {
        let CubicCoefficients { a, b, c, d, .. } = *self;
        [
            (b * b * c * c).abs(),
            (4.0 * a * c * c * c).abs(),
            (4.0 * b * b * b * d).abs(),
            (27.0 * a * a * d * d).abs(),
            (18.0 * a * b * c * d).abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

pub fn tyc_cubic(params: &LifeParams, mu: f64) -> Result<CubicCoefficients> {
    if !(mu > 0.0) {
        return Err(Error::Precondition(format!("tyc_cubic requires mu > 0, got {mu}")));
    }
    let LifeParams { beta, delta, cap_k } = *params;
    let s = mu / delta;
    Ok(CubicCoefficients {
        a: 2.0 * beta,
        b: 3.0 * beta * s - cap_k * beta,
        c: 2.0 * beta * s * s + 2.0 * cap_k * delta - 2.0 * cap_k * beta * s,
        d: 4.0 * cap_k * delta * s,
        s_star: s,
    })
}

/// Roots of `c(s*) = 0` and `b(s*) = 0` viewed as functions of `s*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    /// `K/2 + √(K²/4 − Kδ/β)`; `None` when `α < 4`.
    pub s_c_plus: Option<f64>,
    /// `K/2 − √(K²/4 − Kδ/β)`; `None` when `α < 4`.
    pub s_c_minus: Option<f64>,
    /// `K/3`
    pub s_b: f64,
    /// `Kβ/δ`
    pub alpha: f64,
}

pub fn thresholds(params: &LifeParams) -> ThresholdSet {
    let k = params.cap_k;
    let rad = k * k / 4.0 - k * params.delta / params.beta;
    let (plus, minus) = if rad >= 0.0 {
        (Some(k / 2.0 + rad.sqrt()), Some(k / 2.0 - rad.sqrt()))
    } else {
        (None, None)
    };
    ThresholdSet {
        s_c_plus: plus,
        s_c_minus: minus,
        s_b: k / 3.0,
        alpha: params.alpha(),
    }
}

impl ThresholdSet {
    /// Sign pattern of `(b, c)` predicted from where `s*` falls relative to
    /// the thresholds: `true` when at least one of them is negative.
    pub fn predicts_sign_change(&self, s_star: f64) -> bool {
        let b_negative = s_star < self.s_b;
        let c_negative = match (self.s_c_minus, self.s_c_plus) {
            (Some(lo), Some(hi)) => s_star > lo && s_star < hi,
            _ => false,
        };
        b_negative || c_negative
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PositiveRoots {
    TwoPositive,
    NoPositive,
}

/// Number of positive roots of the Model 0 cubic from the discriminant sign
/// and Descartes' rule.
///
/// `a > 0` and `d > 0`, so the coefficient signs `(+, b, c, +)` show either
/// two sign changes (when `b < 0` or `c < 0`) or none. A negative
/// discriminant leaves a single real root, which is negative.
pub fn classify_positive_roots(
    coeffs: &CubicCoefficients,
    thresholds: &ThresholdSet,
    s_star: f64,
) -> Result<PositiveRoots> {
    let disc = coeffs.discriminant();
    let scale = coeffs.discriminant_scale();
    let near_zero = disc.abs() <= THRESHOLD_REL_TOL * scale;
    let coef_scale = coeffs.a.abs() + coeffs.b.abs() + coeffs.c.abs() + coeffs.d.abs();
    if near_zero && coeffs.d.abs() <= THRESHOLD_REL_TOL * coef_scale && coeffs.c.abs() <= THRESHOLD_REL_TOL * coef_scale
    {
        return Err(Error::Degenerate(format!(
            "repeated cubic root at m = 0 (s* = {s_star}, discriminant {disc:e})"
        )));
    }
    if disc < 0.0 && !near_zero {
        return Ok(PositiveRoots::NoPositive);
    }
    let by_coefficients = coeffs.b < 0.0 || coeffs.c < 0.0;
    debug_assert!(
        by_coefficients == thresholds.predicts_sign_change(s_star)
            || (coeffs.b.abs() < 1e-9 * coef_scale || coeffs.c.abs() < 1e-9 * coef_scale),
        "threshold region disagrees with coefficient signs"
    );
    Ok(if by_coefficients {
        PositiveRoots::TwoPositive
    } else {
        PositiveRoots::NoPositive
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    Stable,
    Unstable,
    NonHyperbolic,
}

impl From<Verdict> for Classification {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::Stable => Classification::Stable,
            Verdict::Unstable => Classification::Unstable,
            Verdict::Marginal => Classification::NonHyperbolic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumEntry {
    pub point: State,
    /// From the linearization at the point.
    pub classification: Classification,
    /// From the closed-form case analysis, where one exists.
    pub published: Option<Classification>,
    pub provenance: String,
    /// `max |rhs|` at the point.
    pub residual: f64,
    /// `(re, im)` eigenvalues of the Jacobian.
    pub eigenvalues: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub model: ModelId,
    pub entries: Vec<EquilibriumEntry>,
    pub warnings: Vec<String>,
}

impl EquilibriumReport {
    fn new(model: ModelId) -> Self {
        EquilibriumReport {
            model,
            entries: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn push(
        &mut self,
        spec: &ModelSpec,
        params: &LifeParams,
        point: State,
        published: Option<Classification>,
        provenance: impl Into<String>,
    ) -> Result<()> {
        let residual = rhs_raw(spec, params, &point, &spec.controls()).max_abs();
        let verdict = classify_point(spec, params, &point)?;
        self.entries.push(EquilibriumEntry {
            point,
            classification: verdict.verdict.into(),
            published,
            provenance: provenance.into(),
            residual,
            eigenvalues: verdict.eigen_summary,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Tolerance every entry's residual must meet.
    pub fn verification_tolerance(params: &LifeParams) -> f64 {
        1e-8 * params.cap_k.max(1.0)
    }

    pub fn max_residual(&self) -> f64 {
        self.entries.iter().map(|e| e.residual).fold(0.0, f64::max)
    }
}

/// `sign(x − y)` with a relative zero band.
fn compare(x: f64, y: f64) -> std::cmp::Ordering {
    let scale = x.abs().max(y.abs());
    if (x - y).abs() <= THRESHOLD_REL_TOL * scale {
        std::cmp::Ordering::Equal
    } else if x < y {
        std::cmp::Ordering::Less
    } else {
        std::cmp::Ordering::Greater
    }
}

/// Equilibria of Model 0 with `μ = 0`: the origin plus `f = m = K/4 ± (K/4)√(1 − 16δ/(βK))`.
pub fn tyc_mu0_equilibria(params: &LifeParams) -> Result<EquilibriumReport> {
    params.validate()?;
    let spec = ModelSpec::new(ModelId::Tyc0);
    let mut report = EquilibriumReport::new(ModelId::Tyc0);
    report.push(&spec, params, State::ZERO, Some(Classification::Stable), "origin")?;
    let LifeParams { beta, delta, cap_k } = *params;
    let quarter = cap_k / 4.0;
    match compare(16.0 * delta, beta * cap_k) {
        std::cmp::Ordering::Greater => {}
        std::cmp::Ordering::Equal => {
            report.push(
                &spec,
                params,
                State::new(quarter, quarter, 0.0),
                Some(Classification::Unstable),
                "tangent: 16*delta = beta*K",
            )?;
        }
        std::cmp::Ordering::Less => {
            let root = (1.0 - 16.0 * delta / (beta * cap_k)).sqrt();
            let plus = quarter * (1.0 + root);
            let minus = quarter * (1.0 - root);
            report.push(
                &spec,
                params,
                State::new(plus, plus, 0.0),
                Some(Classification::Stable),
                "plus branch",
            )?;
            report.push(
                &spec,
                params,
                State::new(minus, minus, 0.0),
                Some(Classification::Unstable),
                "minus branch",
            )?;
        }
    }
    Ok(report)
}

/// Equilibria of Model 0 with `μ > 0`: the supermale-only state
/// `(0, 0, μ/δ)` and every interior point from the positive cubic roots.
pub fn tyc_equilibria(params: &LifeParams, mu: f64) -> Result<EquilibriumReport> {
    params.validate()?;
    let spec = ModelSpec::new(ModelId::Tyc0).with_mu(mu);
    let coeffs = tyc_cubic(params, mu)?;
    let th = thresholds(params);
    let s = coeffs.s_star;
    let mut report = EquilibriumReport::new(ModelId::Tyc0);
    let published = Classification::from(boundary_threshold_verdict(params).verdict);
    report.push(&spec, params, State::new(0.0, 0.0, s), Some(published), "boundary (0, 0, mu/delta)")?;
    if published != report.entries[0].classification {
        report.warnings.push(format!(
            "boundary threshold verdict {:?} (delta vs 1/9) differs from the linearization {:?}",
            published, report.entries[0].classification
        ));
    }

    let predicted = classify_positive_roots(&coeffs, &th, s)?;
    let LifeParams { beta, delta, cap_k } = *params;
    let mut interior = 0;
    for m in cubic_real_roots(coeffs.a, coeffs.b, coeffs.c, coeffs.d, 1e-9) {
        if m <= 0.0 {
            continue;
        }
        let f = cap_k - m - s - 2.0 * cap_k * delta / (m * beta);
        if f <= 0.0 {
            continue;
        }
        let point = polish_tyc(&spec, params, State::new(f, m, s));
        interior += 1;
        report.push(&spec, params, point, None, format!("interior cubic root m = {m:.6}"))?;
    }
    if predicted == PositiveRoots::TwoPositive && interior < 2 {
        report.warnings.push(format!(
            "cubic has two positive roots but only {interior} yield f* > 0"
        ));
    }
    Ok(report)
}

/// A few Newton steps on `(f, m)` with `s` held fixed.
fn polish_tyc(spec: &ModelSpec, params: &LifeParams, mut x: State) -> State {
    let u = spec.controls();
    for _ in 0..4 {
        let r = rhs_raw(spec, params, &x, &u);
        let j = crate::models::state_jacobian(spec, params, &x, &u);
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det.abs() < 1e-300 {
            break;
        }
        let df = (r.f * j[1][1] - r.m * j[0][1]) / det;
        let dm = (j[0][0] * r.m - j[1][0] * r.f) / det;
        let cand = State::new(x.f - df, x.m - dm, x.s);
        if cand.f <= 0.0 || cand.m <= 0.0 {
            break;
        }
        if rhs_raw(spec, params, &cand, &u).max_abs() >= r.max_abs() {
            break;
        }
        x = cand;
    }
    x
}

/// Equilibria of Model 1 (female harvesting, male stocking, linear).
///
/// Interior points satisfy `m* = (δ+η₁)/(δ−η₂) f*` with `f*` a root of a
/// quadratic whose discriminant changes sign at `βK = 8(2δ + η₁ − η₂)`.
pub fn fhms_equilibria(params: &LifeParams, spec: &ModelSpec) -> Result<EquilibriumReport> {
    if spec.model_id != ModelId::Fhms1 {
        return Err(Error::Precondition(format!(
            "fhms_equilibria applies to fhms1, got {}",
            spec.model_id
        )));
    }
    linear_equilibria(params, spec)
}

/// Equilibria of the linear Models 1 and 4.
pub fn linear_equilibria(params: &LifeParams, spec: &ModelSpec) -> Result<EquilibriumReport> {
    params.validate()?;
    if !matches!(spec.model_id, ModelId::Fhms1 | ModelId::Fhmh4) {
        return Err(Error::Precondition(format!(
            "linear_equilibria applies to fhms1/fhmh4, got {}",
            spec.model_id
        )));
    }
    spec.validate(params)?;
    let LifeParams { beta, delta, cap_k } = *params;
    let (e1, e2) = (spec.eta1, spec.eta2);
    let sign = spec.model_id.male_sign();
    let female_loss = delta + e1;
    let male_loss = delta - sign * e2;
    if male_loss <= 0.0 {
        return Err(Error::InvalidParams(format!(
            "male loss rate delta - eta2 = {male_loss} must be positive"
        )));
    }
    let total_loss = female_loss + male_loss;
    let bk = beta * cap_k;

    let case = match (spec.model_id, e1 > 0.0, e2 > 0.0) {
        (ModelId::Fhmh4, _, _) => "harvest both",
        (_, true, false) => "case 1 (eta1 > 0, eta2 = 0)",
        (_, false, true) => "case 2 (eta1 = 0, eta2 > 0)",
        (_, true, true) => "case 3 (eta1 > 0, eta2 > 0)",
        (_, false, false) => "no control",
    };
    // the tangent point is published stable only for case 2
    let tangent_published = if spec.model_id == ModelId::Fhms1 && e1 == 0.0 && e2 > 0.0 {
        Classification::Stable
    } else {
        Classification::Unstable
    };

    let mut report = EquilibriumReport::new(spec.model_id);
    report.push(spec, params, State::ZERO, Some(Classification::Stable), "origin")?;
    let branch = |root: f64| {
        let scale = 1.0 + root;
        State::new(cap_k * male_loss / (2.0 * total_loss) * scale, cap_k * female_loss / (2.0 * total_loss) * scale, 0.0)
    };
    match compare(8.0 * total_loss, bk) {
        std::cmp::Ordering::Greater => {}
        std::cmp::Ordering::Equal => {
            let point = State::new(4.0 * male_loss / beta, 4.0 * female_loss / beta, 0.0);
            report.push(spec, params, point, Some(tangent_published), format!("{case}: tangent"))?;
        }
        std::cmp::Ordering::Less => {
            let root = (1.0 - 8.0 * total_loss / bk).sqrt();
            let plus = branch(root);
            let minus = branch(-root);
            if spec.model_id == ModelId::Fhms1 && e1 == 0.0 && e2 > 0.0 {
                check_case2_printed(params, spec, root, plus, minus, &mut report);
            }
            report.push(spec, params, plus, Some(Classification::Stable), format!("{case}: plus branch"))?;
            report.push(spec, params, minus, Some(Classification::Unstable), format!("{case}: minus branch"))?;
        }
    }
    Ok(report)
}

/// The printed case-2 female density uses the denominator `2(2δ + η₁)β`;
/// compare it with the general formula and note which one is a root.
fn check_case2_printed(
    params: &LifeParams,
    spec: &ModelSpec,
    root: f64,
    plus: State,
    minus: State,
    report: &mut EquilibriumReport,
) {
    let LifeParams { beta, delta, cap_k } = *params;
    let bk = beta * cap_k;
    let e2 = spec.eta2;
    let sq = bk * root; // √(βK(βK − 16δ + 8η₂))
    let tol = EquilibriumReport::verification_tolerance(params);
    let u = spec.controls();
    for (label, general, sgn) in [("plus", plus, 1.0), ("minus", minus, -1.0)] {
        let printed_f = (delta - e2) * (bk + sgn * sq) / (2.0 * (2.0 * delta + spec.eta1) * beta);
        let printed = State::new(printed_f, general.m, 0.0);
        let printed_res = rhs_raw(spec, params, &printed, &u).max_abs();
        let general_res = rhs_raw(spec, params, &general, &u).max_abs();
        if printed_res > tol && general_res <= tol {
            report.warnings.push(format!(
                "case 2 {label} branch: denominator 2(2delta+eta1)beta gives f = {printed_f:.6} with residual {printed_res:.3e}; \
                 using 2(2delta-eta2)beta, f = {:.6} (residual {general_res:.3e})",
                general.f
            ));
        }
    }
}

/// Per-capita harvest `G(x)/x` and its derivative.
fn per_capita(shape: HarvestShape, x: f64, d: f64) -> (f64, f64) {
    match shape {
        HarvestShape::Linear => (1.0, 0.0),
        HarvestShape::Saturating => (1.0 / (x + d), -1.0 / ((x + d) * (x + d))),
        HarvestShape::Power => {
            let r = x.sqrt();
            (r, if r > 0.0 { 0.5 / r } else { f64::INFINITY })
        }
    }
}

/// Equilibria of a harvesting model found numerically: the origin, any
/// female-free male equilibrium created by stocking, and interior points from
/// Newton's method on `(½mβL − δ − η₁G₁(f)/f, ½fβL − δ ± η₂G₂(m)/m) = 0`
/// started from a grid over `(0, K]²`.
pub fn numeric_equilibria(params: &LifeParams, spec: &ModelSpec) -> Result<EquilibriumReport> {
    params.validate()?;
    spec.validate(params)?;
    let shape = spec
        .model_id
        .shape()
        .ok_or(Error::UnsupportedModel("tyc0"))?;
    let LifeParams { beta, delta, cap_k } = *params;
    let sign = spec.model_id.male_sign();
    let (e1, e2, d1, d2) = (spec.eta1, spec.eta2, spec.d1, spec.d2);
    let mut report = EquilibriumReport::new(spec.model_id);
    report.push(spec, params, State::ZERO, None, "origin")?;

    if sign > 0.0 && e2 > 0.0 {
        let m = match shape {
            HarvestShape::Linear => None,
            HarvestShape::Saturating => Some(e2 / delta - d2).filter(|m| *m > 0.0),
            HarvestShape::Power => Some((delta / e2).powi(2)),
        };
        if let Some(m) = m {
            report.push(spec, params, State::new(0.0, m, 0.0), None, "female-free stocked males")?;
        }
    }

    let residual = |f: f64, m: f64| -> [f64; 2] {
        let l = 1.0 - (f + m) / cap_k;
        let (g1, _) = per_capita(shape, f, d1);
        let (g2, _) = per_capita(shape, m, d2);
        [0.5 * m * beta * l - delta - e1 * g1, 0.5 * f * beta * l - delta + sign * e2 * g2]
    };
    let jac = |f: f64, m: f64| -> [[f64; 2]; 2] {
        let l = 1.0 - (f + m) / cap_k;
        let (_, dg1) = per_capita(shape, f, d1);
        let (_, dg2) = per_capita(shape, m, d2);
        [
            [-0.5 * m * beta / cap_k - e1 * dg1, 0.5 * beta * l - 0.5 * m * beta / cap_k],
            [0.5 * beta * l - 0.5 * f * beta / cap_k, -0.5 * f * beta / cap_k + sign * e2 * dg2],
        ]
    };

    let mut found: Vec<State> = Vec::new();
    let seeds = 24;
    for i in 1..=seeds {
        for j in 1..=seeds {
            let mut f = cap_k * (i as f64 / seeds as f64).powi(2);
            let mut m = cap_k * (j as f64 / seeds as f64).powi(2);
            let mut converged = false;
            for _ in 0..100 {
                let r = residual(f, m);
                let a = jac(f, m);
                let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
                if !det.is_finite() || det.abs() < 1e-300 {
                    break;
                }
                let df = (r[0] * a[1][1] - r[1] * a[0][1]) / det;
                let dm = (a[0][0] * r[1] - a[1][0] * r[0]) / det;
                let mut t = 1.0;
                while (f - t * df <= 0.0 || m - t * dm <= 0.0) && t > 1e-12 {
                    t *= 0.5;
                }
                f -= t * df;
                m -= t * dm;
                if !(f > 0.0 && m > 0.0) {
                    break;
                }
                if (t * df).abs() <= 1e-13 * f.max(1.0) && (t * dm).abs() <= 1e-13 * m.max(1.0) {
                    converged = true;
                    break;
                }
            }
            if !converged || f > 10.0 * cap_k || m > 10.0 * cap_k {
                continue;
            }
            let r = residual(f, m);
            if r[0].abs() > 1e-10 || r[1].abs() > 1e-10 {
                continue;
            }
            let x = State::new(f, m, 0.0);
            if found
                .iter()
                .all(|y| (y.f - x.f).abs() + (y.m - x.m).abs() > 1e-6 * cap_k)
            {
                found.push(x);
            }
        }
    }
    found.sort_by(|x, y| y.total().partial_cmp(&x.total()).unwrap());
    for (k, x) in found.into_iter().enumerate() {
        report.push(spec, params, x, None, format!("interior newton root {}", k + 1))?;
    }
    Ok(report)
}

/// All equilibria of `spec` with its constant controls.
pub fn equilibria(params: &LifeParams, spec: &ModelSpec) -> Result<EquilibriumReport> {
    spec.validate(params)?;
    match spec.model_id {
        ModelId::Tyc0 if spec.mu == 0.0 => tyc_mu0_equilibria(params),
        ModelId::Tyc0 => tyc_equilibria(params, spec.mu),
        ModelId::Fhms1 | ModelId::Fhmh4 => linear_equilibria(params, spec),
        _ => numeric_equilibria(params, spec),
    }
}
