//! Local stability via Jacobians, characteristic polynomials and the
//! Routh–Hurwitz inequalities, plus the Lyapunov extinction thresholds.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{state_jacobian, LifeParams, ModelId, ModelSpec, State};
use crate::poly::{cubic_roots, quadratic_roots};

/// Band around zero inside which a Routh–Hurwitz quantity or an eigenvalue
/// real part is treated as zero.
pub const MARGINAL_TOL: f64 = 1e-9;

/// Jacobian of a model at a point: 3×3 for Model 0, 2×2 (f, m) otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    pub dim: usize,
    pub entries: [[f64; 3]; 3],
}

impl Jacobian {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row][col]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.entries[i][i]).sum()
    }

    /// Rows as vectors, `dim × dim`.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|r| self.entries[r][..self.dim].to_vec()).collect()
    }
}

/// Jacobian of `spec` (with its constant controls) at `point`.
pub fn jacobian(spec: &ModelSpec, params: &LifeParams, point: &State) -> Result<Jacobian> {
    if !point.is_finite() {
        return Err(Error::Precondition(format!("non-finite point {point:?}")));
    }
    point.check_nonnegative()?;
    Ok(Jacobian {
        dim: spec.model_id.dimension(),
        entries: state_jacobian(spec, params, point, &spec.controls()),
    })
}

/// Monic characteristic polynomial `λⁿ + k_{n−1}λⁿ⁻¹ + … + k₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharPoly {
    /// `[k₀, k₁, …, k_{n−1}]`
    pub coeffs: Vec<f64>,
}

impl CharPoly {
    pub fn new(coeffs: Vec<f64>) -> Self {
        CharPoly { coeffs }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len()
    }

    /// `det(λI − J)` expanded.
    pub fn of_jacobian(j: &Jacobian) -> Self {
        let a = &j.entries;
        match j.dim {
            2 => {
                let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
                CharPoly::new(vec![det, -(a[0][0] + a[1][1])])
            }
            _ => {
                let minors = a[0][0] * a[1][1] - a[0][1] * a[1][0] + a[0][0] * a[2][2] - a[0][2] * a[2][0]
                    + a[1][1] * a[2][2]
                    - a[1][2] * a[2][1];
                let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
                    - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                    + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
                CharPoly::new(vec![-det, minors, -j.trace()])
            }
        }
    }

    pub fn roots(&self) -> Vec<Complex64> {
        match self.coeffs.as_slice() {
            [k0] => vec![Complex64::new(-k0, 0.0)],
            [k0, k1] => quadratic_roots(1.0, *k1, *k0).to_vec(),
            [k0, k1, k2] => cubic_roots(1.0, *k2, *k1, *k0).to_vec(),
            _ => panic!("characteristic polynomial of degree {} unsupported", self.degree()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Stable,
    Unstable,
    Marginal,
}

/// One tested Routh–Hurwitz inequality `name > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionCheck {
    pub name: String,
    pub value: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub verdict: Verdict,
    /// `(re, im)` of each eigenvalue.
    pub eigen_summary: Vec<(f64, f64)>,
    pub criterion_trace: Vec<CriterionCheck>,
}

impl StabilityVerdict {
    pub fn max_real_part(&self) -> f64 {
        self.eigen_summary.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Routh–Hurwitz test on a degree-2 or degree-3 polynomial.
///
/// Degree 2: `k₁ > 0, k₀ > 0`. Degree 3: `k₀, k₁, k₂ > 0` and `k₁k₂ − k₀ > 0`.
/// Any quantity below `−MARGINAL_TOL` makes the verdict unstable; otherwise
/// a quantity inside the band makes it marginal.
pub fn routh_hurwitz(poly: &CharPoly) -> StabilityVerdict {
    let checks: Vec<(String, f64)> = match poly.coeffs.as_slice() {
        [k0, k1] => vec![("k1".into(), *k1), ("k0".into(), *k0)],
        [k0, k1, k2] => vec![
            ("k2".into(), *k2),
            ("k1".into(), *k1),
            ("k0".into(), *k0),
            ("k1*k2-k0".into(), k1 * k2 - k0),
        ],
        _ => panic!("Routh-Hurwitz supports degree 2 or 3, got {}", poly.degree()),
    };
    let verdict = if checks.iter().all(|(_, v)| *v > MARGINAL_TOL) {
        Verdict::Stable
    } else if checks.iter().any(|(_, v)| *v < -MARGINAL_TOL) {
        Verdict::Unstable
    } else {
        Verdict::Marginal
    };
    StabilityVerdict {
        verdict,
        eigen_summary: poly.roots().iter().map(|z| (z.re, z.im)).collect(),
        criterion_trace: checks
            .into_iter()
            .map(|(name, value)| CriterionCheck {
                passed: value > MARGINAL_TOL,
                name,
                value,
            })
            .collect(),
    }
}

/// Linearized stability of `spec` at `point`.
pub fn classify_point(spec: &ModelSpec, params: &LifeParams, point: &State) -> Result<StabilityVerdict> {
    let j = jacobian(spec, params, point)?;
    Ok(routh_hurwitz(&CharPoly::of_jacobian(&j)))
}

/// The closed-form cubic `λ³ + 3δλ² + 3δ²λ + δ²` attached to the supermale-only
/// boundary state `(0, 0, μ/δ)` in the classical threshold analysis.
///
/// Its Routh–Hurwitz quantity `k₁k₂ − k₀ = 9δ³ − δ²` changes sign at
/// `δ = 1/9`. The linearization of Model 0 itself at that point is lower
/// triangular with the triple eigenvalue `−δ`; [`classify_point`] reports that.
pub fn boundary_char_poly(params: &LifeParams) -> CharPoly {
    let d = params.delta;
    CharPoly::new(vec![d * d, 3.0 * d * d, 3.0 * d])
}

/// Closed-form roots of [`boundary_char_poly`]:
/// `λ₁ = c − δ`, `λ₂,₃ = −c/2 − δ ± i(√3/2)c` with `c` the real cube root of
/// `δ³ − δ²`.
pub fn boundary_eigenvalues(params: &LifeParams) -> [Complex64; 3] {
    let d = params.delta;
    let c = (d * d * d - d * d).cbrt();
    let half_sqrt3 = 3f64.sqrt() / 2.0;
    [
        Complex64::new(c - d, 0.0),
        Complex64::new(-0.5 * c - d, half_sqrt3 * c),
        Complex64::new(-0.5 * c - d, -half_sqrt3 * c),
    ]
}

/// Verdict of the boundary threshold analysis for `(0, 0, μ/δ)`.
pub fn boundary_threshold_verdict(params: &LifeParams) -> StabilityVerdict {
    routh_hurwitz(&boundary_char_poly(params))
}

/// Outcome of a Lyapunov extinction condition `lhs < rhs` (plus an optional
/// side condition of the same form).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalCondition {
    pub satisfied: bool,
    /// `βK`
    pub lhs: f64,
    /// Model-specific threshold.
    pub rhs: f64,
    pub side_condition: Option<(f64, f64)>,
    pub statement: String,
}

/// Sufficient condition for global extinction (`V = f + m` decreasing).
pub fn global_extinction_condition(spec: &ModelSpec, params: &LifeParams) -> Result<GlobalCondition> {
    let LifeParams { beta, delta, cap_k } = *params;
    let (e1, e2, d1, d2) = (spec.eta1, spec.eta2, spec.d1, spec.d2);
    let bk = beta * cap_k;
    let (rhs, side, statement) = match spec.model_id {
        ModelId::Tyc0 => return Err(Error::UnsupportedModel("tyc0")),
        ModelId::Fhms1 => (2.0 * delta + e1 - e2, None, "bK < 2d + eta1 - eta2"),
        ModelId::Fhmh4 => (2.0 * delta + e1 + e2, None, "bK < 2d + eta1 + eta2"),
        ModelId::Fhms2 => (
            2.0 * delta + e1 / (cap_k + d1) - e2 / d2,
            Some((e2 / d2, delta)),
            "bK < 2d + eta1/(K+d1) - eta2/d2 and d > eta2/d2",
        ),
        ModelId::Fhmh5 => (
            2.0 * delta + e1 / (cap_k + d1) + e2 / (cap_k + d2),
            None,
            "bK < 2d + eta1/(K+d1) + eta2/(K+d2)",
        ),
        ModelId::Fhms3 => (
            2.0 * delta - e2 * cap_k.sqrt(),
            Some((e2 * cap_k.sqrt(), delta)),
            "bK < 2d - eta2*sqrt(K) and d > eta2*sqrt(K)",
        ),
        ModelId::Fhmh6 => (2.0 * delta, None, "bK < 2d"),
    };
    let satisfied = bk < rhs && side.map_or(true, |(l, r)| l < r);
    Ok(GlobalCondition {
        satisfied,
        lhs: bk,
        rhs,
        side_condition: side,
        statement: statement.to_string(),
    })
}
