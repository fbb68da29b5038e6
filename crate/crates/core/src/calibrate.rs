//! Least-squares fit of `(β, δ, K)` to population counts.
//!
//! The model is Model 0 with no supermales (`μ = 0`, `s = 0`), integrated
//! with RK4 between observation times. The search is a Nelder-Mead simplex
//! over the logarithms of the parameters, projected onto a box.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{rk4_step, DEFAULT_DT};
use crate::models::{Controls, LifeParams, ModelId, ModelSpec, State};

/// Monthly counts, either totals or split by sex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSeries {
    pub times: Vec<f64>,
    /// Total counts `f + m`.
    pub counts: Vec<f64>,
    /// `(f, m)` per time, when the data are split by sex.
    pub split: Option<Vec<(f64, f64)>>,
    pub init: State,
}

impl ObservationSeries {
    /// Totals only; the initial state splits the first count evenly.
    pub fn from_totals(times: Vec<f64>, counts: Vec<f64>) -> Result<Self> {
        let first = *counts.first().ok_or_else(|| Error::Precondition("no observations".into()))?;
        let s = ObservationSeries {
            times,
            counts,
            split: None,
            init: State::new(0.5 * first, 0.5 * first, 0.0),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn from_split(times: Vec<f64>, split: Vec<(f64, f64)>) -> Result<Self> {
        let &(f0, m0) = split.first().ok_or_else(|| Error::Precondition("no observations".into()))?;
        let s = ObservationSeries {
            counts: split.iter().map(|(f, m)| f + m).collect(),
            times,
            split: Some(split),
            init: State::new(f0, m0, 0.0),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.counts.len() {
            return Err(Error::Precondition("times and counts differ in length".into()));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Precondition("observation times must be strictly increasing".into()));
        }
        let negative = self.counts.iter().any(|c| !(*c >= 0.0))
            || self
                .split
                .as_ref()
                .is_some_and(|s| s.iter().any(|(f, m)| !(*f >= 0.0 && *m >= 0.0)));
        if negative {
            return Err(Error::Precondition("counts must be nonnegative".into()));
        }
        self.init.check_nonnegative()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn shape(&self) -> DataShape {
        if self.split.is_some() {
            DataShape::Split
        } else {
            DataShape::Total
        }
    }

    /// Parses `t,count` or `t,f,m` CSV. Blank lines and lines starting with
    /// `#` are skipped.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut header: Option<(usize, Vec<String>)> = None;
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let cells: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            match &header {
                None => {
                    let names: Vec<String> = cells.iter().map(|c| c.to_ascii_lowercase()).collect();
                    if names != ["t", "count"] && names != ["t", "f", "m"] {
                        return Err(Error::Parse {
                            line,
                            message: format!("expected header `t,count` or `t,f,m`, found `{trimmed}`"),
                        });
                    }
                    header = Some((line, names));
                }
                Some((_, names)) => {
                    if cells.len() != names.len() {
                        return Err(Error::Parse {
                            line,
                            message: format!("expected {} fields, found {}", names.len(), cells.len()),
                        });
                    }
                    let mut vals = Vec::with_capacity(cells.len());
                    for c in cells {
                        let v: f64 = c.parse().map_err(|_| Error::Parse {
                            line,
                            message: format!("`{c}` is not a number"),
                        })?;
                        if !v.is_finite() {
                            return Err(Error::Parse { line, message: format!("`{c}` is not finite") });
                        }
                        vals.push(v);
                    }
                    rows.push((line, vals));
                }
            }
        }
        let Some((header_line, names)) = header else {
            return Err(Error::Parse { line: 1, message: "empty input".into() });
        };
        if rows.is_empty() {
            return Err(Error::Parse { line: header_line, message: "no data rows".into() });
        }
        for w in rows.windows(2) {
            if !(w[1].1[0] > w[0].1[0]) {
                return Err(Error::Parse {
                    line: w[1].0,
                    message: "times must be strictly increasing".into(),
                });
            }
        }
        for (line, r) in &rows {
            if r[1..].iter().any(|v| *v < 0.0) {
                return Err(Error::Parse { line: *line, message: "counts must be nonnegative".into() });
            }
        }
        let times = rows.iter().map(|r| r.1[0]).collect();
        if names.len() == 2 {
            Self::from_totals(times, rows.iter().map(|r| r.1[1]).collect())
        } else {
            Self::from_split(times, rows.iter().map(|r| (r.1[1], r.1[2])).collect())
        }
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        match &self.split {
            None => {
                writeln!(out, "t,count")?;
                for (t, c) in self.times.iter().zip(&self.counts) {
                    writeln!(out, "{t},{c}")?;
                }
            }
            Some(split) => {
                writeln!(out, "t,f,m")?;
                for (t, (f, m)) in self.times.iter().zip(split) {
                    writeln!(out, "{t},{f},{m}")?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataShape {
    Total,
    Split,
}

/// Box constraints on `(β, δ, K)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            lower: [1e-5, 1e-4, 1.0],
            upper: [1.0, 0.999, 1e5],
        }
    }
}

impl Bounds {
    pub fn validate(&self) -> Result<()> {
        for k in 0..3 {
            if !(self.lower[k] > 0.0 && self.upper[k] > self.lower[k]) {
                return Err(Error::InvalidParams(format!(
                    "bounds need 0 < lower < upper, got [{}, {}]",
                    self.lower[k], self.upper[k]
                )));
            }
        }
        if self.upper[1] >= 1.0 {
            return Err(Error::InvalidParams("delta upper bound must be below 1".into()));
        }
        Ok(())
    }

    pub fn contains(&self, p: &LifeParams) -> bool {
        let v = [p.beta, p.delta, p.cap_k];
        (0..3).all(|k| v[k] >= self.lower[k] && v[k] <= self.upper[k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Integration step between observations.
    pub dt: f64,
    pub max_evals: usize,
    /// Simplex diameter tolerance in log-parameter space.
    pub xtol: f64,
    /// Relative spread tolerance on the objective over the simplex.
    pub ftol: f64,
    /// Simplex restarts from the best point after convergence.
    pub restarts: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            dt: DEFAULT_DT,
            max_evals: 20_000,
            xtol: 1e-10,
            ftol: 1e-14,
            restarts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: LifeParams,
    pub sse: f64,
    pub initial_sse: f64,
    pub n_evals: usize,
    pub converged: bool,
    pub data_shape: DataShape,
    pub warnings: Vec<String>,
}

/// Model totals (or sexes) at the observation times.
pub fn simulate_observations(params: &LifeParams, data: &ObservationSeries, dt: f64) -> Result<Vec<State>> {
    let spec = ModelSpec::new(ModelId::Tyc0);
    let u = Controls::default();
    let limit = 10.0 * params.cap_k;
    let mut x = data.init;
    let mut out = Vec::with_capacity(data.len());
    out.push(x);
    for w in data.times.windows(2) {
        let span = w[1] - w[0];
        let n = (span / dt).ceil().max(1.0) as usize;
        let h = span / n as f64;
        for _ in 0..n {
            x = rk4_step(&spec, params, &x, &u, &u, h);
            x = State::new(x.f.max(0.0), x.m.max(0.0), 0.0);
            if !x.is_finite() || x.f > limit || x.m > limit {
                return Err(Error::BlowUp { t: w[1], component: "f+m", value: x.total(), limit });
            }
        }
        out.push(x);
    }
    Ok(out)
}

/// Sum of squared residuals; split data contribute both sexes.
pub fn sse(params: &LifeParams, data: &ObservationSeries, dt: f64) -> Result<f64> {
    let sim = simulate_observations(params, data, dt)?;
    Ok(match &data.split {
        None => sim.iter().zip(&data.counts).map(|(x, c)| (x.total() - c).powi(2)).sum(),
        Some(split) => sim
            .iter()
            .zip(split)
            .map(|(x, (f, m))| (x.f - f).powi(2) + (x.m - m).powi(2))
            .sum(),
    })
}

fn to_params(z: &[f64; 3], bounds: &Bounds) -> LifeParams {
    let v: Vec<f64> = (0..3)
        .map(|k| z[k].exp().clamp(bounds.lower[k], bounds.upper[k]))
        .collect();
    LifeParams { beta: v[0], delta: v[1], cap_k: v[2] }
}

fn project(z: &mut [f64; 3], bounds: &Bounds) {
    for k in 0..3 {
        z[k] = z[k].clamp(bounds.lower[k].ln(), bounds.upper[k].ln());
    }
}

struct Simplex {
    points: Vec<[f64; 3]>,
    values: Vec<f64>,
}

impl Simplex {
    fn order(&mut self) {
        let mut idx: Vec<usize> = (0..self.points.len()).collect();
        idx.sort_by(|&a, &b| self.values[a].total_cmp(&self.values[b]));
        self.points = idx.iter().map(|&i| self.points[i]).collect();
        self.values = idx.iter().map(|&i| self.values[i]).collect();
    }

    fn diameter(&self) -> f64 {
        let best = self.points[0];
        self.points[1..]
            .iter()
            .map(|p| (0..3).map(|k| (p[k] - best[k]).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max)
    }
}

/// Bounded Nelder-Mead over `ln β, ln δ, ln K`.
fn nelder_mead<F: FnMut(&[f64; 3]) -> f64>(
    mut f: F,
    start: [f64; 3],
    bounds: &Bounds,
    opts: &FitOptions,
    evals: &mut usize,
) -> ([f64; 3], f64, bool) {
    let mut eval = |z: &[f64; 3], evals: &mut usize| {
        *evals += 1;
        f(z)
    };
    let mut points = vec![start];
    for k in 0..3 {
        let mut p = start;
        p[k] += 0.1;
        project(&mut p, bounds);
        if p[k] == start[k] {
            p[k] -= 0.1;
        }
        points.push(p);
    }
    let values = points.iter().map(|p| eval(p, evals)).collect();
    let mut s = Simplex { points, values };
    let budget_start = *evals;
    loop {
        s.order();
        let spread = (s.values[3] - s.values[0]).abs();
        if s.diameter() < opts.xtol || spread <= opts.ftol * s.values[0].abs().max(1e-300) {
            return (s.points[0], s.values[0], true);
        }
        if *evals - budget_start >= opts.max_evals {
            return (s.points[0], s.values[0], false);
        }
        let mut centroid = [0.0; 3];
        for p in &s.points[..3] {
            for k in 0..3 {
                centroid[k] += p[k] / 3.0;
            }
        }
        let along = |t: f64| {
            let mut z = [0.0; 3];
            for k in 0..3 {
                z[k] = centroid[k] + t * (s.points[3][k] - centroid[k]);
            }
            project(&mut z, bounds);
            z
        };
        let xr = along(-1.0);
        let fr = eval(&xr, evals);
        if fr < s.values[0] {
            let xe = along(-2.0);
            let fe = eval(&xe, evals);
            if fe < fr {
                s.points[3] = xe;
                s.values[3] = fe;
            } else {
                s.points[3] = xr;
                s.values[3] = fr;
            }
            continue;
        }
        if fr < s.values[2] {
            s.points[3] = xr;
            s.values[3] = fr;
            continue;
        }
        let (xc, fc) = if fr < s.values[3] {
            let z = along(-0.5);
            let v = eval(&z, evals);
            (z, v)
        } else {
            let z = along(0.5);
            let v = eval(&z, evals);
            (z, v)
        };
        if fc < s.values[3].min(fr) {
            s.points[3] = xc;
            s.values[3] = fc;
            continue;
        }
        let best = s.points[0];
        for i in 1..4 {
            for k in 0..3 {
                s.points[i][k] = best[k] + 0.5 * (s.points[i][k] - best[k]);
            }
            s.values[i] = eval(&s.points[i].clone(), evals);
        }
    }
}

/// Minimizes the squared residuals between the model and `data` over
/// `(β, δ, K)` within `bounds`, starting from `guess`.
pub fn fit_life_params(data: &ObservationSeries, guess: &LifeParams, bounds: &Bounds, opts: &FitOptions) -> Result<FitResult> {
    data.validate()?;
    bounds.validate()?;
    if data.len() < 4 {
        return Err(Error::Precondition(format!("need >= 4 observations, got {}", data.len())));
    }
    if !bounds.contains(guess) {
        return Err(Error::Precondition(format!("initial guess {guess:?} lies outside the bounds")));
    }
    let objective = |z: &[f64; 3]| -> f64 {
        let p = to_params(z, bounds);
        sse(&p, data, opts.dt).unwrap_or(f64::INFINITY)
    };
    let start = [guess.beta.ln(), guess.delta.ln(), guess.cap_k.ln()];
    let initial_sse = objective(&start);
    if !initial_sse.is_finite() {
        return Err(Error::FitDiverged(format!("model blows up at the initial guess {guess:?}")));
    }
    let mut evals = 1;
    let mut best = start;
    let mut best_val = initial_sse;
    let mut converged = false;
    for _ in 0..=opts.restarts {
        let (z, v, ok) = nelder_mead(objective, best, bounds, opts, &mut evals);
        let improved = v < best_val;
        if v <= best_val {
            best = z;
            best_val = v;
        }
        converged = ok;
        if !ok || !improved {
            break;
        }
    }
    if !best_val.is_finite() {
        return Err(Error::FitDiverged("objective is not finite anywhere on the simplex".into()));
    }
    let params = to_params(&best, bounds);
    let mut warnings = Vec::new();
    let mean = data.counts.iter().sum::<f64>() / data.len() as f64;
    let var = data.counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / data.len() as f64;
    if mean > 0.0 && var.sqrt() < 1e-3 * mean {
        warnings.push(
            "counts are essentially constant: equilibrium data carry no transient information, \
             so beta and delta are only identified through the equilibrium relation"
                .into(),
        );
    }
    for k in 0..3 {
        let v = [params.beta, params.delta, params.cap_k][k];
        if v <= bounds.lower[k] * (1.0 + 1e-9) || v >= bounds.upper[k] * (1.0 - 1e-9) {
            warnings.push(format!("{} sits on its bound ({v})", ["beta", "delta", "K"][k]));
        }
    }
    Ok(FitResult {
        params,
        sse: best_val,
        initial_sse,
        n_evals: evals,
        converged,
        data_shape: data.shape(),
        warnings,
    })
}

/// Totals sampled from the model at `times`, multiplied by
/// `1 + noise · N(0, 1)` with a seeded generator (except at the first time)
/// and rounded to `digits` decimals.
pub fn synthetic_series(
    params: &LifeParams,
    init: &State,
    times: &[f64],
    noise: f64,
    seed: u64,
    digits: i32,
) -> Result<ObservationSeries> {
    let mut data = ObservationSeries {
        times: times.to_vec(),
        counts: vec![0.0; times.len()],
        split: None,
        init: *init,
    };
    let sim = simulate_observations(params, &data, DEFAULT_DT)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let scale = 10f64.powi(digits);
    // the first count is the known stocking number and carries no noise
    data.counts = sim
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let z: f64 = if i == 0 { 0.0 } else { normal.sample(&mut rng) };
            let c = (x.total() * (1.0 + noise * z)).max(0.0);
            (c * scale).round() / scale
        })
        .collect();
    data.validate()?;
    Ok(data)
}

/// Starting point used when no guess is supplied.
pub const DEFAULT_GUESS: LifeParams = LifeParams {
    beta: 0.005,
    delta: 0.05,
    cap_k: 300.0,
};

/// Seed of the bundled noisy dataset.
pub const SYNTHETIC_SEED: u64 = 1;
/// Relative noise level of the bundled noisy dataset.
pub const SYNTHETIC_NOISE: f64 = 0.05;

/// The bundled datasets: totals at months 0..=11 from `(15, 15, 0)` with
/// the mesocosm parameters, either exact or with seeded 5% noise. These are
/// synthetic; no field counts are shipped.
pub fn mesocosm_synthetic(noisy: bool) -> Result<ObservationSeries> {
    let times: Vec<f64> = (0..=11).map(f64::from).collect();
    let noise = if noisy { SYNTHETIC_NOISE } else { 0.0 };
    synthetic_series(&LifeParams::MESOCOSM, &State::new(15.0, 15.0, 0.0), &times, noise, SYNTHETIC_SEED, 6)
}

pub const BUNDLED_CLEAN: &str = include_str!("../data/synthetic_clean.csv");
pub const BUNDLED_NOISY: &str = include_str!("../data/synthetic_noisy.csv");
