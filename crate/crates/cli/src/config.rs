//! Scenario configuration: a TOML (or JSON) file with one section per
//! component. Every key is optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use tyc_core::calibrate::{Bounds, FitOptions, DEFAULT_GUESS};
use tyc_core::control::{Costate, MuCap, SweepConfig};
use tyc_core::equilibria::tyc_mu0_equilibria;
use tyc_core::integrate::{TimeGrid, DEFAULT_DT};
use tyc_core::metrics::{EradicationRule, DEFAULT_EPSILON};
use tyc_core::{LifeParams, ModelId, ModelSpec, State};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamsSection {
    pub beta: f64,
    pub delta: f64,
    #[serde(rename = "K")]
    pub k: f64,
}

impl Default for ParamsSection {
    fn default() -> Self {
        let p = LifeParams::MESOCOSM;
        ParamsSection {
            beta: p.beta,
            delta: p.delta,
            k: p.cap_k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub id: ModelId,
    pub mu: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            id: ModelId::Tyc0,
            mu: 0.0,
            eta1: 0.0,
            eta2: 0.0,
            d1: 1.0,
            d2: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub t0: f64,
    pub t_end: f64,
    pub dt: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            t0: 0.0,
            t_end: 200.0,
            dt: DEFAULT_DT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    pub f: f64,
    pub m: f64,
    #[serde(default)]
    pub s: f64,
}

/// `mu_max` is a number or one of `"capacity"` (`= K`) and `"unbounded"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MuMax {
    Value(f64),
    Keyword(MuKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MuKeyword {
    Capacity,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub omega: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub mu_max: MuMax,
    pub costate: Costate,
}

impl Default for SweepSection {
    fn default() -> Self {
        let d = SweepConfig::default();
        SweepSection {
            omega: d.omega,
            tol: d.tol,
            max_iters: d.max_iters,
            mu_max: MuMax::Keyword(MuKeyword::Capacity),
            costate: d.costate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub epsilon: f64,
    pub eradication: EradicationRule,
    /// File stem for the outputs; defaults to the command name.
    pub stem: Option<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            epsilon: DEFAULT_EPSILON,
            eradication: EradicationRule::FirstCrossing,
            stem: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    /// Observation CSV, relative to the config file.
    pub data: Option<PathBuf>,
    /// `[beta, delta, K]`
    pub guess: [f64; 3],
    pub lower: [f64; 3],
    pub upper: [f64; 3],
    pub dt: f64,
    pub max_evals: usize,
    pub restarts: usize,
}

impl Default for FitSection {
    fn default() -> Self {
        let b = Bounds::default();
        let o = FitOptions::default();
        FitSection {
            data: None,
            guess: [DEFAULT_GUESS.beta, DEFAULT_GUESS.delta, DEFAULT_GUESS.cap_k],
            lower: b.lower,
            upper: b.upper,
            dt: o.dt,
            max_evals: o.max_evals,
            restarts: o.restarts,
        }
    }
}

/// The file as written.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub params: ParamsSection,
    pub model: ModelSection,
    pub grid: GridSection,
    /// Defaults to the stable interior equilibrium without control.
    pub init: Option<InitSection>,
    pub sweep: SweepSection,
    pub output: OutputSection,
    pub fit: FitSection,
}

impl ConfigFile {
    pub fn parse(text: &str, json: bool) -> Result<Self, CliError> {
        if json {
            serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
        } else {
            toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let mut cfg = Self::parse(&text, json)?;
        if let (Some(data), Some(dir)) = (&cfg.fit.data, path.parent()) {
            if data.is_relative() {
                cfg.fit.data = Some(dir.join(data));
            }
        }
        Ok(cfg)
    }
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub params: LifeParams,
    pub spec: ModelSpec,
    pub grid: TimeGrid,
    /// Explicit, or the stable interior equilibrium when one exists.
    pub init: Option<State>,
    pub init_given: bool,
    pub sweep: SweepConfig,
    pub epsilon: f64,
    pub eradication: EradicationRule,
    pub stem: Option<String>,
    pub fit_data: Option<PathBuf>,
    pub fit_guess: LifeParams,
    pub fit_bounds: Bounds,
    pub fit_options: FitOptions,
}

/// Command-line overrides applied before validation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub dt: Option<f64>,
    pub epsilon: Option<f64>,
}

fn invalid(e: tyc_core::Error) -> CliError {
    CliError::Validation(e.to_string())
}

impl ScenarioConfig {
    pub fn from_file(mut file: ConfigFile, ov: Overrides) -> Result<Self, CliError> {
        if let Some(dt) = ov.dt {
            file.grid.dt = dt;
            file.fit.dt = dt;
        }
        if let Some(eps) = ov.epsilon {
            file.output.epsilon = eps;
        }
        let params = LifeParams::new(file.params.beta, file.params.delta, file.params.k).map_err(invalid)?;
        let m = &file.model;
        let spec = ModelSpec {
            model_id: m.id,
            mu: m.mu,
            eta1: m.eta1,
            eta2: m.eta2,
            d1: m.d1,
            d2: m.d2,
        };
        spec.validate(&params).map_err(invalid)?;
        let g = &file.grid;
        let grid = TimeGrid::with_step(g.t0, g.t_end, g.dt).map_err(invalid)?;
        if ((grid.dt() - g.dt) / g.dt).abs() > 1e-9 {
            return Err(CliError::Validation(format!(
                "grid: dt = {} does not divide [{}, {}] evenly",
                g.dt, g.t0, g.t_end
            )));
        }
        let (init, init_given) = match file.init {
            Some(s) => {
                let x = State::new(s.f, s.m, s.s);
                if !x.is_finite() {
                    return Err(CliError::Validation("init: densities must be finite".into()));
                }
                x.check_nonnegative().map_err(invalid)?;
                (Some(x), true)
            }
            None => (default_init(&params)?, false),
        };
        let mu_cap = match file.sweep.mu_max {
            MuMax::Value(v) if v > 0.0 && v.is_finite() => MuCap::Fixed(v),
            MuMax::Value(v) => return Err(CliError::Validation(format!("sweep: mu_max must be positive, got {v}"))),
            MuMax::Keyword(MuKeyword::Capacity) => MuCap::Capacity,
            MuMax::Keyword(MuKeyword::Unbounded) => MuCap::Unbounded,
        };
        let s = &file.sweep;
        let sweep = SweepConfig {
            omega: s.omega,
            tol: s.tol,
            max_iters: s.max_iters,
            mu_cap,
            costate: s.costate,
        };
        sweep.validate().map_err(invalid)?;
        let epsilon = file.output.epsilon;
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(CliError::Validation(format!("output: epsilon must be positive, got {epsilon}")));
        }
        if let Some(stem) = &file.output.stem {
            if stem.is_empty() || stem.contains(['/', '\\']) {
                return Err(CliError::Validation(format!("output: invalid stem '{stem}'")));
            }
        }
        let f = &file.fit;
        let fit_guess = LifeParams::new(f.guess[0], f.guess[1], f.guess[2]).map_err(invalid)?;
        let fit_bounds = Bounds {
            lower: f.lower,
            upper: f.upper,
        };
        fit_bounds.validate().map_err(invalid)?;
        if !(f.dt > 0.0) {
            return Err(CliError::Validation(format!("fit: dt must be positive, got {}", f.dt)));
        }
        let fit_options = FitOptions {
            dt: f.dt,
            max_evals: f.max_evals,
            restarts: f.restarts,
            ..FitOptions::default()
        };
        Ok(ScenarioConfig {
            params,
            spec,
            grid,
            init,
            init_given,
            sweep,
            epsilon,
            eradication: file.output.eradication,
            stem: file.output.stem.clone(),
            fit_data: f.data.clone(),
            fit_guess,
            fit_bounds,
            fit_options,
        })
    }

    pub fn load(path: Option<&Path>, ov: Overrides) -> Result<Self, CliError> {
        let file = match path {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        Self::from_file(file, ov)
    }

    /// Initial state for commands that integrate.
    pub fn require_init(&self) -> Result<State, CliError> {
        self.init.ok_or_else(|| {
            CliError::Validation(format!(
                "no stable interior equilibrium to start from (beta*K = {:.6} <= 16*delta = {:.6}); set [init] explicitly",
                self.params.beta * self.params.cap_k,
                16.0 * self.params.delta
            ))
        })
    }

    pub fn stem_or<'a>(&'a self, default: &'a str) -> &'a str {
        self.stem.as_deref().unwrap_or(default)
    }
}

/// Plus-branch equilibrium of the uncontrolled system.
fn default_init(params: &LifeParams) -> Result<Option<State>, CliError> {
    let report = tyc_mu0_equilibria(params).map_err(invalid)?;
    Ok(report.entries.iter().find(|e| e.provenance == "plus branch").map(|e| e.point))
}
