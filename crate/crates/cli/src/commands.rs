use std::path::{Path, PathBuf};

use serde::Serialize;

use tyc_core::calibrate::{fit_life_params, FitResult, ObservationSeries, BUNDLED_CLEAN, BUNDLED_NOISY};
use tyc_core::control::{
    forward_backward_sweep, optimality_residual, ControlSchedule, OptimalityReport, SweepResult, SweepSummary,
};
use tyc_core::equilibria::{equilibria, Classification, EquilibriumReport};
use tyc_core::integrate::{integrate_forward, Trajectory};
use tyc_core::metrics::{compare_strategies, ComparisonTable, StrategyReport};
use tyc_core::stability::{boundary_threshold_verdict, global_extinction_condition, GlobalCondition, StabilityVerdict};
use tyc_core::{Error, LifeParams, ModelId, ModelSpec};

use crate::config::ScenarioConfig;
use crate::error::CliError;
use crate::svg::{self, Panel};

/// Where outputs go and whether SVGs are drawn.
pub struct Output {
    pub dir: PathBuf,
    pub plot: bool,
}

impl Output {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(&self.dir).map_err(|e| CliError::io(&self.dir, e))?;
        let path = self.path(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn write_with(
        &self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    ) -> Result<PathBuf, CliError> {
        let mut buf = Vec::new();
        f(&mut buf).map_err(|e| CliError::Io(e.to_string()))?;
        self.write(name, &buf)
    }
}

fn announce(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

/// Which observations `fit` reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Bundled {
    Clean,
    Noisy,
}

#[derive(Serialize)]
struct FitReport<'a> {
    data: String,
    guess: LifeParams,
    result: &'a FitResult,
}

pub fn fit(cfg: &ScenarioConfig, data: Option<&Path>, bundled: Option<Bundled>, out: &Output) -> Result<(), CliError> {
    let (label, text) = match (data.or(cfg.fit_data.as_deref()), bundled) {
        (Some(_), Some(_)) => {
            return Err(CliError::Validation("give either a data file or --bundled, not both".into()));
        }
        (Some(path), None) => (
            path.display().to_string(),
            std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?,
        ),
        (None, Some(Bundled::Clean)) => ("bundled:clean".to_string(), BUNDLED_CLEAN.to_string()),
        (None, Some(Bundled::Noisy)) => ("bundled:noisy".to_string(), BUNDLED_NOISY.to_string()),
        (None, None) => {
            return Err(CliError::Validation(
                "no observations: pass a CSV path, set fit.data in the config, or use --bundled".into(),
            ))
        }
    };
    let series = ObservationSeries::parse_csv(&text).map_err(|e| match e {
        Error::Parse { .. } => CliError::Validation(format!("{label}: {e}")),
        other => other.into(),
    })?;
    let result = fit_life_params(&series, &cfg.fit_guess, &cfg.fit_bounds, &cfg.fit_options)?;
    let p = result.params;
    println!("beta  = {:.6e}", p.beta);
    println!("delta = {:.6e}", p.delta);
    println!("K     = {:.6e}", p.cap_k);
    println!(
        "sse = {:.6e} (initial {:.6e}), {} evaluations, converged: {}",
        result.sse, result.initial_sse, result.n_evals, result.converged
    );
    for w in &result.warnings {
        println!("warning: {w}");
    }
    let path = out.write_json(
        &format!("{}.json", cfg.stem_or("fit")),
        &FitReport {
            data: label,
            guess: cfg.fit_guess,
            result: &result,
        },
    )?;
    announce(&[path]);
    Ok(())
}

#[derive(Serialize)]
struct Analysis {
    spec: ModelSpec,
    params: LifeParams,
    equilibria: EquilibriumReport,
    /// Closed-form verdict for the supermale-only equilibrium (Model 0, μ > 0).
    boundary_threshold: Option<StabilityVerdict>,
    global_condition: Option<GlobalCondition>,
}

fn class_name(c: Classification) -> &'static str {
    match c {
        Classification::Stable => "stable",
        Classification::Unstable => "unstable",
        Classification::NonHyperbolic => "non-hyperbolic",
    }
}

pub fn analyze(cfg: &ScenarioConfig, out: &Output) -> Result<(), CliError> {
    let (spec, params) = (cfg.spec, cfg.params);
    let report = equilibria(&params, &spec)?;
    let boundary_threshold = (spec.model_id == ModelId::Tyc0 && spec.mu > 0.0).then(|| boundary_threshold_verdict(&params));
    let global_condition = if spec.model_id == ModelId::Tyc0 {
        None
    } else {
        Some(global_extinction_condition(&spec, &params)?)
    };

    println!(
        "model {} (beta = {}, delta = {}, K = {})",
        spec.model_id, params.beta, params.delta, params.cap_k
    );
    println!("{} equilibria:", report.len());
    for e in &report.entries {
        let p = e.point;
        let published = match e.published {
            Some(c) if c != e.classification => format!(", closed form says {}", class_name(c)),
            _ => String::new(),
        };
        println!(
            "  (f, m, s) = ({:.6}, {:.6}, {:.6})  {}  [{}{published}]",
            p.f,
            p.m,
            p.s,
            class_name(e.classification),
            e.provenance
        );
    }
    for w in &report.warnings {
        println!("warning: {w}");
    }
    if let Some(v) = &boundary_threshold {
        println!("boundary threshold (delta vs 1/9): {:?}", v.verdict);
    }
    if let Some(g) = &global_condition {
        let mut line = format!(
            "global extinction condition {}: {:.6} < {:.6}",
            g.statement, g.lhs, g.rhs
        );
        if let Some((l, r)) = g.side_condition {
            line.push_str(&format!(" and {l:.6} < {r:.6}"));
        }
        println!("{line} -> {}", if g.satisfied { "satisfied" } else { "not satisfied" });
    }
    let path = out.write_json(
        &format!("{}.json", cfg.stem_or("analyze")),
        &Analysis {
            spec,
            params,
            equilibria: report,
            boundary_threshold,
            global_condition,
        },
    )?;
    announce(&[path]);
    Ok(())
}

fn density_panel(traj: &Trajectory, title: &str) -> Panel {
    let col = |k: usize| traj.states.iter().map(|x| x.to_array()[k]).collect::<Vec<_>>();
    Panel::new(title, "individuals")
        .with("f", col(0))
        .with("m", col(1))
        .with("s", col(2))
}

fn control_panel(model: ModelId, schedule: &ControlSchedule) -> Panel {
    let mut panel = Panel::new("controls", "rate");
    for (k, name) in schedule.channel_names(model).into_iter().enumerate() {
        panel = panel.with(name, schedule.channel(model, k));
    }
    panel
}

fn numerical(e: Error, dt: f64) -> CliError {
    match e {
        Error::BlowUp { t, .. } => CliError::Numerical(format!("{e}; last valid time t = {}", t - dt)),
        other => other.into(),
    }
}

pub fn simulate(cfg: &ScenarioConfig, out: &Output) -> Result<(), CliError> {
    let init = cfg.require_init()?;
    let traj = integrate_forward(&cfg.spec, &cfg.params, &init, None, &cfg.grid).map_err(|e| numerical(e, cfg.grid.dt()))?;
    let schedule = ControlSchedule::constant(&cfg.spec, cfg.grid);
    let stem = cfg.stem_or("simulate");
    let mut written = vec![out.write_with(&format!("{stem}.csv"), |w| traj.write_csv(&cfg.spec, Some(&schedule), w))?];
    let x = traj.final_state();
    println!(
        "{}: t = {} -> (f, m, s) = ({:.6}, {:.6}, {:.6}), f + m = {:.6}",
        cfg.spec.model_id,
        cfg.grid.t_end,
        x.f,
        x.m,
        x.s,
        x.f + x.m
    );
    if out.plot {
        let svg = svg::render(&cfg.grid.times(), "t (months)", &[density_panel(&traj, &format!("{} densities", cfg.spec.model_id))]);
        written.push(out.write(&format!("{stem}.svg"), svg.as_bytes())?);
    }
    announce(&written);
    Ok(())
}

#[derive(Serialize)]
struct OptimizeReport {
    summary: SweepSummary,
    strategy: StrategyReport,
    optimality: OptimalityReport,
}

pub fn optimize(cfg: &ScenarioConfig, seed: u64, perturbations: usize, out: &Output) -> Result<(), CliError> {
    let spec = cfg.spec;
    let init = cfg.require_init()?;
    let r = forward_backward_sweep(&spec, &cfg.params, &init, &cfg.grid, &cfg.sweep).map_err(|e| numerical(e, cfg.grid.dt()))?;
    let optimality = optimality_residual(&spec, &cfg.params, &init, &r, &cfg.sweep, perturbations, 1e-3, seed)?;
    let strategy = StrategyReport::from_sweep(&r, cfg.epsilon, cfg.eradication);
    let stem = cfg.stem_or("optimize");
    let mut written = vec![
        out.write_json(
            &format!("{stem}.json"),
            &OptimizeReport {
                summary: SweepSummary::new(&spec, &cfg.params, &cfg.sweep, &init, &r),
                strategy: strategy.clone(),
                optimality: optimality.clone(),
            },
        )?,
        out.write_with(&format!("{stem}.csv"), |w| r.write_csv(w))?,
    ];
    let time = |t: Option<f64>| t.map_or_else(|| "/".to_string(), |t| format!("{t:.2}"));
    println!(
        "{}: J = {:.6}, cost excluding controls = {:.6}, {} iterations",
        spec.model_id, r.objective, r.cost_excluding_controls, r.iterations
    );
    println!(
        "eradication (eps = {}): female {}, male {}; (f, m)(T) = ({:.6}, {:.6})",
        cfg.epsilon,
        time(strategy.t_erad_f),
        time(strategy.t_erad_m),
        strategy.f_final,
        strategy.m_final
    );
    println!(
        "max |dH/du| on interior nodes = {:.3e}, smallest perturbation change in J = {:.3e}",
        optimality.max_gradient,
        optimality.min_delta()
    );
    if out.plot {
        let svg = svg::render(
            &cfg.grid.times(),
            "t (months)",
            &[
                control_panel(spec.model_id, &r.schedule),
                density_panel(&r.states, &format!("{} optimal densities", spec.model_id)),
            ],
        );
        written.push(out.write(&format!("{stem}.svg"), svg.as_bytes())?);
    }
    announce(&written);
    if r.converged {
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "sweep did not converge after {} iterations (residual {:.3e}): {}",
            r.iterations,
            r.residual,
            r.diagnostics.as_deref().unwrap_or("no diagnostics")
        )))
    }
}

/// Parses `tyc0,fhms1`, `1-6`, `0,3-4` or `all`.
pub fn parse_models(text: &str) -> Result<Vec<ModelId>, CliError> {
    let mut ids = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if part.eq_ignore_ascii_case("all") {
            ids.extend(ModelId::ALL);
        } else if let Some((a, b)) = part.split_once('-') {
            let parse = |s: &str| s.trim().parse::<ModelId>().map_err(CliError::from);
            let (a, b) = (parse(a)?.index(), parse(b)?.index());
            if a > b {
                return Err(CliError::Validation(format!("empty model range '{part}'")));
            }
            ids.extend((a..=b).filter_map(ModelId::from_index));
        } else {
            ids.push(part.parse::<ModelId>()?);
        }
    }
    if ids.is_empty() {
        return Err(CliError::Validation("no models selected".into()));
    }
    Ok(ids)
}

#[derive(Serialize)]
struct ScenarioFailure {
    model: ModelId,
    error: String,
}

#[derive(Serialize)]
struct CompareReport {
    table: ComparisonTable,
    failed: Vec<ScenarioFailure>,
    partial: bool,
}

/// Runs one sweep per model, in parallel, on the shared parameters, grid
/// and initial state.
pub fn compare(cfg: &ScenarioConfig, models: &[ModelId], out: &Output) -> Result<(), CliError> {
    let init = cfg.require_init()?;
    let outcomes: Vec<(ModelId, Result<SweepResult, Error>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = models
            .iter()
            .map(|&id| {
                let spec = ModelSpec::new(id).with_saturation(cfg.spec.d1, cfg.spec.d2);
                scope.spawn(move || (id, forward_backward_sweep(&spec, &cfg.params, &init, &cfg.grid, &cfg.sweep)))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    let mut sweeps = Vec::new();
    let mut failed = Vec::new();
    for (id, r) in outcomes {
        match r {
            Ok(r) => sweeps.push(r),
            Err(e) => failed.push(ScenarioFailure {
                model: id,
                error: e.to_string(),
            }),
        }
    }
    let table = compare_strategies(&sweeps, cfg.epsilon, cfg.eradication)?;
    print!("{}", table.to_text());
    for f in &failed {
        println!("{} failed: {}", f.model, f.error);
    }
    let stem = cfg.stem_or("compare");
    let mut written = vec![out.write_with(&format!("{stem}.csv"), |w| table.write_csv(w))?];
    if out.plot && !sweeps.is_empty() {
        let mut female = Panel::new("female density", "individuals");
        let mut male = Panel::new("male density", "individuals");
        for r in &sweeps {
            female = female.with(r.model.name(), r.states.states.iter().map(|x| x.f).collect());
            male = male.with(r.model.name(), r.states.states.iter().map(|x| x.m).collect());
        }
        let svg = svg::render(&cfg.grid.times(), "t (months)", &[female, male]);
        written.push(out.write(&format!("{stem}.svg"), svg.as_bytes())?);
    }
    let not_converged: Vec<String> = table.rows.iter().filter(|r| !r.converged).map(|r| r.model_id.to_string()).collect();
    let partial = !failed.is_empty();
    let n_failed = failed.len();
    written.insert(0, out.write_json(&format!("{stem}.json"), &CompareReport { table, failed, partial })?);
    announce(&written);
    if partial {
        Err(CliError::Numerical(format!("{n_failed} of {} scenarios failed", models.len())))
    } else if !not_converged.is_empty() {
        Err(CliError::Numerical(format!("sweeps did not converge for {}", not_converged.join(", "))))
    } else {
        Ok(())
    }
}
