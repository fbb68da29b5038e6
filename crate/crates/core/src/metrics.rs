//! Strategy comparison: objective, population cost, terminal densities and
//! approximate eradication times.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::control::SweepResult;
use crate::error::{Error, Result};
use crate::integrate::{fmt17, Trajectory};
use crate::models::ModelId;

pub const DEFAULT_EPSILON: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Female,
    Male,
}

/// When a population counts as eradicated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EradicationRule {
    /// First grid time with density below `ε`.
    #[default]
    FirstCrossing,
    /// First grid time after which the density stays below `ε`.
    Permanent,
}

/// Earliest grid time at which `component` is below `epsilon`.
pub fn eradication_time(traj: &Trajectory, component: Component, epsilon: f64) -> Option<f64> {
    eradication_time_with(traj, component, epsilon, EradicationRule::FirstCrossing)
}

pub fn eradication_time_with(traj: &Trajectory, component: Component, epsilon: f64, rule: EradicationRule) -> Option<f64> {
    let value = |i: usize| match component {
        Component::Female => traj.states[i].f,
        Component::Male => traj.states[i].m,
    };
    let n = traj.states.len();
    match rule {
        EradicationRule::FirstCrossing => (0..n).find(|&i| value(i) < epsilon).map(|i| traj.grid.time(i)),
        EradicationRule::Permanent => {
            let mut first = None;
            for i in (0..n).rev() {
                if value(i) < epsilon {
                    first = Some(i);
                } else {
                    break;
                }
            }
            first.map(|i| traj.grid.time(i))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub model_id: ModelId,
    pub objective: f64,
    pub cost_excluding_controls: f64,
    pub f_final: f64,
    pub m_final: f64,
    pub t_erad_f: Option<f64>,
    pub t_erad_m: Option<f64>,
    pub epsilon: f64,
    pub converged: bool,
}

impl StrategyReport {
    pub fn from_sweep(r: &SweepResult, epsilon: f64, rule: EradicationRule) -> Self {
        let last = r.final_state();
        StrategyReport {
            model_id: r.model,
            objective: r.objective,
            cost_excluding_controls: r.cost_excluding_controls,
            f_final: last.f,
            m_final: last.m,
            t_erad_f: eradication_time_with(&r.states, Component::Female, epsilon, rule),
            t_erad_m: eradication_time_with(&r.states, Component::Male, epsilon, rule),
            epsilon,
            converged: r.converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<StrategyReport>,
    pub epsilon: f64,
    pub rule: EradicationRule,
    /// Smallest objective.
    pub cheapest: Option<ModelId>,
    /// Earliest female eradication.
    pub fastest_female: Option<ModelId>,
}

pub fn compare_strategies(scenarios: &[SweepResult], epsilon: f64, rule: EradicationRule) -> Result<ComparisonTable> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParams(format!("epsilon must be positive, got {epsilon}")));
    }
    if let Some(first) = scenarios.first() {
        for r in &scenarios[1..] {
            first.states.grid.ensure_same(&r.states.grid, "compared scenarios")?;
        }
    }
    let rows: Vec<StrategyReport> = scenarios.iter().map(|r| StrategyReport::from_sweep(r, epsilon, rule)).collect();
    let cheapest = rows
        .iter()
        .min_by(|a, b| a.objective.total_cmp(&b.objective))
        .map(|r| r.model_id);
    let fastest_female = rows
        .iter()
        .filter_map(|r| r.t_erad_f.map(|t| (t, r.model_id)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, id)| id);
    Ok(ComparisonTable {
        rows,
        epsilon,
        rule,
        cheapest,
        fastest_female,
    })
}

fn opt_time(t: Option<f64>) -> String {
    t.map_or_else(|| "/".to_string(), |t| format!("{t:.2}"))
}

impl ComparisonTable {
    /// Aligned plain-text table; `/` marks no eradication.
    pub fn to_text(&self) -> String {
        let header = ["model", "J", "cost excl. controls", "f(T)", "m(T)", "female erad.", "male erad.", "converged"];
        let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            cells.push(vec![
                r.model_id.name().to_string(),
                format!("{:.2}", r.objective),
                format!("{:.2}", r.cost_excluding_controls),
                format!("{:.4}", r.f_final),
                format!("{:.4}", r.m_final),
                opt_time(r.t_erad_f),
                opt_time(r.t_erad_m),
                if r.converged { "yes" } else { "no" }.to_string(),
            ]);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| cells.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (k, row) in cells.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, v)| if c == 0 { format!("{v:<w$}", w = widths[c]) } else { format!("{v:>w$}", w = widths[c]) })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
            if k == 0 {
                let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                let _ = writeln!(out, "{}", "-".repeat(total));
            }
        }
        let _ = writeln!(out, "epsilon = {}, rule = {:?}", self.epsilon, self.rule);
        if let Some(id) = self.cheapest {
            let _ = writeln!(out, "smallest J: {id}");
        }
        if let Some(id) = self.fastest_female {
            let _ = writeln!(out, "earliest female eradication: {id}");
        }
        out
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "model,objective,cost_excluding_controls,f_final,m_final,t_erad_f,t_erad_m,epsilon,converged")?;
        let t = |v: Option<f64>| v.map(fmt17).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.model_id.name(),
                fmt17(r.objective),
                fmt17(r.cost_excluding_controls),
                fmt17(r.f_final),
                fmt17(r.m_final),
                t(r.t_erad_f),
                t(r.t_erad_m),
                fmt17(r.epsilon),
                r.converged
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{forward_backward_sweep, SweepConfig};
    use crate::integrate::TimeGrid;
    use crate::models::{LifeParams, ModelSpec, State};

    fn traj(values: impl Fn(f64) -> f64, t_end: f64, n: usize) -> Trajectory {
        let grid = TimeGrid::new(0.0, t_end, n).unwrap();
        Trajectory {
            grid,
            states: (0..grid.len())
                .map(|i| {
                    let v = values(grid.time(i));
                    State::new(v, v, 0.0)
                })
                .collect(),
        }
    }

    #[test]
    fn never_below_threshold() {
        let tr = traj(|_| 202.5, 10.0, 100);
        assert_eq!(eradication_time(&tr, Component::Female, 0.5), None);
    }

    #[test]
    fn exponential_decay_crossing() {
        let tr = traj(|t| (-t).exp(), 5.0, 5000);
        let t = eradication_time(&tr, Component::Male, 0.5).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!(t > ln2 && t - ln2 <= 1e-3 + 1e-12, "{t}");
    }

    #[test]
    fn permanence_rule() {
        // dips below 0.5 at t ≈ 0.69, recovers, then falls for good after t = 8
        let tr = traj(|t| if t < 2.0 { (-t).exp() } else if t < 8.0 { 3.0 } else { 0.1 }, 10.0, 1000);
        let first = eradication_time_with(&tr, Component::Female, 0.5, EradicationRule::FirstCrossing).unwrap();
        let perm = eradication_time_with(&tr, Component::Female, 0.5, EradicationRule::Permanent).unwrap();
        assert!(first < 1.0);
        assert!((perm - 8.0).abs() < 1e-9);
    }

    #[test]
    fn identical_scenarios_identical_rows() {
        let p = LifeParams::MESOCOSM;
        let grid = TimeGrid::with_step(0.0, 20.0, 0.1).unwrap();
        let r = forward_backward_sweep(&ModelSpec::new(ModelId::Fhmh4), &p, &State::new(100.0, 100.0, 0.0), &grid, &SweepConfig::default()).unwrap();
        let table = compare_strategies(&[r.clone(), r], DEFAULT_EPSILON, EradicationRule::FirstCrossing).unwrap();
        assert_eq!(table.rows[0], table.rows[1]);
        let text = table.to_text();
        assert!(text.lines().next().unwrap().starts_with("model"));
        let mut csv = Vec::new();
        table.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 3);
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let p = LifeParams::MESOCOSM;
        let init = State::new(100.0, 100.0, 0.0);
        let spec = ModelSpec::new(ModelId::Fhms1);
        let a = forward_backward_sweep(&spec, &p, &init, &TimeGrid::new(0.0, 5.0, 50).unwrap(), &SweepConfig::default()).unwrap();
        let b = forward_backward_sweep(&spec, &p, &init, &TimeGrid::new(0.0, 5.0, 60).unwrap(), &SweepConfig::default()).unwrap();
        assert!(matches!(
            compare_strategies(&[a, b], DEFAULT_EPSILON, EradicationRule::FirstCrossing),
            Err(Error::GridMismatch(_))
        ));
    }
}
