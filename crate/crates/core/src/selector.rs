//! Exhaustive search over MAC parameters and routing metric under end-to-end
//! reliability and delay constraints.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mac::{MacParams, PowerProfile, Timing};
use crate::metrics::{MetricKind, DEFAULT_R_MIN};
use crate::solver::solve_network;
use crate::topology::{Dodag, Topology};

/// Relative tolerance under which two objectives count as equal.
const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricFamily {
    R,
    Q,
}

/// Parameter ranges. `mb_lo = None` means `mb` starts at the candidate's `m0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub m0: (u8, u8),
    pub mb_lo: Option<u8>,
    pub mb_hi: u8,
    pub m: (u8, u8),
    pub metrics: Vec<MetricFamily>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            m0: (3, 8),
            mb_lo: None,
            mb_hi: 8,
            m: (0, 4),
            metrics: vec![MetricFamily::R, MetricFamily::Q],
        }
    }
}

impl SearchSpace {
    /// Parses `m0=3:8;mb=m0:8;m=0:4;metrics=r,q`. Missing keys keep their
    /// defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut space = SearchSpace::default();
        let bad = |what: &str| Error::InvalidParams(format!("search space: {what}"));
        for part in text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| bad(&format!("expected key=value, got `{part}`")))?;
            let range = |v: &str| -> Result<(Option<u8>, u8)> {
                let (lo, hi) = v.split_once(':').unwrap_or((v, v));
                let hi = hi
                    .trim()
                    .parse()
                    .map_err(|_| bad(&format!("bad bound `{hi}`")))?;
                let lo = match lo.trim() {
                    "m0" => None,
                    s => Some(s.parse().map_err(|_| bad(&format!("bad bound `{s}`")))?),
                };
                Ok((lo, hi))
            };
            match key.trim() {
                "m0" => {
                    let (lo, hi) = range(value)?;
                    space.m0 = (lo.ok_or_else(|| bad("m0 cannot start at m0"))?, hi);
                }
                "mb" => {
                    let (lo, hi) = range(value)?;
                    space.mb_lo = lo;
                    space.mb_hi = hi;
                }
                "m" => {
                    let (lo, hi) = range(value)?;
                    space.m = (lo.ok_or_else(|| bad("m cannot start at m0"))?, hi);
                }
                "metrics" => {
                    space.metrics = value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| match s.to_ascii_lowercase().as_str() {
                            "r" | "r_metric" => Ok(MetricFamily::R),
                            "q" | "q_metric" => Ok(MetricFamily::Q),
                            other => Err(bad(&format!("unknown metric `{other}`"))),
                        })
                        .collect::<Result<_>>()?;
                }
                other => return Err(bad(&format!("unknown key `{other}`"))),
            }
        }
        Ok(space)
    }

    /// All `(m0, mb, m)` triples, in lexicographic order. Empty ranges yield
    /// nothing.
    pub fn mac_points(&self, n: u8) -> Vec<MacParams> {
        let mut out = Vec::new();
        for m0 in self.m0.0..=self.m0.1 {
            let mb_lo = self.mb_lo.unwrap_or(m0).max(m0);
            for mb in mb_lo..=self.mb_hi {
                for m in self.m.0..=self.m.1 {
                    let p = MacParams { m0, mb, m, n };
                    if p.validate().is_ok() {
                        out.push(p);
                    }
                }
            }
        }
        out
    }
}

pub struct SelectionProblem<'a> {
    pub topo: &'a Topology,
    pub dodag: &'a Dodag,
    pub r_min_grid: Vec<f64>,
    pub d_max_grid: Vec<f64>,
    pub space: SearchSpace,
    pub n: u8,
    pub timing: Timing,
    pub profile: PowerProfile,
}

/// One analytically evaluated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub metric: MetricKind,
    pub params: MacParams,
    pub converged: bool,
    pub min_reliability: f64,
    pub max_delay: f64,
    /// Maximum non-root node power, watts.
    pub objective: f64,
}

impl Outcome {
    pub fn satisfies(&self, r_min: f64, d_max: f64) -> bool {
        self.converged
            && self.max_delay.is_finite()
            && self.min_reliability >= r_min
            && self.max_delay <= d_max
    }

    pub fn label(&self) -> String {
        format!(
            "{}/{}/{}/{}",
            self.metric.tag(),
            self.params.m0,
            self.params.mb,
            self.params.m
        )
    }

    fn order_key(&self) -> (&'static str, u8, u8, u8, u64) {
        let floor = match self.metric {
            MetricKind::QMetric { r_min } => r_min.to_bits(),
            _ => 0,
        };
        (
            self.metric.tag(),
            self.params.m0,
            self.params.mb,
            self.params.m,
            floor,
        )
    }
}

/// Objective first, then lexicographic (metric tag, m0, mb, m).
pub fn compare_outcomes(a: &Outcome, b: &Outcome) -> Ordering {
    let scale = a
        .objective
        .abs()
        .max(b.objective.abs())
        .max(f64::MIN_POSITIVE);
    if (a.objective - b.objective).abs() > TIE_TOLERANCE * scale {
        return a.objective.total_cmp(&b.objective);
    }
    a.order_key().cmp(&b.order_key())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub r_min: f64,
    pub d_max: f64,
    /// Index into [`SelectionResult::outcomes`] of the chosen configuration.
    pub choice: Option<usize>,
}

impl Cell {
    pub fn feasible(&self) -> bool {
        self.choice.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub r_min_grid: Vec<f64>,
    pub d_max_grid: Vec<f64>,
    /// Row-major over `r_min_grid` x `d_max_grid`.
    pub cells: Vec<Cell>,
    pub outcomes: Vec<Outcome>,
}

impl SelectionResult {
    pub fn cell(&self, row: usize, col: usize) -> &Cell {
        &self.cells[row * self.d_max_grid.len() + col]
    }

    pub fn chosen(&self, row: usize, col: usize) -> Option<&Outcome> {
        self.cell(row, col).choice.map(|k| &self.outcomes[k])
    }
}

/// Reliability floors offered to the Q-metric: the default floor plus every
/// positive value of the constraint grid.
fn q_floors(r_min_grid: &[f64]) -> Vec<f64> {
    let mut floors: Vec<f64> = r_min_grid
        .iter()
        .copied()
        .filter(|r| *r > 0.0 && *r <= 1.0)
        .chain(std::iter::once(DEFAULT_R_MIN))
        .collect();
    floors.sort_by(f64::total_cmp);
    floors.dedup();
    floors
}

pub fn candidate_configurations(problem: &SelectionProblem) -> Vec<(MetricKind, MacParams)> {
    let floors = q_floors(&problem.r_min_grid);
    let mut out = Vec::new();
    for params in problem.space.mac_points(problem.n) {
        for family in &problem.space.metrics {
            match family {
                MetricFamily::R => out.push((MetricKind::RMetric, params)),
                MetricFamily::Q => out.extend(
                    floors
                        .iter()
                        .map(|&r_min| (MetricKind::QMetric { r_min }, params)),
                ),
            }
        }
    }
    out
}

fn evaluate(problem: &SelectionProblem, metric: &MetricKind, params: &MacParams) -> Outcome {
    let root = problem.topo.root();
    match solve_network(
        problem.topo,
        problem.dodag,
        metric,
        params,
        &problem.timing,
        &problem.profile,
    ) {
        Ok(sol) => {
            let max_delay = (0..sol.e2e_delay.len())
                .filter(|&i| i != root)
                .map(|i| sol.e2e_delay[i])
                .fold(0.0, f64::max);
            Outcome {
                metric: *metric,
                params: *params,
                converged: sol.converged,
                min_reliability: sol.min_reliability(root),
                max_delay,
                objective: sol.max_power(root),
            }
        }
        Err(_) => Outcome {
            metric: *metric,
            params: *params,
            converged: false,
            min_reliability: 0.0,
            max_delay: f64::INFINITY,
            objective: f64::INFINITY,
        },
    }
}

/// Evaluates every configuration once and picks, per constraint cell, the
/// feasible configuration of least maximum node power.
pub fn select(problem: &SelectionProblem) -> Result<SelectionResult> {
    problem.timing.validate()?;
    problem.profile.validate()?;
    let configs = candidate_configurations(problem);
    let outcomes: Vec<Outcome> = configs
        .par_iter()
        .map(|(metric, params)| evaluate(problem, metric, params))
        .collect();

    let mut cells = Vec::with_capacity(problem.r_min_grid.len() * problem.d_max_grid.len());
    if !outcomes.is_empty() {
        for &r_min in &problem.r_min_grid {
            for &d_max in &problem.d_max_grid {
                let choice = outcomes
                    .iter()
                    .enumerate()
                    .filter(|(_, o)| o.satisfies(r_min, d_max))
                    .min_by(|(_, a), (_, b)| compare_outcomes(a, b))
                    .map(|(k, _)| k);
                cells.push(Cell {
                    r_min,
                    d_max,
                    choice,
                });
            }
        }
    }
    Ok(SelectionResult {
        r_min_grid: problem.r_min_grid.clone(),
        d_max_grid: problem.d_max_grid.clone(),
        cells,
        outcomes,
    })
}

fn fmt_bound(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

/// CSV grid: rows are `r_min` values, columns `d_max` values (seconds), cells
/// `METRIC/m0/mb/m` or `INFEASIBLE`. An empty search space gives an empty
/// document.
pub fn feasibility_map(result: &SelectionResult) -> String {
    let mut out = String::new();
    if result.cells.is_empty() {
        return out;
    }
    out.push_str("r_min");
    for d in &result.d_max_grid {
        let _ = write!(out, ",{}", fmt_bound(*d));
    }
    out.push('\n');
    for (row, r) in result.r_min_grid.iter().enumerate() {
        out.push_str(&fmt_bound(*r));
        for col in 0..result.d_max_grid.len() {
            let label = result
                .chosen(row, col)
                .map(Outcome::label)
                .unwrap_or_else(|| "INFEASIBLE".to_string());
            let _ = write!(out, ",{label}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_space() {
        let s = SearchSpace::parse("m0=3:8;mb=m0:8;m=0:4;metrics=r,q").unwrap();
        assert_eq!(s, SearchSpace::default());
        assert_eq!(s.mac_points(3).len(), 105);
        let s = SearchSpace::parse("m0=3:3;mb=5:5;m=2;metrics=q").unwrap();
        assert_eq!(s.mac_points(3), vec![MacParams::new(3, 5, 2, 3).unwrap()]);
        assert!(SearchSpace::parse("foo=1").is_err());
        assert!(SearchSpace::parse("m0=x:3").is_err());
        assert!(SearchSpace::parse("m0=5:3")
            .unwrap()
            .mac_points(3)
            .is_empty());
    }

    #[test]
    fn tie_break_is_lexicographic() {
        let mk = |metric: MetricKind, m0: u8, objective: f64| Outcome {
            metric,
            params: MacParams::new(m0, 8, 4, 3).unwrap(),
            converged: true,
            min_reliability: 1.0,
            max_delay: 0.0,
            objective,
        };
        let q = mk(MetricKind::QMetric { r_min: 0.9 }, 4, 1.0);
        let r = mk(MetricKind::RMetric, 3, 1.0 + 1e-12);
        assert_eq!(compare_outcomes(&q, &r), Ordering::Less);
        let r_cheaper = mk(MetricKind::RMetric, 3, 0.9);
        assert_eq!(compare_outcomes(&q, &r_cheaper), Ordering::Greater);
    }

    #[test]
    fn floors_include_default() {
        assert_eq!(q_floors(&[0.0, 0.5, 1.0, 0.5]), vec![0.5, 0.9, 1.0]);
    }
}
