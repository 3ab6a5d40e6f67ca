//! Parent-selection rules and the routing selection matrix.
//!
//! Every rule implements [`ParentSelector`] and is registered by name in a
//! [`MetricRegistry`]; the flow solver and the simulator look rules up by
//! [`MetricKind`] and feed them the same [`SelectionContext`].

mod backpressure;
mod etx;
mod load;
mod reliability;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::Dodag;

pub use backpressure::{select_parent_backpressure, BackPressure};
pub use etx::{etx_link, EtxMetric};
pub use load::{q_metric_cost, select_parent_q_metric, Infeasible, QMetric};
pub use reliability::{select_parent_r_metric, RMetric};

/// Default reliability floor of the Q-metric.
pub const DEFAULT_R_MIN: f64 = 0.9;
/// Default weight of the ETX term in the back-pressure baseline.
pub const DEFAULT_BP_WEIGHT: f64 = 1.0;

/// Which rule to run, with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MetricKind {
    Etx,
    RMetric,
    QMetric { r_min: f64 },
    Backpressure { weight: f64 },
}

impl MetricKind {
    /// Short name used on the command line and in the registry.
    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Etx => "etx",
            MetricKind::RMetric => "r",
            MetricKind::QMetric { .. } => "q",
            MetricKind::Backpressure { .. } => "backpressure",
        }
    }

    /// Upper-case tag; ordering of tags drives lexicographic tie-breaks.
    pub fn tag(&self) -> &'static str {
        match self {
            MetricKind::Etx => "ETX",
            MetricKind::RMetric => "R_METRIC",
            MetricKind::QMetric { .. } => "Q_METRIC",
            MetricKind::Backpressure { .. } => "BACKPRESSURE",
        }
    }

    pub fn from_name(name: &str, r_min: f64, weight: f64) -> Result<Self> {
        let kind = match name.to_ascii_lowercase().as_str() {
            "etx" => MetricKind::Etx,
            "r" | "r_metric" | "r-metric" => MetricKind::RMetric,
            "q" | "q_metric" | "q-metric" => MetricKind::QMetric { r_min },
            "backpressure" | "bp" => MetricKind::Backpressure { weight },
            other => return Err(Error::UnknownMetric(other.to_string())),
        };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MetricKind::QMetric { r_min } if !(r_min > 0.0 && r_min <= 1.0) => Err(
                Error::InvalidParams(format!("R_min must be in (0, 1], got {r_min}")),
            ),
            MetricKind::Backpressure { weight } if !(weight >= 0.0 && weight.is_finite()) => Err(
                Error::InvalidParams(format!("back-pressure weight must be >= 0, got {weight}")),
            ),
            _ => Ok(()),
        }
    }

    /// Whether the rule needs per-candidate load (Q) information.
    pub fn is_load_aware(&self) -> bool {
        matches!(
            self,
            MetricKind::QMetric { .. } | MetricKind::Backpressure { .. }
        )
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricKind::from_name(s, DEFAULT_R_MIN, DEFAULT_BP_WEIGHT)
    }
}

/// What a node knows about one candidate parent when it decides.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateView {
    pub node: usize,
    pub tie_key: usize,
    /// `R_{i,j}`.
    pub link_reliability: f64,
    /// `R(j)`, end-to-end reliability from the candidate to the root.
    pub downstream_reliability: f64,
    pub link_etx: f64,
    pub downstream_etx: f64,
    /// Traffic the candidate would carry with this node attached, pkt/s.
    pub load_pps: f64,
    /// Traffic the candidate generates itself, pkt/s.
    pub lambda_pps: f64,
    pub p_tx: f64,
    pub p_rx: f64,
    pub queue_len: f64,
}

impl CandidateView {
    /// Neutral view; callers overwrite the fields their rule reads.
    pub fn new(node: usize, tie_key: usize) -> Self {
        CandidateView {
            node,
            tie_key,
            link_reliability: 1.0,
            downstream_reliability: 1.0,
            link_etx: 1.0,
            downstream_etx: 0.0,
            load_pps: 0.0,
            lambda_pps: 0.0,
            p_tx: 0.0,
            p_rx: 0.0,
            queue_len: 0.0,
        }
    }

    pub fn path_reliability(&self) -> f64 {
        self.link_reliability * self.downstream_reliability
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionContext {
    pub node: usize,
    pub queue_len: f64,
    pub candidates: Vec<CandidateView>,
}

/// Outcome of one decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Choice {
    pub parent: usize,
    /// Set when the rule could not meet its constraint and fell back.
    pub fallback: bool,
}

impl Choice {
    pub fn plain(parent: usize) -> Self {
        Choice {
            parent,
            fallback: false,
        }
    }
}

pub trait ParentSelector: Send + Sync {
    fn kind(&self) -> MetricKind;

    /// Picks a parent among `ctx.candidates`, which must be non-empty.
    fn select(&self, ctx: &SelectionContext) -> Choice;

    /// True for rules evaluated on every packet rather than periodically.
    fn per_packet(&self) -> bool {
        false
    }
}

/// Index of the best candidate under `better`, ties to the smallest tie key.
pub(crate) fn arg_best<F>(candidates: &[CandidateView], score: F, maximize: bool) -> usize
where
    F: Fn(&CandidateView) -> f64,
{
    assert!(!candidates.is_empty(), "candidate set must be non-empty");
    let mut best = 0;
    let mut best_score = score(&candidates[0]);
    for (k, c) in candidates.iter().enumerate().skip(1) {
        let s = score(c);
        let wins = if maximize {
            s > best_score
        } else {
            s < best_score
        };
        if wins || (s == best_score && c.tie_key < candidates[best].tie_key) {
            best = k;
            best_score = s;
        }
    }
    best
}

type Factory = fn(&MetricKind) -> Box<dyn ParentSelector>;

/// Name-keyed table of parent-selection rules.
pub struct MetricRegistry {
    factories: BTreeMap<&'static str, Factory>,
}

impl MetricRegistry {
    pub fn empty() -> Self {
        MetricRegistry {
            factories: BTreeMap::new(),
        }
    }

    /// Registry with ETX, R-metric, Q-metric and back-pressure.
    pub fn builtin() -> Self {
        let mut reg = MetricRegistry::empty();
        reg.register("etx", |_| Box::new(EtxMetric));
        reg.register("r", |_| Box::new(RMetric));
        reg.register("q", |kind| match *kind {
            MetricKind::QMetric { r_min } => Box::new(QMetric { r_min }),
            _ => Box::new(QMetric {
                r_min: DEFAULT_R_MIN,
            }),
        });
        reg.register("backpressure", |kind| match *kind {
            MetricKind::Backpressure { weight } => Box::new(BackPressure { weight }),
            _ => Box::new(BackPressure {
                weight: DEFAULT_BP_WEIGHT,
            }),
        });
        reg
    }

    pub fn register(&mut self, name: &'static str, factory: Factory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn build(&self, kind: &MetricKind) -> Result<Box<dyn ParentSelector>> {
        kind.validate()?;
        let factory = self
            .factories
            .get(kind.name())
            .ok_or_else(|| Error::UnknownMetric(kind.name().to_string()))?;
        Ok(factory(kind))
    }
}

impl Default for MetricRegistry {
    fn default() -> Self {
        MetricRegistry::builtin()
    }
}

/// Deterministic routing matrix: `M[i][j] = 1` iff `j` is the chosen parent
/// of `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionMatrix {
    parent: Vec<Option<usize>>,
}

impl SelectionMatrix {
    pub fn from_parents(parent: Vec<Option<usize>>) -> Self {
        SelectionMatrix { parent }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if self.parent[i] == Some(j) {
            1.0
        } else {
            0.0
        }
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        (0..self.len()).map(|j| self.entry(i, j)).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.len(), |i, j| self.entry(i, j))
    }

    /// Nodes on the path from `node` to the root, both ends included.
    pub fn path(&self, node: usize, root: usize) -> Result<Vec<usize>> {
        let mut path = vec![node];
        let mut cur = node;
        while cur != root {
            match self.parent[cur] {
                Some(next) if path.len() <= self.len() => {
                    path.push(next);
                    cur = next;
                }
                _ => return Err(Error::NoPath(node.to_string())),
            }
        }
        Ok(path)
    }
}

/// Builds `M` from one parent choice per non-root node.
pub fn build_selection_matrix(dodag: &Dodag, choices: &[Option<usize>]) -> Result<SelectionMatrix> {
    if choices.len() != dodag.len() {
        return Err(Error::InvalidParams(format!(
            "expected {} choices, got {}",
            dodag.len(),
            choices.len()
        )));
    }
    let mut parent = vec![None; dodag.len()];
    for (i, choice) in choices.iter().enumerate() {
        if i == dodag.root() {
            continue;
        }
        match choice {
            Some(j) if dodag.parents(i).contains(j) => parent[i] = Some(*j),
            Some(j) => {
                return Err(Error::InvalidParams(format!(
                    "node {i} chose {j}, which is not a candidate parent"
                )))
            }
            None => {
                return Err(Error::InvalidParams(format!(
                    "node {i} has no parent choice"
                )))
            }
        }
    }
    Ok(SelectionMatrix { parent })
}

/// Product of link reliabilities along the selected path to the root.
pub fn end_to_end_reliability(
    node: usize,
    root: usize,
    selection: &SelectionMatrix,
    link_reliability: &DMatrix<f64>,
) -> Result<f64> {
    let path = selection.path(node, root)?;
    Ok(path
        .windows(2)
        .map(|w| link_reliability[(w[0], w[1])])
        .product())
}
