//! Per-run and multi-run summaries.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rplmac_core::topology::{Dodag, Topology};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::SimConfig;
use crate::engine::Engine;
use crate::error::Result;
use crate::trace::{DropCause, EstimateSample, Fate, SimTrace};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeReport {
    pub node: String,
    /// Packets generated after warm-up.
    pub generated: u64,
    pub delivered: u64,
    pub dropped_access: u64,
    pub dropped_retry: u64,
    pub dropped_queue: u64,
    pub in_flight: u64,
    /// Delivered over resolved (delivered or dropped); NaN when nothing
    /// resolved.
    pub reliability: f64,
    /// Mean birth-to-sink delay of delivered packets, seconds.
    pub mean_delay_s: f64,
    pub power_w: f64,
    /// Frames accepted into the MAC queue per second.
    pub q_pps: f64,
    /// Fraction of CCAs that found the channel busy.
    pub alpha: f64,
    pub parent: String,
    pub switches: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub nodes: Vec<NodeReport>,
    pub avg_reliability: f64,
    /// Reliability of the worst source.
    pub min_reliability: f64,
    pub avg_delay_s: f64,
    pub max_delay_s: f64,
    /// Maximum power over non-root nodes.
    pub max_power_w: f64,
    pub total_switches: u64,
}

fn finite_mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values
        .filter(|v| v.is_finite())
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn build_report(
    topo: &Topology,
    cfg: &SimConfig,
    trace: &SimTrace,
    packets: &[(usize, u64, Fate)],
    parents: &[Option<usize>],
    switches: &[u64],
) -> SimReport {
    let n = topo.len();
    let root = topo.root();
    let slot = cfg.timing.slot;
    let mut nodes: Vec<NodeReport> = (0..n)
        .map(|i| {
            let c = &trace.nodes[i];
            let p = &cfg.profile;
            let energy = c.tx_s * p.p_tx
                + c.cca_s * p.p_cca
                + c.rx_s * p.p_rx
                + c.backoff_s * p.p_backoff
                + c.idle_s * p.p_idle;
            let ccas = c.cca_busy + c.cca_idle;
            NodeReport {
                node: topo.id(i).to_string(),
                generated: 0,
                delivered: 0,
                dropped_access: 0,
                dropped_retry: 0,
                dropped_queue: 0,
                in_flight: 0,
                reliability: f64::NAN,
                mean_delay_s: f64::NAN,
                power_w: energy / trace.duration_s,
                q_pps: c.enqueued as f64 / trace.duration_s,
                alpha: if ccas == 0 {
                    0.0
                } else {
                    c.cca_busy as f64 / ccas as f64
                },
                parent: parents[i]
                    .map(|p| topo.id(p).to_string())
                    .unwrap_or_default(),
                switches: switches[i],
            }
        })
        .collect();
    let mut delay_sum = vec![0.0; n];
    for (source, birth, fate) in packets {
        let r = &mut nodes[*source];
        r.generated += 1;
        match fate {
            Fate::Delivered { time_s } => {
                r.delivered += 1;
                delay_sum[*source] += time_s - *birth as f64 * slot;
            }
            Fate::Dropped { cause, .. } => match cause {
                DropCause::AccessFailure => r.dropped_access += 1,
                DropCause::RetryLimit => r.dropped_retry += 1,
                DropCause::QueueOverflow => r.dropped_queue += 1,
            },
            Fate::InFlight => r.in_flight += 1,
        }
    }
    for (i, r) in nodes.iter_mut().enumerate() {
        let resolved = r.generated - r.in_flight;
        if resolved > 0 {
            r.reliability = r.delivered as f64 / resolved as f64;
        }
        if r.delivered > 0 {
            r.mean_delay_s = delay_sum[i] / r.delivered as f64;
        }
    }
    let sources = || {
        nodes
            .iter()
            .enumerate()
            .filter(move |(i, _)| *i != root)
            .map(|(_, r)| r)
    };
    SimReport {
        avg_reliability: finite_mean(sources().map(|r| r.reliability)),
        min_reliability: sources()
            .map(|r| r.reliability)
            .filter(|v| v.is_finite())
            .fold(f64::NAN, f64::min),
        avg_delay_s: finite_mean(sources().map(|r| r.mean_delay_s)),
        max_delay_s: sources()
            .map(|r| r.mean_delay_s)
            .filter(|v| v.is_finite())
            .fold(f64::NAN, f64::max),
        max_power_w: sources().map(|r| r.power_w).fold(0.0, f64::max),
        total_switches: switches.iter().sum(),
        nodes,
    }
}

/// Runs one simulation on random stream `stream` of the configured seed.
pub fn run_stream(
    topo: &Topology,
    dodag: &Dodag,
    cfg: &SimConfig,
    stream: u64,
) -> Result<(SimTrace, SimReport)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let out = Engine::new(topo, dodag, cfg, rng)?.run();
    let report = build_report(
        topo,
        cfg,
        &out.trace,
        &out.packets,
        &out.final_parents,
        &out.switches,
    );
    Ok((out.trace, report))
}

pub fn run_simulation(
    topo: &Topology,
    dodag: &Dodag,
    cfg: &SimConfig,
) -> Result<(SimTrace, SimReport)> {
    run_stream(topo, dodag, cfg, 0)
}

/// Independent runs on streams `0..count`, executed in parallel. Results are
/// in stream order.
pub fn run_replications(
    topo: &Topology,
    dodag: &Dodag,
    cfg: &SimConfig,
    count: usize,
) -> Result<Vec<(SimTrace, SimReport)>> {
    cfg.validate()?;
    (0..count as u64)
        .into_par_iter()
        .map(|k| run_stream(topo, dodag, cfg, k))
        .collect()
}

/// Mean and half-width of the 95% Student-t interval. The half-width is
/// zero for a single sample.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .expect("degrees of freedom are positive")
        .inverse_cdf(0.975);
    (mean, t * (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeSummary {
    pub node: String,
    pub q_pps: f64,
    pub alpha: f64,
    pub e2e_reliability: f64,
    pub e2e_reliability_ci95: f64,
    pub e2e_delay_s: f64,
    pub e2e_delay_s_ci95: f64,
    pub power_w: f64,
    pub power_w_ci95: f64,
    /// Most frequent final parent across runs.
    pub parent: String,
    pub switches: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationSummary {
    pub replications: usize,
    pub nodes: Vec<NodeSummary>,
    pub avg_reliability: f64,
    pub min_reliability: f64,
    pub avg_delay_s: f64,
    pub max_power_w: f64,
    pub total_switches: f64,
}

impl ReplicationSummary {
    pub fn from_reports(reports: &[SimReport]) -> Self {
        let runs = reports.len();
        let column =
            |f: &dyn Fn(&SimReport) -> f64| -> Vec<f64> { reports.iter().map(f).collect() };
        let node_count = reports.first().map_or(0, |r| r.nodes.len());
        let nodes = (0..node_count)
            .map(|i| {
                let (rel, rel_ci) = mean_ci95(&column(&|r| r.nodes[i].reliability));
                let (delay, delay_ci) = mean_ci95(&column(&|r| r.nodes[i].mean_delay_s));
                let (power, power_ci) = mean_ci95(&column(&|r| r.nodes[i].power_w));
                let mut votes: BTreeMap<&str, usize> = BTreeMap::new();
                for r in reports {
                    *votes.entry(r.nodes[i].parent.as_str()).or_default() += 1;
                }
                let parent = votes
                    .iter()
                    .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                    .map(|(p, _)| p.to_string())
                    .unwrap_or_default();
                NodeSummary {
                    node: reports[0].nodes[i].node.clone(),
                    q_pps: mean_ci95(&column(&|r| r.nodes[i].q_pps)).0,
                    alpha: mean_ci95(&column(&|r| r.nodes[i].alpha)).0,
                    e2e_reliability: rel,
                    e2e_reliability_ci95: rel_ci,
                    e2e_delay_s: delay,
                    e2e_delay_s_ci95: delay_ci,
                    power_w: power,
                    power_w_ci95: power_ci,
                    parent,
                    switches: mean_ci95(&column(&|r| r.nodes[i].switches as f64)).0,
                }
            })
            .collect();
        ReplicationSummary {
            replications: runs,
            nodes,
            avg_reliability: mean_ci95(&column(&|r| r.avg_reliability)).0,
            min_reliability: mean_ci95(&column(&|r| r.min_reliability)).0,
            avg_delay_s: mean_ci95(&column(&|r| r.avg_delay_s)).0,
            max_power_w: mean_ci95(&column(&|r| r.max_power_w)).0,
            total_switches: mean_ci95(&column(&|r| r.total_switches as f64)).0,
        }
    }
}

/// Convergence and noise of the two reliability estimators over one link's
/// sample series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorQuality {
    pub samples: usize,
    /// Samples before the alpha-based estimate stays within the band of its
    /// steady state.
    pub alpha_settle: usize,
    pub etx_settle: usize,
    pub alpha_variance: f64,
    pub etx_variance: f64,
}

/// Steady state is the mean of the second half of the series; variance is
/// the sample variance over that half.
pub fn estimator_quality(samples: &[EstimateSample], band: f64) -> Option<EstimatorQuality> {
    if samples.len() < 4 {
        return None;
    }
    let study = |values: Vec<f64>| -> (usize, f64) {
        let tail = &values[values.len() / 2..];
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        let var = tail.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (tail.len() - 1) as f64;
        let settle = values
            .iter()
            .rposition(|x| (x - mean).abs() > band)
            .map_or(0, |k| k + 1);
        (settle, var)
    };
    let (alpha_settle, alpha_variance) =
        study(samples.iter().map(|s| s.alpha_reliability).collect());
    let (etx_settle, etx_variance) = study(samples.iter().map(|s| s.etx_reliability).collect());
    Some(EstimatorQuality {
        samples: samples.len(),
        alpha_settle,
        etx_settle,
        alpha_variance,
        etx_variance,
    })
}

/// Groups estimate samples by `(node, parent)` link, in trace order.
pub fn samples_by_link(trace: &SimTrace) -> BTreeMap<(String, String), Vec<EstimateSample>> {
    let mut out: BTreeMap<(String, String), Vec<EstimateSample>> = BTreeMap::new();
    for s in &trace.estimates {
        out.entry((s.node.clone(), s.parent.clone()))
            .or_default()
            .push(s.clone());
    }
    out
}
