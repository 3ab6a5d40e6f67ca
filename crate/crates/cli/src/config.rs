//! Experiment configuration: JSON file merged with command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rplmac_core::mac::{MacParams, PowerProfile, Timing};
use rplmac_core::metrics::{MetricKind, DEFAULT_BP_WEIGHT, DEFAULT_R_MIN};
use rplmac_core::solver::SolverOptions;
use rplmac_core::topology::{load_topology_file, Topology};
use rplmac_sim::{ArrivalProcess, SimConfig};
use serde::{Deserialize, Serialize};

use crate::args::{GlobalArgs, SimArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Solve,
    Simulate,
    Select,
    Compare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub topology: Option<PathBuf>,
    pub metric: String,
    pub rmin: f64,
    pub bp_weight: f64,
    pub mac: MacParams,
    pub timing: Timing,
    pub profile: PowerProfile,
    /// Uniform generation rate applied before the per-node overrides.
    pub lambda: Option<f64>,
    /// Per-node generation rates by node id.
    pub lambda_overrides: BTreeMap<String, f64>,
    pub mode: Option<Mode>,
    pub out: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub seed: u64,
    pub replications: usize,
    pub duration: f64,
    pub warmup: f64,
    pub arrival: ArrivalProcess,
    pub reselect_period: f64,
    pub max_iterations: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        ExperimentConfig {
            topology: None,
            metric: "r".into(),
            rmin: DEFAULT_R_MIN,
            bp_weight: DEFAULT_BP_WEIGHT,
            mac: MacParams::default(),
            timing: Timing::default(),
            profile: PowerProfile::default(),
            lambda: None,
            lambda_overrides: BTreeMap::new(),
            mode: None,
            out: None,
            trace: None,
            seed: sim.seed,
            replications: 1,
            duration: sim.duration,
            warmup: sim.warmup,
            arrival: sim.arrival,
            reselect_period: sim.reselect_period,
            max_iterations: SolverOptions::default().max_iterations,
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("config: cannot read {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("config: {}", path.display()))
    }

    /// Loads `--config` when given, then applies every flag that was set.
    pub fn resolve(global: &GlobalArgs, sim: Option<&SimArgs>) -> Result<Self> {
        let mut cfg = match &global.config {
            Some(path) => Self::from_file(path)?,
            None => Self::default(),
        };
        cfg.apply_global(global)?;
        if let Some(sim) = sim {
            cfg.apply_sim(sim)?;
        }
        cfg.mac.validate().context("mac")?;
        cfg.timing.validate().context("timing")?;
        cfg.profile.validate().context("profile")?;
        if cfg.replications == 0 {
            bail!("replications must be at least 1");
        }
        if cfg.max_iterations == 0 {
            bail!("max_iterations must be at least 1");
        }
        Ok(cfg)
    }

    fn apply_global(&mut self, g: &GlobalArgs) -> Result<()> {
        if let Some(v) = &g.topology {
            self.topology = Some(v.clone());
        }
        if let Some(v) = &g.metric {
            self.metric = v.clone();
        }
        if let Some(v) = g.seed {
            self.seed = v;
        }
        if let Some(v) = &g.out {
            self.out = Some(v.clone());
        }
        if let Some(v) = g.rmin {
            self.rmin = v;
        }
        if let Some(v) = g.bp_weight {
            self.bp_weight = v;
        }
        if let Some(v) = g.m0 {
            self.mac.m0 = v;
        }
        if let Some(v) = g.mb {
            self.mac.mb = v;
        }
        if let Some(v) = g.m {
            self.mac.m = v;
        }
        if let Some(v) = g.n {
            self.mac.n = v;
        }
        if let Some(v) = g.lambda {
            self.lambda = Some(v);
        }
        for spec in &g.lambda_node {
            let (id, rate) = spec
                .split_once('=')
                .with_context(|| format!("lambda-node: expected ID=PPS, got '{spec}'"))?;
            let rate: f64 = rate
                .trim()
                .parse()
                .with_context(|| format!("lambda-node: bad rate in '{spec}'"))?;
            self.lambda_overrides.insert(id.trim().to_string(), rate);
        }
        if let Some(v) = g.max_iter {
            self.max_iterations = v;
        }
        Ok(())
    }

    fn apply_sim(&mut self, s: &SimArgs) -> Result<()> {
        if let Some(v) = s.duration {
            self.duration = v;
        }
        if let Some(v) = s.warmup {
            self.warmup = v;
        }
        if let Some(v) = s.replications {
            self.replications = v;
        }
        if let Some(v) = &s.arrival {
            self.arrival = parse_arrival(v)?;
        }
        if let Some(v) = s.reselect_period {
            self.reselect_period = v;
        }
        Ok(())
    }

    pub fn metric_kind(&self) -> Result<MetricKind> {
        self.metric_named(&self.metric)
    }

    pub fn metric_named(&self, name: &str) -> Result<MetricKind> {
        MetricKind::from_name(name.trim(), self.rmin, self.bp_weight).context("metric")
    }

    /// Loads the topology and applies the traffic overrides.
    pub fn load_topology(&self) -> Result<Topology> {
        let path = self
            .topology
            .as_ref()
            .context("topology: no topology file given (--topology)")?;
        let mut topo =
            load_topology_file(path).with_context(|| format!("topology: {}", path.display()))?;
        if let Some(rate) = self.lambda {
            topo.set_uniform_lambda(rate).context("lambda")?;
        }
        for (id, rate) in &self.lambda_overrides {
            let node = topo
                .index_of(id)
                .with_context(|| format!("lambda_overrides: unknown node '{id}'"))?;
            topo.set_lambda(node, *rate)
                .with_context(|| format!("lambda_overrides: {id}"))?;
        }
        Ok(topo)
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            max_iterations: self.max_iterations,
            ..SolverOptions::default()
        }
    }

    pub fn sim_config(&self, metric: MetricKind) -> SimConfig {
        SimConfig {
            duration: self.duration,
            warmup: self.warmup,
            seed: self.seed,
            mac: self.mac,
            timing: self.timing,
            profile: self.profile,
            metric,
            arrival: self.arrival,
            reselect_period: self.reselect_period,
            record_trace: self.trace.is_some(),
            ..SimConfig::default()
        }
    }
}

pub fn parse_arrival(text: &str) -> Result<ArrivalProcess> {
    match text.trim().to_ascii_lowercase().as_str() {
        "periodic-jitter" | "periodic" => Ok(ArrivalProcess::PeriodicJitter),
        "poisson" => Ok(ArrivalProcess::Poisson),
        other => bail!("arrival: unknown process '{other}'"),
    }
}

/// Parses a comma-separated list of numbers; `inf` is accepted.
pub fn parse_grid(name: &str, text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let v = match s.to_ascii_lowercase().as_str() {
                "inf" | "infinity" => f64::INFINITY,
                _ => s
                    .parse::<f64>()
                    .with_context(|| format!("{name}: bad value '{s}'"))?,
            };
            if v.is_nan() || v < 0.0 {
                bail!("{name}: values must be non-negative, got '{s}'");
            }
            Ok(v)
        })
        .collect()
}

/// `start:stop:log10` (one point per decade boundary plus the 1-2-5 steps in
/// between) or `start:stop:lin:count`.
pub fn parse_sweep(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').map(str::trim).collect();
    let num = |s: &str| -> Result<f64> {
        let v: f64 = s
            .parse()
            .with_context(|| format!("lambda-sweep: bad number '{s}'"))?;
        if !(v > 0.0 && v.is_finite()) {
            bail!("lambda-sweep: rates must be positive, got '{s}'");
        }
        Ok(v)
    };
    match parts.as_slice() {
        [a, b, "log10"] => {
            let (a, b) = (num(a)?, num(b)?);
            if a > b {
                bail!("lambda-sweep: start exceeds stop");
            }
            let mut out = Vec::new();
            let mut decade = 10f64.powf(a.log10().floor());
            while decade <= b * (1.0 + 1e-12) {
                for step in [1.0, 2.0, 5.0] {
                    let v = decade * step;
                    if v >= a * (1.0 - 1e-12) && v <= b * (1.0 + 1e-12) {
                        out.push(v);
                    }
                }
                decade *= 10.0;
            }
            Ok(out)
        }
        [a, b, "lin", count] => {
            let (a, b) = (num(a)?, num(b)?);
            let count: usize = count
                .parse()
                .with_context(|| format!("lambda-sweep: bad count '{count}'"))?;
            if count < 2 || a > b {
                bail!("lambda-sweep: need start <= stop and count >= 2");
            }
            let step = (b - a) / (count - 1) as f64;
            Ok((0..count).map(|k| a + step * k as f64).collect())
        }
        _ => bail!("lambda-sweep: expected start:stop:log10 or start:stop:lin:count, got '{text}'"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sweep_covers_decades() {
        let v = parse_sweep("0.1:10:log10").unwrap();
        assert_eq!(v.len(), 7);
        assert!((v[0] - 0.1).abs() < 1e-12 && (v[6] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn lin_sweep() {
        assert_eq!(parse_sweep("1:3:lin:3").unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(parse_sweep("1:3:cubic").is_err());
        assert!(parse_sweep("0:3:log10").is_err());
    }

    #[test]
    fn grid_accepts_inf() {
        let v = parse_grid("dmax-grid", "0.01, inf").unwrap();
        assert_eq!(v, vec![0.01, f64::INFINITY]);
        assert!(parse_grid("dmax-grid", "x").is_err());
    }

    #[test]
    fn unknown_config_field_is_named() {
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"sed": 3}"#).unwrap_err();
        assert!(err.to_string().contains("sed"));
    }
}
