use rplmac_core::mac::{MacParams, PowerProfile, Timing};
use rplmac_core::metrics::MetricKind;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArrivalProcess {
    /// Fixed inter-arrival `1/lambda` with uniform +-10% jitter and a random
    /// first phase.
    PeriodicJitter,
    Poisson,
}

/// External activity forced onto every CCA and transmission, independent of
/// the simulated nodes. Used to pin the busy-channel probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptedInterferer {
    pub busy_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Simulated time, seconds.
    pub duration: f64,
    /// Packets born before this time are excluded from delay/reliability
    /// statistics.
    pub warmup: f64,
    pub seed: u64,
    pub mac: MacParams,
    pub timing: Timing,
    pub profile: PowerProfile,
    pub metric: MetricKind,
    pub arrival: ArrivalProcess,
    /// Seconds between metric-driven parent re-evaluations.
    pub reselect_period: f64,
    pub alpha_smoothing: f64,
    /// CCAs folded into each busy-channel sample.
    pub alpha_window: usize,
    /// ACKs averaged by the windowed ETX estimator.
    pub etx_window: usize,
    pub queue_capacity: usize,
    pub interferer: Option<ScriptedInterferer>,
    /// Keep per-packet records and estimator samples in the trace.
    pub record_trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            duration: 300.0,
            warmup: 0.0,
            seed: 1,
            mac: MacParams::default(),
            timing: Timing::default(),
            profile: PowerProfile::default(),
            metric: MetricKind::RMetric,
            arrival: ArrivalProcess::PeriodicJitter,
            reselect_period: 10.0,
            alpha_smoothing: 0.9,
            alpha_window: 20,
            etx_window: 10,
            queue_capacity: 8,
            interferer: None,
            record_trace: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(SimError::Config(msg));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return invalid(format!("duration must be positive, got {}", self.duration));
        }
        if !(self.warmup >= 0.0 && self.warmup < self.duration) {
            return invalid(format!(
                "warmup must lie in [0, duration), got {}",
                self.warmup
            ));
        }
        if self.reselect_period.is_nan() || self.reselect_period <= 0.0 {
            return invalid(format!(
                "reselect_period must be positive, got {}",
                self.reselect_period
            ));
        }
        if !(self.alpha_smoothing > 0.0 && self.alpha_smoothing < 1.0) {
            return invalid(format!(
                "alpha_smoothing must lie in (0, 1), got {}",
                self.alpha_smoothing
            ));
        }
        if self.alpha_window == 0 || self.etx_window == 0 {
            return invalid("estimator windows must be at least 1".into());
        }
        if self.queue_capacity == 0 {
            return invalid("queue_capacity must be at least 1".into());
        }
        if let Some(s) = self.interferer {
            if !(0.0..=1.0).contains(&s.busy_probability) {
                return invalid(format!(
                    "interferer busy_probability must lie in [0, 1], got {}",
                    s.busy_probability
                ));
            }
        }
        self.mac.validate()?;
        self.timing.validate()?;
        self.profile.validate()?;
        self.metric.validate()?;
        Ok(())
    }

    pub(crate) fn slots(&self, seconds: f64) -> u64 {
        (seconds / self.timing.slot).ceil() as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_fields() {
        assert!(SimConfig::default().validate().is_ok());
        let bad = [
            SimConfig {
                duration: 0.0,
                ..SimConfig::default()
            },
            SimConfig {
                reselect_period: 0.0,
                ..SimConfig::default()
            },
            SimConfig {
                queue_capacity: 0,
                ..SimConfig::default()
            },
            SimConfig {
                alpha_smoothing: 1.0,
                ..SimConfig::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn json_defaults_fill_missing_fields() {
        let c: SimConfig =
            serde_json::from_str(r#"{"duration": 5, "arrival": "poisson"}"#).unwrap();
        assert_eq!(c.duration, 5.0);
        assert_eq!(c.arrival, ArrivalProcess::Poisson);
        assert_eq!(c.queue_capacity, 8);
    }
}
