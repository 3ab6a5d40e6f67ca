//! Online link-quality estimators run by every simulated node.

use std::collections::VecDeque;

use rplmac_core::mac::{link_reliability, update_alpha_estimate, MacParams, Timing};

/// ETX assumed for a neighbor before any ACK has been seen.
pub const ETX_INIT: f64 = 2.0;

/// Busy-channel estimate: CCA outcomes are counted over a window, and each
/// full window's busy fraction is folded into the running estimate by
/// exponential smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaEstimator {
    window: usize,
    r: f64,
    busy: usize,
    seen: usize,
    estimate: f64,
}

impl AlphaEstimator {
    pub fn new(window: usize, r: f64) -> Self {
        AlphaEstimator {
            window: window.max(1),
            r,
            busy: 0,
            seen: 0,
            estimate: 0.0,
        }
    }

    pub fn observe(&mut self, busy: bool) {
        self.seen += 1;
        self.busy += busy as usize;
        if self.seen == self.window {
            let sample = self.busy as f64 / self.window as f64;
            self.estimate = update_alpha_estimate(self.estimate, sample, self.r)
                .expect("estimator inputs stay in range");
            self.seen = 0;
            self.busy = 0;
        }
    }

    pub fn estimate(&self) -> f64 {
        self.estimate
    }

    /// Link reliability implied by the current estimate.
    pub fn reliability(&self, p_bad: f64, params: &MacParams, timing: &Timing) -> f64 {
        link_reliability(self.estimate, p_bad, params, timing).unwrap_or(0.0)
    }
}

/// Windowed ETX: transmissions spent per ACK over the last `window` ACKs.
/// Attempts of packets dropped without an ACK are charged to the next ACK.
#[derive(Debug, Clone, PartialEq)]
pub struct EtxEstimator {
    window: usize,
    samples: VecDeque<u32>,
    pending: u32,
}

impl EtxEstimator {
    /// Starts with a full window at [`ETX_INIT`].
    pub fn new(window: usize) -> Self {
        let window = window.max(1);
        let init = ETX_INIT.round() as u32;
        EtxEstimator {
            window,
            samples: std::iter::repeat_n(init, window).collect(),
            pending: 0,
        }
    }

    pub fn on_ack(&mut self, attempts: u32) {
        if self.samples.len() == self.window {
            self.samples.pop_front();
        }
        self.samples.push_back(self.pending + attempts);
        self.pending = 0;
    }

    pub fn on_failure(&mut self, attempts: u32) {
        self.pending += attempts;
    }

    pub fn etx(&self) -> f64 {
        let total: u32 = self.samples.iter().sum();
        total as f64 / self.samples.len() as f64
    }

    /// Delivery probability within `n + 1` attempts when each attempt
    /// succeeds with probability `1 / ETX`.
    pub fn reliability(&self, params: &MacParams) -> f64 {
        let fail = 1.0 - 1.0 / self.etx().max(1.0);
        1.0 - fail.powi(params.n as i32 + 1)
    }
}
