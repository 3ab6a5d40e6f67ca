//! Closed-form per-link performance of the unslotted IEEE 802.15.4 CSMA/CA.
//!
//! A node with busy-channel probability `alpha` runs at most `n + 1`
//! transmission stages. Each stage allows up to `m + 1` clear channel
//! assessments; finding the channel busy on all of them drops the packet
//! (channel access failure). A transmission after an idle CCA is lost with
//! probability `gamma`, and `n + 1` consecutive losses drop the packet
//! (retry limit). CCA outcomes are treated as independent.

use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};

/// CSMA/CA knobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MacParams {
    /// Initial backoff exponent.
    pub m0: u8,
    /// Maximum backoff exponent.
    pub mb: u8,
    /// Maximum number of backoffs per transmission stage.
    pub m: u8,
    /// Maximum number of retransmissions.
    pub n: u8,
}

impl Default for MacParams {
    fn default() -> Self {
        MacParams {
            m0: 3,
            mb: 8,
            m: 4,
            n: 3,
        }
    }
}

impl MacParams {
    pub fn new(m0: u8, mb: u8, m: u8, n: u8) -> Result<Self> {
        let p = MacParams { m0, mb, m, n };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m0 > self.mb || self.mb > 8 {
            return Err(Error::InvalidParams(format!(
                "backoff exponents must satisfy 0 <= m0 <= mb <= 8 (m0={}, mb={})",
                self.m0, self.mb
            )));
        }
        if self.m > 7 {
            return Err(Error::InvalidParams(format!("m={} exceeds 7", self.m)));
        }
        if self.n > 7 {
            return Err(Error::InvalidParams(format!("n={} exceeds 7", self.n)));
        }
        Ok(())
    }

    /// Backoff exponent used at backoff stage `stage` (0-based).
    pub fn backoff_exponent(&self, stage: u8) -> u8 {
        (self.m0.saturating_add(stage)).min(self.mb)
    }

    /// Mean of the uniform backoff `[0, 2^BE - 1]` at the given stage, in slots.
    pub fn mean_backoff_slots(&self, stage: u8) -> f64 {
        let be = self.backoff_exponent(stage) as i32;
        (2f64.powi(be) - 1.0) / 2.0
    }
}

/// Timing constants. Durations other than `slot` are counted in unit backoff
/// periods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Unit backoff period in seconds.
    pub slot: f64,
    pub t_cca: u32,
    /// Packet airtime `T_s`.
    pub t_tx: u32,
    /// ACK wait plus ACK duration.
    pub t_ack: u32,
}

impl Default for Timing {
    /// 320 us slots and a 133-byte frame at 250 kb/s (14 slots).
    fn default() -> Self {
        Timing {
            slot: 320e-6,
            t_cca: 1,
            t_tx: 14,
            t_ack: 2,
        }
    }
}

impl Timing {
    pub fn validate(&self) -> Result<()> {
        if !(self.slot > 0.0 && self.slot.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "slot duration must be positive, got {}",
                self.slot
            )));
        }
        if self.t_cca == 0 || self.t_tx == 0 || self.t_ack == 0 {
            return Err(Error::InvalidParams(
                "t_cca, t_tx and t_ack must be at least one slot".into(),
            ));
        }
        Ok(())
    }

    /// Airtime of one frame in seconds.
    pub fn airtime(&self) -> f64 {
        self.t_tx as f64 * self.slot
    }
}

/// Radio power per state, in watts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerProfile {
    pub p_tx: f64,
    pub p_rx: f64,
    pub p_cca: f64,
    pub p_backoff: f64,
    pub p_idle: f64,
}

impl Default for PowerProfile {
    /// CC2420-class catalog values.
    fn default() -> Self {
        PowerProfile {
            p_tx: 57e-3,
            p_rx: 63e-3,
            p_cca: 63e-3,
            p_backoff: 1.5e-3,
            p_idle: 1.5e-3,
        }
    }
}

impl PowerProfile {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.p_tx,
            self.p_rx,
            self.p_cca,
            self.p_backoff,
            self.p_idle,
        ];
        if all.iter().all(|p| *p >= 0.0 && p.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidParams(
                "state powers must be non-negative".into(),
            ))
        }
    }
}

/// Per-link MAC state at a given operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    pub alpha: f64,
    pub p_bad: f64,
    pub p_coll: f64,
    pub gamma: f64,
    pub p_cf: f64,
    pub p_cr: f64,
    pub reliability: f64,
    /// Expected service delay of successfully delivered packets, seconds.
    pub delay: f64,
}

impl LinkState {
    pub fn evaluate(alpha: f64, p_bad: f64, params: &MacParams, timing: &Timing) -> Result<Self> {
        let p_coll = collision_probability(alpha, timing)?;
        let gamma = attempt_loss(p_coll, p_bad)?;
        let p_cf = access_failure_probability(alpha, gamma, params)?;
        let p_cr = retry_exhaustion_probability(alpha, gamma, params)?;
        let delay = expected_service_delay(alpha, gamma, params, timing)?;
        Ok(LinkState {
            alpha,
            p_bad,
            p_coll,
            gamma,
            p_cf,
            p_cr,
            reliability: (1.0 - p_cf - p_cr).clamp(0.0, 1.0),
            delay,
        })
    }
}

/// Probability that another node picks the same slot for its CCA: `alpha / T_s`,
/// clamped to 1.
pub fn collision_probability(alpha: f64, timing: &Timing) -> Result<f64> {
    check_probability("alpha", alpha)?;
    if timing.t_tx == 0 {
        return Err(Error::InvalidParams("t_tx must be >= 1".into()));
    }
    Ok((alpha / timing.t_tx as f64).min(1.0))
}

/// Loss probability of one transmission given an idle CCA.
pub fn attempt_loss(p_coll: f64, p_bad: f64) -> Result<f64> {
    check_probability("p_coll", p_coll)?;
    check_probability("p_bad", p_bad)?;
    Ok(p_coll + (1.0 - p_coll) * p_bad)
}

/// Probability of reaching one more transmission stage: an idle CCA within
/// the stage followed by a lost transmission.
fn stage_continue(alpha: f64, gamma: f64, params: &MacParams) -> f64 {
    gamma * (1.0 - alpha.powi(params.m as i32 + 1))
}

fn geometric_sum(ratio: f64, terms: u32) -> f64 {
    // 0^0 = 1 through powi
    (0..terms).map(|k| ratio.powi(k as i32)).sum()
}

/// Drop probability due to `m + 1` busy CCAs in any of the `n + 1` stages.
pub fn access_failure_probability(alpha: f64, gamma: f64, params: &MacParams) -> Result<f64> {
    check_probability("alpha", alpha)?;
    check_probability("gamma", gamma)?;
    let all_busy = alpha.powi(params.m as i32 + 1);
    let q = stage_continue(alpha, gamma, params);
    Ok(all_busy * geometric_sum(q, params.n as u32 + 1))
}

/// Drop probability due to `n + 1` lost transmissions.
pub fn retry_exhaustion_probability(alpha: f64, gamma: f64, params: &MacParams) -> Result<f64> {
    check_probability("alpha", alpha)?;
    check_probability("gamma", gamma)?;
    Ok(stage_continue(alpha, gamma, params).powi(params.n as i32 + 1))
}

/// `1 - p_cf - p_cr` for the link.
pub fn link_reliability(
    alpha: f64,
    p_bad: f64,
    params: &MacParams,
    timing: &Timing,
) -> Result<f64> {
    let p_coll = collision_probability(alpha, timing)?;
    let gamma = attempt_loss(p_coll, p_bad)?;
    let p_cf = access_failure_probability(alpha, gamma, params)?;
    let p_cr = retry_exhaustion_probability(alpha, gamma, params)?;
    Ok((1.0 - p_cf - p_cr).clamp(0.0, 1.0))
}

/// Mean slots spent in backoff and CCA before an idle CCA, conditioned on the
/// stage obtaining the channel.
fn conditional_access_slots(alpha: f64, params: &MacParams, timing: &Timing) -> f64 {
    let stages = params.m as i32 + 1;
    let cost = |j: u8| params.mean_backoff_slots(j) + timing.t_cca as f64;
    if alpha >= 1.0 {
        // limit of (a^j - a^(m+1)) / (1 - a^(m+1)) as a -> 1
        return (0..=params.m)
            .map(|j| cost(j) * (stages - j as i32) as f64 / stages as f64)
            .sum();
    }
    let tail = alpha.powi(stages);
    (0..=params.m)
        .map(|j| cost(j) * (alpha.powi(j as i32) - tail))
        .sum::<f64>()
        / (1.0 - tail)
}

/// Expected head-of-queue to ACK time of a successfully delivered packet, in
/// seconds.
///
/// A stage that ends in a transmission costs the conditional access time plus
/// `t_tx + t_ack`; a packet delivered at stage `k` spent `k + 1` such stages,
/// and stage `k` is reached with probability proportional to
/// `(gamma (1 - alpha^(m+1)))^k`.
pub fn expected_service_delay(
    alpha: f64,
    gamma: f64,
    params: &MacParams,
    timing: &Timing,
) -> Result<f64> {
    check_probability("alpha", alpha)?;
    check_probability("gamma", gamma)?;
    let per_attempt =
        conditional_access_slots(alpha, params, timing) + timing.t_tx as f64 + timing.t_ack as f64;
    let q = stage_continue(alpha, gamma, params);
    let stages = params.n as i32 + 1;
    let (weighted, total) = (0..stages).fold((0.0, 0.0), |(w, t), k| {
        let p = q.powi(k);
        (w + (k + 1) as f64 * p, t + p)
    });
    Ok(weighted / total * per_attempt * timing.slot)
}

/// Expected per-packet radio activity at the transmitter, over all outcomes
/// (delivered and dropped).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TxOccupancy {
    pub backoff_slots: f64,
    pub cca_count: f64,
    pub transmissions: f64,
}

impl TxOccupancy {
    pub fn new(alpha: f64, gamma: f64, params: &MacParams) -> Result<Self> {
        check_probability("alpha", alpha)?;
        check_probability("gamma", gamma)?;
        let q = stage_continue(alpha, gamma, params);
        let stages_reached = geometric_sum(q, params.n as u32 + 1);
        let backoff_per_stage: f64 = (0..=params.m)
            .map(|j| alpha.powi(j as i32) * params.mean_backoff_slots(j))
            .sum();
        let cca_per_stage = geometric_sum(alpha, params.m as u32 + 1);
        let tx_per_stage = 1.0 - alpha.powi(params.m as i32 + 1);
        Ok(TxOccupancy {
            backoff_slots: stages_reached * backoff_per_stage,
            cca_count: stages_reached * cca_per_stage,
            transmissions: stages_reached * tx_per_stage,
        })
    }

    /// Mean service time per packet (delivered or not), in slots.
    pub fn service_slots(&self, timing: &Timing) -> f64 {
        self.backoff_slots
            + self.cca_count * timing.t_cca as f64
            + self.transmissions * (timing.t_tx + timing.t_ack) as f64
    }
}

/// Average node power from state occupancy.
///
/// `tx_rate` is the rate of packets entering the MAC queue; `rx_rate` is the
/// rate of frames addressed to this node, each costing `t_tx + t_ack` of
/// reception.
#[allow(clippy::too_many_arguments)]
pub fn node_power(
    tx_rate: f64,
    rx_rate: f64,
    alpha: f64,
    gamma: f64,
    params: &MacParams,
    timing: &Timing,
    profile: &PowerProfile,
) -> Result<f64> {
    if !(tx_rate >= 0.0 && rx_rate >= 0.0) {
        return Err(Error::Domain {
            name: "rate",
            value: tx_rate.min(rx_rate),
            expected: ">= 0",
        });
    }
    let occ = TxOccupancy::new(alpha, gamma, params)?;
    let slot = timing.slot;
    let backoff = tx_rate * occ.backoff_slots * slot;
    let cca = tx_rate * occ.cca_count * timing.t_cca as f64 * slot;
    let tx = tx_rate * occ.transmissions * timing.t_tx as f64 * slot;
    let ack_wait = tx_rate * occ.transmissions * timing.t_ack as f64 * slot;
    let rx = rx_rate * (timing.t_tx + timing.t_ack) as f64 * slot;
    let busy = backoff + cca + tx + ack_wait + rx;
    if busy > 1.0 {
        return Err(Error::Saturated {
            busy_fraction: busy,
        });
    }
    Ok(backoff * profile.p_backoff
        + cca * profile.p_cca
        + tx * profile.p_tx
        + (ack_wait + rx) * profile.p_rx
        + (1.0 - busy) * profile.p_idle)
}

/// Mean M/D/1 waiting time for a queue served at `mean_service` seconds per
/// packet. Infinite when the utilisation reaches 1.
pub fn queueing_delay(arrival_rate: f64, mean_service: f64) -> f64 {
    let rho = arrival_rate * mean_service;
    if rho >= 1.0 {
        f64::INFINITY
    } else {
        rho * mean_service / (2.0 * (1.0 - rho))
    }
}

/// One step of exponential smoothing of the busy-channel estimate.
pub fn update_alpha_estimate(prev: f64, sample: f64, r: f64) -> Result<f64> {
    check_probability("prev", prev)?;
    check_probability("sample", sample)?;
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::Domain {
            name: "r",
            value: r,
            expected: "(0, 1)",
        });
    }
    Ok(r * prev + (1.0 - r) * sample)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(m0: u8, mb: u8, m: u8, n: u8) -> MacParams {
        MacParams::new(m0, mb, m, n).unwrap()
    }

    #[test]
    fn collision_probability_examples() {
        let t = Timing::default();
        assert_eq!(collision_probability(0.0, &t).unwrap(), 0.0);
        assert!((collision_probability(0.28, &t).unwrap() - 0.02).abs() < 1e-15);
        let one = Timing { t_tx: 1, ..t };
        assert_eq!(collision_probability(1.0, &one).unwrap(), 1.0);
        assert!(collision_probability(1.2, &t).is_err());
        assert!(collision_probability(-0.1, &t).is_err());
    }

    #[test]
    fn attempt_loss_examples() {
        assert!((attempt_loss(0.0, 0.1).unwrap() - 0.1).abs() < 1e-15);
        assert!((attempt_loss(0.2, 0.0).unwrap() - 0.2).abs() < 1e-15);
        assert!((attempt_loss(0.2, 0.1).unwrap() - 0.28).abs() < 1e-15);
        assert!(attempt_loss(0.2, 1.1).is_err());
    }

    #[test]
    fn access_failure_examples() {
        assert_eq!(
            access_failure_probability(0.0, 0.5, &params(3, 5, 4, 3)).unwrap(),
            0.0
        );
        assert!(
            (access_failure_probability(0.5, 0.0, &params(3, 5, 0, 3)).unwrap() - 0.5).abs()
                < 1e-15
        );
        // Monte-Carlo estimate (10^6 packets): 0.033487, sigma ~1.8e-4
        let p = access_failure_probability(0.3, 0.2, &params(3, 5, 2, 2)).unwrap();
        assert!((p - 0.033487).abs() < 3.0 * 1.8e-4, "{p}");
    }

    #[test]
    fn retry_exhaustion_examples() {
        assert_eq!(
            retry_exhaustion_probability(0.2, 0.0, &params(3, 5, 4, 3)).unwrap(),
            0.0
        );
        assert!(
            (retry_exhaustion_probability(0.0, 0.5, &params(3, 5, 4, 1)).unwrap() - 0.25).abs()
                < 1e-15
        );
        // Monte-Carlo estimate (10^6 packets): 0.00731, sigma ~8.5e-5
        let p = retry_exhaustion_probability(0.3, 0.2, &params(3, 5, 2, 2)).unwrap();
        assert!((p - 0.00731).abs() < 3.0 * 8.5e-5, "{p}");
    }

    #[test]
    fn link_reliability_examples() {
        let t = Timing::default();
        assert_eq!(
            link_reliability(0.0, 0.0, &params(3, 5, 4, 3), &t).unwrap(),
            1.0
        );
        assert_eq!(
            link_reliability(1.0, 0.0, &params(3, 3, 0, 0), &t).unwrap(),
            0.0
        );
        // Monte-Carlo estimate (10^6 packets): 0.997216, sigma ~5.3e-5
        let r = link_reliability(0.3, 0.1, &params(3, 5, 4, 4), &t).unwrap();
        assert!((r - 0.997216).abs() < 3.0 * 5.3e-5, "{r}");
    }

    #[test]
    fn zero_gamma_and_zero_alpha_limits() {
        let p = params(3, 5, 3, 2);
        for &a in &[0.1, 0.4, 0.9] {
            assert_eq!(retry_exhaustion_probability(a, 0.0, &p).unwrap(), 0.0);
            let cf = access_failure_probability(a, 0.0, &p).unwrap();
            assert_eq!(cf, a.powi(4));
        }
        for &g in &[0.1, 0.4, 0.9] {
            assert_eq!(access_failure_probability(0.0, g, &p).unwrap(), 0.0);
            assert_eq!(retry_exhaustion_probability(0.0, g, &p).unwrap(), g.powi(3));
        }
    }

    #[test]
    fn reliability_monotone_over_grid() {
        let t = Timing::default();
        let grid: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        for m in 0..=4u8 {
            for n in 0..=4u8 {
                let p = params(3, 5, m, n);
                for w in grid.windows(2) {
                    for &x in &grid {
                        let ra = link_reliability(w[0], x, &p, &t).unwrap();
                        let rb = link_reliability(w[1], x, &p, &t).unwrap();
                        assert!(rb <= ra + 1e-12, "alpha monotonicity m={m} n={n}");
                        let pa = link_reliability(x, w[0], &p, &t).unwrap();
                        let pb = link_reliability(x, w[1], &p, &t).unwrap();
                        assert!(pb <= pa + 1e-12, "p_bad monotonicity m={m} n={n}");
                    }
                }
                for &a in &grid {
                    for &b in &grid {
                        let r = link_reliability(a, b, &p, &t).unwrap();
                        if m < 4 {
                            let up = link_reliability(a, b, &params(3, 5, m + 1, n), &t).unwrap();
                            assert!(up >= r - 1e-12, "m monotonicity");
                        }
                        if n < 4 {
                            let up = link_reliability(a, b, &params(3, 5, m, n + 1), &t).unwrap();
                            assert!(up >= r - 1e-12, "n monotonicity");
                        }
                    }
                }
            }
        }
    }

    fn delay_timing() -> Timing {
        Timing {
            slot: 0.32e-3,
            t_cca: 1,
            t_tx: 14,
            t_ack: 2,
        }
    }

    #[test]
    fn single_attempt_delay() {
        let d = expected_service_delay(0.0, 0.0, &params(3, 3, 0, 0), &delay_timing()).unwrap();
        assert!((d - 6.56e-3).abs() < 1e-15, "{d}");
    }

    #[test]
    fn two_success_paths_delay() {
        // delivered after one attempt w.p. 0.5 (20.5 slots) or two w.p. 0.25 (41 slots)
        let expected = (0.5 * 20.5 + 0.25 * 41.0) / 0.75 * 0.32e-3;
        let d = expected_service_delay(0.0, 0.5, &params(3, 3, 0, 1), &delay_timing()).unwrap();
        assert!((d - expected).abs() < 1e-15);
        assert!((d - 8.746_666_666_666_667e-3).abs() < 1e-12);
    }

    #[test]
    fn delay_grows_with_alpha() {
        let p = params(3, 5, 4, 3);
        let t = delay_timing();
        let lo = expected_service_delay(0.1, 0.1, &p, &t).unwrap();
        let hi = expected_service_delay(0.4, 0.1, &p, &t).unwrap();
        assert!(hi > lo);
        assert!(expected_service_delay(1.0, 0.1, &p, &t)
            .unwrap()
            .is_finite());
    }

    #[test]
    fn idle_node_power() {
        let prof = PowerProfile::default();
        let p = node_power(
            0.0,
            0.0,
            0.0,
            0.0,
            &MacParams::default(),
            &Timing::default(),
            &prof,
        )
        .unwrap();
        assert!((p - prof.p_idle).abs() < 1e-18);
    }

    #[test]
    fn power_increases_with_rate() {
        let prof = PowerProfile::default();
        let mp = MacParams::default();
        let t = Timing::default();
        let mut last = 0.0;
        for rate in [1.0, 2.0, 4.0, 8.0, 16.0] {
            let p = node_power(rate, 0.0, 0.2, 0.1, &mp, &t, &prof).unwrap();
            assert!(p > last);
            last = p;
        }
    }

    #[test]
    fn saturation_is_reported() {
        let err = node_power(
            500.0,
            0.0,
            0.3,
            0.1,
            &MacParams::default(),
            &Timing::default(),
            &PowerProfile::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Saturated { .. }));
    }

    #[test]
    fn alpha_smoothing() {
        assert_eq!(update_alpha_estimate(0.5, 0.5, 0.3).unwrap(), 0.5);
        assert!((update_alpha_estimate(0.0, 1.0, 0.9).unwrap() - 0.1).abs() < 1e-15);
        let mut a = 0.9;
        let mut gap = (a - 0.2f64).abs();
        for _ in 0..200 {
            a = update_alpha_estimate(a, 0.2, 0.9).unwrap();
            let g = (a - 0.2f64).abs();
            assert!(g <= gap * 0.9 + 1e-15);
            gap = g;
        }
        assert!(gap < 1e-8);
        assert!(update_alpha_estimate(0.5, 0.5, 1.0).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(MacParams::new(5, 4, 0, 0).is_err());
        assert!(MacParams::new(3, 9, 0, 0).is_err());
        assert!(MacParams::new(3, 8, 8, 0).is_err());
        assert!(MacParams::new(3, 8, 4, 8).is_err());
        assert!(MacParams::new(0, 0, 0, 0).is_ok());
    }
}
