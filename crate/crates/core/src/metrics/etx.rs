use super::{arg_best, CandidateView, Choice, MetricKind, ParentSelector, SelectionContext};
use crate::error::{Error, Result};

/// Expected number of transmissions over a link with the given per-attempt
/// delivery probability.
pub fn etx_link(delivery_probability: f64) -> Result<f64> {
    if delivery_probability > 0.0 && delivery_probability <= 1.0 {
        Ok(1.0 / delivery_probability)
    } else {
        Err(Error::Domain {
            name: "delivery_probability",
            value: delivery_probability,
            expected: "(0, 1]",
        })
    }
}

/// Minimum additive path ETX.
#[derive(Debug, Clone, Copy, Default)]
pub struct EtxMetric;

impl ParentSelector for EtxMetric {
    fn kind(&self) -> MetricKind {
        MetricKind::Etx
    }

    fn select(&self, ctx: &SelectionContext) -> Choice {
        let path_etx = |c: &CandidateView| c.link_etx + c.downstream_etx;
        Choice::plain(ctx.candidates[arg_best(&ctx.candidates, path_etx, false)].node)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn etx_values() {
        assert_eq!(etx_link(1.0).unwrap(), 1.0);
        assert_eq!(etx_link(0.5).unwrap(), 2.0);
        assert!((etx_link(1.0 / 2.1).unwrap() - 2.1).abs() < 1e-12);
        assert!(etx_link(0.0).is_err());
        assert!(etx_link(1.5).is_err());
    }

    #[test]
    fn picks_minimum_path_sum() {
        let mut a = CandidateView::new(2, 2);
        a.link_etx = 2.1;
        a.downstream_etx = 2.1;
        let mut b = CandidateView::new(3, 3);
        b.link_etx = 1.1;
        b.downstream_etx = 2.9;
        let ctx = SelectionContext {
            node: 7,
            queue_len: 0.0,
            candidates: vec![a, b],
        };
        assert_eq!(EtxMetric.select(&ctx).parent, 3);
    }
}
