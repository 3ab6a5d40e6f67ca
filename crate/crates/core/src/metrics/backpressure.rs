use super::{arg_best, CandidateView, Choice, MetricKind, ParentSelector, SelectionContext};

/// Candidate maximizing `(queue_i - queue_j) - weight * ETX_{i,j}`.
pub fn select_parent_backpressure(
    own_queue: f64,
    candidates: &[CandidateView],
    weight: f64,
) -> usize {
    let score = |c: &CandidateView| (own_queue - c.queue_len) - weight * c.link_etx;
    candidates[arg_best(candidates, score, true)].node
}

/// Queue-differential baseline, decided per packet.
#[derive(Debug, Clone, Copy)]
pub struct BackPressure {
    pub weight: f64,
}

impl ParentSelector for BackPressure {
    fn kind(&self) -> MetricKind {
        MetricKind::Backpressure {
            weight: self.weight,
        }
    }

    fn select(&self, ctx: &SelectionContext) -> Choice {
        Choice::plain(select_parent_backpressure(
            ctx.queue_len,
            &ctx.candidates,
            self.weight,
        ))
    }

    fn per_packet(&self) -> bool {
        true
    }
}
