use super::{arg_best, CandidateView, Choice, MetricKind, ParentSelector, SelectionContext};

/// Candidate maximizing `R_{i,j} * R(j)`; ties go to the smallest id.
pub fn select_parent_r_metric(candidates: &[CandidateView]) -> usize {
    candidates[arg_best(candidates, CandidateView::path_reliability, true)].node
}

/// Maximum end-to-end reliability.
#[derive(Debug, Clone, Copy, Default)]
pub struct RMetric;

impl ParentSelector for RMetric {
    fn kind(&self) -> MetricKind {
        MetricKind::RMetric
    }

    fn select(&self, ctx: &SelectionContext) -> Choice {
        Choice::plain(select_parent_r_metric(&ctx.candidates))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cand(node: usize, link: f64, down: f64) -> CandidateView {
        let mut c = CandidateView::new(node, node);
        c.link_reliability = link;
        c.downstream_reliability = down;
        c
    }

    #[test]
    fn single_candidate() {
        assert_eq!(select_parent_r_metric(&[cand(4, 0.2, 0.3)]), 4);
    }

    #[test]
    fn higher_product_wins() {
        let cs = [cand(1, 0.9, 0.9), cand(2, 0.9, 1.0)];
        assert_eq!(select_parent_r_metric(&cs), 2);
        let halved = [cand(1, 0.45, 0.9), cand(2, 0.45, 1.0)];
        assert_eq!(select_parent_r_metric(&halved), 2);
    }

    #[test]
    fn ties_to_smallest_id() {
        let cs = [cand(3, 0.9, 0.9), cand(1, 0.9, 0.9), cand(2, 0.81, 1.0)];
        assert_eq!(select_parent_r_metric(&cs), 1);
    }

    proptest! {
        #[test]
        fn argmax_invariant_under_monotone_map(
            vals in prop::collection::vec((0.01f64..1.0, 0.01f64..1.0), 1..6),
            scale in 0.1f64..1.0,
        ) {
            let cs: Vec<_> = vals.iter().enumerate().map(|(k, &(a, b))| cand(k, a, b)).collect();
            let mapped: Vec<_> = cs
                .iter()
                .map(|c| cand(c.node, scale * c.path_reliability().sqrt(), 1.0))
                .collect();
            prop_assert_eq!(select_parent_r_metric(&cs), select_parent_r_metric(&mapped));
        }
    }
}
