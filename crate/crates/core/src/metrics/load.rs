use super::reliability::select_parent_r_metric;
use super::{arg_best, CandidateView, Choice, MetricKind, ParentSelector, SelectionContext};

/// No candidate satisfies the reliability floor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Infeasible;

/// Power cost of routing through a candidate: transmit its whole load and
/// receive everything it forwards.
pub fn q_metric_cost(c: &CandidateView) -> f64 {
    c.p_tx * c.load_pps + c.p_rx * (c.load_pps - c.lambda_pps)
}

/// Least-loaded candidate among those with `R_{i,j} * R(j) >= r_min`.
pub fn select_parent_q_metric(
    candidates: &[CandidateView],
    r_min: f64,
) -> Result<usize, Infeasible> {
    let feasible: Vec<CandidateView> = candidates
        .iter()
        .filter(|c| c.path_reliability() >= r_min)
        .copied()
        .collect();
    if feasible.is_empty() {
        return Err(Infeasible);
    }
    Ok(feasible[arg_best(&feasible, q_metric_cost, false)].node)
}

/// Load balancing under a reliability floor. Falls back to the R-metric
/// choice, flagged, when the floor cannot be met.
#[derive(Debug, Clone, Copy)]
pub struct QMetric {
    pub r_min: f64,
}

impl ParentSelector for QMetric {
    fn kind(&self) -> MetricKind {
        MetricKind::QMetric { r_min: self.r_min }
    }

    fn select(&self, ctx: &SelectionContext) -> Choice {
        match select_parent_q_metric(&ctx.candidates, self.r_min) {
            Ok(parent) => Choice::plain(parent),
            Err(Infeasible) => Choice {
                parent: select_parent_r_metric(&ctx.candidates),
                fallback: true,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cand(node: usize, load: f64, rel: f64) -> CandidateView {
        let mut c = CandidateView::new(node, node);
        c.load_pps = load;
        c.lambda_pps = 0.5;
        c.p_tx = 57e-3;
        c.p_rx = 63e-3;
        c.link_reliability = rel;
        c
    }

    #[test]
    fn lower_load_wins() {
        let cs = [cand(1, 2.0, 0.99), cand(2, 1.0, 0.99)];
        assert_eq!(select_parent_q_metric(&cs, 0.9), Ok(2));
    }

    #[test]
    fn constraint_dominates() {
        let cs = [cand(1, 2.0, 0.99), cand(2, 1.0, 0.5)];
        assert_eq!(select_parent_q_metric(&cs, 0.9), Ok(1));
    }

    #[test]
    fn all_infeasible() {
        let cs = [cand(1, 2.0, 0.5), cand(2, 1.0, 0.6)];
        assert_eq!(select_parent_q_metric(&cs, 0.9), Err(Infeasible));
        let ctx = SelectionContext {
            node: 5,
            queue_len: 0.0,
            candidates: cs.to_vec(),
        };
        let choice = QMetric { r_min: 0.9 }.select(&ctx);
        assert_eq!(
            choice,
            Choice {
                parent: 2,
                fallback: true
            }
        );
    }

    proptest! {
        #[test]
        fn never_violates_floor(
            vals in prop::collection::vec((0.5f64..50.0, 0.0f64..1.0), 1..6),
            r_min in 0.05f64..1.0,
        ) {
            let cs: Vec<_> = vals.iter().enumerate().map(|(k, &(q, r))| cand(k, q, r)).collect();
            if let Ok(p) = select_parent_q_metric(&cs, r_min) {
                prop_assert!(cs[p].path_reliability() >= r_min);
            }
        }

        #[test]
        fn raising_load_never_attracts(
            vals in prop::collection::vec((0.5f64..50.0, 0.5f64..1.0), 2..6),
            bump in 0.0f64..20.0,
            target in 0usize..6,
        ) {
            let mut cs: Vec<_> = vals.iter().enumerate().map(|(k, &(q, r))| cand(k, q, r)).collect();
            let target = target % cs.len();
            let before = select_parent_q_metric(&cs, 0.5);
            cs[target].load_pps += bump;
            let after = select_parent_q_metric(&cs, 0.5);
            if after == Ok(target) {
                prop_assert_eq!(before, Ok(target));
            }
        }
    }
}
