use crate::topology::{Dodag, Topology};

/// Symmetric "hears each other" relation between nodes.
///
/// Two nodes interfere when they share a link, share a candidate parent, or
/// are listed as an explicit pair in the topology.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterferenceMap {
    sets: Vec<Vec<usize>>,
}

impl InterferenceMap {
    pub fn new(topo: &Topology, dodag: &Dodag) -> Self {
        let n = topo.len();
        let mut hears = vec![vec![false; n]; n];
        let mut mark = |a: usize, b: usize| {
            if a != b {
                hears[a][b] = true;
                hears[b][a] = true;
            }
        };
        for a in 0..n {
            for b in topo.neighbors(a) {
                mark(a, b);
            }
        }
        for a in 0..n {
            for b in (a + 1)..n {
                if dodag
                    .parents(a)
                    .iter()
                    .any(|p| dodag.parents(b).contains(p))
                {
                    mark(a, b);
                }
            }
        }
        for &(a, b) in topo.interference_pairs() {
            mark(a, b);
        }
        let sets = hears
            .iter()
            .map(|row| (0..n).filter(|&k| row[k]).collect())
            .collect();
        InterferenceMap { sets }
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Nodes heard by `node`, excluding itself, ascending.
    pub fn heard_by(&self, node: usize) -> &[usize] {
        &self.sets[node]
    }

    pub fn hears(&self, a: usize, b: usize) -> bool {
        self.sets[a].binary_search(&b).is_ok()
    }
}
