//! Network graph, DODAG ranks and candidate parent sets.
//!
//! Links are radio links: a declared `src -> dst` link can carry traffic in
//! either direction and has a single bad-channel probability. Ranks are hop
//! counts to the root and the candidate parents of a node are its neighbors
//! of strictly smaller rank.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet, VecDeque};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    pub lambda_pps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub src: String,
    pub dst: String,
    pub p_bad: f64,
}

/// On-disk topology document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyDoc {
    pub root: String,
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
    /// Extra node pairs that hear each other without sharing a link.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub interference: Vec<[String; 2]>,
}

/// Validated network. Nodes are addressed by their index in `nodes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    nodes: Vec<NodeSpec>,
    links: Vec<(usize, usize, f64)>,
    root: usize,
    interference: Vec<(usize, usize)>,
    index: HashMap<String, usize>,
    neighbors: Vec<Vec<(usize, f64)>>,
    tie_order: Vec<usize>,
}

/// Compares ids so that `V2 < V10`.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    fn split(s: &str) -> (&str, Option<u64>) {
        let cut = s.trim_end_matches(|c: char| c.is_ascii_digit()).len();
        let (head, digits) = s.split_at(cut);
        (head, digits.parse().ok())
    }
    let (ha, na) = split(a);
    let (hb, nb) = split(b);
    ha.cmp(hb).then(na.cmp(&nb)).then(a.cmp(b))
}

impl Topology {
    pub fn from_doc(doc: TopologyDoc) -> Result<Self> {
        let mut nodes = doc.nodes;
        if !nodes.iter().any(|n| n.id == doc.root) {
            nodes.insert(
                0,
                NodeSpec {
                    id: doc.root.clone(),
                    lambda_pps: 0.0,
                    position: None,
                },
            );
        }
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            if index.insert(node.id.clone(), i).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate node id '{}'",
                    node.id
                )));
            }
            if !(node.lambda_pps >= 0.0 && node.lambda_pps.is_finite()) {
                return Err(Error::Validation(format!(
                    "lambda_pps of '{}' must be a non-negative number",
                    node.id
                )));
            }
        }
        let root = index[&doc.root];
        if nodes[root].lambda_pps != 0.0 {
            return Err(Error::Validation(format!(
                "root '{}' must have lambda_pps = 0",
                doc.root
            )));
        }
        let lookup = |id: &str, field: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| Error::Validation(format!("{field} refers to unknown node '{id}'")))
        };

        let mut neighbors = vec![Vec::new(); nodes.len()];
        let mut seen = HashSet::new();
        let mut links = Vec::with_capacity(doc.links.len());
        for link in &doc.links {
            let s = lookup(&link.src, "links.src")?;
            let d = lookup(&link.dst, "links.dst")?;
            if s == d {
                return Err(Error::Validation(format!("self-link on '{}'", link.src)));
            }
            if !(0.0..=1.0).contains(&link.p_bad) {
                return Err(Error::Validation(format!(
                    "p_bad of link {} -> {} is {} (must be in [0, 1])",
                    link.src, link.dst, link.p_bad
                )));
            }
            if !seen.insert((s.min(d), s.max(d))) {
                return Err(Error::Validation(format!(
                    "duplicate link between '{}' and '{}'",
                    link.src, link.dst
                )));
            }
            neighbors[s].push((d, link.p_bad));
            neighbors[d].push((s, link.p_bad));
            links.push((s, d, link.p_bad));
        }

        let mut interference = Vec::with_capacity(doc.interference.len());
        for [a, b] in &doc.interference {
            let a = lookup(a, "interference")?;
            let b = lookup(b, "interference")?;
            if a != b {
                interference.push((a, b));
            }
        }

        let mut tie_order: Vec<usize> = (0..nodes.len()).collect();
        tie_order.sort_by(|&a, &b| natural_cmp(&nodes[a].id, &nodes[b].id));
        let mut rank_of = vec![0; nodes.len()];
        for (pos, &i) in tie_order.iter().enumerate() {
            rank_of[i] = pos;
        }

        let topo = Topology {
            nodes,
            links,
            root,
            interference,
            index,
            neighbors,
            tie_order: rank_of,
        };
        if let Some(orphan) = topo.hop_counts().iter().position(Option::is_none) {
            return Err(Error::Validation(format!(
                "node '{}' is not connected to the root",
                topo.nodes[orphan].id
            )));
        }
        Ok(topo)
    }

    pub fn to_doc(&self) -> TopologyDoc {
        TopologyDoc {
            root: self.nodes[self.root].id.clone(),
            nodes: self.nodes.clone(),
            links: self
                .links
                .iter()
                .map(|&(s, d, p_bad)| LinkSpec {
                    src: self.nodes[s].id.clone(),
                    dst: self.nodes[d].id.clone(),
                    p_bad,
                })
                .collect(),
            interference: self
                .interference
                .iter()
                .map(|&(a, b)| [self.nodes[a].id.clone(), self.nodes[b].id.clone()])
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn id(&self, node: usize) -> &str {
        &self.nodes[node].id
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn lambda(&self, node: usize) -> f64 {
        self.nodes[node].lambda_pps
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.lambda_pps).collect()
    }

    /// Overrides the generation rate of a non-root node.
    pub fn set_lambda(&mut self, node: usize, lambda_pps: f64) -> Result<()> {
        if node == self.root && lambda_pps != 0.0 {
            return Err(Error::Validation("root must have lambda_pps = 0".into()));
        }
        if !(lambda_pps >= 0.0 && lambda_pps.is_finite()) {
            return Err(Error::Validation(format!(
                "lambda_pps of '{}' must be a non-negative number",
                self.nodes[node].id
            )));
        }
        self.nodes[node].lambda_pps = lambda_pps;
        Ok(())
    }

    /// Sets the same rate on every non-root node.
    pub fn set_uniform_lambda(&mut self, lambda_pps: f64) -> Result<()> {
        for i in 0..self.nodes.len() {
            if i != self.root {
                self.set_lambda(i, lambda_pps)?;
            }
        }
        Ok(())
    }

    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.neighbors[node].iter().map(|&(j, _)| j)
    }

    pub fn p_bad(&self, a: usize, b: usize) -> Option<f64> {
        self.neighbors[a]
            .iter()
            .find(|&&(j, _)| j == b)
            .map(|&(_, p)| p)
    }

    pub fn is_adjacent(&self, a: usize, b: usize) -> bool {
        self.p_bad(a, b).is_some()
    }

    pub fn interference_pairs(&self) -> &[(usize, usize)] {
        &self.interference
    }

    /// Position of the node in natural id order; smaller wins ties.
    pub fn tie_key(&self, node: usize) -> usize {
        self.tie_order[node]
    }

    fn hop_counts(&self) -> Vec<Option<u32>> {
        let mut hops = vec![None; self.nodes.len()];
        hops[self.root] = Some(0);
        let mut queue = VecDeque::from([self.root]);
        while let Some(u) = queue.pop_front() {
            let h = hops[u].unwrap();
            for v in self.neighbors(u) {
                if hops[v].is_none() {
                    hops[v] = Some(h + 1);
                    queue.push_back(v);
                }
            }
        }
        hops
    }
}

pub fn load_topology(document: &str) -> Result<Topology> {
    let doc: TopologyDoc = serde_json::from_str(document)?;
    Topology::from_doc(doc)
}

pub fn load_topology_file(path: impl AsRef<Path>) -> Result<Topology> {
    load_topology(&std::fs::read_to_string(path)?)
}

pub fn save_topology(topo: &Topology) -> String {
    let mut s = serde_json::to_string_pretty(&topo.to_doc()).expect("topology serializes");
    s.push('\n');
    s
}

/// Ranks and candidate parent sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dodag {
    root: usize,
    rank: Vec<u32>,
    parents: Vec<Vec<usize>>,
}

impl Dodag {
    pub fn root(&self) -> usize {
        self.root
    }

    pub fn rank(&self, node: usize) -> u32 {
        self.rank[node]
    }

    pub fn ranks(&self) -> &[u32] {
        &self.rank
    }

    /// Candidate parents, in tie-break order.
    pub fn parents(&self, node: usize) -> &[usize] {
        &self.parents[node]
    }

    pub fn len(&self) -> usize {
        self.rank.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rank.is_empty()
    }

    /// Nodes sorted by (rank, tie key): every candidate parent precedes its
    /// children.
    pub fn top_down_order(&self, topo: &Topology) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&i| (self.rank[i], topo.tie_key(i)));
        order
    }
}

pub fn build_dodag(topo: &Topology) -> Result<Dodag> {
    let hops = topo.hop_counts();
    let mut rank = Vec::with_capacity(hops.len());
    for (i, h) in hops.iter().enumerate() {
        rank.push(h.ok_or_else(|| Error::Disconnected(topo.id(i).to_string()))?);
    }
    let mut parents = Vec::with_capacity(rank.len());
    for i in 0..topo.len() {
        let mut set: Vec<usize> = topo.neighbors(i).filter(|&j| rank[j] < rank[i]).collect();
        set.sort_by_key(|&j| topo.tie_key(j));
        if i != topo.root() && set.is_empty() {
            return Err(Error::Disconnected(topo.id(i).to_string()));
        }
        parents.push(set);
    }
    Ok(Dodag {
        root: topo.root(),
        rank,
        parents,
    })
}

/// Layered random topology: every node links to one or more nodes of the
/// previous layer, so the result is always connected.
pub fn generate_random_topology(n_nodes: usize, seed: u64, density: f64) -> Result<Topology> {
    if n_nodes < 2 {
        return Err(Error::InvalidParams(format!(
            "need at least 2 nodes, got {n_nodes}"
        )));
    }
    if !(density >= 1.0 && density.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "density must be >= 1, got {density}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let others = n_nodes - 1;
    let width = (others as f64).sqrt().ceil() as usize;
    let max_parents = ((2.0 * density - 1.0).round() as usize).max(1);

    let mut layers: Vec<Vec<usize>> = vec![vec![0]];
    let mut next = 1;
    while next < n_nodes {
        let lo = width.saturating_sub(1).max(1);
        let size = rng.gen_range(lo..=width + 1).min(n_nodes - next);
        layers.push((next..next + size).collect());
        next += size;
    }

    let id = |i: usize| format!("V{i}");
    let mut links = Vec::new();
    for pair in layers.windows(2) {
        let (upper, lower) = (&pair[0], &pair[1]);
        for &child in lower {
            let k = rng.gen_range(1..=max_parents.min(upper.len()));
            let mut chosen: Vec<usize> = upper.choose_multiple(&mut rng, k).copied().collect();
            chosen.sort_unstable();
            for parent in chosen {
                let p_bad = (rng.gen_range(0.02..0.25) * 1000.0f64).round() / 1000.0;
                links.push(LinkSpec {
                    src: id(child),
                    dst: id(parent),
                    p_bad,
                });
            }
        }
    }
    let nodes = (0..n_nodes)
        .map(|i| NodeSpec {
            id: id(i),
            lambda_pps: if i == 0 { 0.0 } else { 1.0 },
            position: None,
        })
        .collect();
    Topology::from_doc(TopologyDoc {
        root: id(0),
        nodes,
        links,
        interference: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain2() -> Topology {
        load_topology(
            r#"{"root":"V0","nodes":[{"id":"V1","lambda_pps":1.0}],
                "links":[{"src":"V1","dst":"V0","p_bad":0.1}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn root_is_inserted_when_missing() {
        let t = chain2();
        assert_eq!(t.len(), 2);
        assert_eq!(t.id(t.root()), "V0");
        assert_eq!(t.lambda(t.root()), 0.0);
    }

    #[test]
    fn chain_dodag() {
        let t = chain2();
        let d = build_dodag(&t).unwrap();
        let v1 = t.index_of("V1").unwrap();
        assert_eq!(d.rank(v1), 1);
        assert_eq!(d.parents(v1), &[t.root()]);
        assert_eq!(d.rank(t.root()), 0);
    }

    #[test]
    fn duplicate_id_rejected() {
        let err = load_topology(
            r#"{"root":"V0","nodes":[{"id":"V1","lambda_pps":1.0},{"id":"V1","lambda_pps":2.0}],
                "links":[{"src":"V1","dst":"V0","p_bad":0.1}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("duplicate node id")));
    }

    #[test]
    fn bad_probability_rejected() {
        let err = load_topology(
            r#"{"root":"V0","nodes":[{"id":"V1","lambda_pps":1.0}],
                "links":[{"src":"V1","dst":"V0","p_bad":1.2}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("p_bad")));
    }

    #[test]
    fn disconnected_rejected() {
        let err = load_topology(
            r#"{"root":"V0","nodes":[{"id":"V1","lambda_pps":1.0},{"id":"V2","lambda_pps":1.0}],
                "links":[{"src":"V1","dst":"V0","p_bad":0.1}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("V2")));
    }

    #[test]
    fn root_traffic_rejected() {
        let err = load_topology(
            r#"{"root":"V0","nodes":[{"id":"V0","lambda_pps":1.0},{"id":"V1","lambda_pps":1.0}],
                "links":[{"src":"V1","dst":"V0","p_bad":0.1}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn unknown_link_endpoint_rejected() {
        assert!(load_topology(
            r#"{"root":"V0","nodes":[{"id":"V1","lambda_pps":1.0}],
                "links":[{"src":"V1","dst":"V9","p_bad":0.1}]}"#,
        )
        .is_err());
        assert!(matches!(
            load_topology("{not json").unwrap_err(),
            Error::Parse(_)
        ));
    }

    #[test]
    fn star_leaves_have_rank_one() {
        let mut doc = TopologyDoc {
            root: "V0".into(),
            nodes: vec![],
            links: vec![],
            interference: vec![],
        };
        for i in 1..=6 {
            doc.nodes.push(NodeSpec {
                id: format!("V{i}"),
                lambda_pps: 1.0,
                position: None,
            });
            doc.links.push(LinkSpec {
                src: format!("V{i}"),
                dst: "V0".into(),
                p_bad: 0.0,
            });
        }
        let t = Topology::from_doc(doc).unwrap();
        let d = build_dodag(&t).unwrap();
        for i in 0..t.len() {
            if i != t.root() {
                assert_eq!(d.rank(i), 1);
                assert_eq!(d.parents(i), &[t.root()]);
            }
        }
    }

    #[test]
    fn natural_order() {
        assert_eq!(natural_cmp("V2", "V10"), Ordering::Less);
        assert_eq!(natural_cmp("V10", "V9"), Ordering::Greater);
        assert_eq!(natural_cmp("A1", "B0"), Ordering::Less);
    }

    #[test]
    fn generated_two_nodes_is_single_link() {
        for seed in 0..5 {
            let t = generate_random_topology(2, seed, 2.0).unwrap();
            assert_eq!(t.len(), 2);
            assert_eq!(t.to_doc().links.len(), 1);
        }
        assert!(generate_random_topology(1, 0, 2.0).is_err());
        assert!(generate_random_topology(5, 0, 0.5).is_err());
    }

    #[test]
    fn generated_is_deterministic() {
        let a = save_topology(&generate_random_topology(18, 42, 2.0).unwrap());
        let b = save_topology(&generate_random_topology(18, 42, 2.0).unwrap());
        assert_eq!(a, b);
        let c = save_topology(&generate_random_topology(18, 43, 2.0).unwrap());
        assert_ne!(a, c);
    }
}
