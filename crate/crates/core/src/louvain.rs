//! Deterministic Louvain community detection and Newman modularity.
//!
//! The implementation follows the usual two-phase loop: local moving of
//! single nodes until no pass improves modularity by more than
//! [`TOLERANCE`], then aggregation of each community into a super-node. The
//! partition of the last level is returned. Node visiting order at each level
//! is a permutation drawn from a ChaCha stream seeded by the caller, so a
//! `(graph, seed)` pair always yields the same partition.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graphio::{Graph, NodeId};

/// Minimum modularity gain for another pass or level.
pub const TOLERANCE: f64 = 1e-7;

/// Non-overlapping partition of a graph's nodes, labels contiguous from 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommunityAssignment {
    ids: Vec<NodeId>,
    labels: Vec<usize>,
}

impl CommunityAssignment {
    /// `labels[i]` is the community of `graph.node_id(i)`. Labels are
    /// renumbered to `0..k` in order of first appearance.
    pub fn new(graph: &Graph, labels: &[usize]) -> Result<Self> {
        if labels.len() != graph.node_count() {
            return Err(Error::Dimension {
                expected: graph.node_count(),
                actual: labels.len(),
            });
        }
        Ok(CommunityAssignment {
            ids: graph.node_ids().to_vec(),
            labels: renumber(labels),
        })
    }

    pub fn community_of(&self, id: NodeId) -> Option<usize> {
        self.ids.binary_search(&id).ok().map(|i| self.labels[i])
    }

    /// Labels in the graph's dense node order.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn node_ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn community_count(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m + 1)
    }

    /// Members of each community, ordered by label.
    pub fn communities(&self) -> Vec<Vec<NodeId>> {
        let mut out = vec![Vec::new(); self.community_count()];
        for (&id, &c) in self.ids.iter().zip(&self.labels) {
            out[c].push(id);
        }
        out
    }
}

fn renumber(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

/// Newman modularity `Σ_c [m_c/m − (d_c/2m)²]`.
pub fn modularity(graph: &Graph, assignment: &CommunityAssignment) -> Result<f64> {
    if graph.edge_count() == 0 {
        return Err(Error::Graph("modularity is undefined for an edgeless graph".into()));
    }
    if assignment.ids.as_slice() != graph.node_ids() {
        return Err(Error::Graph("assignment does not cover the graph's nodes".into()));
    }
    let level = WeightedGraph::from_edges(graph.node_count(), graph.dense_edges());
    Ok(level.modularity(&assignment.labels))
}

/// 1 iff every victim shares one community. Victims missing from the
/// assignment make the answer 0.
pub fn same_community(assignment: &CommunityAssignment, victims: &[NodeId]) -> Result<bool> {
    if victims.len() < 2 {
        return Err(Error::Config(format!(
            "a victim set needs at least 2 nodes, got {}",
            victims.len()
        )));
    }
    let mut shared = None;
    for &v in victims {
        match (assignment.community_of(v), shared) {
            (None, _) => return Ok(false),
            (Some(c), None) => shared = Some(c),
            (Some(c), Some(s)) if c != s => return Ok(false),
            _ => {}
        }
    }
    Ok(true)
}

/// Runs Louvain and returns the final-level partition.
pub fn louvain_detect(graph: &Graph, seed: u64) -> CommunityAssignment {
    let labels = louvain_dense(graph.node_count(), graph.dense_edges(), seed);
    CommunityAssignment {
        ids: graph.node_ids().to_vec(),
        labels,
    }
}

/// Louvain on dense node indices `0..node_count`; `edges` must be simple
/// (no self-loops, no duplicates) but need not be sorted.
pub fn louvain_dense(node_count: usize, edges: &[(usize, usize)], seed: u64) -> Vec<usize> {
    run(node_count, edges, seed, None)
}

/// Per-level modularity record, used to check the algorithm's invariants.
#[derive(Clone, Debug, Default)]
pub struct LevelRecord {
    /// Modularity of the level's starting (singleton) partition.
    pub start: f64,
    /// Modularity after each local-moving pass.
    pub passes: Vec<f64>,
    /// Modularity of the aggregated graph under its singleton partition.
    pub aggregated: Option<f64>,
    /// Modularity of the flattened partition on the input graph.
    pub flattened: f64,
}

/// Like [`louvain_detect`] but also returns per-level modularity records.
pub fn louvain_trace(graph: &Graph, seed: u64) -> (CommunityAssignment, Vec<LevelRecord>) {
    let mut trace = Vec::new();
    let labels = run(graph.node_count(), graph.dense_edges(), seed, Some(&mut trace));
    (
        CommunityAssignment {
            ids: graph.node_ids().to_vec(),
            labels,
        },
        trace,
    )
}

fn run(node_count: usize, edges: &[(usize, usize)], seed: u64, mut trace: Option<&mut Vec<LevelRecord>>) -> Vec<usize> {
    let original = WeightedGraph::from_edges(node_count, edges);
    let mut membership: Vec<usize> = (0..node_count).collect();
    if original.two_m == 0.0 {
        return membership;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut level = original.clone();
    loop {
        let singletons: Vec<usize> = (0..level.n).collect();
        let start = level.modularity(&singletons);
        let mut record = LevelRecord {
            start,
            ..Default::default()
        };
        let (communities, moved) = level.local_moving(&mut rng, &mut record.passes);
        let end = record.passes.last().copied().unwrap_or(start);
        debug_assert!(end >= start - 1e-12, "local moving decreased modularity");
        if moved {
            for m in &mut membership {
                *m = communities[*m];
            }
        }
        let improved = moved && end - start >= TOLERANCE;
        if improved {
            level = level.aggregate(&communities);
            let agg = level.modularity(&(0..level.n).collect::<Vec<_>>());
            debug_assert!((agg - end).abs() < 1e-9, "aggregation changed modularity");
            record.aggregated = Some(agg);
        }
        if let Some(t) = trace.as_deref_mut() {
            record.flattened = original.modularity(&membership);
            t.push(record);
        }
        if !improved {
            break;
        }
    }
    renumber(&membership)
}

/// Weighted undirected graph in CSR form with explicit self-loop weights.
///
/// `self_loop[u]` holds the ordered-pair internal weight of super-node `u`
/// (each internal edge counted twice), and `degree[u]` includes it.
#[derive(Clone, Debug)]
struct WeightedGraph {
    n: usize,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<f64>,
    self_loop: Vec<f64>,
    degree: Vec<f64>,
    two_m: f64,
}

impl WeightedGraph {
    fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut arcs: Vec<(usize, usize, f64)> = Vec::with_capacity(edges.len() * 2);
        for &(a, b) in edges {
            arcs.push((a, b, 1.0));
            arcs.push((b, a, 1.0));
        }
        Self::from_arcs(n, arcs, vec![0.0; n])
    }

    /// `arcs` may contain repeated `(u, v)` entries, which are summed in
    /// sorted order.
    fn from_arcs(n: usize, mut arcs: Vec<(usize, usize, f64)>, self_loop: Vec<f64>) -> Self {
        arcs.sort_by_key(|a| (a.0, a.1));
        let mut offsets = vec![0usize; n + 1];
        let mut targets = Vec::with_capacity(arcs.len());
        let mut weights: Vec<f64> = Vec::with_capacity(arcs.len());
        let mut last: Option<(usize, usize)> = None;
        for (u, v, w) in arcs {
            if last == Some((u, v)) {
                *weights.last_mut().expect("merged arc has a predecessor") += w;
            } else {
                targets.push(v);
                weights.push(w);
                offsets[u + 1] += 1;
                last = Some((u, v));
            }
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let degree: Vec<f64> = (0..n)
            .map(|u| self_loop[u] + weights[offsets[u]..offsets[u + 1]].iter().sum::<f64>())
            .collect();
        let two_m = degree.iter().sum();
        WeightedGraph {
            n,
            offsets,
            targets,
            weights,
            self_loop,
            degree,
            two_m,
        }
    }

    fn neighbors(&self, u: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.offsets[u]..self.offsets[u + 1];
        self.targets[range.clone()]
            .iter()
            .copied()
            .zip(self.weights[range].iter().copied())
    }

    fn modularity(&self, communities: &[usize]) -> f64 {
        let k = communities.iter().max().map_or(0, |&m| m + 1);
        let mut internal = vec![0.0; k];
        let mut total = vec![0.0; k];
        for u in 0..self.n {
            let c = communities[u];
            total[c] += self.degree[u];
            internal[c] += self.self_loop[u];
            for (v, w) in self.neighbors(u) {
                if communities[v] == c {
                    internal[c] += w;
                }
            }
        }
        internal
            .iter()
            .zip(&total)
            .map(|(i, t)| i / self.two_m - (t / self.two_m).powi(2))
            .sum()
    }

    /// Returns the community of every node and whether any node moved.
    fn local_moving(&self, rng: &mut ChaCha8Rng, passes: &mut Vec<f64>) -> (Vec<usize>, bool) {
        let mut community: Vec<usize> = (0..self.n).collect();
        let mut total = self.degree.clone();
        let mut order: Vec<usize> = (0..self.n).collect();
        order.shuffle(rng);
        let mut link = vec![0.0f64; self.n];
        let mut seen = vec![false; self.n];
        let mut touched: Vec<usize> = Vec::new();
        let mut moved_any = false;
        let mut current = self.modularity(&community);
        loop {
            let mut moves = 0usize;
            for &u in &order {
                let own = community[u];
                let k_u = self.degree[u];
                for (v, w) in self.neighbors(u) {
                    let c = community[v];
                    if !seen[c] {
                        seen[c] = true;
                        touched.push(c);
                    }
                    link[c] += w;
                }
                total[own] -= k_u;
                let own_gain = link[own] - total[own] * k_u / self.two_m;
                let mut best = own;
                let mut best_gain = own_gain;
                for &c in &touched {
                    if c == own {
                        continue;
                    }
                    let gain = link[c] - total[c] * k_u / self.two_m;
                    if gain > best_gain || (gain == best_gain && best != own && c < best) {
                        best = c;
                        best_gain = gain;
                    }
                }
                total[best] += k_u;
                if best != own {
                    community[u] = best;
                    moves += 1;
                }
                for &c in &touched {
                    link[c] = 0.0;
                    seen[c] = false;
                }
                touched.clear();
            }
            if moves == 0 {
                break;
            }
            moved_any = true;
            let next = self.modularity(&community);
            debug_assert!(next >= current - 1e-12, "a local-moving pass decreased modularity");
            passes.push(next);
            let gain = next - current;
            current = next;
            if gain < TOLERANCE {
                break;
            }
        }
        (renumber(&community), moved_any)
    }

    fn aggregate(&self, communities: &[usize]) -> WeightedGraph {
        let k = communities.iter().max().map_or(0, |&m| m + 1);
        let mut self_loop = vec![0.0; k];
        let mut arcs = Vec::new();
        for u in 0..self.n {
            let cu = communities[u];
            self_loop[cu] += self.self_loop[u];
            for (v, w) in self.neighbors(u) {
                let cv = communities[v];
                if cu == cv {
                    self_loop[cu] += w;
                } else {
                    arcs.push((cu, cv, w));
                }
            }
        }
        WeightedGraph::from_arcs(k, arcs, self_loop)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphio::parse_edge_list;

    fn graph(text: &str) -> Graph {
        parse_edge_list(text.as_bytes()).unwrap().0
    }

    fn two_triangles() -> Graph {
        graph("1 2\n2 3\n1 3\n4 5\n5 6\n4 6\n")
    }

    #[test]
    fn single_community_has_zero_modularity() {
        let g = graph("1 2\n2 3\n3 4\n1 4\n1 3\n");
        let a = CommunityAssignment::new(&g, &[0; 4]).unwrap();
        assert!(modularity(&g, &a).unwrap().abs() < 1e-15);
    }

    #[test]
    fn disjoint_triangles_modularity() {
        let g = two_triangles();
        let a = CommunityAssignment::new(&g, &[0, 0, 0, 1, 1, 1]).unwrap();
        assert!((modularity(&g, &a).unwrap() - 0.5).abs() < 1e-15);
        let found = louvain_detect(&g, 7);
        assert_eq!(found.community_count(), 2);
        assert!((modularity(&g, &found).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_triangle_is_one_community() {
        let g = graph("1 2\n2 3\n1 3\n");
        assert_eq!(louvain_detect(&g, 0).community_count(), 1);
    }

    #[test]
    fn edgeless_graph() {
        let g = Graph::from_edges([1, 2, 3], []).unwrap();
        let a = louvain_detect(&g, 0);
        assert_eq!(a.labels(), &[0, 1, 2]);
        assert!(modularity(&g, &a).is_err());
    }

    #[test]
    fn same_community_rules() {
        let g = two_triangles();
        let a = louvain_detect(&g, 1);
        assert!(same_community(&a, &[1, 3]).unwrap());
        assert!(!same_community(&a, &[1, 4]).unwrap());
        assert!(!same_community(&a, &[1, 99]).unwrap());
        assert!(same_community(&a, &[1]).is_err());
    }

    #[test]
    fn labels_are_contiguous_and_cover_nodes() {
        let g = graph("1 2\n2 3\n3 1\n3 4\n4 5\n5 6\n6 4\n7 8\n");
        let a = louvain_detect(&g, 3);
        let k = a.community_count();
        let mut seen = vec![false; k];
        for &l in a.labels() {
            seen[l] = true;
        }
        assert!(seen.into_iter().all(|s| s));
        assert_eq!(a.labels().len(), g.node_count());
    }

    #[test]
    fn trace_invariants_hold() {
        let g = graph("1 2\n2 3\n3 1\n3 4\n4 5\n5 6\n6 4\n6 7\n7 8\n8 9\n9 7\n");
        let (a, trace) = louvain_trace(&g, 11);
        assert!(!trace.is_empty());
        for rec in &trace {
            let mut prev = rec.start;
            for &q in &rec.passes {
                assert!(q >= prev - 1e-12);
                prev = q;
            }
            if let Some(agg) = rec.aggregated {
                assert!((agg - prev).abs() < 1e-12);
                assert!((rec.flattened - prev).abs() < 1e-12);
            }
        }
        let final_q = modularity(&g, &a).unwrap();
        assert!((trace.last().unwrap().flattened - final_q).abs() < 1e-12);
    }
}
