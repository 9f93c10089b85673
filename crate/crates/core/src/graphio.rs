//! Graph data model, SNAP-style ingestion and structure vectors.
//!
//! A [`Graph`] is a simple undirected graph whose external node ids are
//! arbitrary non-negative integers, remapped to a dense `0..|V|` index in
//! ascending id order. A [`PairSpace`] selects the node pairs an attacker (and
//! the smoothing noise) may toggle; a [`StructureVector`] is the binary
//! edge/non-edge status of those pairs.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use log::warn;

use crate::error::{Error, Result};

pub type NodeId = u64;

/// Simple undirected graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    ids: Vec<NodeId>,
    index: HashMap<NodeId, usize>,
    adjacency: Vec<Vec<usize>>,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    /// Builds a graph from node ids and edges. Duplicate edges collapse;
    /// self-loops and edges touching unknown nodes are rejected.
    pub fn from_edges<N, E>(nodes: N, edges: E) -> Result<Self>
    where
        N: IntoIterator<Item = NodeId>,
        E: IntoIterator<Item = (NodeId, NodeId)>,
    {
        let mut ids: Vec<NodeId> = nodes.into_iter().collect();
        ids.sort_unstable();
        ids.dedup();
        let index: HashMap<NodeId, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut dense = Vec::new();
        for (u, v) in edges {
            if u == v {
                return Err(Error::Graph(format!("self-loop on node {u}")));
            }
            let (a, b) = match (index.get(&u), index.get(&v)) {
                (Some(&a), Some(&b)) => (a, b),
                _ => return Err(Error::Graph(format!("edge ({u}, {v}) references an unknown node"))),
            };
            dense.push((a.min(b), a.max(b)));
        }
        Ok(Self::from_dense(ids, index, dense))
    }

    fn from_dense(ids: Vec<NodeId>, index: HashMap<NodeId, usize>, mut edges: Vec<(usize, usize)>) -> Self {
        edges.sort_unstable();
        edges.dedup();
        let mut adjacency = vec![Vec::new(); ids.len()];
        for &(a, b) in &edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Graph {
            ids,
            index,
            adjacency,
            edges,
        }
    }

    /// Returns a copy with `extra` added as (possibly isolated) nodes.
    pub fn with_nodes<I: IntoIterator<Item = NodeId>>(&self, extra: I) -> Self {
        let mut ids = self.ids.clone();
        ids.extend(extra);
        ids.sort_unstable();
        ids.dedup();
        if ids.len() == self.ids.len() {
            return self.clone();
        }
        let index: HashMap<NodeId, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let edges = self
            .edges
            .iter()
            .map(|&(a, b)| {
                let (x, y) = (index[&self.ids[a]], index[&self.ids[b]]);
                (x.min(y), x.max(y))
            })
            .collect();
        Self::from_dense(ids, index, edges)
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// External ids in dense-index order (ascending).
    pub fn node_ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn node_id(&self, dense: usize) -> NodeId {
        self.ids[dense]
    }

    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.index.contains_key(&id)
    }

    /// Edges as dense index pairs `(a, b)` with `a < b`, sorted.
    pub fn dense_edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, dense: usize) -> &[usize] {
        &self.adjacency[dense]
    }

    pub fn degree(&self, dense: usize) -> usize {
        self.adjacency[dense].len()
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        match (self.index_of(u), self.index_of(v)) {
            (Some(a), Some(b)) => self.adjacency[a].binary_search(&b).is_ok(),
            _ => false,
        }
    }

    /// Edges as external id pairs `(min, max)`.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.edges.iter().map(move |&(a, b)| (self.ids[a], self.ids[b]))
    }
}

/// Counts of lines dropped or merged while reading an edge list.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub self_loops: usize,
    pub duplicate_edges: usize,
}

fn parse_id(token: &str, line: usize) -> Result<NodeId> {
    token.parse::<NodeId>().map_err(|_| Error::Parse {
        line,
        message: format!("expected a non-negative integer node id, found {token:?}"),
    })
}

/// Parses a SNAP edge list: one `u v` pair per line, `#` comments, blank
/// lines ignored. Columns after the second are ignored.
pub fn parse_edge_list<R: BufRead>(reader: R) -> Result<(Graph, IngestStats)> {
    let mut stats = IngestStats::default();
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let (u, v) = match (tokens.next(), tokens.next()) {
            (Some(u), Some(v)) => (parse_id(u, lineno)?, parse_id(v, lineno)?),
            _ => {
                return Err(Error::Parse {
                    line: lineno,
                    message: "expected two node ids".into(),
                })
            }
        };
        nodes.push(u);
        nodes.push(v);
        if u == v {
            stats.self_loops += 1;
            continue;
        }
        let key = (u.min(v), u.max(v));
        if seen.insert(key) {
            edges.push(key);
        } else {
            stats.duplicate_edges += 1;
        }
    }
    if stats.self_loops > 0 {
        warn!("dropped {} self-loop(s) while reading edge list", stats.self_loops);
    }
    Ok((Graph::from_edges(nodes, edges)?, stats))
}

/// Ground-truth communities. Communities may overlap.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GroundTruth {
    pub communities: Vec<Vec<NodeId>>,
}

impl GroundTruth {
    pub fn new(communities: Vec<Vec<NodeId>>) -> Result<Self> {
        if communities.iter().any(|c| c.is_empty()) {
            return Err(Error::Graph("ground-truth community is empty".into()));
        }
        Ok(GroundTruth { communities })
    }

    pub fn len(&self) -> usize {
        self.communities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.communities.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.communities.iter().flatten().copied()
    }

    /// Checks that every member is a node of `graph`.
    pub fn validate_against(&self, graph: &Graph) -> Result<()> {
        match self.nodes().find(|&id| !graph.contains(id)) {
            Some(id) => Err(Error::Graph(format!("ground-truth node {id} is not in the graph"))),
            None => Ok(()),
        }
    }
}

/// Parses one community per line (whitespace-separated ids).
pub fn parse_communities<R: BufRead>(reader: R) -> Result<GroundTruth> {
    let mut communities = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let members = trimmed
            .split_whitespace()
            .map(|t| parse_id(t, lineno))
            .collect::<Result<Vec<_>>>()?;
        communities.push(members);
    }
    GroundTruth::new(communities)
}

/// Parses `node label` lines (the layout of the Email department file) into
/// one community per distinct label, ordered by label.
pub fn parse_node_labels<R: BufRead>(reader: R) -> Result<GroundTruth> {
    let mut groups: BTreeMap<u64, Vec<NodeId>> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        match (tokens.next(), tokens.next(), tokens.next()) {
            (Some(node), Some(label), None) => {
                let node = parse_id(node, lineno)?;
                let label = parse_id(label, lineno)?;
                groups.entry(label).or_default().push(node);
            }
            _ => {
                return Err(Error::Parse {
                    line: lineno,
                    message: "expected `node label`".into(),
                })
            }
        }
    }
    GroundTruth::new(groups.into_values().collect())
}

/// Writes one `u v` line per edge, in ascending order.
pub fn write_edge_list<W: Write>(graph: &Graph, mut out: W) -> Result<()> {
    for (u, v) in graph.edges() {
        writeln!(out, "{u} {v}").map_err(|e| Error::io("<edge list>", e))?;
    }
    out.flush().map_err(|e| Error::io("<edge list>", e))
}

/// Writes one community per line, members separated by tabs.
pub fn write_communities<W: Write>(truth: &GroundTruth, mut out: W) -> Result<()> {
    for community in &truth.communities {
        let line: Vec<String> = community.iter().map(|id| id.to_string()).collect();
        writeln!(out, "{}", line.join("\t")).map_err(|e| Error::io("<communities>", e))?;
    }
    out.flush().map_err(|e| Error::io("<communities>", e))
}

/// Opens a text file, decompressing transparently when the name ends in `.gz`.
pub fn open_text(path: &Path) -> Result<Box<dyn BufRead>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let inner: Box<dyn Read> = if path.extension().is_some_and(|ext| ext == "gz") {
        Box::new(MultiGzDecoder::new(file))
    } else {
        Box::new(file)
    };
    Ok(Box::new(BufReader::new(inner)))
}

pub fn read_edge_list(path: &Path) -> Result<(Graph, IngestStats)> {
    parse_edge_list(open_text(path)?)
}

pub fn read_communities(path: &Path) -> Result<GroundTruth> {
    parse_communities(open_text(path)?)
}

pub fn read_node_labels(path: &Path) -> Result<GroundTruth> {
    parse_node_labels(open_text(path)?)
}

/// Ordered list of distinct unordered node pairs; position `i` is bit `i` of
/// every structure vector over this space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairSpace {
    pairs: Vec<(NodeId, NodeId)>,
    index: HashMap<(NodeId, NodeId), usize>,
}

impl PairSpace {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(NodeId, NodeId)] {
        &self.pairs
    }

    pub fn pair(&self, i: usize) -> (NodeId, NodeId) {
        self.pairs[i]
    }

    pub fn position(&self, u: NodeId, v: NodeId) -> Option<usize> {
        self.index.get(&(u.min(v), u.max(v))).copied()
    }

    fn check(&self, mask: &StructureVector) -> Result<()> {
        if mask.len() != self.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                actual: mask.len(),
            });
        }
        Ok(())
    }
}

/// All `C(k, 2)` pairs among `nodes`, in lexicographic `(min, max)` order.
pub fn build_pair_space(nodes: &[NodeId]) -> Result<PairSpace> {
    if nodes.len() < 2 {
        return Err(Error::Graph(format!(
            "a pair space needs at least 2 nodes, got {}",
            nodes.len()
        )));
    }
    let mut sorted = nodes.to_vec();
    sorted.sort_unstable();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Graph(format!("duplicate node id {} in pair space", w[0])));
    }
    let k = sorted.len();
    let mut pairs = Vec::with_capacity(k * (k - 1) / 2);
    for (i, &u) in sorted.iter().enumerate() {
        for &v in &sorted[i + 1..] {
            pairs.push((u, v));
        }
    }
    let index = pairs.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    Ok(PairSpace { pairs, index })
}

/// Binary vector over a pair space.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StructureVector {
    bits: Vec<bool>,
}

impl StructureVector {
    pub fn zeros(n: usize) -> Self {
        StructureVector { bits: vec![false; n] }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        StructureVector { bits }
    }

    /// Low `n` bits of `mask`, bit `i` of the mask being entry `i`.
    pub fn from_mask(mask: u64, n: usize) -> Self {
        StructureVector {
            bits: (0..n).map(|i| (mask >> i) & 1 == 1).collect(),
        }
    }

    /// Inverse of [`StructureVector::from_mask`]; `None` beyond 64 bits.
    pub fn to_mask(&self) -> Option<u64> {
        if self.bits.len() > 64 {
            return None;
        }
        Some(
            self.bits
                .iter()
                .enumerate()
                .fold(0u64, |acc, (i, &b)| acc | ((b as u64) << i)),
        )
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, value: bool) {
        self.bits[i] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Hamming weight, i.e. the L0 norm.
    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn xor(&self, other: &StructureVector) -> Result<StructureVector> {
        if self.len() != other.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                actual: other.len(),
            });
        }
        Ok(StructureVector {
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| a ^ b).collect(),
        })
    }
}

fn require_endpoints(graph: &Graph, space: &PairSpace) -> Result<()> {
    for &(u, v) in space.pairs() {
        for id in [u, v] {
            if !graph.contains(id) {
                return Err(Error::Graph(format!("pair-space node {id} is not in the graph")));
            }
        }
    }
    Ok(())
}

/// Bit `i` is set iff pair `i` of `space` is an edge of `graph`.
pub fn structure_vector(graph: &Graph, space: &PairSpace) -> Result<StructureVector> {
    require_endpoints(graph, space)?;
    Ok(StructureVector {
        bits: space.pairs().iter().map(|&(u, v)| graph.has_edge(u, v)).collect(),
    })
}

/// Toggles the edge status of every pair whose mask bit is set.
pub fn apply_flips(base: &Graph, space: &PairSpace, mask: &StructureVector) -> Result<Graph> {
    space.check(mask)?;
    require_endpoints(base, space)?;
    let mut edges: HashSet<(usize, usize)> = base.dense_edges().iter().copied().collect();
    for i in mask.ones() {
        let (u, v) = space.pair(i);
        let (a, b) = (base.index[&u], base.index[&v]);
        let key = (a.min(b), a.max(b));
        if !edges.remove(&key) {
            edges.insert(key);
        }
    }
    Ok(Graph::from_dense(
        base.ids.clone(),
        base.index.clone(),
        edges.into_iter().collect(),
    ))
}
