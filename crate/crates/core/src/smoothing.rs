//! Bernoulli flip noise, the community-membership base function, and
//! Monte-Carlo counting of its outputs under noise.
//!
//! Sample `j` of a run with master seed `s` draws its noise from the ChaCha8
//! stream `(key = s, stream = j)`, so counts do not depend on how samples are
//! scheduled across threads.

use std::collections::HashSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphio::{Graph, NodeId, PairSpace, StructureVector};
use crate::louvain::louvain_dense;

/// Largest denominator for which `β` is handled in exact rational arithmetic.
pub const MAX_EXACT_DENOMINATOR: u64 = 1000;

/// Noise level `β`: the probability that a bit is kept.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    beta: f64,
    ratio: Option<(u64, u64)>,
}

impl NoiseSpec {
    /// Accepts `0.5 < β < 1`. When `β` round-trips through a fraction with
    /// denominator at most [`MAX_EXACT_DENOMINATOR`], that fraction is kept
    /// for exact arithmetic.
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.5 && beta < 1.0) {
            return Err(Error::config(format!("beta must lie in (0.5, 1), got {beta}")));
        }
        let ratio = (1..=MAX_EXACT_DENOMINATOR).find_map(|q| {
            let p = (beta * q as f64).round() as u64;
            (p as f64 / q as f64 == beta).then_some((p, q))
        });
        Ok(NoiseSpec { beta, ratio })
    }

    pub fn from_ratio(p: u64, q: u64) -> Result<Self> {
        if q == 0 || 2 * p <= q || p >= q {
            return Err(Error::config(format!("beta = {p}/{q} must lie in (0.5, 1)")));
        }
        let g = num_integer::gcd(p, q);
        let (p, q) = (p / g, q / g);
        Ok(NoiseSpec {
            beta: p as f64 / q as f64,
            ratio: (q <= MAX_EXACT_DENOMINATOR).then_some((p, q)),
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn flip_probability(&self) -> f64 {
        1.0 - self.beta
    }

    /// `(p, q)` with `β = p/q` in lowest terms, when `q` is small.
    pub fn exact_ratio(&self) -> Option<(u64, u64)> {
        self.ratio
    }
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.ratio {
            Some((p, q)) => write!(f, "{p}/{q}"),
            None => write!(f, "{}", self.beta),
        }
    }
}

/// Noise stream for sample `index` of a run keyed by `seed`.
pub fn noise_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Each bit is 1 independently with probability `1 − β`.
pub fn sample_noise<R: Rng + ?Sized>(n: usize, spec: NoiseSpec, rng: &mut R) -> StructureVector {
    let flip = spec.flip_probability();
    StructureVector::from_bits((0..n).map(|_| rng.random_bool(flip)).collect())
}

/// A deterministic map `{0,1}^n → {0,1}`.
pub trait BaseFunction: Sync {
    fn len(&self) -> usize;

    fn evaluate(&self, z: &StructureVector) -> Result<bool>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Explicit truth table over `{0,1}^n`; entry `k` is the output on the
/// vector whose bit `i` is bit `i` of `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TruthTable {
    n: usize,
    table: Vec<bool>,
}

impl TruthTable {
    pub fn new(n: usize, table: Vec<bool>) -> Result<Self> {
        if n > 24 || table.len() != 1usize << n {
            return Err(Error::Dimension {
                expected: 1usize << n.min(24),
                actual: table.len(),
            });
        }
        Ok(TruthTable { n, table })
    }

    pub fn from_fn(n: usize, f: impl Fn(u64) -> bool) -> Result<Self> {
        Self::new(n, (0..1u64 << n).map(f).collect())
    }

    pub fn output(&self, mask: u64) -> bool {
        self.table[mask as usize]
    }

    pub fn table(&self) -> &[bool] {
        &self.table
    }
}

impl BaseFunction for TruthTable {
    fn len(&self) -> usize {
        self.n
    }

    fn evaluate(&self, z: &StructureVector) -> Result<bool> {
        if z.len() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                actual: z.len(),
            });
        }
        Ok(self.table[z.to_mask().expect("truth tables are at most 24 bits") as usize])
    }
}

/// The membership test `f(z)`: Louvain on the graph realized by `z` puts all
/// victims into one community.
///
/// Edges outside the pair space are fixed; the detector seed is fixed for
/// the lifetime of the function so that `f` is deterministic.
#[derive(Clone, Debug)]
pub struct CommunityMembership {
    detector: NoisyDetector,
    victims: Vec<Option<usize>>,
}

impl CommunityMembership {
    pub fn new(graph: &Graph, space: &PairSpace, victims: &[NodeId], detector_seed: u64) -> Result<Self> {
        if victims.len() < 2 {
            return Err(Error::config(format!(
                "a victim set needs at least 2 nodes, got {}",
                victims.len()
            )));
        }
        Ok(CommunityMembership {
            detector: NoisyDetector::new(graph, space, detector_seed)?,
            victims: victims.iter().map(|&v| graph.index_of(v)).collect(),
        })
    }

    pub fn detector_seed(&self) -> u64 {
        self.detector.detector_seed
    }
}

impl BaseFunction for CommunityMembership {
    fn len(&self) -> usize {
        self.detector.len()
    }

    fn evaluate(&self, z: &StructureVector) -> Result<bool> {
        Ok(victims_together(&self.detector.detect(z)?, &self.victims))
    }
}

/// 1 iff every victim index is present and all share one label.
pub fn victims_together(labels: &[usize], victims: &[Option<usize>]) -> bool {
    let mut shared = None;
    for v in victims {
        let Some(v) = *v else { return false };
        match shared {
            None => shared = Some(labels[v]),
            Some(s) if s != labels[v] => return false,
            _ => {}
        }
    }
    true
}

fn detect_dense(
    node_count: usize,
    fixed: &[(usize, usize)],
    pairs: &[(usize, usize)],
    z: &StructureVector,
    seed: u64,
) -> Result<Vec<usize>> {
    if z.len() != pairs.len() {
        return Err(Error::Dimension {
            expected: pairs.len(),
            actual: z.len(),
        });
    }
    let mut edges = Vec::with_capacity(fixed.len() + z.count_ones());
    edges.extend_from_slice(fixed);
    edges.extend(z.ones().map(|i| pairs[i]));
    Ok(louvain_dense(node_count, &edges, seed))
}

/// Louvain over a graph whose pair-space edges are given by a structure
/// vector; the dense labels it returns are shared by every victim set.
#[derive(Clone, Debug)]
pub struct NoisyDetector {
    node_count: usize,
    fixed_edges: Vec<(usize, usize)>,
    pair_endpoints: Vec<(usize, usize)>,
    detector_seed: u64,
}

impl NoisyDetector {
    pub fn new(graph: &Graph, space: &PairSpace, detector_seed: u64) -> Result<Self> {
        let mut pair_endpoints = Vec::with_capacity(space.len());
        for &(u, v) in space.pairs() {
            match (graph.index_of(u), graph.index_of(v)) {
                (Some(a), Some(b)) => pair_endpoints.push((a.min(b), a.max(b))),
                _ => {
                    return Err(Error::Graph(format!(
                        "pair ({u}, {v}) references a node outside the graph"
                    )))
                }
            }
        }
        let in_space: HashSet<(usize, usize)> = pair_endpoints.iter().copied().collect();
        let fixed_edges = graph
            .dense_edges()
            .iter()
            .copied()
            .filter(|e| !in_space.contains(e))
            .collect();
        Ok(NoisyDetector {
            node_count: graph.node_count(),
            fixed_edges,
            pair_endpoints,
            detector_seed,
        })
    }

    pub fn len(&self) -> usize {
        self.pair_endpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pair_endpoints.is_empty()
    }

    pub fn detector_seed(&self) -> u64 {
        self.detector_seed
    }

    pub fn detect(&self, z: &StructureVector) -> Result<Vec<usize>> {
        detect_dense(
            self.node_count,
            &self.fixed_edges,
            &self.pair_endpoints,
            z,
            self.detector_seed,
        )
    }
}

/// Output frequencies of `f` under noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub m0: u64,
    pub m1: u64,
    pub total: u64,
    pub seed: u64,
}

impl SampleCounts {
    pub fn new(m0: u64, m1: u64, seed: u64) -> Result<Self> {
        if m0 + m1 == 0 {
            return Err(Error::config("sample counts need at least one sample"));
        }
        Ok(SampleCounts {
            m0,
            m1,
            total: m0 + m1,
            seed,
        })
    }

    pub fn count(&self, y: bool) -> u64 {
        if y {
            self.m1
        } else {
            self.m0
        }
    }
}

pub fn evaluate_f<F: BaseFunction + ?Sized>(f: &F, x: &StructureVector) -> Result<bool> {
    f.evaluate(x)
}

/// Counts `f(x ⊕ ε_j)` for `j < samples`, with `ε_j` drawn from
/// [`noise_stream`]`(seed, j)`.
pub fn sample_under_noise<F: BaseFunction + ?Sized>(
    f: &F,
    spec: NoiseSpec,
    x: &StructureVector,
    samples: u64,
    seed: u64,
) -> Result<SampleCounts> {
    if samples == 0 {
        return Err(Error::config("the number of noise samples must be at least 1"));
    }
    if x.len() != f.len() {
        return Err(Error::Dimension {
            expected: f.len(),
            actual: x.len(),
        });
    }
    let m1 = (0..samples)
        .into_par_iter()
        .map(|j| {
            let noise = sample_noise(x.len(), spec, &mut noise_stream(seed, j));
            f.evaluate(&x.xor(&noise)?).map(u64::from)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    SampleCounts::new(samples - m1, m1, seed)
}

/// Plug-in majority: 1 iff `m1 > m0` (ties go to 0).
pub fn smoothed_output(counts: &SampleCounts) -> bool {
    counts.m1 > counts.m0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphio::{build_pair_space, parse_edge_list, structure_vector};

    #[test]
    fn beta_validation_and_exact_form() {
        assert!(NoiseSpec::new(0.5).is_err());
        assert!(NoiseSpec::new(1.0).is_err());
        assert!(NoiseSpec::new(0.3).is_err());
        assert_eq!(NoiseSpec::new(0.7).unwrap().exact_ratio(), Some((7, 10)));
        assert_eq!(NoiseSpec::new(0.6).unwrap().exact_ratio(), Some((3, 5)));
        assert_eq!(NoiseSpec::new(0.7123).unwrap().exact_ratio(), None);
        assert_eq!(NoiseSpec::from_ratio(14, 20).unwrap().exact_ratio(), Some((7, 10)));
        assert!(NoiseSpec::from_ratio(1, 2).is_err());
    }

    #[test]
    fn noise_replays_for_fixed_stream() {
        let spec = NoiseSpec::new(0.7).unwrap();
        let a = sample_noise(500, spec, &mut noise_stream(9, 3));
        let b = sample_noise(500, spec, &mut noise_stream(9, 3));
        let c = sample_noise(500, spec, &mut noise_stream(9, 4));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn noise_popcount_within_four_sigma() {
        let spec = NoiseSpec::new(0.7).unwrap();
        let n = 4950usize;
        let mean = n as f64 * 0.3;
        let sigma = (n as f64 * 0.7 * 0.3).sqrt();
        assert!((sigma - 32.25).abs() < 0.01);
        for j in 0..20 {
            let k = sample_noise(n, spec, &mut noise_stream(1, j)).count_ones() as f64;
            assert!((k - mean).abs() < 4.0 * sigma, "popcount {k}");
        }
        let nearly_one = NoiseSpec::new(0.999).unwrap();
        let n = 100_000;
        let k = sample_noise(n, nearly_one, &mut noise_stream(2, 0)).count_ones() as f64;
        let sigma = (n as f64 * 0.999 * 0.001).sqrt();
        assert!((k - 100.0).abs() < 4.0 * sigma);
    }

    #[test]
    fn membership_on_small_graphs() {
        let (g, _) = parse_edge_list("1 2\n".as_bytes()).unwrap();
        let space = build_pair_space(&[1, 2]).unwrap();
        let f = CommunityMembership::new(&g, &space, &[1, 2], 0).unwrap();
        let x = structure_vector(&g, &space).unwrap();
        assert!(evaluate_f(&f, &x).unwrap());

        let (g, _) = parse_edge_list("1 2\n2 3\n1 3\n4 5\n5 6\n4 6\n".as_bytes()).unwrap();
        let space = build_pair_space(&[1, 2, 3, 4]).unwrap();
        let x = structure_vector(&g, &space).unwrap();
        let f = CommunityMembership::new(&g, &space, &[1, 4], 0).unwrap();
        assert!(!evaluate_f(&f, &x).unwrap());
        let g_rev = CommunityMembership::new(&g, &space, &[4, 1], 0).unwrap();
        assert_eq!(evaluate_f(&g_rev, &x).unwrap(), evaluate_f(&f, &x).unwrap());
    }

    #[test]
    fn identity_noise_reproduces_f() {
        let (g, _) = parse_edge_list("1 2\n2 3\n1 3\n3 4\n4 5\n5 6\n4 6\n".as_bytes()).unwrap();
        let space = build_pair_space(&[1, 2, 3, 4, 5]).unwrap();
        let x = structure_vector(&g, &space).unwrap();
        let f = CommunityMembership::new(&g, &space, &[1, 2], 0).unwrap();
        let spec = NoiseSpec::new(1.0 - 1e-12).unwrap();
        let counts = sample_under_noise(&f, spec, &x, 200, 5).unwrap();
        let fx = evaluate_f(&f, &x).unwrap();
        assert_eq!(counts.count(fx), 200);
        assert_eq!(counts.m0 + counts.m1, counts.total);
    }

    #[test]
    fn plug_in_majority() {
        assert!(smoothed_output(&SampleCounts::new(4000, 6000, 0).unwrap()));
        assert!(!smoothed_output(&SampleCounts::new(6000, 4000, 0).unwrap()));
        assert!(!smoothed_output(&SampleCounts::new(5000, 5000, 0).unwrap()));
    }

    #[test]
    fn truth_table_rejects_wrong_sizes() {
        assert!(TruthTable::new(3, vec![false; 7]).is_err());
        let t = TruthTable::from_fn(2, |m| m == 3).unwrap();
        assert!(t.evaluate(&StructureVector::from_mask(3, 2)).unwrap());
        assert!(t.evaluate(&StructureVector::zeros(3)).is_err());
    }
}
