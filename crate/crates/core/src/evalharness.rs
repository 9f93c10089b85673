//! Experimental protocol: victim-set sampling, batch certification,
//! certified-accuracy curves, guarantee validation and synthetic graphs.
//!
//! One noise sample drives a single Louvain run whose partition is read by
//! every victim set of the batch, so the cost of a run is `N` detections
//! regardless of how many sets are certified. Sample `j` uses the noise
//! stream `(noise_seed, j)`; the counts at a smaller `N` are therefore the
//! prefix of the counts at a larger `N`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certify::{certify_counts, CertifyParams, CertifyResult, Outcome, RadiusSolver, DEFAULT_L_MAX};
use crate::error::{Error, Result};
use crate::estimate::{clopper_pearson_lower, ConfidenceSpec};
use crate::graphio::{
    build_pair_space, read_communities, read_edge_list, read_node_labels, structure_vector, Graph, GroundTruth, NodeId,
    PairSpace, StructureVector,
};
use crate::smoothing::{
    noise_stream, sample_noise, victims_together, BaseFunction, NoiseSpec, NoisyDetector, SampleCounts,
};

const TAG_ATTACKERS: u64 = 1;
const TAG_VICTIMS: u64 = 2;
const TAG_NOISE: u64 = 3;
const TAG_DETECTOR: u64 = 4;
const TAG_VALIDATION: u64 = 5;

/// Samples processed between progress checkpoints.
const CHUNK: u64 = 100;

/// Independent sub-seed for one purpose of a run.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng.next_u64()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Splitting,
    Merging,
}

impl Mode {
    /// Output a correct certification must report: victims together when
    /// defending against splitting, apart when defending against merging.
    pub fn target(self) -> bool {
        matches!(self, Mode::Splitting)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Splitting => "splitting",
            Mode::Merging => "merging",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "splitting" => Ok(Mode::Splitting),
            "merging" => Ok(Mode::Merging),
            other => Err(Error::config(format!("unknown mode `{other}` (splitting|merging)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VictimSet {
    pub nodes: Vec<NodeId>,
    pub mode: Mode,
    /// Ground-truth community index of each node (one entry for splitting).
    pub provenance: Vec<usize>,
}

fn sorted_members(community: &[NodeId]) -> Vec<NodeId> {
    let mut members = community.to_vec();
    members.sort_unstable();
    members.dedup();
    members
}

/// `per_community` uniform `size`-subsets from every community with more
/// than `size` members.
pub fn sample_splitting_victims(
    truth: &GroundTruth,
    size: usize,
    per_community: usize,
    seed: u64,
) -> Result<Vec<VictimSet>> {
    if size < 2 {
        return Err(Error::config(format!("victim sets need at least 2 nodes, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sets = Vec::new();
    for (ci, community) in truth.communities.iter().enumerate() {
        let members = sorted_members(community);
        if members.len() <= size {
            continue;
        }
        for _ in 0..per_community {
            let mut nodes: Vec<NodeId> = index::sample(&mut rng, members.len(), size)
                .iter()
                .map(|i| members[i])
                .collect();
            nodes.sort_unstable();
            sets.push(VictimSet {
                nodes,
                mode: Mode::Splitting,
                provenance: vec![ci],
            });
        }
    }
    if sets.is_empty() {
        warn!("no ground-truth community has more than {size} members; no splitting victim sets");
    }
    Ok(sets)
}

/// `count` sets, each one uniform node from each of `size` distinct,
/// uniformly chosen communities.
pub fn sample_merging_victims(truth: &GroundTruth, size: usize, count: usize, seed: u64) -> Result<Vec<VictimSet>> {
    if size < 2 {
        return Err(Error::config(format!("victim sets need at least 2 nodes, got {size}")));
    }
    if truth.len() < size {
        return Err(Error::config(format!(
            "merging sets of size {size} need at least {size} communities, found {}",
            truth.len()
        )));
    }
    let members: Vec<Vec<NodeId>> = truth.communities.iter().map(|c| sorted_members(c)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sets = Vec::with_capacity(count);
    for _ in 0..count {
        let mut drawn = None;
        // Overlapping communities can yield the same node twice; redraw.
        for _ in 0..100 {
            let communities = index::sample(&mut rng, truth.len(), size).into_vec();
            let nodes: Vec<NodeId> = communities
                .iter()
                .map(|&c| members[c][rng.random_range(0..members[c].len())])
                .collect();
            let mut distinct = nodes.clone();
            distinct.sort_unstable();
            distinct.dedup();
            if distinct.len() == size {
                drawn = Some((nodes, communities));
                break;
            }
        }
        let (nodes, provenance) = drawn
            .ok_or_else(|| Error::config("could not draw distinct merging victims; communities overlap too much"))?;
        sets.push(VictimSet {
            nodes,
            mode: Mode::Merging,
            provenance,
        });
    }
    Ok(sets)
}

/// Fraction of results certified with the mode's target output and `L ≥ l`.
/// Abstentions never count.
pub fn certified_accuracy(results: &[CertifyResult], mode: Mode, l: usize) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let hits = results
        .iter()
        .filter(
            |r| matches!(r.outcome, Outcome::Certified { y_hat, radius, .. } if y_hat == mode.target() && radius >= l),
        )
        .count();
    hits as f64 / results.len() as f64
}

/// `CA(l)` for `l = 0..=l_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCurve {
    pub mode: Mode,
    pub sets: usize,
    pub points: Vec<f64>,
}

impl AccuracyCurve {
    pub fn from_results(results: &[CertifyResult], mode: Mode, l_max: usize) -> Self {
        let points = (0..=l_max).map(|l| certified_accuracy(results, mode, l)).collect();
        let curve = AccuracyCurve {
            mode,
            sets: results.len(),
            points,
        };
        debug_assert!(curve.is_non_increasing());
        curve
    }

    pub fn at(&self, l: usize) -> f64 {
        self.points.get(l).copied().unwrap_or(0.0)
    }

    pub fn is_non_increasing(&self) -> bool {
        self.points.windows(2).all(|w| w[1] <= w[0])
    }

    /// Smallest `l` with `CA(l) = 0`, if any within the curve.
    pub fn first_zero(&self) -> Option<usize> {
        self.points.iter().position(|&ca| ca == 0.0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("l,certified_accuracy\n");
        for (l, ca) in self.points.iter().enumerate() {
            out.push_str(&format!("{l},{ca}\n"));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommunityFormat {
    /// One community per line.
    Lines,
    /// `node label` per line.
    Labels,
}

impl FromStr for CommunityFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lines" => Ok(CommunityFormat::Lines),
            "labels" => Ok(CommunityFormat::Labels),
            other => Err(Error::config(format!(
                "unknown communities format `{other}` (lines|labels)"
            ))),
        }
    }
}

/// Flat `key = value` experiment configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub communities: PathBuf,
    pub communities_format: CommunityFormat,
    pub mode: Mode,
    pub beta: f64,
    pub alpha: f64,
    pub n_samples: u64,
    pub victim_size: usize,
    pub attacker_nodes: usize,
    /// Splitting sets drawn per eligible community.
    pub per_community: usize,
    /// Number of merging sets.
    pub merging_sets: usize,
    pub seed: u64,
    /// Defaults to `min(n, 1000)`.
    pub l_max: Option<usize>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: PathBuf::new(),
            communities: PathBuf::new(),
            communities_format: CommunityFormat::Lines,
            mode: Mode::Splitting,
            beta: 0.7,
            alpha: 0.001,
            n_samples: 10_000,
            victim_size: 2,
            attacker_nodes: 100,
            per_community: 2,
            merging_sets: 1000,
            seed: 0,
            l_max: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::config(format!("bad value `{value}` for `{key}`: {e}")))
}

impl ExperimentConfig {
    /// Parses `key = value` lines over the defaults; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = ExperimentConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            config.set(key.trim(), value.trim()).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = PathBuf::from(value),
            "communities" => self.communities = PathBuf::from(value),
            "communities_format" => self.communities_format = value.parse()?,
            "mode" => self.mode = value.parse()?,
            "beta" => self.beta = parse_value(key, value)?,
            "alpha" => self.alpha = parse_value(key, value)?,
            "n_samples" => self.n_samples = parse_value(key, value)?,
            "victim_size" => self.victim_size = parse_value(key, value)?,
            "attacker_nodes" => self.attacker_nodes = parse_value(key, value)?,
            "per_community" => self.per_community = parse_value(key, value)?,
            "merging_sets" => self.merging_sets = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "l_max" => self.l_max = Some(parse_value(key, value)?),
            "out_dir" => self.out_dir = PathBuf::from(value),
            other => return Err(Error::config(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    pub fn noise(&self) -> Result<NoiseSpec> {
        NoiseSpec::new(self.beta)
    }

    pub fn confidence(&self) -> Result<ConfidenceSpec> {
        ConfidenceSpec::new(self.alpha)
    }

    pub fn validate(&self) -> Result<()> {
        self.noise()?;
        self.confidence()?;
        if self.n_samples == 0 {
            return Err(Error::config("n_samples must be at least 1"));
        }
        if self.victim_size < 2 {
            return Err(Error::config("victim_size must be at least 2"));
        }
        if self.attacker_nodes < 2 {
            return Err(Error::config("attacker_nodes must be at least 2"));
        }
        if self.dataset.as_os_str().is_empty() || self.communities.as_os_str().is_empty() {
            return Err(Error::config("both `dataset` and `communities` must be set"));
        }
        Ok(())
    }

    pub fn victim_seed(&self) -> u64 {
        derive_seed(self.seed, TAG_VICTIMS)
    }

    pub fn noise_seed(&self) -> u64 {
        derive_seed(self.seed, TAG_NOISE)
    }
}

/// A graph with its attacker-controlled pair space, ready for sampling.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub graph: Graph,
    pub truth: GroundTruth,
    pub attackers: Vec<NodeId>,
    pub space: PairSpace,
    pub x: StructureVector,
    pub detector: NoisyDetector,
}

impl Experiment {
    /// Ground-truth nodes missing from the edge list are added as isolated
    /// nodes; attacker nodes are a uniform sample of all nodes.
    pub fn new(graph: Graph, truth: GroundTruth, attacker_nodes: usize, seed: u64) -> Result<Self> {
        let graph = graph.with_nodes(truth.nodes());
        truth.validate_against(&graph)?;
        if attacker_nodes < 2 || attacker_nodes > graph.node_count() {
            return Err(Error::config(format!(
                "cannot pick {attacker_nodes} attacker nodes from {} nodes",
                graph.node_count()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, TAG_ATTACKERS));
        let mut attackers: Vec<NodeId> = index::sample(&mut rng, graph.node_count(), attacker_nodes)
            .iter()
            .map(|i| graph.node_id(i))
            .collect();
        attackers.sort_unstable();
        let space = build_pair_space(&attackers)?;
        let x = structure_vector(&graph, &space)?;
        let detector = NoisyDetector::new(&graph, &space, derive_seed(seed, TAG_DETECTOR))?;
        Ok(Experiment {
            graph,
            truth,
            attackers,
            space,
            x,
            detector,
        })
    }

    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        let (graph, stats) = read_edge_list(&config.dataset)?;
        info!(
            "{}: {} nodes, {} edges ({} self-loops, {} duplicates dropped)",
            config.dataset.display(),
            graph.node_count(),
            graph.edge_count(),
            stats.self_loops,
            stats.duplicate_edges
        );
        let truth = match config.communities_format {
            CommunityFormat::Lines => read_communities(&config.communities)?,
            CommunityFormat::Labels => read_node_labels(&config.communities)?,
        };
        Self::new(graph, truth, config.attacker_nodes, config.seed)
    }

    pub fn n(&self) -> usize {
        self.space.len()
    }

    pub fn victim_sets(&self, mode: Mode, config: &ExperimentConfig) -> Result<Vec<VictimSet>> {
        match mode {
            Mode::Splitting => sample_splitting_victims(
                &self.truth,
                config.victim_size,
                config.per_community,
                config.victim_seed(),
            ),
            Mode::Merging => sample_merging_victims(
                &self.truth,
                config.victim_size,
                config.merging_sets,
                config.victim_seed(),
            ),
        }
    }

    fn dense_victims(&self, sets: &[VictimSet]) -> Vec<Vec<Option<usize>>> {
        sets.iter()
            .map(|s| s.nodes.iter().map(|&v| self.graph.index_of(v)).collect())
            .collect()
    }

    /// Number of attacker-controlled nodes in a victim set.
    pub fn attacker_overlap(&self, set: &VictimSet) -> usize {
        set.nodes
            .iter()
            .filter(|v| self.attackers.binary_search(v).is_ok())
            .count()
    }

    /// Membership bits of every set for samples `range`, one Louvain run
    /// per sample.
    fn sample_range(
        &self,
        victims: &[Vec<Option<usize>>],
        beta: NoiseSpec,
        range: std::ops::Range<u64>,
        noise_seed: u64,
    ) -> Result<Vec<Vec<bool>>> {
        range
            .into_par_iter()
            .map(|j| {
                let noise = sample_noise(self.n(), beta, &mut noise_stream(noise_seed, j));
                let labels = self.detector.detect(&self.x.xor(&noise)?)?;
                Ok(victims.iter().map(|v| victims_together(&labels, v)).collect())
            })
            .collect()
    }

    /// Counts for every set at each checkpoint (ascending). Progress is
    /// reported through `on_chunk` after every chunk of samples; sampling
    /// continues from `state`.
    pub fn sample_counts_resumable(
        &self,
        sets: &[VictimSet],
        beta: NoiseSpec,
        checkpoints: &[u64],
        noise_seed: u64,
        mut state: SamplingState,
        mut on_chunk: impl FnMut(&SamplingState) -> Result<()>,
    ) -> Result<Vec<Vec<SampleCounts>>> {
        if checkpoints.is_empty() || checkpoints.windows(2).any(|w| w[0] >= w[1]) || checkpoints[0] == 0 {
            return Err(Error::config("checkpoints must be positive and strictly increasing"));
        }
        let victims = self.dense_victims(sets);
        if state.ones.len() != sets.len() {
            state = SamplingState::new(sets.len());
        }
        let total = *checkpoints.last().expect("non-empty");
        while state.done < total {
            let next_checkpoint = checkpoints
                .iter()
                .copied()
                .find(|&c| c > state.done)
                .expect("below total");
            let end = (state.done + CHUNK).min(next_checkpoint);
            for bits in self.sample_range(&victims, beta, state.done..end, noise_seed)? {
                for (count, bit) in state.ones.iter_mut().zip(bits) {
                    *count += u64::from(bit);
                }
            }
            state.done = end;
            if checkpoints.contains(&end) {
                state.snapshots.push(state.ones.clone());
            }
            on_chunk(&state)?;
        }
        checkpoints
            .iter()
            .zip(&state.snapshots)
            .map(|(&n, ones)| {
                ones.iter()
                    .map(|&m1| SampleCounts::new(n - m1, m1, noise_seed))
                    .collect::<Result<Vec<_>>>()
            })
            .collect()
    }

    pub fn sample_counts(
        &self,
        sets: &[VictimSet],
        beta: NoiseSpec,
        checkpoints: &[u64],
        noise_seed: u64,
    ) -> Result<Vec<Vec<SampleCounts>>> {
        self.sample_counts_resumable(
            sets,
            beta,
            checkpoints,
            noise_seed,
            SamplingState::new(sets.len()),
            |_| Ok(()),
        )
    }
}

/// Partial sampling progress: ones-counts per set after `done` samples, and
/// a snapshot at every checkpoint passed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingState {
    pub done: u64,
    pub ones: Vec<u64>,
    pub snapshots: Vec<Vec<u64>>,
}

impl SamplingState {
    pub fn new(sets: usize) -> Self {
        SamplingState {
            done: 0,
            ones: vec![0; sets],
            snapshots: Vec::new(),
        }
    }
}

/// Certifies every set's counts. A failed certification is logged and
/// recorded as an abstention.
pub fn certify_batch(counts: &[SampleCounts], params: CertifyParams, solver: &RadiusSolver) -> Vec<CertifyResult> {
    counts
        .par_iter()
        .enumerate()
        .map(|(k, &c)| {
            certify_counts(c, params, solver).unwrap_or_else(|e| {
                warn!("victim set {k}: certification failed ({e}); recording ABSTAIN");
                CertifyResult {
                    outcome: Outcome::Abstain,
                    p_lower: 0.0,
                    counts: c,
                    params,
                }
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutput {
    pub sets: Vec<VictimSet>,
    pub results: Vec<CertifyResult>,
    pub curve: AccuracyCurve,
}

#[derive(Serialize, Deserialize)]
struct Progress {
    config: ExperimentConfig,
    state: SamplingState,
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(contents).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Runs one configuration end to end and writes `results.jsonl`,
/// `curve.csv` and `run_meta.json` to `out_dir`. An interrupted run resumes
/// from `progress.json` when the configuration is unchanged.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let out = &config.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let meta = serde_json::json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
    });
    write_atomic(
        &out.join("run_meta.json"),
        serde_json::to_string_pretty(&meta)?.as_bytes(),
    )?;

    let experiment = Experiment::load(config)?;
    let n = experiment.n();
    let sets = experiment.victim_sets(config.mode, config)?;
    let beta = config.noise()?;
    let l_max = config.l_max.unwrap_or(n.min(DEFAULT_L_MAX)).min(n);
    info!("{} {} victim sets over {n} attacker pairs", sets.len(), config.mode);

    let progress_path = out.join("progress.json");
    let resume = fs::read_to_string(&progress_path)
        .ok()
        .and_then(|text| serde_json::from_str::<Progress>(&text).ok())
        .filter(|p| p.config == *config)
        .map(|p| p.state)
        .unwrap_or_else(|| SamplingState::new(sets.len()));
    if resume.done > 0 {
        info!("resuming after {} samples", resume.done);
    }
    let counts =
        experiment.sample_counts_resumable(&sets, beta, &[config.n_samples], config.noise_seed(), resume, |state| {
            let progress = Progress {
                config: config.clone(),
                state: state.clone(),
            };
            write_atomic(&progress_path, serde_json::to_string(&progress)?.as_bytes())
        })?;
    let params = CertifyParams {
        beta,
        alpha: config.confidence()?,
        samples: config.n_samples,
        seed: config.noise_seed(),
        l_max,
    };
    let solver = RadiusSolver::new(n, beta, l_max)?;
    let results = certify_batch(&counts[0], params, &solver);

    let mut lines = String::new();
    for (set, result) in sets.iter().zip(&results) {
        let mut record = result.to_record(&set.nodes);
        record["seed"] = serde_json::json!(config.seed);
        record["noise_seed"] = serde_json::json!(params.seed);
        record["mode"] = serde_json::json!(set.mode);
        record["provenance"] = serde_json::json!(set.provenance);
        record["attacker_overlap"] = serde_json::json!(experiment.attacker_overlap(set));
        lines.push_str(&serde_json::to_string(&record)?);
        lines.push('\n');
    }
    write_atomic(&out.join("results.jsonl"), lines.as_bytes())?;
    let curve = AccuracyCurve::from_results(&results, config.mode, l_max);
    write_atomic(&out.join("curve.csv"), curve.to_csv().as_bytes())?;
    let _ = fs::remove_file(&progress_path);
    Ok(ExperimentOutput { sets, results, curve })
}

/// A perturbation whose re-estimated majority disagreed with `ŷ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Flip {
    pub delta: Vec<usize>,
    pub agree: u64,
    pub total: u64,
    /// Clopper-Pearson lower bound on the probability of the other output.
    pub flip_lower: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub radius: usize,
    pub deltas_checked: usize,
    pub exhaustive: bool,
    pub flips: Vec<Flip>,
    /// Flips whose other output has a lower bound above one half.
    pub high_confidence_flips: usize,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.high_confidence_flips == 0
    }
}

/// Settings for re-estimating the smoothed output at perturbed inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValidationParams {
    pub trials: usize,
    /// Upper bound on fresh samples per perturbation.
    pub samples: u64,
    /// Samples drawn between early-stopping checks.
    pub batch: u64,
    pub alpha: ConfidenceSpec,
    pub seed: u64,
}

/// Perturbations to test: every `δ` with `‖δ‖₀ ≤ L` when `n ≤ 14`,
/// otherwise `trials` uniform `δ` with `‖δ‖₀ = L`.
fn perturbations(n: usize, radius: usize, trials: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<usize>>, bool) {
    if n <= 14 {
        let all = (0..1u64 << n)
            .filter(|m| (m.count_ones() as usize) <= radius)
            .map(|m| (0..n).filter(|i| (m >> i) & 1 == 1).collect())
            .collect();
        return (all, true);
    }
    let sampled = (0..trials)
        .map(|_| {
            let mut d = index::sample(rng, n, radius).into_vec();
            d.sort_unstable();
            d
        })
        .collect();
    (sampled, false)
}

struct Target {
    y_hat: bool,
    radius: usize,
}

/// Shared engine: `evaluate` returns the output of every target at one
/// input, so targets with equal `L` share perturbations and samples.
fn validate_targets(
    x: &StructureVector,
    beta: NoiseSpec,
    targets: &[Target],
    params: ValidationParams,
    evaluate: &(dyn Fn(&StructureVector) -> Result<Vec<bool>> + Sync),
) -> Result<Vec<ValidationReport>> {
    let n = x.len();
    let mut reports: Vec<ValidationReport> = targets
        .iter()
        .map(|t| ValidationReport {
            radius: t.radius,
            ..Default::default()
        })
        .collect();
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, t) in targets.iter().enumerate() {
        if t.radius > 0 {
            groups.entry(t.radius).or_default().push(k);
        }
    }
    for (&radius, members) in &groups {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, radius as u64));
        let (deltas, exhaustive) = perturbations(n, radius, params.trials, &mut rng);
        for (di, delta) in deltas.iter().enumerate() {
            let mut shifted = x.clone();
            for &i in delta {
                shifted.set(i, !shifted.get(i));
            }
            let noise_seed = derive_seed(
                derive_seed(params.seed, TAG_VALIDATION),
                (radius as u64) << 32 | di as u64,
            );
            let mut agree = vec![0u64; members.len()];
            let mut open: Vec<usize> = (0..members.len()).collect();
            let mut done = 0u64;
            while !open.is_empty() && done < params.samples {
                let end = (done + params.batch).min(params.samples);
                let outputs = (done..end)
                    .into_par_iter()
                    .map(|j| {
                        let noise = sample_noise(n, beta, &mut noise_stream(noise_seed, j));
                        evaluate(&shifted.xor(&noise)?)
                    })
                    .collect::<Result<Vec<_>>>()?;
                for out in &outputs {
                    for &m in &open {
                        let k = members[m];
                        agree[m] += u64::from(out[k] == targets[k].y_hat);
                    }
                }
                done = end;
                open.retain(|&m| {
                    let lower = clopper_pearson_lower(agree[m], done, params.alpha).unwrap_or(0.0);
                    let flip = clopper_pearson_lower(done - agree[m], done, params.alpha).unwrap_or(0.0);
                    lower <= 0.5 && flip <= 0.5
                });
            }
            for (m, &k) in members.iter().enumerate() {
                let report = &mut reports[k];
                report.deltas_checked += 1;
                report.exhaustive = exhaustive;
                if 2 * agree[m] < done {
                    let flip_lower = clopper_pearson_lower(done - agree[m], done, params.alpha)?;
                    if flip_lower > 0.5 {
                        report.high_confidence_flips += 1;
                    }
                    report.flips.push(Flip {
                        delta: delta.clone(),
                        agree: agree[m],
                        total: done,
                        flip_lower,
                    });
                }
            }
        }
    }
    Ok(reports)
}

/// Re-estimates the smoothed output at perturbed inputs within the
/// certified size and reports disagreements with `ŷ`. A flip is evidence to
/// inspect, not proof of a violated guarantee.
pub fn validate_guarantee<F: BaseFunction + ?Sized>(
    result: &CertifyResult,
    f: &F,
    x: &StructureVector,
    params: ValidationParams,
) -> Result<ValidationReport> {
    let (y_hat, radius) = match result.outcome {
        Outcome::Certified { y_hat, radius, .. } => (y_hat, radius),
        Outcome::Abstain => return Err(Error::config("cannot validate an abstention")),
    };
    let target = [Target { y_hat, radius }];
    let evaluate = |z: &StructureVector| Ok(vec![f.evaluate(z)?]);
    let mut reports = validate_targets(x, result.params.beta, &target, params, &evaluate)?;
    Ok(reports.pop().expect("one target"))
}

/// [`validate_guarantee`] for many victim sets of one experiment, sharing
/// Louvain runs between sets with the same certified size. Abstentions get
/// an empty report.
pub fn validate_victim_sets(
    experiment: &Experiment,
    sets: &[VictimSet],
    results: &[CertifyResult],
    params: ValidationParams,
) -> Result<Vec<ValidationReport>> {
    if sets.len() != results.len() {
        return Err(Error::Dimension {
            expected: sets.len(),
            actual: results.len(),
        });
    }
    let Some(beta) = results.first().map(|r| r.params.beta) else {
        return Ok(Vec::new());
    };
    let targets: Vec<Target> = results
        .iter()
        .map(|r| match r.outcome {
            Outcome::Certified { y_hat, radius, .. } => Target { y_hat, radius },
            Outcome::Abstain => Target {
                y_hat: false,
                radius: 0,
            },
        })
        .collect();
    let victims = experiment.dense_victims(sets);
    let evaluate = |z: &StructureVector| {
        let labels = experiment.detector.detect(z)?;
        Ok(victims.iter().map(|v| victims_together(&labels, v)).collect())
    };
    validate_targets(&experiment.x, beta, &targets, params, &evaluate)
}

/// Planted-partition random graph: node ids `0..Σ sizes`, community `k`
/// holding the next `sizes[k]` ids, edges independent with probability
/// `p_in` inside and `p_out` across communities.
pub fn planted_partition(sizes: &[usize], p_in: f64, p_out: f64, seed: u64) -> Result<(Graph, GroundTruth)> {
    if !(0.0..=1.0).contains(&p_in) || !(0.0..=1.0).contains(&p_out) {
        return Err(Error::config("edge probabilities must lie in [0, 1]"));
    }
    if sizes.contains(&0) {
        return Err(Error::config("community sizes must be positive"));
    }
    let mut label = Vec::new();
    let mut communities = Vec::with_capacity(sizes.len());
    for (k, &s) in sizes.iter().enumerate() {
        let start = label.len() as NodeId;
        communities.push((start..start + s as NodeId).collect());
        label.extend(std::iter::repeat_n(k, s));
    }
    let total = label.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..total {
        for v in u + 1..total {
            let p = if label[u] == label[v] { p_in } else { p_out };
            if rng.random_bool(p) {
                edges.push((u as NodeId, v as NodeId));
            }
        }
    }
    Ok((
        Graph::from_edges(0..total as NodeId, edges)?,
        GroundTruth::new(communities)?,
    ))
}

/// Node count of the Email graph.
pub const EMAIL_NODES: usize = 1005;
/// Department count of the Email graph.
pub const EMAIL_COMMUNITIES: usize = 42;
/// Edge count listed for the Email graph.
pub const EMAIL_EDGES: usize = 25_571;

/// Community sizes with a heavy head, summing to `total`, each at least 1.
pub fn skewed_sizes(total: usize, count: usize, exponent: f64) -> Vec<usize> {
    let weights: Vec<f64> = (1..=count).map(|k| (k as f64).powf(-exponent)).collect();
    let sum: f64 = weights.iter().sum();
    let mut sizes: Vec<usize> = weights
        .iter()
        .map(|w| ((w / sum) * total as f64).floor().max(1.0) as usize)
        .collect();
    let mut assigned: usize = sizes.iter().sum();
    let mut k = 0;
    while assigned < total {
        sizes[k % count] += 1;
        assigned += 1;
        k += 1;
    }
    while assigned > total {
        let largest = (0..count).max_by_key(|&i| sizes[i]).expect("non-empty");
        sizes[largest] -= 1;
        assigned -= 1;
    }
    sizes
}

/// Planted-partition stand-in with the Email graph's node, community and
/// edge counts: skewed department sizes and `intra_fraction` of the expected
/// edges inside departments.
pub fn email_surrogate(intra_fraction: f64, seed: u64) -> Result<(Graph, GroundTruth)> {
    let sizes = skewed_sizes(EMAIL_NODES, EMAIL_COMMUNITIES, 1.0);
    let inside: f64 = sizes.iter().map(|&s| (s * (s - 1) / 2) as f64).sum();
    let all = (EMAIL_NODES * (EMAIL_NODES - 1) / 2) as f64;
    let p_in = (intra_fraction * EMAIL_EDGES as f64 / inside).min(1.0);
    let p_out = (1.0 - intra_fraction) * EMAIL_EDGES as f64 / (all - inside);
    planted_partition(&sizes, p_in, p_out, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::CertifyParams;

    fn result(y_hat: Option<bool>, radius: usize) -> CertifyResult {
        let params = CertifyParams {
            beta: NoiseSpec::new(0.7).unwrap(),
            alpha: ConfidenceSpec::new(0.001).unwrap(),
            samples: 100,
            seed: 0,
            l_max: 10,
        };
        CertifyResult {
            outcome: match y_hat {
                Some(y_hat) => Outcome::Certified {
                    y_hat,
                    p_lower: 0.9,
                    radius,
                },
                None => Outcome::Abstain,
            },
            p_lower: 0.9,
            counts: SampleCounts::new(10, 90, 0).unwrap(),
            params,
        }
    }

    #[test]
    fn splitting_eligibility() {
        let gt = GroundTruth::new(vec![vec![1, 2, 3], vec![4, 5]]).unwrap();
        let sets = sample_splitting_victims(&gt, 2, 2, 7).unwrap();
        assert_eq!(sets.len(), 2);
        for s in &sets {
            assert_eq!(s.provenance, vec![0]);
            assert_eq!(s.nodes.len(), 2);
            assert!(s.nodes.iter().all(|v| [1, 2, 3].contains(v)));
        }
        assert!(sample_splitting_victims(&gt, 1, 2, 7).is_err());
        assert!(sample_splitting_victims(&gt, 3, 2, 7).unwrap().is_empty());
    }

    #[test]
    fn merging_draws() {
        let gt = GroundTruth::new(vec![vec![1], vec![2]]).unwrap();
        let sets = sample_merging_victims(&gt, 2, 1, 3).unwrap();
        let mut nodes = sets[0].nodes.clone();
        nodes.sort_unstable();
        assert_eq!(nodes, vec![1, 2]);
        assert!(sample_merging_victims(&gt, 3, 1, 3).is_err());

        let gt = GroundTruth::new((0..10).map(|c| (c * 10..c * 10 + 10).collect()).collect()).unwrap();
        let a = sample_merging_victims(&gt, 2, 50, 11).unwrap();
        assert_eq!(a, sample_merging_victims(&gt, 2, 50, 11).unwrap());
        assert_ne!(a, sample_merging_victims(&gt, 2, 50, 12).unwrap());
        for s in &a {
            assert_ne!(s.provenance[0], s.provenance[1]);
            for (node, &c) in s.nodes.iter().zip(&s.provenance) {
                assert!(gt.communities[c].contains(node));
            }
        }
    }

    #[test]
    fn accuracy_counts() {
        let results = vec![result(Some(true), 3), result(Some(true), 1), result(Some(false), 5)];
        assert!((certified_accuracy(&results, Mode::Splitting, 2) - 1.0 / 3.0).abs() < 1e-15);
        assert!((certified_accuracy(&results, Mode::Merging, 2) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(certified_accuracy(&results, Mode::Merging, 6), 0.0);
        let abstains = vec![result(None, 0); 4];
        let curve = AccuracyCurve::from_results(&abstains, Mode::Splitting, 5);
        assert!(curve.points.iter().all(|&c| c == 0.0));
        let curve = AccuracyCurve::from_results(&results, Mode::Splitting, 4);
        assert!(curve.is_non_increasing());
        assert_eq!(curve.first_zero(), Some(4));
        assert!(curve
            .to_csv()
            .starts_with("l,certified_accuracy\n0,0.6666666666666666\n"));
        // never double counted between modes
        for l in 0..6 {
            let both =
                certified_accuracy(&results, Mode::Splitting, l) + certified_accuracy(&results, Mode::Merging, l);
            assert!(both <= 1.0);
        }
    }

    #[test]
    fn config_round_trip() {
        let text = "dataset = a.txt\ncommunities = b.txt # labels\nmode = merging\nbeta = 0.8\nl_max = 30\n";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.mode, Mode::Merging);
        assert_eq!(c.beta, 0.8);
        assert_eq!(c.l_max, Some(30));
        assert_eq!(c.n_samples, 10_000);
        assert!(c.validate().is_ok());
        assert!(ExperimentConfig::parse("colour = red").is_err());
        assert!(ExperimentConfig::parse("beta").is_err());
        assert!(ExperimentConfig::parse("beta = x").is_err());
    }

    #[test]
    fn skewed_sizes_sum() {
        let sizes = skewed_sizes(EMAIL_NODES, EMAIL_COMMUNITIES, 1.0);
        assert_eq!(sizes.len(), EMAIL_COMMUNITIES);
        assert_eq!(sizes.iter().sum::<usize>(), EMAIL_NODES);
        assert!(sizes.iter().all(|&s| s >= 1));
    }

    #[test]
    fn planted_partition_shape() {
        let (g, gt) = planted_partition(&[5, 5], 1.0, 0.0, 1).unwrap();
        assert_eq!(g.node_count(), 10);
        assert_eq!(g.edge_count(), 20);
        assert_eq!(gt.len(), 2);
    }
}
