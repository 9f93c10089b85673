use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use commcert::certify::{certify_with, CertifyParams, RadiusSolver, DEFAULT_L_MAX};
use commcert::evalharness::{
    email_surrogate, run_experiment, validate_victim_sets, Experiment, ExperimentConfig, Mode, ValidationParams,
    VictimSet,
};
use commcert::graphio::{read_edge_list, write_communities, write_edge_list, GroundTruth, NodeId};
use commcert::louvain::{louvain_detect, modularity};
use commcert::oracle::run_suite;
use commcert::smoothing::CommunityMembership;
use commcert::ConfidenceSpec;

#[derive(Debug, Parser)]
#[command(
    name = "commcert",
    version,
    about = "Certify community membership against edge perturbations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Splitting,
    Merging,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Splitting => Mode::Splitting,
            ModeArg::Merging => Mode::Merging,
        }
    }
}

#[derive(Debug, clap::Args)]
struct ConfigArgs {
    /// Experiment configuration file (`key = value` lines)
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override one configuration key, e.g. `--set beta=0.8`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        for item in &self.overrides {
            let Some((key, value)) = item.split_once('=') else {
                bail!("override `{item}` is not KEY=VALUE");
            };
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run Louvain on an edge list and write `node community` lines
    Detect {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certify one victim set and print its JSON record
    Certify {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated victim node ids
        #[arg(long, value_delimiter = ',', required = true)]
        victims: Vec<NodeId>,
    },
    /// Certify sampled victim sets and write results.jsonl, curve.csv, run_meta.json
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Brute-force verification of the certification mathematics at small sizes
    OracleCheck {
        /// Use the full grids (slower)
        #[arg(long)]
        full: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-estimate the smoothed output at random perturbations within the certified size
    Validate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Number of certified victim sets to validate
        #[arg(long, default_value_t = 20)]
        sets: usize,
        /// Random perturbations per set
        #[arg(long, default_value_t = 200)]
        trials: usize,
        /// Maximum fresh samples per perturbation
        #[arg(long, default_value_t = 100)]
        samples: u64,
    },
    /// Write a planted-partition graph with the Email graph's size
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Expected fraction of edges inside communities
        #[arg(long, default_value_t = 0.6)]
        intra: f64,
    },
}

fn detect(graph: PathBuf, seed: u64, out: Option<PathBuf>) -> anyhow::Result<()> {
    let (graph, _) = read_edge_list(&graph)?;
    let assignment = louvain_detect(&graph, seed);
    let q = modularity(&graph, &assignment)?;
    eprintln!(
        "{} nodes, {} edges, {} communities, modularity {q:.6}",
        graph.node_count(),
        graph.edge_count(),
        assignment.community_count()
    );
    let mut sink: Box<dyn Write> = match out {
        Some(path) => Box::new(BufWriter::new(
            File::create(&path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout())),
    };
    for (id, label) in assignment.node_ids().iter().zip(assignment.labels()) {
        writeln!(sink, "{id} {label}")?;
    }
    sink.flush()?;
    Ok(())
}

fn certify_one(config: ExperimentConfig, victims: Vec<NodeId>) -> anyhow::Result<()> {
    let (graph, _) = read_edge_list(&config.dataset)?;
    let experiment = Experiment::new(graph, GroundTruth::default(), config.attacker_nodes, config.seed)?;
    let n = experiment.n();
    let beta = config.noise()?;
    let l_max = config.l_max.unwrap_or(n.min(DEFAULT_L_MAX)).min(n);
    let f = CommunityMembership::new(
        &experiment.graph,
        &experiment.space,
        &victims,
        experiment.detector.detector_seed(),
    )?;
    let params = CertifyParams {
        beta,
        alpha: config.confidence()?,
        samples: config.n_samples,
        seed: config.noise_seed(),
        l_max,
    };
    let solver = RadiusSolver::new(n, beta, l_max)?;
    let result = certify_with(&f, &experiment.x, params, &solver)?;
    println!("{}", serde_json::to_string(&result.to_record(&victims))?);
    Ok(())
}

fn evaluate(mut config: ExperimentConfig, mode: Option<ModeArg>) -> anyhow::Result<()> {
    if let Some(mode) = mode {
        config.mode = mode.into();
    }
    let output = run_experiment(&config)?;
    let certified = output.results.iter().filter(|r| !r.is_abstain()).count();
    println!(
        "{} {} victim sets, {certified} certified, CA(0) = {}, first zero at l = {}",
        output.sets.len(),
        config.mode,
        output.curve.at(0),
        output.curve.first_zero().map_or("none".to_string(), |l| l.to_string())
    );
    println!("outputs in {}", config.out_dir.display());
    Ok(())
}

fn oracle_check(full: bool, seed: u64) -> anyhow::Result<bool> {
    let checks = run_suite(full, seed)?;
    let width = checks.iter().map(|c| c.name.chars().count()).max().unwrap_or(0);
    for c in &checks {
        let pad = width - c.name.chars().count();
        println!(
            "{}{}  {}  {}",
            c.name,
            " ".repeat(pad),
            if c.passed { "PASS" } else { "FAIL" },
            c.detail
        );
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn validate(
    mut config: ExperimentConfig,
    mode: Option<ModeArg>,
    sets: usize,
    trials: usize,
    samples: u64,
) -> anyhow::Result<bool> {
    if let Some(mode) = mode {
        config.mode = mode.into();
    }
    let output = run_experiment(&config)?;
    let experiment = Experiment::load(&config)?;
    let (chosen, results): (Vec<VictimSet>, Vec<_>) = output
        .sets
        .into_iter()
        .zip(output.results)
        .filter(|(_, r)| r.radius().is_some_and(|l| l > 0))
        .take(sets)
        .unzip();
    info!("validating {} certified victim sets", chosen.len());
    let params = ValidationParams {
        trials,
        samples,
        batch: 10,
        alpha: ConfidenceSpec::new(config.alpha)?,
        seed: config.seed,
    };
    let reports = validate_victim_sets(&experiment, &chosen, &results, params)?;
    let mut high = 0;
    for (set, report) in chosen.iter().zip(&reports) {
        high += report.high_confidence_flips;
        println!(
            "{:?}  L={}  perturbations={}  flips={}  high-confidence={}",
            set.nodes,
            report.radius,
            report.deltas_checked,
            report.flips.len(),
            report.high_confidence_flips
        );
    }
    println!("{} sets, {high} high-confidence flips", chosen.len());
    Ok(high == 0)
}

fn generate(out: PathBuf, seed: u64, intra: f64) -> anyhow::Result<()> {
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let (graph, truth) = email_surrogate(intra, seed)?;
    let edges = out.join("edges.txt");
    let communities = out.join("communities.txt");
    write_edge_list(&graph, BufWriter::new(File::create(&edges)?))?;
    write_communities(&truth, BufWriter::new(File::create(&communities)?))?;
    println!(
        "{} nodes, {} edges, {} communities -> {}, {}",
        graph.node_count(),
        graph.edge_count(),
        truth.len(),
        edges.display(),
        communities.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Detect { graph, seed, out } => detect(graph, seed, out).map(|_| true),
        Command::Certify { config, victims } => config.resolve().and_then(|c| certify_one(c, victims)).map(|_| true),
        Command::Evaluate { config, mode } => config.resolve().and_then(|c| evaluate(c, mode)).map(|_| true),
        Command::OracleCheck { full, seed } => oracle_check(full, seed),
        Command::Validate {
            config,
            mode,
            sets,
            trials,
            samples,
        } => config.resolve().and_then(|c| validate(c, mode, sets, trials, samples)),
        Command::Generate { out, seed, intra } => generate(out, seed, intra).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
