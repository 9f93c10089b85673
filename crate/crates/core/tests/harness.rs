//! Experiment plumbing: determinism, resumption, outputs and the optional
//! real Email dataset.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use commcert::evalharness::{
    planted_partition, run_experiment, CommunityFormat, Experiment, ExperimentConfig, Mode, SamplingState,
    EMAIL_COMMUNITIES, EMAIL_EDGES, EMAIL_NODES,
};
use commcert::graphio::{read_edge_list, read_node_labels, write_communities, write_edge_list};
use commcert::{Error, NoiseSpec};

fn write_dataset(dir: &Path) -> (PathBuf, PathBuf) {
    let (graph, truth) = planted_partition(&[12, 10, 8, 6], 0.6, 0.03, 3).unwrap();
    let (edges, communities) = (dir.join("edges.txt"), dir.join("communities.txt"));
    write_edge_list(&graph, BufWriter::new(File::create(&edges).unwrap())).unwrap();
    write_communities(&truth, BufWriter::new(File::create(&communities).unwrap())).unwrap();
    (edges, communities)
}

fn config(dir: &Path, out: &str) -> ExperimentConfig {
    let (dataset, communities) = write_dataset(dir);
    ExperimentConfig {
        dataset,
        communities,
        n_samples: 200,
        attacker_nodes: 12,
        merging_sets: 20,
        out_dir: dir.join(out),
        ..ExperimentConfig::default()
    }
}

#[test]
fn repeated_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    for mode in [Mode::Splitting, Mode::Merging] {
        let mut a = config(dir.path(), "a");
        a.mode = mode;
        let mut b = a.clone();
        b.out_dir = dir.path().join("b");
        let (ra, rb) = (run_experiment(&a).unwrap(), run_experiment(&b).unwrap());
        assert_eq!(ra, rb);
        for file in ["curve.csv", "results.jsonl"] {
            assert_eq!(
                fs::read(a.out_dir.join(file)).unwrap(),
                fs::read(b.out_dir.join(file)).unwrap()
            );
        }
        assert!(ra.curve.is_non_increasing());
        let csv = fs::read_to_string(a.out_dir.join("curve.csv")).unwrap();
        assert!(csv.starts_with("l,certified_accuracy\n"));
        assert_eq!(csv.lines().count(), 66 + 1 + 1);
        let records = fs::read_to_string(a.out_dir.join("results.jsonl")).unwrap();
        assert_eq!(records.lines().count(), ra.sets.len());
        let first: serde_json::Value = serde_json::from_str(records.lines().next().unwrap()).unwrap();
        for key in [
            "victims", "y_hat", "p_lower", "L", "abstain", "beta", "N", "alpha", "seed",
        ] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
        let meta: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(a.out_dir.join("run_meta.json")).unwrap()).unwrap();
        assert_eq!(meta["config"]["n_samples"], 200);
    }
}

#[test]
fn seed_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = config(dir.path(), "a");
    let b = ExperimentConfig {
        seed: 1,
        out_dir: dir.path().join("b"),
        ..a.clone()
    };
    let (ra, rb) = (run_experiment(&a).unwrap(), run_experiment(&b).unwrap());
    assert_ne!(ra.results, rb.results);
}

#[test]
fn interrupted_sampling_resumes_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "out");
    let experiment = Experiment::load(&cfg).unwrap();
    let sets = experiment.victim_sets(Mode::Splitting, &cfg).unwrap();
    let beta = NoiseSpec::new(0.7).unwrap();
    let checkpoints = [100, 300];
    let full = experiment.sample_counts(&sets, beta, &checkpoints, 9).unwrap();

    let mut saved = None;
    let stopped =
        experiment.sample_counts_resumable(&sets, beta, &checkpoints, 9, SamplingState::new(sets.len()), |s| {
            if s.done >= 200 {
                saved = Some(s.clone());
                return Err(Error::Config("interrupted".into()));
            }
            Ok(())
        });
    assert!(stopped.is_err());
    let resumed = experiment
        .sample_counts_resumable(&sets, beta, &checkpoints, 9, saved.unwrap(), |_| Ok(()))
        .unwrap();
    assert_eq!(full, resumed);
    // Checkpoint counts are prefixes of one sample stream.
    for (small, large) in full[0].iter().zip(&full[1]) {
        assert!(small.m1 <= large.m1 && small.m0 <= large.m0);
    }
}

#[test]
fn run_resumes_from_progress_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "out");
    let reference = run_experiment(&cfg).unwrap();
    // A stale progress file from another configuration is ignored.
    let other = ExperimentConfig { seed: 5, ..cfg.clone() };
    let progress = serde_json::json!({"config": other, "state": {"done": 100, "ones": [0], "snapshots": []}});
    fs::write(cfg.out_dir.join("progress.json"), progress.to_string()).unwrap();
    assert_eq!(run_experiment(&cfg).unwrap(), reference);
    assert!(!cfg.out_dir.join("progress.json").exists());

    // A matching one is picked up mid-run.
    let experiment = Experiment::load(&cfg).unwrap();
    let sets = experiment.victim_sets(cfg.mode, &cfg).unwrap();
    let mut partial = None;
    let _ = experiment.sample_counts_resumable(
        &sets,
        cfg.noise().unwrap(),
        &[cfg.n_samples],
        cfg.noise_seed(),
        SamplingState::new(sets.len()),
        |s| {
            partial = Some(s.clone());
            Err(Error::Config("interrupted".into()))
        },
    );
    let progress = serde_json::json!({"config": cfg, "state": partial.unwrap()});
    fs::write(cfg.out_dir.join("progress.json"), progress.to_string()).unwrap();
    assert_eq!(run_experiment(&cfg).unwrap(), reference);
}

/// Real Email files, when `COMMCERT_EMAIL_DIR` points at a directory with
/// `email-Eu-core.txt[.gz]` and `email-Eu-core-department-labels.txt[.gz]`.
fn email_files() -> Option<(PathBuf, PathBuf)> {
    let dir = PathBuf::from(std::env::var_os("COMMCERT_EMAIL_DIR")?);
    let find = |stem: &str| {
        [format!("{stem}.txt"), format!("{stem}.txt.gz")]
            .into_iter()
            .map(|name| dir.join(name))
            .find(|p| p.exists())
    };
    Some((find("email-Eu-core")?, find("email-Eu-core-department-labels")?))
}

#[test]
fn email_dataset_parses() {
    let Some((edges, labels)) = email_files() else {
        eprintln!("COMMCERT_EMAIL_DIR not set; skipping the Email parse check");
        return;
    };
    let (graph, _) = read_edge_list(&edges).unwrap();
    let truth = read_node_labels(&labels).unwrap();
    assert_eq!(graph.node_count(), EMAIL_NODES);
    assert_eq!(graph.edge_count(), EMAIL_EDGES);
    assert_eq!(truth.len(), EMAIL_COMMUNITIES);
    let cfg = ExperimentConfig {
        dataset: edges,
        communities: labels,
        communities_format: CommunityFormat::Labels,
        ..ExperimentConfig::default()
    };
    let experiment = Experiment::load(&cfg).unwrap();
    assert_eq!(experiment.n(), 4950);
}
