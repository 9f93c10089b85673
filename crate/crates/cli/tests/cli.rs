use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_commcert"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

fn write_graph(dir: &Path) {
    let mut edges = String::new();
    let mut communities = String::new();
    for block in 0..3u32 {
        let base = block * 8;
        let members: Vec<String> = (base..base + 8).map(|v| v.to_string()).collect();
        communities.push_str(&members.join(" "));
        communities.push('\n');
        for u in base..base + 8 {
            for v in u + 1..base + 8 {
                if (u + v) % 3 != 0 {
                    edges.push_str(&format!("{u} {v}\n"));
                }
            }
        }
    }
    edges.push_str("0 8\n8 16\n16 0\n");
    fs::write(dir.join("edges.txt"), edges).unwrap();
    fs::write(dir.join("communities.txt"), communities).unwrap();
}

#[test]
fn evaluate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    write_graph(dir.path());
    let config = dir.path().join("run.conf");
    fs::write(
        &config,
        format!(
            "# small run\ndataset = {}\ncommunities = {}\nn_samples = 100\nattacker_nodes = 10\nseed = 3\n",
            path(&dir.path().join("edges.txt")),
            path(&dir.path().join("communities.txt"))
        ),
    )
    .unwrap();
    let mut curves = Vec::new();
    for rep in ["a", "b"] {
        let out = dir.path().join(rep);
        let output = run(&[
            "evaluate",
            "--config",
            &path(&config),
            "--set",
            &format!("out_dir={}", path(&out)),
        ]);
        assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
        curves.push(fs::read(out.join("curve.csv")).unwrap());
        assert!(out.join("results.jsonl").exists() && out.join("run_meta.json").exists());
    }
    assert_eq!(curves[0], curves[1]);
    assert!(curves[0].starts_with(b"l,certified_accuracy\n"));
}

#[test]
fn detect_writes_one_line_per_node() {
    let dir = tempfile::tempdir().unwrap();
    write_graph(dir.path());
    let output = run(&["detect", "--graph", &path(&dir.path().join("edges.txt"))]);
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    assert_eq!(text.lines().count(), 24);
}

#[test]
fn quick_oracle_check_passes() {
    let output = run(&["oracle-check"]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stdout));
    let text = String::from_utf8(output.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains("PASS")).count(), 4);
}

#[test]
fn bad_override_fails() {
    let output = run(&["evaluate", "--set", "beta=0.4"]);
    assert_eq!(output.status.code(), Some(1));
    let output = run(&["evaluate", "--set", "colour=blue"]);
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("colour"));
}
