use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use prism_core::synthetic::{write_corpus, StyleSpec};

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    write_corpus(
        &root.join("data"),
        &[
            StyleSpec {
                name: "flat".into(),
                cluster_sizes: vec![6, 6],
            },
            StyleSpec {
                name: "retro".into(),
                cluster_sizes: vec![5, 5, 5],
            },
        ],
        3,
    )
    .unwrap();
    let config = root.join("prism.toml");
    std::fs::write(
        &config,
        r#"seed = 11

[paths]
manifest = "data/manifest.jsonl"
allowlist = "data/styles.txt"
image_dir = "data"
embedding_dir = "data"
cache_dir = "cache"
run_dir = "run"

[ingest]
min_style_count = 10

[exemplars]
positives = 5
negatives = 3

[extraction]
individual_count = 2

[eval]
bootstrap_b = 100
"#,
    )
    .unwrap();
    Fixture {
        _dir: dir,
        root,
        config,
    }
}

fn prism(f: &Fixture, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prism"))
        .arg("--config")
        .arg(&f.config)
        .args(args)
        .env_remove("PRISM_GATEWAY_URL")
        .env_remove("PRISM_GATEWAY_KEY")
        .env_remove("PRISM_GATEWAY_MODE")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn full_workflow() {
    let f = fixture();
    let out = ok(&prism(&f, &["build"]));
    assert!(out.starts_with("built 2 styles, 5 entries"), "{out}");
    let run = f.root.join("run");
    assert!(run.join("kb.json").is_file());
    assert!(read(&run.join("manifest.json")).contains("partitions/retro.json"));

    let out = ok(&prism(&f, &["refine", "--style", "flat", "--iterations", "1"]));
    assert!(out.contains("flat/0: version"), "{out}");

    let design = f.root.join("data/images/retro_c2_002.png");
    let out = ok(&prism(
        &f,
        &["improve", design.to_str().unwrap(), "Make it more retro", "-m", "3"],
    ));
    assert_eq!(out.lines().count(), 3, "{out}");
    assert!(out.lines().all(|l| l.contains(": retro/")), "{out}");
    assert!(run.join("improve/retro_c2_002/plan_02.json").is_file());

    let gen = f.root.join("data/embeddings");
    let out = ok(&prism(
        &f,
        &["eval", "--style", "flat", "--generated", gen.to_str().unwrap(), "--method", "all"],
    ));
    assert!(out.starts_with("flat all: fidelity"), "{out}");
    assert!(run.join("eval/flat/all.csv").is_file());

    let out = ok(&prism(&f, &["diagnose", "--style", "retro"]));
    assert_eq!(out.lines().count(), 3, "{out}");
}

#[test]
fn seed_flag_matches_config_seed() {
    let f = fixture();
    ok(&prism(&f, &["--seed", "5", "build"]));
    ok(&prism(
        &f,
        &["--set", "seed=5", "--set", "paths.run_dir=\"run2\"", "--set", "paths.cache_dir=\"cache2\"", "build"],
    ));
    assert_eq!(
        read(&f.root.join("run/manifest.json")),
        read(&f.root.join("run2/manifest.json"))
    );
}

#[test]
fn bad_config_exits_2() {
    let f = fixture();
    let out = prism(&f, &["--set", "grad.lamda=0.3", "build"]);
    assert_eq!(out.status.code(), Some(2));
    let out = prism(&f, &["--set", "partition.k_min=1", "build"]);
    assert_eq!(out.status.code(), Some(2));
    let missing = f.root.join("nope.toml");
    let out = Command::new(env!("CARGO_BIN_EXE_prism"))
        .args(["--config", missing.to_str().unwrap(), "build"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = prism(&f, &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_data_exits_3() {
    let f = fixture();
    let out = prism(&f, &["refine"]);
    assert_eq!(out.status.code(), Some(3));
    std::fs::remove_file(f.root.join("data/manifest.jsonl")).unwrap();
    let out = prism(&f, &["build"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest"));
}

#[test]
fn unreachable_gateway_exits_4() {
    let f = fixture();
    let out = Command::new(env!("CARGO_BIN_EXE_prism"))
        .args(["--config", f.config.to_str().unwrap()])
        .args(["--set", "gateway.max_retries=0", "build"])
        .env("PRISM_GATEWAY_MODE", "live")
        .env("PRISM_GATEWAY_URL", "http://127.0.0.1:9")
        .env_remove("PRISM_GATEWAY_KEY")
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
