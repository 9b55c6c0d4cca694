use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BRACKETS: &str = r#"
[model]
architecture = "mrnn"
hidden = 8

[data]
synthetic = { kind = "bracket_language", steps = 20, span = 12, filler = "ab ", open_probability = 0.05 }
synthetic_train_chars = 4000
synthetic_validation_chars = 500
gradient = { kind = "fraction", fraction = 0.5 }

[optimizer]
mu_rule = "classic"
warm_start = 0.5

[train]
max_iterations = 6
patience = 100
workers = 2
"#;

fn hfseq(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hfseq"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
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

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Rows of a metrics file, split into fields.
fn metrics(run: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(run.join("metrics.tsv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("iteration\ttrain_bits"));
    lines.map(|l| l.split('\t').map(String::from).collect()).collect()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn periodic_preset_learns() {
    let tmp = TempDir::new().unwrap();
    let stdout = ok(&hfseq(
        &["train", "--preset", "synthetic-periodic", "--output", "run"],
        tmp.path(),
    ));
    assert!(stdout.starts_with("iteration\t"));
    let rows = metrics(&tmp.path().join("run"));
    let last: f64 = rows.last().unwrap()[1].parse().unwrap();
    assert!(last < 0.1, "final train bits {last}");
    for f in ["config.toml", "manifest.toml", "state.toml", "final.bin"] {
        assert!(tmp.path().join("run").join(f).exists(), "{f}");
    }
    let manifest = fs::read_to_string(tmp.path().join("run/manifest.toml")).unwrap();
    assert!(manifest.contains("config_sha256") && manifest.contains("seed = 0"));

    let eval = ok(&hfseq(
        &["eval", "--checkpoint", "run/final.bin", "--config", "run/config.toml"],
        tmp.path(),
    ));
    let bits: f64 = eval.trim().parse().unwrap();
    assert!(bits < 0.1, "{bits}");
    let again = ok(&hfseq(
        &["eval", "--checkpoint", "run/final.bin", "--config", "run/config.toml"],
        tmp.path(),
    ));
    assert_eq!(eval, again);

    let text = ok(&hfseq(
        &[
            "sample",
            "--checkpoint",
            "run/final.bin",
            "--context",
            "ab",
            "--length",
            "12",
        ],
        tmp.path(),
    ));
    assert_eq!(text.trim_end().chars().count(), 12);
    let empty = ok(&hfseq(
        &["sample", "--checkpoint", "run/final.bin", "--length", "0"],
        tmp.path(),
    ));
    assert!(empty.is_empty());
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "brackets.toml", BRACKETS);
    ok(&hfseq(
        &["train", "--config", "brackets.toml", "--output", "full"],
        tmp.path(),
    ));
    ok(&hfseq(
        &[
            "train",
            "--config",
            "brackets.toml",
            "--output",
            "part",
            "--max-iterations",
            "3",
        ],
        tmp.path(),
    ));
    assert_eq!(metrics(&tmp.path().join("part")).len(), 3);
    ok(&hfseq(
        &["train", "--output", "part", "--resume", "--max-iterations", "6"],
        tmp.path(),
    ));
    let (a, b) = (metrics(&tmp.path().join("full")), metrics(&tmp.path().join("part")));
    assert_eq!(a.len(), 6);
    assert_eq!(a.len(), b.len());
    for (ra, rb) in a.iter().zip(&b) {
        for (x, y) in ra.iter().zip(rb) {
            match (x.parse::<f64>(), y.parse::<f64>()) {
                (Ok(x), Ok(y)) => assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0), "{ra:?} vs {rb:?}"),
                _ => assert_eq!(x, y),
            }
        }
    }
    let fa = fs::read(tmp.path().join("full/final.bin")).unwrap();
    let fb = fs::read(tmp.path().join("part/final.bin")).unwrap();
    assert_eq!(fa, fb);
}

#[test]
fn repeated_runs_reproduce_the_metrics_stream() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "brackets.toml", BRACKETS);
    let a = ok(&hfseq(
        &[
            "train",
            "--config",
            "brackets.toml",
            "--output",
            "a",
            "--max-iterations",
            "3",
        ],
        tmp.path(),
    ));
    let b = ok(&hfseq(
        &[
            "train",
            "--config",
            "brackets.toml",
            "--output",
            "b",
            "--max-iterations",
            "3",
        ],
        tmp.path(),
    ));
    assert_eq!(a, b);
    assert_eq!(
        fs::read(tmp.path().join("a/metrics.tsv")).unwrap(),
        fs::read(tmp.path().join("b/metrics.tsv")).unwrap()
    );
}

#[test]
fn timelag_prints_one_row_per_block() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "brackets.toml", BRACKETS);
    ok(&hfseq(
        &[
            "train",
            "--config",
            "brackets.toml",
            "--output",
            "run",
            "--max-iterations",
            "2",
        ],
        tmp.path(),
    ));
    let out = ok(&hfseq(
        &[
            "timelag",
            "--checkpoint",
            "run/final.bin",
            "--steps",
            "30",
            "--trials",
            "2",
            "--control",
            "ab",
        ],
        tmp.path(),
    ));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "block\texperimental\tcontrol");
    assert_eq!(lines.len(), 4);
}

#[test]
fn invalid_architecture_exits_2_naming_the_field() {
    let tmp = TempDir::new().unwrap();
    write(
        tmp.path(),
        "bad.toml",
        "[model]\narchitecture = \"gru\"\n[data]\nsynthetic = { kind = \"periodic_text\", period = \"ab\", steps = 4 }\n",
    );
    let out = hfseq(&["train", "--config", "bad.toml", "--output", "run"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("architecture"), "{}", stderr(&out));
}

#[test]
fn unknown_keys_exit_2() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "bad.toml", &format!("{BRACKETS}\nlearning_rate = 3\n"));
    let out = hfseq(&["train", "--config", "bad.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("learning_rate"), "{}", stderr(&out));
}

#[test]
fn refuses_to_overwrite_a_run() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "brackets.toml", BRACKETS);
    let args = [
        "train",
        "--config",
        "brackets.toml",
        "--output",
        "run",
        "--max-iterations",
        "1",
    ];
    ok(&hfseq(&args, tmp.path()));
    let out = hfseq(&args, tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--resume"));
}

#[test]
fn zero_parameters_give_log2_v() {
    let tmp = TempDir::new().unwrap();
    let corpus: String = (0..3000).map(|i| ["the cat ", "sat on ", "a mat. "][i % 3]).collect();
    write(tmp.path(), "corpus.txt", &corpus);
    write(
        tmp.path(),
        "zero.toml",
        r#"
[model]
architecture = "rnn"
hidden = 6
init = { scheme = "dense", std = 0.0 }

[data]
corpus = "corpus.txt"
split = { kind = "fractions", train = 0.8, validation = 0.1, test = 0.1 }
steps = 50

[train]
max_iterations = 0
"#,
    );
    ok(&hfseq(
        &["train", "--config", "zero.toml", "--output", "run"],
        tmp.path(),
    ));
    let manifest = fs::read_to_string(tmp.path().join("run/manifest.toml")).unwrap();
    let v: f64 = manifest
        .lines()
        .find_map(|l| l.strip_prefix("vocab_size = "))
        .unwrap()
        .parse()
        .unwrap();
    for split in ["validation", "test"] {
        let out = ok(&hfseq(
            &[
                "eval",
                "--checkpoint",
                "run/final.bin",
                "--config",
                "zero.toml",
                "--split",
                split,
            ],
            tmp.path(),
        ));
        let bits: f64 = out.trim().parse().unwrap();
        assert!((bits - v.log2()).abs() < 1e-12, "{bits} vs log2 {v}");
    }

    // A corpus with different symbols is rejected, naming them.
    write(tmp.path(), "other.txt", &"xyz ".repeat(3000));
    let out = hfseq(
        &[
            "eval",
            "--checkpoint",
            "run/final.bin",
            "--config",
            "zero.toml",
            "--corpus",
            "other.txt",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("vocabulary mismatch") && err.contains('x'), "{err}");
}

#[test]
fn sgd_baseline_runs() {
    let tmp = TempDir::new().unwrap();
    ok(&hfseq(
        &[
            "train",
            "--preset",
            "synthetic-periodic-sgd",
            "--output",
            "run",
            "--max-iterations",
            "5",
        ],
        tmp.path(),
    ));
    let rows = metrics(&tmp.path().join("run"));
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r[6] == "sgd"));
    let first: f64 = rows[0][1].parse().unwrap();
    let last: f64 = rows[4][1].parse().unwrap();
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn gradcheck_passes_on_every_architecture() {
    let tmp = TempDir::new().unwrap();
    let out = ok(&hfseq(&["gradcheck"], tmp.path()));
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 5 * 2 * 3);
    assert!(rows.iter().all(|r| r.ends_with("PASS")));
    let out = hfseq(
        &["gradcheck", "--architecture", "lstm", "--tolerance", "1e-30"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn presets_are_listed() {
    let tmp = TempDir::new().unwrap();
    let out = ok(&hfseq(&["presets"], tmp.path()));
    for name in ["ptb-preliminary", "ptb-full", "wiki", "synthetic-periodic"] {
        assert!(out.lines().any(|l| l == name), "{name}");
    }
    let wiki = ok(&hfseq(&["presets", "wiki"], tmp.path()));
    assert!(wiki.contains("lambda = 10.0"));
}
