use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use entailner::corpus::{mention_counts, parse_conll, TagColumn};

const BIN: &str = env!("CARGO_BIN_EXE_entailner");

/// A synthetic dataset, a tiny pretrained backbone in a cache directory and a
/// config that trains for a handful of steps.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn cache(&self) -> PathBuf {
        self.root.join("cache")
    }

    fn config(&self) -> PathBuf {
        self.root.join("run.toml")
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(BIN)
            .args(args)
            .env("ENTAILNER_BACKEND_CACHE", self.cache())
            .env("RUST_LOG", "warn")
            .output()
            .unwrap()
    }

    /// Runs with the shared config plus overrides.
    fn run_cfg(&self, cmd: &str, extra: &[&str]) -> Output {
        let cfg = self.config();
        let mut args = vec![cmd, "-c", cfg.to_str().unwrap()];
        args.extend_from_slice(extra);
        self.run(&args)
    }
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const CONFIG: &str = r#"
run_dir = "run"
backbone = "tiny"

[data]
train = "data/train.conll"
dev = "data/dev.conll"
test = "data/test.conll"

[sample]
k = 2
seed = 0

[pipeline.train]
learning_rate = 1e-3
batch_size = 4
grad_accum = 1
max_steps = 4
eval_every = 2

[ablation]
toggles = ["drop_null_negatives"]
k_values = [2]
"#;

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let f = Fixture { _dir: dir, root };
        let data = f.root.join("data");
        ok(&f.run(&[
            "synth",
            "--out",
            data.to_str().unwrap(),
            "--sentences",
            "40",
            "--pretrain-sentences",
            "200",
        ]));
        let text = data.join("pretrain.txt");
        ok(&f.run(&[
            "pretrain",
            "--text",
            text.to_str().unwrap(),
            "--name",
            "tiny",
            "--types",
            "LOC,MISC,ORG,PER",
            "--steps",
            "2",
            "--batch-size",
            "4",
            "--hidden",
            "16",
            "--layers",
            "1",
            "--heads",
            "2",
        ]));
        std::fs::write(f.config(), CONFIG).unwrap();
        ok(&f.run_cfg("train", &[]));
        f
    })
}

#[test]
fn missing_input_is_a_user_error_naming_the_path() {
    let f = fixture();
    let out = f.run_cfg("prepare", &["--set", "data.dev=\"data/nope.conll\""]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("nope.conll"), "{}", stderr(&out));
}

#[test]
fn bad_arguments_exit_with_one() {
    let f = fixture();
    assert_eq!(f.run(&["train"]).status.code(), Some(1));
    assert_eq!(f.run(&["no-such-command"]).status.code(), Some(1));
    let out = f.run_cfg("train", &["--dry-run", "--set", "sample.targets={PER=1}"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(f.run(&["--help"]).status.code(), Some(0));
}

#[test]
fn unknown_backbone_is_a_user_error() {
    let f = fixture();
    let out = f.run_cfg("train", &["--dry-run", "--set", "backbone=\"missing\""]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("missing"));
}

#[test]
fn dry_run_reports_counts_without_writing() {
    let f = fixture();
    let out = ok(&f.run_cfg("train", &["--dry-run", "--set", "run_dir=\"dry\""]));
    assert!(out.contains("config ok"), "{out}");
    assert!(!f.root.join("dry").exists());
}

#[test]
fn existing_run_is_not_overwritten_without_force() {
    let f = fixture();
    let out = f.run_cfg("train", &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--force"));

    let out = f.run_cfg("train", &["--set", "pipeline.train.max_steps=3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("different config"));

    let set = ["--set", "run_dir=\"forced\""];
    ok(&f.run_cfg("train", &set));
    let forced: Vec<&str> = set.iter().copied().chain(["--force"]).collect();
    ok(&f.run_cfg("train", &forced));
    assert!(f.root.join("forced/model").exists());
}

#[test]
fn prepare_writes_a_sample_meeting_k() {
    let f = fixture();
    ok(&f.run_cfg("prepare", &["--set", "run_dir=\"prep\""]));
    let text = std::fs::read_to_string(f.root.join("prep/data/train.conll")).unwrap();
    let sample = parse_conll(&text, TagColumn::Last).unwrap();
    let counts = mention_counts(&sample);
    assert_eq!(counts.len(), 4);
    assert!(counts.values().all(|&n| n >= 2), "{counts:?}");
    assert!(f.root.join("prep/data/summary.json").exists());
}

#[test]
fn build_instances_writes_jsonl() {
    let f = fixture();
    let out = ok(&f.run_cfg("build-instances", &["--set", "run_dir=\"inst\""]));
    let text = std::fs::read_to_string(f.root.join("inst/instances.jsonl")).unwrap();
    let n = text.lines().count();
    assert!(n > 0);
    assert!(out.contains(&format!("wrote {n} instances")), "{out}");
    for line in text.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
}

fn columns(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split_whitespace().map(String::from).collect())
        .collect()
}

#[test]
fn predictions_append_a_parseable_tag_column() {
    let f = fixture();
    ok(&f.run_cfg("predict", &[]));
    let pred = f.root.join("run/predictions/test.conll");
    let input = columns(&f.root.join("data/test.conll"));
    let output = columns(&pred);
    assert_eq!(input.len(), output.len());
    for (a, b) in input.iter().zip(&output) {
        if a.is_empty() {
            assert!(b.is_empty());
        } else {
            assert_eq!(&b[..a.len()], a.as_slice());
            assert_eq!(b.len(), a.len() + 1);
        }
    }
    let text = std::fs::read_to_string(&pred).unwrap();
    let gold = parse_conll(
        &std::fs::read_to_string(f.root.join("data/test.conll")).unwrap(),
        TagColumn::Last,
    )
    .unwrap();
    let parsed = parse_conll(&text, TagColumn::Last).unwrap();
    assert_eq!(parsed.len(), gold.len());
    ok(&f.run(&["eval", "--predictions", pred.to_str().unwrap()]));
}

#[test]
fn gold_as_predictions_scores_one() {
    let f = fixture();
    let path = f.root.join("gold_twice.conll");
    let doubled: String = columns(&f.root.join("data/test.conll"))
        .iter()
        .map(|c| match c.last() {
            Some(tag) => format!("{} {tag}\n", c.join(" ")),
            None => "\n".into(),
        })
        .collect();
    std::fs::write(&path, doubled).unwrap();
    let cfg = f.config();
    ok(&f.run(&[
        "eval",
        "--predictions",
        path.to_str().unwrap(),
        "-c",
        cfg.to_str().unwrap(),
        "--set",
        "run_dir=\"ev\"",
    ]));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(f.root.join("ev/eval.json")).unwrap())
            .unwrap();
    assert_eq!(report["f1"], 1.0);
}

#[test]
fn sweep_tau_selects_the_best_dev_point() {
    let f = fixture();
    let out = ok(&f.run_cfg("sweep-tau", &[]));
    let sweep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(f.root.join("run/tau_sweep.json")).unwrap())
            .unwrap();
    let best = sweep["curve"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p[1].as_f64().unwrap())
        .fold(f64::MIN, f64::max);
    assert_eq!(sweep["f1"].as_f64().unwrap(), best);
    assert!(out.contains("selected tau"));
}

#[test]
fn model_from_another_backbone_is_rejected() {
    let f = fixture();
    let data = f.root.join("data/pretrain.txt");
    ok(&f.run(&[
        "pretrain",
        "--text",
        data.to_str().unwrap(),
        "--name",
        "other",
        "--types",
        "LOC,MISC,ORG,PER",
        "--steps",
        "1",
        "--batch-size",
        "2",
        "--hidden",
        "8",
        "--layers",
        "1",
        "--heads",
        "2",
    ]));
    let out = f.run_cfg("predict", &["--set", "backbone=\"other\""]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("backbone"), "{}", stderr(&out));
}

#[test]
fn ablation_writes_tables() {
    let f = fixture();
    let out = ok(&f.run_cfg(
        "ablate",
        &[
            "--set",
            "run_dir=\"abl\"",
            "--set",
            "pipeline.train.max_steps=2",
        ],
    ));
    assert!(out.contains("drop_null_negatives"), "{out}");
    let summary = std::fs::read_to_string(f.root.join("abl/ablation/summary.tsv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
}
