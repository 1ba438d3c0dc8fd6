use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rankcal::data::{load_corpus, CorpusFormat};
use rankcal::stochastic::{distribution_stats, RunFile};

const SMALL: &[&str] = &[
    "synthetic.train_instances=300",
    "synthetic.valid_instances=60",
    "synthetic.test_instances=80",
    "scorer.epochs=2",
    "ensemble.members=3",
    "dropout.passes=5",
    "nota.trees=10",
];

fn rankcal(args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rankcal"));
    for s in SMALL {
        cmd.args(["--set", s]);
    }
    cmd.args(args).env_remove("RANKCAL_CONFIG").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = rankcal(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Env {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Env {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        ok(&["gen", "--domain", "base", "--out-dir", s(&root.join("c"))]);
        ok(&["train", "--corpus", s(&root.join("c/base-train.jsonl")), "--out", s(&root.join("model"))]);
        Self { _dir: dir, root }
    }

    fn p(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn predict(&self, method: &str) -> PathBuf {
        let out = self.p(&format!("runs/{method}.tsv"));
        ok(&[
            "predict",
            "--model",
            s(&self.p("model")),
            "--corpus",
            s(&self.p("c/base-test.jsonl")),
            "--method",
            method,
            "--out",
            s(&out),
        ]);
        out
    }
}

#[test]
fn unknown_subcommand_and_flag_fail_with_usage() {
    let out = rankcal(&["frobnicate"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = rankcal(&["gen", "--bogus"]);
    assert!(!out.status.success());
}

#[test]
fn bad_config_is_a_diagnostic_line() {
    let out = rankcal(&["--set", "risk.b_grid=[0.5]", "grid"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: "), "{err}");
}

#[test]
fn predict_then_calibrate_counts_match() {
    let env = Env::new();
    for method in ["deterministic", "ensemble", "dropout"] {
        let run = env.predict(method);
        let r = RunFile::load(&run).unwrap();
        assert_eq!(r.distributions.len(), 80);
        let csv = env.p(&format!("cal-{method}.csv"));
        let reducer = if method == "deterministic" { "deterministic" } else { "mean" };
        ok(&[
            "calibrate",
            "--run",
            s(&run),
            "--corpus",
            s(&env.p("c/base-test.jsonl")),
            "--reducer",
            reducer,
            "--out",
            s(&csv),
            "--plot",
            s(&env.p("rel.json")),
        ]);
        let text = std::fs::read_to_string(&csv).unwrap();
        let head = text.lines().next().unwrap();
        // one relevant and one non-relevant prediction per instance
        assert!(head.contains("n=160"), "{head}");
        assert!(head.contains("config="));
        let sizes: usize = text
            .lines()
            .skip(2)
            .map(|l| l.split(',').nth(2).unwrap().parse::<usize>().unwrap())
            .sum();
        assert_eq!(sizes, 160);
    }
}

#[test]
fn rerank_at_zero_is_mean_order_and_eval_reads_it() {
    let env = Env::new();
    let run = env.predict("ensemble");
    let corpus = env.p("c/base-test.jsonl");
    let ranked = env.p("ranked-0.tsv");
    ok(&["rerank", "--run", s(&run), "--corpus", s(&corpus), "--b", "0", "--out", s(&ranked)]);
    let insts = load_corpus(&corpus, CorpusFormat::JsonLines).unwrap();
    let r = RunFile::load(&run).unwrap();
    let text = std::fs::read_to_string(&ranked).unwrap();
    let mut lines = text.lines().skip(1);
    for (d, inst) in r.distributions.iter().zip(&insts) {
        let d = d.aligned_to(inst).unwrap();
        let m = distribution_stats(&d).mean;
        let ids = inst.candidate_ids();
        let mut order: Vec<usize> = (0..m.len()).collect();
        order.sort_by(|&a, &b| m[b].partial_cmp(&m[a]).unwrap().then(ids[a].cmp(ids[b])));
        for &j in &order {
            let line = lines.next().unwrap();
            assert_eq!(line.split('\t').nth(2).unwrap(), ids[j]);
        }
    }

    let risky = env.p("ranked-1.tsv");
    ok(&["rerank", "--run", s(&run), "--corpus", s(&corpus), "--b", "-0.1", "--out", s(&risky)]);
    let table = ok(&[
        "eval",
        "--ranked",
        s(&risky),
        "--corpus",
        s(&corpus),
        "--baseline",
        s(&ranked),
        "--k",
        "1,5",
    ]);
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 4, "{table}");
    assert!(rows[2].starts_with("ranked-1,R_10@1,"));
    assert!(rows[3].contains("R_10@5"));
}

#[test]
fn sweep_and_select_b() {
    let env = Env::new();
    let run = env.predict("dropout");
    let corpus = env.p("c/base-test.jsonl");
    let out = env.p("sweep.csv");
    ok(&["sweep-b", "--run", s(&run), "--corpus", s(&corpus), "--out", s(&out), "--plot", s(&env.p("sweep.json"))]);
    let text = std::fs::read_to_string(&out).unwrap();
    // header comment, column names, 22 grid values
    assert_eq!(text.lines().count(), 24);
    let b: f64 = ok(&["select-b", "--run", s(&run), "--corpus", s(&corpus)]).trim().parse().unwrap();
    assert!(b >= 0.0);
    let plot: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(env.p("sweep.json")).unwrap()).unwrap();
    assert_eq!(plot["series"][0]["data"], "sweep.csv");
}

#[test]
fn sample_negatives_and_nota() {
    let env = Env::new();
    let corpus = env.p("c/base-test.jsonl");
    let out = env.p("bm25.jsonl");
    ok(&[
        "sample-negatives",
        "--corpus",
        s(&corpus),
        "--strategy",
        "bm25",
        "--out",
        s(&out),
        "--save-pool",
        s(&env.p("pool.jsonl")),
    ]);
    let lists = load_corpus(&out, CorpusFormat::JsonLines).unwrap();
    assert_eq!(lists.len(), 80);
    assert!(lists.iter().all(|l| l.len() == 10 && l.relevant_count() == 1));
    // the saved pool is accepted back
    let again = env.p("bm25-again.jsonl");
    ok(&[
        "sample-negatives",
        "--corpus",
        s(&corpus),
        "--strategy",
        "bm25",
        "--out",
        s(&again),
        "--pool",
        s(&env.p("pool.jsonl")),
    ]);
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());

    let ens = env.predict("ensemble");
    let drop = env.predict("dropout");
    ok(&[
        "nota",
        "--corpus",
        s(&corpus),
        "--ensemble-run",
        s(&ens),
        "--dropout-run",
        s(&drop),
        "--out-dir",
        s(&env.p("nota")),
    ]);
    let table = std::fs::read_to_string(env.p("nota/nota.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(env.p("nota/base-test-nota.jsonl").exists());
    assert!(!rankcal(&["nota", "--corpus", s(&corpus), "--out-dir", s(&env.p("n2"))]).status.success());
}

#[test]
fn grid_command_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "--set",
        "grid.test_ns=[\"none\"]",
        "grid",
        "--out-dir",
        s(dir.path()),
    ]);
    for name in ["grid_cells.csv", "grid_deterministic.csv", "grid_ensemble.csv", "grid_dropout.csv"] {
        let t = std::fs::read_to_string(dir.path().join(name)).unwrap();
        assert!(t.starts_with("# config="), "{name}");
    }
    let cells = std::fs::read_to_string(dir.path().join("grid_cells.csv")).unwrap();
    // base -> base, base -> rotated
    assert_eq!(cells.lines().count(), 4);
}

#[test]
fn config_file_and_env_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, "[synthetic]\ntest_instances = 40\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_rankcal"))
        .args(["--config", s(&cfg), "gen", "--domain", "base", "--out-dir", s(&dir.path().join("c"))])
        .env("RANKCAL_SYNTHETIC__VALID_INSTANCES", "12")
        .env("RANKCAL_SYNTHETIC__TRAIN_INSTANCES", "30")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let n = |f: &str| load_corpus(dir.path().join("c").join(f), CorpusFormat::JsonLines).unwrap().len();
    assert_eq!((n("base-train.jsonl"), n("base-valid.jsonl"), n("base-test.jsonl")), (30, 12, 40));
}
