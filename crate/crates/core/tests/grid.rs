use rankcal::config::ExperimentConfig;
use rankcal::experiment::{run_experiment_grid, GridView};

fn small(extra: &[(&str, &str)]) -> ExperimentConfig {
    let mut o: Vec<(String, String)> = [
        ("synthetic.train_instances", "300"),
        ("synthetic.valid_instances", "60"),
        ("synthetic.test_instances", "80"),
        ("scorer.epochs", "2"),
        ("ensemble.members", "3"),
        ("dropout.passes", "4"),
        ("nota.trees", "5"),
    ]
    .iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    o.extend(extra.iter().map(|(k, v)| (k.to_string(), v.to_string())));
    ExperimentConfig::from_toml_with("", &o).unwrap()
}

#[test]
fn one_by_one_grid_is_a_single_no_shift_cell() {
    let cfg = small(&[
        ("grid.sources", "[\"base\"]"),
        ("grid.targets", "[\"base\"]"),
        ("grid.test_ns", "[\"none\"]"),
    ]);
    let g = run_experiment_grid(&cfg).unwrap();
    assert_eq!(g.cells.len(), 1);
    let c = &g.cells[0];
    assert!(c.no_shift);
    assert_eq!(c.queries, 80);
    assert!(c.deterministic.recall > 0.1);
    assert_eq!(c.deterministic.p_value, 1.0);
    assert!(!c.deterministic.significant);
}

#[test]
fn grid_counts_and_is_reproducible() {
    let cfg = small(&[
        ("grid.sources", "[\"base\", \"rotated\"]"),
        ("grid.targets", "[\"base\", \"rotated\"]"),
        ("grid.test_ns", "[\"none\", \"bm25\"]"),
    ]);
    let a = run_experiment_grid(&cfg).unwrap();
    assert_eq!(a.cells.len(), 8);
    let diag: Vec<_> = a.cells.iter().filter(|c| c.no_shift).map(|c| (&c.source, &c.test_ns)).collect();
    assert_eq!(diag.len(), 2);
    assert!(diag.iter().all(|(_, ns)| ns.as_str() == "none"));
    for c in &a.cells {
        assert_eq!(c.no_shift, c.source == c.target && c.test_ns == "none");
        assert!((0.0..=1.0).contains(&c.ensemble.ece));
        assert!(c.risk_ensemble.b >= 0.0);
    }
    let b = run_experiment_grid(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.cells_csv(), b.cells_csv());
    for v in GridView::ALL {
        let t = a.table_csv(v);
        assert!(t.starts_with(&format!("# config={}", cfg.hash())));
        // header + 2 sources
        assert_eq!(t.lines().count(), 4);
    }
}

#[test]
fn missing_corpus_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("exp.toml");
    std::fs::write(
        &p,
        "[domains.ext]\nshift = 0.0\ntest = \"missing.jsonl\"\n[grid]\nsources = [\"ext\"]\ntargets = [\"ext\"]\ntest_ns = [\"none\"]\n",
    )
    .unwrap();
    let cfg = ExperimentConfig::load(&p, &[]).unwrap();
    let t = std::time::Instant::now();
    let err = run_experiment_grid(&cfg).unwrap_err();
    assert!(err.to_string().contains("missing.jsonl"), "{err}");
    assert!(t.elapsed().as_secs_f64() < 5.0);
}
