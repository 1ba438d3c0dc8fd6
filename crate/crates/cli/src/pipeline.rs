//! The default end-to-end run. Layout under the output directory:
//!
//! ```text
//! corpora/<domain>-<split>.jsonl
//! model/scorer-<m>.txt, model/stats.tsv
//! runs/<domain>-<split>-<method>.tsv
//! calibration/<domain>-test-<method>.csv, calibration/reliability.plot.json
//! risk/selected_b.csv, risk/<domain>-test-<method>.csv, risk/sweep.plot.json
//! nota/<domain>-test-nota.jsonl, nota/nota.csv
//! MANIFEST.sha256
//! ```

use std::path::{Path, PathBuf};

use rankcal::calibration::{reliability_plot_spec, Reducer};
use rankcal::config::ExperimentConfig;
use rankcal::experiment::strategy_name;
use rankcal::risk::sweep_plot_spec;
use rankcal::{Error, Result};

use crate::commands::{self, write_plot};
use crate::files::{self, header};
use crate::Method;

pub const MANIFEST: &str = "MANIFEST.sha256";

/// Runs every stage into `out` and returns the manifest path.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let hash = cfg.hash();
    let source = cfg
        .grid
        .sources
        .first()
        .ok_or_else(|| Error::Config("grid.sources is empty".into()))?;
    let mut domains: Vec<&String> = std::iter::once(source).chain(&cfg.grid.targets).collect();
    domains.sort();
    domains.dedup();

    let corpora = out.join("corpora");
    for d in &domains {
        commands::gen(cfg, d, &corpora)?;
    }
    let corpus = |d: &str, split: &str| corpora.join(format!("{d}-{split}.jsonl"));

    let (mut train, mut valid) = (corpus(source, "train"), corpus(source, "valid"));
    if let Some(s) = cfg.train_strategy()? {
        for p in [&mut train, &mut valid] {
            let resampled = corpora.join(format!("{}-{s}.jsonl", commands::label_of(p)));
            commands::sample_negatives(cfg, p, s, &resampled, None, None)?;
            *p = resampled;
        }
    }
    log::info!("negatives for training: {}", strategy_name(cfg.train_strategy()?));
    let model = out.join("model");
    commands::train(cfg, &train, &model, source)?;

    let runs = out.join("runs");
    let run_path = |p: &Path, m: Method| runs.join(format!("{}-{}.tsv", commands::label_of(p), m.as_str()));

    let risk = out.join("risk");
    let mut selected = format!("# {}\nmethod,b\n", header(&hash));
    for m in [Method::Ensemble, Method::Dropout] {
        let r = run_path(&valid, m);
        commands::predict(cfg, &model, &valid, m, &r)?;
        let b = commands::select_b_run(cfg, &r, &valid)?;
        selected.push_str(&format!("{},{b}\n", m.as_str()));
    }
    files::write(&risk.join("selected_b.csv"), &selected)?;

    let calibration = out.join("calibration");
    let nota_dir = out.join("nota");
    let mut reliability = Vec::new();
    let mut sweeps = Vec::new();
    let mut nota_rows = Vec::new();
    for d in &cfg.grid.targets {
        let test = corpus(d, "test");
        let label = commands::label_of(&test);
        for m in Method::ALL {
            let r = run_path(&test, m);
            commands::predict(cfg, &model, &test, m, &r)?;
            let reducer = if m == Method::Deterministic { Reducer::Deterministic } else { Reducer::Mean };
            let name = format!("{label}-{}.csv", m.as_str());
            commands::calibrate(cfg, &r, &test, reducer, &calibration.join(&name))?;
            reliability.push((format!("{label} {}", m.as_str()), name.clone()));
            if m != Method::Deterministic {
                commands::sweep_b(cfg, &r, &test, &risk.join(&name))?;
                sweeps.push((format!("{label} {}", m.as_str()), name));
            }
        }
        let cvs = commands::nota(
            cfg,
            &test,
            Some(&run_path(&test, Method::Ensemble)),
            Some(&run_path(&test, Method::Dropout)),
            &nota_dir,
            &label,
        )?;
        nota_rows.push((label, cvs));
    }
    write_plot(&calibration.join("reliability.plot.json"), &reliability_plot_spec(&hash, &reliability))?;
    write_plot(&risk.join("sweep.plot.json"), &sweep_plot_spec(&hash, &sweeps))?;
    files::write(&nota_dir.join("nota.csv"), &commands::nota_csv(cfg, &nota_rows)?)?;

    let manifest = out.join(MANIFEST);
    files::write(&manifest, &files::manifest(out, MANIFEST)?)?;
    Ok(manifest)
}
