use std::path::{Path, PathBuf};

use rankcal::calibration::{reliability_plot_spec, Reducer, ReliabilityReport};
use rankcal::config::{ExperimentConfig, Split};
use rankcal::data::{load_corpus, save_corpus, CorpusFormat, DialogueInstance, RankedList};
use rankcal::evaluation::{mean, paired_t_test, RankingMetric};
use rankcal::experiment::{self, Predictions};
use rankcal::forest::CrossValidation;
use rankcal::negatives::{resample_negatives, ResponsePool, Strategy};
use rankcal::nota::{build_nota_dataset, nota_table_csv, save_nota_dataset};
use rankcal::risk::{rerank_with, select_b, sweep_csv, sweep_plot_spec, sweep_report};
use rankcal::stochastic::{format_sig9, predict_dropout, predict_ensemble, train_ensemble, RunFile};
use rankcal::{Error, Result};

use crate::files::{self, header, Model};
use crate::{Command, Method};

pub fn dispatch(cfg: &ExperimentConfig, command: Command) -> Result<()> {
    match command {
        Command::Gen { domain, out_dir } => {
            let dir = out_dir.unwrap_or_else(|| cfg.output_dir().join("corpora"));
            let domains = if domain.is_empty() { cfg.domains.keys().cloned().collect() } else { domain };
            for d in domains {
                for p in gen(cfg, &d, &dir)? {
                    println!("{}", p.display());
                }
            }
            Ok(())
        }
        Command::SampleNegatives {
            corpus,
            strategy,
            out,
            pool,
            save_pool,
        } => sample_negatives(cfg, &corpus, strategy, &out, pool.as_deref(), save_pool.as_deref()),
        Command::Train { corpus, out, scope } => train(cfg, &corpus, &out, &scope),
        Command::Predict {
            model,
            corpus,
            method,
            out,
        } => predict(cfg, &model, &corpus, method, &out),
        Command::Calibrate {
            run,
            corpus,
            reducer,
            out,
            plot,
        } => {
            let report = calibrate(cfg, &run, &corpus, reducer.parse()?, &out)?;
            if let Some(p) = plot {
                write_plot(&p, &reliability_plot_spec(&cfg.hash(), &[(label_of(&run), file_name(&out))]))?;
            }
            println!("ece {}", format_sig9(report.ece));
            Ok(())
        }
        Command::Rerank { run, corpus, b, out } => rerank(cfg, &run, &corpus, b.unwrap_or(cfg.risk.b), &out),
        Command::SweepB { run, corpus, out, plot } => {
            sweep_b(cfg, &run, &corpus, &out)?;
            if let Some(p) = plot {
                write_plot(&p, &sweep_plot_spec(&cfg.hash(), &[(label_of(&run), file_name(&out))]))?;
            }
            Ok(())
        }
        Command::SelectB { run, corpus, out } => {
            let b = select_b_run(cfg, &run, &corpus)?;
            println!("{b}");
            if let Some(o) = out {
                files::write(&o, &format!("# {}\nrun,b\n{},{b}\n", header(&cfg.hash()), label_of(&run)))?;
            }
            Ok(())
        }
        Command::Nota {
            corpus,
            ensemble_run,
            dropout_run,
            out_dir,
        } => {
            let label = label_of(&corpus);
            let cvs = nota(cfg, &corpus, ensemble_run.as_deref(), dropout_run.as_deref(), &out_dir, &label)?;
            files::write(&out_dir.join("nota.csv"), &nota_csv(cfg, &[(label, cvs)])?)
        }
        Command::Grid { out_dir } => {
            let grid = experiment::run_experiment_grid(cfg)?;
            let dir = out_dir.unwrap_or_else(|| cfg.output_dir().join("grid"));
            for p in grid.write_reports(&dir)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Eval {
            ranked,
            corpus,
            baseline,
            k,
            out,
        } => {
            let table = eval(cfg, &ranked, &corpus, baseline.as_deref(), &k)?;
            match out {
                Some(o) => files::write(&o, &table),
                None => {
                    print!("{table}");
                    Ok(())
                }
            }
        }
        Command::Pipeline { out_dir } => {
            let dir = out_dir.unwrap_or_else(|| cfg.output_dir());
            let manifest = crate::pipeline::run(cfg, &dir)?;
            println!("{}", manifest.display());
            Ok(())
        }
    }
}

/// File stem, used to label report rows and seed streams.
pub fn label_of(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn write_plot(path: &Path, spec: &serde_json::Value) -> Result<()> {
    let mut body = serde_json::to_string_pretty(spec).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    body.push('\n');
    files::write(path, &body)
}

pub fn read_corpus(path: &Path) -> Result<Vec<DialogueInstance>> {
    load_corpus(path, CorpusFormat::JsonLines)
}

fn save(path: &Path, corpus: &[DialogueInstance], cfg: &ExperimentConfig) -> Result<()> {
    files::ensure_parent(path)?;
    save_corpus(path, corpus, Some(&header(&cfg.hash())))
}

/// Writes `<domain>-<split>.jsonl` for every split.
pub fn gen(cfg: &ExperimentConfig, domain: &str, dir: &Path) -> Result<Vec<PathBuf>> {
    Split::ALL
        .iter()
        .map(|&split| {
            let corpus = experiment::domain_split(cfg, domain, split)?;
            let p = dir.join(format!("{domain}-{}.jsonl", split.as_str()));
            save(&p, &corpus, cfg)?;
            Ok(p)
        })
        .collect()
}

pub fn sample_negatives(
    cfg: &ExperimentConfig,
    corpus: &Path,
    strategy: Strategy,
    out: &Path,
    pool: Option<&Path>,
    save_pool: Option<&Path>,
) -> Result<()> {
    let c = read_corpus(corpus)?;
    let pool = match pool {
        Some(p) => ResponsePool::load(p)?,
        None => ResponsePool::from_ground_truth(&c),
    };
    if let Some(p) = save_pool {
        files::ensure_parent(p)?;
        pool.save(p, Some(&cfg.hash()))?;
    }
    let seed = cfg.seed(&format!("ns/{}/{strategy}", label_of(corpus)), 0);
    let resampled = resample_negatives(&c, &pool, strategy, cfg.negatives.per_list, seed)?;
    save(out, &resampled, cfg)
}

pub fn train(cfg: &ExperimentConfig, corpus: &Path, out: &Path, scope: &str) -> Result<()> {
    let c = read_corpus(corpus)?;
    let stats = rankcal::features::CorpusStats::from_corpus(&c);
    let members = train_ensemble(&c, &stats, &cfg.ensemble_spec(experiment::model_scope(scope)))?;
    log::info!("trained {} members on {} instances", members.len(), c.len());
    Model { stats, members }.save(out, &cfg.hash())
}

pub fn predict(cfg: &ExperimentConfig, model: &Path, corpus: &Path, method: Method, out: &Path) -> Result<()> {
    let m = Model::load(model, cfg.scorer.hidden)?;
    let c = read_corpus(corpus)?;
    let spec = cfg.dropout_spec();
    let dists = c
        .iter()
        .map(|inst| match method {
            Method::Deterministic => predict_ensemble(&m.members, inst, &m.stats).map(|d| d.first_row()),
            Method::Ensemble => predict_ensemble(&m.members, inst, &m.stats),
            Method::Dropout => predict_dropout(&m.members[0], &spec, inst, &m.stats),
        })
        .collect::<Result<Vec<_>>>()?;
    files::ensure_parent(out)?;
    RunFile::new(dists, Some(cfg.hash()))?.save(out)
}

fn run_and_corpus(run: &Path, corpus: &Path) -> Result<(RunFile, Vec<DialogueInstance>)> {
    Ok((RunFile::load(run)?, read_corpus(corpus)?))
}

pub fn calibrate(cfg: &ExperimentConfig, run: &Path, corpus: &Path, reducer: Reducer, out: &Path) -> Result<ReliabilityReport> {
    let (r, c) = run_and_corpus(run, corpus)?;
    let report = experiment::calibration(cfg, &r.distributions, &c, reducer, &label_of(corpus))?;
    files::write(out, &report.to_csv(&cfg.hash()))?;
    Ok(report)
}

pub fn rerank(cfg: &ExperimentConfig, run: &Path, corpus: &Path, b: f64, out: &Path) -> Result<()> {
    let (r, c) = run_and_corpus(run, corpus)?;
    let by_id: std::collections::HashMap<&str, _> = r.distributions.iter().map(|d| (d.instance_id.as_str(), d)).collect();
    let lists = c
        .iter()
        .map(|inst| {
            let d = by_id
                .get(inst.id())
                .ok_or_else(|| Error::MissingDistribution(inst.id().to_string()))?;
            rerank_with(d, inst, b, cfg.covariance_term())
        })
        .collect::<Result<Vec<RankedList>>>()?;
    files::write(out, &files::ranked_text(&lists, &c, b, &cfg.hash())?)
}

fn run_pairs(run: &Path, corpus: &Path) -> Result<Vec<(rankcal::stochastic::PredictiveDistribution, DialogueInstance)>> {
    let (r, c) = run_and_corpus(run, corpus)?;
    let mut by_id: std::collections::HashMap<String, _> =
        r.distributions.into_iter().map(|d| (d.instance_id.clone(), d)).collect();
    c.into_iter()
        .map(|inst| {
            let d = by_id
                .remove(inst.id())
                .ok_or_else(|| Error::MissingDistribution(inst.id().to_string()))?;
            Ok((d, inst))
        })
        .collect()
}

pub fn sweep_b(cfg: &ExperimentConfig, run: &Path, corpus: &Path, out: &Path) -> Result<()> {
    let pairs = run_pairs(run, corpus)?;
    let metric = experiment::metric(cfg);
    let rows = sweep_report(&pairs, &cfg.risk.b_grid, metric)?;
    let n = pairs.first().map_or(0, |(_, i)| i.len());
    files::write(out, &sweep_csv(&rows, &metric.name(n), &cfg.hash()))
}

pub fn select_b_run(cfg: &ExperimentConfig, run: &Path, corpus: &Path) -> Result<f64> {
    select_b(&run_pairs(run, corpus)?, &cfg.risk.b_grid, experiment::metric(cfg))
}

/// Builds and saves the NOTA dataset, then scores every configured feature spec.
pub fn nota(
    cfg: &ExperimentConfig,
    corpus: &Path,
    ensemble_run: Option<&Path>,
    dropout_run: Option<&Path>,
    out_dir: &Path,
    label: &str,
) -> Result<Vec<CrossValidation>> {
    if ensemble_run.is_none() && dropout_run.is_none() {
        return Err(Error::InvalidArgument("nota needs --ensemble-run or --dropout-run".into()));
    }
    let c = read_corpus(corpus)?;
    let dataset = build_nota_dataset(&c, cfg.seed(&format!("nota-dataset/{label}"), 0))?;
    let p = out_dir.join(format!("{label}-nota.jsonl"));
    files::ensure_parent(&p)?;
    save_nota_dataset(&p, &dataset, Some(&header(&cfg.hash())))?;
    let load = |p: Option<&Path>| -> Result<Vec<_>> { p.map_or(Ok(Vec::new()), |p| RunFile::load(p).map(|r| r.distributions)) };
    let preds = Predictions {
        ensemble: load(ensemble_run)?,
        dropout: load(dropout_run)?,
    };
    experiment::nota_scores(cfg, &dataset, &preds, label)
}

pub fn nota_csv(cfg: &ExperimentConfig, rows: &[(String, Vec<CrossValidation>)]) -> Result<String> {
    let names: Vec<String> = cfg.nota_specs()?.iter().map(|s| s.name()).collect();
    Ok(nota_table_csv(&cfg.hash(), &names, rows))
}

pub fn eval(cfg: &ExperimentConfig, ranked: &[PathBuf], corpus: &Path, baseline: Option<&Path>, ks: &[usize]) -> Result<String> {
    let c = read_corpus(corpus)?;
    let per_query = |path: &Path, k: usize| -> Result<Vec<f64>> {
        let lists = files::read_ranked(path, &c)?;
        lists
            .iter()
            .zip(&c)
            .map(|(l, inst)| RankingMetric::RecallAt(k).evaluate(l, inst.labels()))
            .collect()
    };
    let n = c.first().map_or(0, DialogueInstance::len);
    let mut s = format!("# {}\nrun,metric,value,p_value,significant\n", header(&cfg.hash()));
    for &k in ks {
        let base = baseline.map(|b| per_query(b, k)).transpose()?;
        for path in ranked {
            let v = per_query(path, k)?;
            let (p, sig) = match &base {
                Some(b) => {
                    let t = paired_t_test(&v, b)?;
                    (format_sig9(t.p), t.significant(experiment::ALPHA).to_string())
                }
                None => (String::new(), String::new()),
            };
            s.push_str(&format!(
                "{},{},{},{p},{sig}\n",
                label_of(path),
                RankingMetric::RecallAt(k).name(n),
                format_sig9(mean(&v))
            ));
        }
    }
    Ok(s)
}
