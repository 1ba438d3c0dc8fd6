//! Domain corpora, per-source models, and the cross-domain / cross-NS
//! experiment grid.
//!
//! Every corpus, model and sampling stream draws its seed from the config's
//! master seed through a named component, so cells are a pure function of
//! the config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::calibration::{balanced_predictions, compute_ece_with, Reducer, ReliabilityReport};
use crate::config::{ExperimentConfig, Split};
use crate::data::{load_corpus, CorpusFormat, DialogueInstance};
use crate::error::{Error, Result};
use crate::evaluation::{mean, paired_t_test, RankingMetric};
use crate::features::CorpusStats;
use crate::forest::{CrossValidation, ForestConfig};
use crate::negatives::{resample_negatives, ResponsePool, Strategy};
use crate::nota::{build_nota_dataset, extract_nota_features, train_eval_nota, NotaInstance, NotaSources};
use crate::risk::{per_query_metric, select_b};
use crate::scorer::ScorerParameters;
use crate::seed::derive_seed;
use crate::stochastic::{
    distribution_stats, format_sig9, predict_dropout, predict_ensemble, train_ensemble, PredictiveDistribution,
};
use crate::synthetic::generate_synthetic_corpus;

/// Significance level for the grid's boolean columns.
pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct DomainData {
    pub name: String,
    pub train: Vec<DialogueInstance>,
    pub valid: Vec<DialogueInstance>,
    pub test: Vec<DialogueInstance>,
}

impl DomainData {
    pub fn split(&self, split: Split) -> &[DialogueInstance] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

/// One split of a domain: read from the configured path, or generated.
pub fn domain_split(cfg: &ExperimentConfig, domain: &str, split: Split) -> Result<Vec<DialogueInstance>> {
    let d = cfg
        .domains
        .get(domain)
        .ok_or_else(|| Error::Config(format!("unknown domain `{domain}`")))?;
    match d.path(split) {
        Some(p) => load_corpus(cfg.resolve(p), CorpusFormat::JsonLines),
        None => generate_synthetic_corpus(&cfg.synthetic_spec(domain, split)?),
    }
}

pub fn load_domain(cfg: &ExperimentConfig, domain: &str) -> Result<DomainData> {
    Ok(DomainData {
        name: domain.to_string(),
        train: domain_split(cfg, domain, Split::Train)?,
        valid: domain_split(cfg, domain, Split::Valid)?,
        test: domain_split(cfg, domain, Split::Test)?,
    })
}

pub fn strategy_name(s: Option<Strategy>) -> &'static str {
    s.map_or("none", |s| s.as_str())
}

/// Rebuild `corpus` with `strategy` negatives drawn from its own ground-truth
/// responses; `None` returns the lists unchanged.
pub fn apply_ns(
    cfg: &ExperimentConfig,
    corpus: &[DialogueInstance],
    strategy: Option<Strategy>,
    label: &str,
) -> Result<Vec<DialogueInstance>> {
    let Some(s) = strategy else {
        return Ok(corpus.to_vec());
    };
    let pool = ResponsePool::from_ground_truth(corpus);
    resample_negatives(
        corpus,
        &pool,
        s,
        cfg.negatives.per_list,
        cfg.seed(&format!("ns/{label}/{s}"), 0),
    )
}

/// Ensemble scope for a source domain, derived from its name.
pub fn model_scope(source: &str) -> u64 {
    derive_seed(0, &format!("source/{source}"), 0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceModel {
    pub name: String,
    pub stats: CorpusStats,
    /// Member 0 doubles as the deterministic baseline and the dropout model.
    pub members: Vec<ScorerParameters>,
}

pub fn train_source_model(cfg: &ExperimentConfig, name: &str, train: &[DialogueInstance]) -> Result<SourceModel> {
    let stats = CorpusStats::from_corpus(train);
    let members = train_ensemble(train, &stats, &cfg.ensemble_spec(model_scope(name)))?;
    Ok(SourceModel {
        name: name.to_string(),
        stats,
        members,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub ensemble: Vec<PredictiveDistribution>,
    pub dropout: Vec<PredictiveDistribution>,
}

impl Predictions {
    pub fn deterministic(&self) -> Vec<PredictiveDistribution> {
        self.ensemble.iter().map(PredictiveDistribution::first_row).collect()
    }
}

pub fn predict_all(cfg: &ExperimentConfig, model: &SourceModel, instances: &[DialogueInstance]) -> Result<Predictions> {
    let spec = cfg.dropout_spec();
    let ensemble = instances
        .par_iter()
        .map(|i| predict_ensemble(&model.members, i, &model.stats))
        .collect::<Result<Vec<_>>>()?;
    let dropout = instances
        .par_iter()
        .map(|i| predict_dropout(&model.members[0], &spec, i, &model.stats))
        .collect::<Result<Vec<_>>>()?;
    Ok(Predictions { ensemble, dropout })
}

pub fn metric(cfg: &ExperimentConfig) -> RankingMetric {
    RankingMetric::RecallAt(cfg.risk.recall_cutoff)
}

pub fn pairs(dists: &[PredictiveDistribution], instances: &[DialogueInstance]) -> Vec<(PredictiveDistribution, DialogueInstance)> {
    dists.iter().cloned().zip(instances.iter().cloned()).collect()
}

/// Balanced ECE with the config's buckets, scheme and non-relevant count.
/// `label` names the evaluation set; methods compared on the same set see
/// the same non-relevant draws.
pub fn calibration(
    cfg: &ExperimentConfig,
    dists: &[PredictiveDistribution],
    instances: &[DialogueInstance],
    reducer: Reducer,
    label: &str,
) -> Result<ReliabilityReport> {
    let preds = balanced_predictions(
        dists,
        instances,
        reducer,
        cfg.calibration.non_rel_per_query,
        cfg.seed(&format!("calibration/{label}"), 0),
    )?;
    compute_ece_with(&preds, cfg.calibration.buckets, cfg.bucket_scheme()?)
}

/// Mean per-candidate predictive variance.
pub fn mean_variance(dists: &[PredictiveDistribution]) -> f64 {
    let per: Vec<f64> = dists.iter().map(|d| mean(&distribution_stats(d).variance)).collect();
    mean(&per)
}

/// NOTA dataset from `corpus` and one cross-validated score per configured
/// feature spec, all specs sharing the fold assignment.
pub fn nota_evaluation(
    cfg: &ExperimentConfig,
    model: &SourceModel,
    corpus: &[DialogueInstance],
    label: &str,
) -> Result<(Vec<NotaInstance>, Vec<CrossValidation>)> {
    let dataset = build_nota_dataset(corpus, cfg.seed(&format!("nota-dataset/{label}"), 0))?;
    let preds = predict_all(cfg, model, corpus)?;
    let results = nota_scores(cfg, &dataset, &preds, label)?;
    Ok((dataset, results))
}

pub fn nota_scores(
    cfg: &ExperimentConfig,
    dataset: &[NotaInstance],
    preds: &Predictions,
    label: &str,
) -> Result<Vec<CrossValidation>> {
    let ens: BTreeMap<&str, &PredictiveDistribution> =
        preds.ensemble.iter().map(|d| (d.instance_id.as_str(), d)).collect();
    let drop: BTreeMap<&str, &PredictiveDistribution> =
        preds.dropout.iter().map(|d| (d.instance_id.as_str(), d)).collect();
    let labels: Vec<u8> = dataset.iter().map(|d| d.label).collect();
    let forest = ForestConfig {
        n_trees: cfg.nota.trees,
        max_features: None,
    };
    let seed = cfg.seed(&format!("nota-forest/{label}"), 0);
    cfg.nota_specs()?
        .iter()
        .map(|spec| {
            let x = dataset
                .iter()
                .map(|d| {
                    let sources = NotaSources {
                        ensemble: ens.get(d.base_id()).copied(),
                        dropout: drop.get(d.base_id()).copied(),
                    };
                    extract_nota_features(d, sources, spec)
                })
                .collect::<Result<Vec<_>>>()?;
            train_eval_nota(&x, &labels, cfg.nota.folds, &forest, seed)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Grid
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub recall: f64,
    pub ece: f64,
    /// Paired t-test of per-query recall against the deterministic baseline.
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskResult {
    /// Chosen on the source's validation split.
    pub b: f64,
    pub recall: f64,
    /// Relative change over the same distribution at `b = 0`, in percent.
    pub gain_percent: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub source: String,
    pub target: String,
    pub train_ns: String,
    pub test_ns: String,
    pub no_shift: bool,
    pub queries: usize,
    pub deterministic: MethodResult,
    /// Mean recall over the first `baseline_repeats` members used alone.
    pub baseline_repeat_recall: f64,
    pub ensemble: MethodResult,
    pub dropout: MethodResult,
    pub risk_ensemble: RiskResult,
    pub risk_dropout: RiskResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentGrid {
    pub config_hash: String,
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    pub train_ns: String,
    pub test_ns: Vec<String>,
    /// Source-major, then target, then test strategy.
    pub cells: Vec<CellResult>,
}

struct Trained {
    model: SourceModel,
    b_ensemble: f64,
    b_dropout: f64,
}

fn ttest(a: &[f64], b: &[f64]) -> Result<(f64, bool)> {
    let r = paired_t_test(a, b)?;
    Ok((r.p, r.significant(ALPHA)))
}

fn method(
    cfg: &ExperimentConfig,
    dists: &[PredictiveDistribution],
    test: &[DialogueInstance],
    reducer: Reducer,
    baseline: &[f64],
    label: &str,
) -> Result<(MethodResult, Vec<f64>)> {
    let per = per_query_metric(&pairs(dists, test), 0.0, metric(cfg))?;
    let (p_value, significant) = ttest(&per, baseline)?;
    let ece = calibration(cfg, dists, test, reducer, label)?.ece;
    Ok((
        MethodResult {
            recall: mean(&per),
            ece,
            p_value,
            significant,
        },
        per,
    ))
}

fn risk(cfg: &ExperimentConfig, dists: &[PredictiveDistribution], test: &[DialogueInstance], b: f64, reference: &[f64]) -> Result<RiskResult> {
    let per = per_query_metric(&pairs(dists, test), b, metric(cfg))?;
    let (p_value, significant) = ttest(&per, reference)?;
    let (m, r) = (mean(&per), mean(reference));
    Ok(RiskResult {
        b,
        recall: m,
        gain_percent: if r > 0.0 { (m - r) / r * 100.0 } else { 0.0 },
        p_value,
        significant,
    })
}

fn evaluate_cell(
    cfg: &ExperimentConfig,
    trained: &Trained,
    target: &str,
    test_ns: &str,
    train_ns: &str,
    test: &[DialogueInstance],
) -> Result<CellResult> {
    let model = &trained.model;
    let preds = predict_all(cfg, model, test)?;
    let det = preds.deterministic();
    let label = format!("{target}/{test_ns}");
    let m = metric(cfg);
    let det_per = per_query_metric(&pairs(&det, test), 0.0, m)?;
    let (deterministic, _) = method(cfg, &det, test, Reducer::Deterministic, &det_per, &label)?;
    let (ensemble, ens_per) = method(cfg, &preds.ensemble, test, Reducer::Mean, &det_per, &label)?;
    let (dropout, drop_per) = method(cfg, &preds.dropout, test, Reducer::Mean, &det_per, &label)?;
    let repeats = cfg.grid.baseline_repeats;
    let mut repeat_recall = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let rows: Vec<PredictiveDistribution> = preds
            .ensemble
            .iter()
            .map(|d| d.row(r))
            .collect::<Result<_>>()?;
        repeat_recall.push(mean(&per_query_metric(&pairs(&rows, test), 0.0, m)?));
    }
    Ok(CellResult {
        source: model.name.clone(),
        target: target.to_string(),
        train_ns: train_ns.to_string(),
        test_ns: test_ns.to_string(),
        no_shift: model.name == target && train_ns == test_ns,
        queries: test.len(),
        deterministic,
        baseline_repeat_recall: mean(&repeat_recall),
        ensemble,
        dropout,
        risk_ensemble: risk(cfg, &preds.ensemble, test, trained.b_ensemble, &ens_per)?,
        risk_dropout: risk(cfg, &preds.dropout, test, trained.b_dropout, &drop_per)?,
    })
}

/// Train one model per source and evaluate it on every (target, test
/// strategy) pair. All corpora are loaded before any training starts.
pub fn run_experiment_grid(cfg: &ExperimentConfig) -> Result<ExperimentGrid> {
    cfg.validate()?;
    if cfg.grid.baseline_repeats == 0 || cfg.grid.baseline_repeats > cfg.ensemble.members {
        return Err(Error::Config(format!(
            "grid.baseline_repeats must lie in 1..={}",
            cfg.ensemble.members
        )));
    }
    let train_strategy = cfg.train_strategy()?;
    let train_ns = strategy_name(train_strategy).to_string();
    let test_strategies = cfg.test_strategies()?;

    let mut names: Vec<&String> = cfg.grid.sources.iter().chain(&cfg.grid.targets).collect();
    names.sort();
    names.dedup();
    let mut domains = BTreeMap::new();
    for name in names {
        domains.insert(name.clone(), load_domain(cfg, name)?);
    }

    let mut tests: BTreeMap<(String, String), Vec<DialogueInstance>> = BTreeMap::new();
    for target in &cfg.grid.targets {
        for &s in &test_strategies {
            let ns = strategy_name(s).to_string();
            let corpus = apply_ns(cfg, &domains[target].test, s, &format!("{target}/test"))?;
            tests.insert((target.clone(), ns), corpus);
        }
    }

    let mut cells = Vec::new();
    for source in &cfg.grid.sources {
        let d = &domains[source];
        let train = apply_ns(cfg, &d.train, train_strategy, &format!("{source}/train"))?;
        let valid = apply_ns(cfg, &d.valid, train_strategy, &format!("{source}/valid"))?;
        let model = train_source_model(cfg, source, &train)?;
        let vp = predict_all(cfg, &model, &valid)?;
        let trained = Trained {
            b_ensemble: select_b(&pairs(&vp.ensemble, &valid), &cfg.risk.b_grid, metric(cfg))?,
            b_dropout: select_b(&pairs(&vp.dropout, &valid), &cfg.risk.b_grid, metric(cfg))?,
            model,
        };
        log::info!(
            "source {source}: b = {} (ensemble), {} (dropout)",
            trained.b_ensemble,
            trained.b_dropout
        );
        let jobs: Vec<(&String, &String)> = cfg
            .grid
            .targets
            .iter()
            .flat_map(|t| test_strategies.iter().map(move |&s| (t, strategy_name(s))))
            .map(|(t, s)| {
                let key = tests.get_key_value(&(t.clone(), s.to_string())).expect("test set prepared").0;
                (&key.0, &key.1)
            })
            .collect();
        let row = jobs
            .par_iter()
            .map(|(t, ns)| evaluate_cell(cfg, &trained, t, ns, &train_ns, &tests[&((*t).clone(), (*ns).clone())]))
            .collect::<Result<Vec<_>>>()?;
        cells.extend(row);
    }
    Ok(ExperimentGrid {
        config_hash: cfg.hash(),
        sources: cfg.grid.sources.clone(),
        targets: cfg.grid.targets.clone(),
        train_ns,
        test_ns: test_strategies.iter().map(|&s| strategy_name(s).to_string()).collect(),
        cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridView {
    Deterministic,
    Ensemble,
    Dropout,
    RiskEnsemble,
    RiskDropout,
}

impl GridView {
    pub const ALL: [GridView; 5] = [
        GridView::Deterministic,
        GridView::Ensemble,
        GridView::Dropout,
        GridView::RiskEnsemble,
        GridView::RiskDropout,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            GridView::Deterministic => "deterministic",
            GridView::Ensemble => "ensemble",
            GridView::Dropout => "dropout",
            GridView::RiskEnsemble => "risk_ensemble",
            GridView::RiskDropout => "risk_dropout",
        }
    }
}

fn b(v: bool) -> &'static str {
    if v {
        "true"
    } else {
        "false"
    }
}

impl ExperimentGrid {
    pub fn cell(&self, source: &str, target: &str, test_ns: &str) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.source == source && c.target == target && c.test_ns == test_ns)
    }

    /// Long form: one row per cell with every reported quantity.
    pub fn cells_csv(&self) -> String {
        let mut s = format!("# config={}\n", self.config_hash);
        s.push_str(
            "source,target,train_ns,test_ns,no_shift,queries,\
             det_recall,det_ece,baseline_repeat_recall,\
             ens_recall,ens_ece,ens_p,ens_sig,\
             drop_recall,drop_ece,drop_p,drop_sig,\
             ra_ens_b,ra_ens_recall,ra_ens_gain_percent,ra_ens_p,ra_ens_sig,\
             ra_drop_b,ra_drop_recall,ra_drop_gain_percent,ra_drop_p,ra_drop_sig\n",
        );
        let f = format_sig9;
        for c in &self.cells {
            let _ = write!(
                s,
                "{},{},{},{},{},{},{},{},{},",
                c.source,
                c.target,
                c.train_ns,
                c.test_ns,
                b(c.no_shift),
                c.queries,
                f(c.deterministic.recall),
                f(c.deterministic.ece),
                f(c.baseline_repeat_recall)
            );
            for m in [&c.ensemble, &c.dropout] {
                let _ = write!(s, "{},{},{},{},", f(m.recall), f(m.ece), f(m.p_value), b(m.significant));
            }
            let r = [&c.risk_ensemble, &c.risk_dropout];
            let parts: Vec<String> = r
                .iter()
                .map(|r| {
                    format!(
                        "{},{},{},{},{}",
                        r.b,
                        f(r.recall),
                        f(r.gain_percent),
                        f(r.p_value),
                        b(r.significant)
                    )
                })
                .collect();
            let _ = writeln!(s, "{}", parts.join(","));
        }
        s
    }

    /// Wide form: rows are sources, columns `target/test_ns` with recall,
    /// ECE and significance against the deterministic baseline (against
    /// `b = 0` for risk-aware views).
    pub fn table_csv(&self, view: GridView) -> String {
        let mut s = format!("# config={} view={} train_ns={}\nsource", self.config_hash, view.as_str(), self.train_ns);
        for t in &self.targets {
            for ns in &self.test_ns {
                let _ = write!(s, ",{t}/{ns} recall,{t}/{ns} ece,{t}/{ns} sig");
            }
        }
        s.push('\n');
        for src in &self.sources {
            s.push_str(src);
            for t in &self.targets {
                for ns in &self.test_ns {
                    let c = self.cell(src, t, ns).expect("complete grid");
                    let (recall, ece, sig) = match view {
                        GridView::Deterministic => (c.deterministic.recall, Some(c.deterministic.ece), false),
                        GridView::Ensemble => (c.ensemble.recall, Some(c.ensemble.ece), c.ensemble.significant),
                        GridView::Dropout => (c.dropout.recall, Some(c.dropout.ece), c.dropout.significant),
                        GridView::RiskEnsemble => (c.risk_ensemble.recall, None, c.risk_ensemble.significant),
                        GridView::RiskDropout => (c.risk_dropout.recall, None, c.risk_dropout.significant),
                    };
                    let ece = ece.map(format_sig9).unwrap_or_default();
                    let _ = write!(s, ",{},{ece},{}", format_sig9(recall), b(sig));
                }
            }
            s.push('\n');
        }
        s
    }

    /// Write `grid_cells.csv` and one `grid_<view>.csv` per view; returns the paths.
    pub fn write_reports(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = vec![(dir.join("grid_cells.csv"), self.cells_csv())];
        for v in GridView::ALL {
            files.push((dir.join(format!("grid_{}.csv", v.as_str())), self.table_csv(v)));
        }
        for (p, body) in &files {
            std::fs::write(p, body).map_err(|e| Error::io(p, e))?;
        }
        Ok(files.into_iter().map(|(p, _)| p).collect())
    }
}
