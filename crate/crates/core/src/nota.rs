//! None-of-the-above (NOTA) prediction: dataset construction, uncertainty
//! features and cross-validated evaluation.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::data::{content_lines, CorpusRecord, DialogueInstance};
use crate::error::{Error, Result};
use crate::forest::{cross_validate, CrossValidation, ForestConfig};
use crate::seed;
use crate::stochastic::{distribution_stats, PredictiveDistribution};

pub const DEFAULT_FOLDS: usize = 5;

/// A truncated list labelled 1 (NOTA, no relevant candidate left) or 0
/// (answerable, one relevant candidate left).
#[derive(Debug, Clone, PartialEq)]
pub struct NotaInstance {
    pub list: DialogueInstance,
    pub label: u8,
}

impl NotaInstance {
    pub fn base_id(&self) -> &str {
        self.list.id()
    }
}

fn single_relevant(inst: &DialogueInstance) -> Result<usize> {
    match (inst.len(), inst.relevant_count(), inst.relevant_index()) {
        (k, 1, Some(j)) if k >= 2 => Ok(j),
        (k, r, _) => Err(Error::InvalidInstance {
            id: inst.id().to_string(),
            message: format!("NOTA construction needs >= 2 candidates and one relevant, got {k} and {r}"),
        }),
    }
}

/// A seeded half of the lists lose their relevant candidate (label 1); the
/// rest lose one seeded non-relevant candidate (label 0).
pub fn build_nota_dataset(corpus: &[DialogueInstance], seed: u64) -> Result<Vec<NotaInstance>> {
    let relevant: Vec<usize> = corpus.iter().map(single_relevant).collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut seed::rng(seed::derive_seed(seed, "nota-split", 0)));
    let nota: BTreeSet<usize> = order[..corpus.len() / 2].iter().copied().collect();
    corpus
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let (drop, label) = if nota.contains(&i) {
                (relevant[i], 1)
            } else {
                let others: Vec<usize> = (0..inst.len()).filter(|&j| j != relevant[i]).collect();
                let mut rng = seed::rng(seed::derive_seed(seed, "nota-remove", i as u64));
                (*others.choose(&mut rng).expect("k >= 2"), 0)
            };
            let keep: BTreeSet<usize> = (0..inst.len()).filter(|&j| j != drop).collect();
            Ok(NotaInstance {
                list: inst.truncate_candidates(&keep)?,
                label,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FeatureBlock {
    /// Per-candidate mean score (dropout passes when present, else ensemble).
    SortedMeans,
    SortedVarsEnsemble,
    SortedVarsDropout,
}

impl FeatureBlock {
    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureBlock::SortedMeans => "sorted_means",
            FeatureBlock::SortedVarsEnsemble => "sorted_vars_ensemble",
            FeatureBlock::SortedVarsDropout => "sorted_vars_dropout",
        }
    }
}

impl std::str::FromStr for FeatureBlock {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sorted_means" => Ok(FeatureBlock::SortedMeans),
            "sorted_vars_ensemble" => Ok(FeatureBlock::SortedVarsEnsemble),
            "sorted_vars_dropout" => Ok(FeatureBlock::SortedVarsDropout),
            other => Err(Error::invalid(format!("unknown NOTA feature block `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureOrder {
    /// Every block ordered by descending mean score (ties by candidate id),
    /// so a candidate's mean and variances share a position.
    #[default]
    ByMean,
    /// Each block sorted descending on its own.
    Sorted,
    /// Blocks in list order.
    Raw,
}

impl FeatureOrder {
    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureOrder::ByMean => "by_mean",
            FeatureOrder::Sorted => "sorted",
            FeatureOrder::Raw => "raw",
        }
    }
}

impl std::str::FromStr for FeatureOrder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "by_mean" => Ok(FeatureOrder::ByMean),
            "sorted" => Ok(FeatureOrder::Sorted),
            "raw" => Ok(FeatureOrder::Raw),
            other => Err(Error::invalid(format!("unknown NOTA feature order `{other}`"))),
        }
    }
}

/// Requested blocks, always emitted in the fixed order means, ensemble
/// variances, dropout variances. Block names keep their historical `sorted_`
/// prefix; the arrangement inside a block is set by `order`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NotaFeatureSpec {
    pub blocks: BTreeSet<FeatureBlock>,
    pub order: FeatureOrder,
}

impl NotaFeatureSpec {
    pub fn new<I: IntoIterator<Item = FeatureBlock>>(blocks: I) -> Self {
        Self {
            blocks: blocks.into_iter().collect(),
            order: FeatureOrder::default(),
        }
    }

    pub fn means_only() -> Self {
        Self::new([FeatureBlock::SortedMeans])
    }

    pub fn all() -> Self {
        Self::new([
            FeatureBlock::SortedMeans,
            FeatureBlock::SortedVarsEnsemble,
            FeatureBlock::SortedVarsDropout,
        ])
    }

    pub fn name(&self) -> String {
        self.blocks.iter().map(FeatureBlock::as_str).collect::<Vec<_>>().join("+")
    }
}

impl std::str::FromStr for NotaFeatureSpec {
    type Err = Error;
    /// `+`-separated block names.
    fn from_str(s: &str) -> Result<Self> {
        let blocks = s.split('+').map(|b| b.trim().parse()).collect::<Result<BTreeSet<_>>>()?;
        if blocks.is_empty() {
            return Err(Error::invalid("empty NOTA feature spec"));
        }
        Ok(Self {
            blocks,
            order: FeatureOrder::default(),
        })
    }
}

/// Distributions over a full (untruncated) list, by source.
#[derive(Debug, Clone, Copy, Default)]
pub struct NotaSources<'a> {
    pub ensemble: Option<&'a PredictiveDistribution>,
    pub dropout: Option<&'a PredictiveDistribution>,
}

pub fn extract_nota_features(inst: &NotaInstance, sources: NotaSources<'_>, spec: &NotaFeatureSpec) -> Result<Vec<f64>> {
    let ids = inst.list.candidate_ids();
    let missing = |what: &str| Error::MissingDistribution(format!("`{}`: {what}", inst.base_id()));
    let stats = |d: Option<&PredictiveDistribution>, what: &str| -> Result<_> {
        let d = d.ok_or_else(|| missing(what))?;
        Ok(distribution_stats(&d.select_candidates(&ids)?))
    };
    let means = || Ok::<_, Error>(stats(sources.dropout.or(sources.ensemble), "dropout or ensemble")?.mean);
    let rank: Option<Vec<usize>> = match spec.order {
        FeatureOrder::ByMean => {
            let m = means()?;
            let mut r: Vec<usize> = (0..m.len()).collect();
            r.sort_by(|&a, &b| m[b].total_cmp(&m[a]).then_with(|| ids[a].cmp(ids[b])));
            Some(r)
        }
        _ => None,
    };
    let finish = |mut v: Vec<f64>| match (&rank, spec.order) {
        (Some(r), _) => r.iter().map(|&i| v[i]).collect(),
        (None, FeatureOrder::Sorted) => {
            v.sort_by(|a, b| b.total_cmp(a));
            v
        }
        _ => v,
    };
    let mut out = Vec::new();
    for block in &spec.blocks {
        let v = match block {
            FeatureBlock::SortedMeans => means()?,
            FeatureBlock::SortedVarsEnsemble => stats(sources.ensemble, "ensemble")?.variance,
            FeatureBlock::SortedVarsDropout => stats(sources.dropout, "dropout")?.variance,
        };
        out.extend(finish(v));
    }
    Ok(out)
}

pub fn train_eval_nota(
    features: &[Vec<f64>],
    labels: &[u8],
    folds: usize,
    forest: &ForestConfig,
    seed: u64,
) -> Result<CrossValidation> {
    cross_validate(features, labels, folds, forest, seed)
}

#[derive(Serialize, Deserialize)]
struct NotaRecord {
    #[serde(flatten)]
    record: CorpusRecord,
    nota_label: u8,
}

pub fn write_nota_dataset<W: Write>(mut w: W, dataset: &[NotaInstance]) -> Result<()> {
    for inst in dataset {
        let rec = NotaRecord {
            record: CorpusRecord::from(&inst.list),
            nota_label: inst.label,
        };
        let line = serde_json::to_string(&rec).map_err(|e| Error::invalid(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

pub fn save_nota_dataset(path: impl AsRef<Path>, dataset: &[NotaInstance], header: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    if let Some(h) = header {
        writeln!(buf, "# {h}").map_err(|e| Error::io(path, e))?;
    }
    write_nota_dataset(&mut buf, dataset)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_nota_dataset<R: BufRead>(reader: R) -> Result<Vec<NotaInstance>> {
    let mut out = Vec::new();
    for item in content_lines(reader) {
        let (line_no, text) = item.map_err(|e| Error::io("<reader>", e))?;
        let rec: NotaRecord = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: line_no,
            field: "nota record".into(),
            message: e.to_string(),
        })?;
        let list = DialogueInstance::from_parts(rec.record.id, rec.record.context, rec.record.candidates, rec.record.labels)?;
        let expected = u8::from(list.relevant_count() == 0);
        if rec.nota_label > 1 || rec.nota_label != expected {
            return Err(Error::Parse {
                line: line_no,
                field: "nota_label".into(),
                message: format!("label {} disagrees with {} relevant candidates", rec.nota_label, list.relevant_count()),
            });
        }
        out.push(NotaInstance {
            list,
            label: rec.nota_label,
        });
    }
    Ok(out)
}

pub fn load_nota_dataset(path: impl AsRef<Path>) -> Result<Vec<NotaInstance>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_nota_dataset(std::io::BufReader::new(f))
}

/// Table with one row per dataset and one `mean (std)` column per feature spec.
pub fn nota_table_csv(config_hash: &str, specs: &[String], rows: &[(String, Vec<CrossValidation>)]) -> String {
    let mut s = format!("# config={config_hash} metric=f1_macro\ndataset");
    for spec in specs {
        let _ = write!(s, ",{spec}");
    }
    s.push('\n');
    for (name, cells) in rows {
        s.push_str(name);
        for c in cells {
            let _ = write!(s, ",{:.4} ({:.4})", c.mean_f1, c.std);
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CandidateResponse, Provenance};
    use crate::stochastic::Source;

    fn corpus(n: usize, k: usize) -> Vec<DialogueInstance> {
        (0..n)
            .map(|i| {
                let cands = (0..k)
                    .map(|j| CandidateResponse::new(format!("c{j}"), "t", Provenance::SampledRandom))
                    .collect();
                DialogueInstance::new(format!("q{i}"), vec!["ctx".into()], cands, (0..k).map(|j| u8::from(j == i % k)).collect())
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn half_and_half() {
        let ds = build_nota_dataset(&corpus(100, 10), 5).unwrap();
        assert_eq!(ds.len(), 100);
        assert_eq!(ds.iter().filter(|d| d.label == 1).count(), 50);
        for d in &ds {
            assert_eq!(d.list.len(), 9);
            assert_eq!(d.list.relevant_count(), usize::from(d.label == 0));
        }
        assert_eq!(ds, build_nota_dataset(&corpus(100, 10), 5).unwrap());
        let odd = build_nota_dataset(&corpus(7, 3), 1).unwrap();
        let ones = odd.iter().filter(|d| d.label == 1).count();
        assert!(ones.abs_diff(7 - ones) <= 1);
    }

    #[test]
    fn k_two_boundary() {
        for d in build_nota_dataset(&corpus(10, 2), 0).unwrap() {
            assert_eq!(d.list.len(), 1);
            assert_eq!(d.list.labels()[0], 1 - d.label);
        }
    }

    #[test]
    fn rejects_bad_instances() {
        let bad = DialogueInstance::from_parts(
            "bad",
            vec![],
            vec![CandidateResponse::new("a", "t", Provenance::GroundTruth)],
            vec![1],
        )
        .unwrap();
        let err = build_nota_dataset(&[bad], 0).unwrap_err();
        assert!(err.to_string().contains("bad"));
    }

    fn dist(ids: &[&str], rows: Vec<Vec<f64>>, src: Source) -> PredictiveDistribution {
        let s = rows.len() as u64;
        PredictiveDistribution::new("q", ids.iter().map(|s| s.to_string()).collect(), rows, src, (0..s).collect()).unwrap()
    }

    #[test]
    fn feature_dims_and_permutation_invariance() {
        let ids = ["a", "b", "c"];
        let ens = dist(&ids, vec![vec![0.1, 0.9, 0.5], vec![0.3, 0.7, 0.5]], Source::Ensemble);
        let drop = dist(&ids, vec![vec![0.2, 0.8, 0.4], vec![0.2, 0.6, 0.6], vec![0.2, 0.7, 0.5]], Source::Dropout);
        let mk = |order: [&str; 2]| NotaInstance {
            list: DialogueInstance::from_parts(
                "q",
                vec![],
                order.iter().map(|i| CandidateResponse::new(*i, "t", Provenance::SampledRandom)).collect(),
                vec![0, 0],
            )
            .unwrap(),
            label: 1,
        };
        let src = NotaSources {
            ensemble: Some(&ens),
            dropout: Some(&drop),
        };
        let f1 = extract_nota_features(&mk(["a", "b"]), src, &NotaFeatureSpec::all()).unwrap();
        let f2 = extract_nota_features(&mk(["b", "a"]), src, &NotaFeatureSpec::all()).unwrap();
        assert_eq!(f1.len(), 6);
        assert_eq!(f1, f2);
        assert!((f1[0] - 0.7).abs() < 1e-12 && (f1[1] - 0.2).abs() < 1e-12);
        // b has the higher mean, so its variances come first in each block
        let (ve_b, vd_b) = (0.02, 0.01);
        assert!((f1[2] - ve_b).abs() < 1e-12 && (f1[3] - 0.02).abs() < 1e-12);
        assert!((f1[4] - vd_b).abs() < 1e-12 && f1[5].abs() < 1e-12);
        let mut sorted = NotaFeatureSpec::all();
        sorted.order = FeatureOrder::Sorted;
        let s1 = extract_nota_features(&mk(["a", "b"]), src, &sorted).unwrap();
        assert_eq!(s1, extract_nota_features(&mk(["b", "a"]), src, &sorted).unwrap());
        let means = extract_nota_features(&mk(["a", "b"]), src, &NotaFeatureSpec::means_only()).unwrap();
        assert_eq!(means.len(), 2);
        let only_ens = NotaSources {
            ensemble: Some(&ens),
            dropout: None,
        };
        assert!(matches!(
            extract_nota_features(&mk(["a", "b"]), only_ens, &NotaFeatureSpec::all()),
            Err(Error::MissingDistribution(_))
        ));
        let mut raw = NotaFeatureSpec::means_only();
        raw.order = FeatureOrder::Raw;
        assert!(extract_nota_features(&mk(["a", "b"]), src, &raw).unwrap()[0] < 0.3);
    }

    #[test]
    fn spec_parse_and_name() {
        let s: NotaFeatureSpec = "sorted_vars_dropout+sorted_means".parse().unwrap();
        assert_eq!(s.name(), "sorted_means+sorted_vars_dropout");
        assert!("sorted_medians".parse::<NotaFeatureSpec>().is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let ds = build_nota_dataset(&corpus(6, 4), 2).unwrap();
        let mut buf = Vec::new();
        write_nota_dataset(&mut buf, &ds).unwrap();
        assert!(String::from_utf8_lossy(&buf).contains("\"nota_label\""));
        assert_eq!(read_nota_dataset(buf.as_slice()).unwrap(), ds);
    }

    #[test]
    fn permutation_null_near_half() {
        let mut rng = seed::rng(17);
        use rand::Rng;
        let x: Vec<Vec<f64>> = (0..2000).map(|_| (0..9).map(|_| rng.random::<f64>()).collect()).collect();
        let y: Vec<u8> = (0..2000).map(|i| u8::from(i % 2 == 0)).collect();
        let cv = train_eval_nota(&x, &y, 5, &ForestConfig::default(), 1).unwrap();
        assert!((0.45..=0.55).contains(&cv.mean_f1), "{}", cv.mean_f1);
    }
}
