//! Predictive distributions from seed ensembles and test-time dropout.
//!
//! A [`PredictiveDistribution`] is an `S × k` matrix: row `s` holds one
//! stochastic draw of the relevance probability of every candidate. Ensemble
//! rows come from independently seeded scorers, dropout rows from repeated
//! masked forward passes of one scorer.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::data::DialogueInstance;
use crate::error::{Error, Result};
use crate::features::{instance_features, CorpusStats};
use crate::scorer::{score_all, train, DropoutMask, ScorerParameters, TrainConfig};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Deterministic,
    Ensemble,
    Dropout,
}

impl Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Deterministic => "deterministic",
            Source::Ensemble => "ensemble",
            Source::Dropout => "dropout",
        }
    }
}

impl std::str::FromStr for Source {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deterministic" => Ok(Source::Deterministic),
            "ensemble" => Ok(Source::Ensemble),
            "dropout" => Ok(Source::Dropout),
            other => Err(Error::invalid(format!("unknown distribution source `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution {
    pub instance_id: String,
    pub candidate_ids: Vec<String>,
    scores: Vec<Vec<f64>>,
    pub source: Source,
    pub sample_seeds: Vec<u64>,
}

impl PredictiveDistribution {
    pub fn new(
        instance_id: impl Into<String>,
        candidate_ids: Vec<String>,
        scores: Vec<Vec<f64>>,
        source: Source,
        sample_seeds: Vec<u64>,
    ) -> Result<Self> {
        let instance_id = instance_id.into();
        let k = candidate_ids.len();
        if scores.is_empty() {
            return Err(Error::invalid(format!("`{instance_id}`: distribution needs at least one sample")));
        }
        if source == Source::Deterministic && scores.len() != 1 {
            return Err(Error::invalid(format!(
                "`{instance_id}`: deterministic distribution must have exactly one sample"
            )));
        }
        if sample_seeds.len() != scores.len() {
            return Err(Error::DimensionMismatch(format!(
                "`{instance_id}`: {} seeds for {} samples",
                sample_seeds.len(),
                scores.len()
            )));
        }
        for row in &scores {
            if row.len() != k {
                return Err(Error::DimensionMismatch(format!(
                    "`{instance_id}`: sample row has {} scores for {k} candidates",
                    row.len()
                )));
            }
            if let Some(bad) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::invalid(format!("`{instance_id}`: score {bad} outside [0, 1]")));
            }
        }
        Ok(Self {
            instance_id,
            candidate_ids,
            scores,
            source,
            sample_seeds,
        })
    }

    /// Rows are samples, columns candidates.
    pub fn samples(&self) -> &[Vec<f64>] {
        &self.scores
    }

    pub fn n_samples(&self) -> usize {
        self.scores.len()
    }

    pub fn n_candidates(&self) -> usize {
        self.candidate_ids.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.scores.iter().map(|row| row[j]).collect()
    }

    /// Keep the columns whose candidate ids are listed, in the listed order.
    pub fn select_candidates<S: AsRef<str>>(&self, ids: &[S]) -> Result<Self> {
        let index: HashMap<&str, usize> = self
            .candidate_ids
            .iter()
            .enumerate()
            .map(|(j, id)| (id.as_str(), j))
            .collect();
        let cols = ids
            .iter()
            .map(|id| {
                index.get(id.as_ref()).copied().ok_or_else(|| {
                    Error::MissingDistribution(format!("{}/{}", self.instance_id, id.as_ref()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            instance_id: self.instance_id.clone(),
            candidate_ids: ids.iter().map(|s| s.as_ref().to_string()).collect(),
            scores: self
                .scores
                .iter()
                .map(|row| cols.iter().map(|&j| row[j]).collect())
                .collect(),
            source: self.source,
            sample_seeds: self.sample_seeds.clone(),
        })
    }

    /// Reorder columns to follow `instance`'s candidates; the id sets must match.
    pub fn aligned_to(&self, instance: &DialogueInstance) -> Result<Self> {
        if self.instance_id != instance.id() {
            return Err(Error::DimensionMismatch(format!(
                "distribution for `{}` used with instance `{}`",
                self.instance_id,
                instance.id()
            )));
        }
        if self.n_candidates() != instance.len() {
            return Err(Error::DimensionMismatch(format!(
                "`{}`: distribution has {} candidates, instance has {}",
                self.instance_id,
                self.n_candidates(),
                instance.len()
            )));
        }
        if self.candidate_ids.iter().map(String::as_str).eq(instance.candidate_ids()) {
            return Ok(self.clone());
        }
        self.select_candidates(&instance.candidate_ids())
    }

    /// Single-sample distribution made of the first row, the deterministic
    /// baseline of an ensemble or dropout run.
    pub fn first_row(&self) -> Self {
        self.row(0).expect("at least one sample")
    }

    /// Sample `r` alone, as a deterministic distribution.
    pub fn row(&self, r: usize) -> Result<Self> {
        let scores = self
            .scores
            .get(r)
            .ok_or_else(|| Error::invalid(format!("`{}`: no sample {r}", self.instance_id)))?;
        Ok(Self {
            instance_id: self.instance_id.clone(),
            candidate_ids: self.candidate_ids.clone(),
            scores: vec![scores.clone()],
            source: Source::Deterministic,
            sample_seeds: vec![self.sample_seeds[r]],
        })
    }
}

// ---------------------------------------------------------------------------
// Moments
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    /// Set when `S = 1`: variance and covariance are zero by convention.
    pub single_sample: bool,
}

/// Column means and the unbiased (`S − 1`) covariance matrix.
pub fn distribution_stats(dist: &PredictiveDistribution) -> DistributionStats {
    let s = dist.n_samples();
    let k = dist.n_candidates();
    let rows = dist.samples();
    let mean: Vec<f64> = (0..k)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / s as f64)
        .collect();
    let mut covariance = vec![vec![0.0; k]; k];
    if s >= 2 {
        let centered: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect())
            .collect();
        let denom = (s - 1) as f64;
        for i in 0..k {
            for j in i..k {
                let c = centered.iter().map(|r| r[i] * r[j]).sum::<f64>() / denom;
                covariance[i][j] = c;
                covariance[j][i] = c;
            }
        }
    }
    let variance = (0..k).map(|j| covariance[j][j]).collect();
    DistributionStats {
        mean,
        variance,
        covariance,
        single_sample: s < 2,
    }
}

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub member_seeds: Vec<u64>,
    pub train: TrainConfig,
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.member_seeds.len() < 2 {
            return Err(Error::invalid("an ensemble needs at least two members"));
        }
        let distinct: HashSet<_> = self.member_seeds.iter().collect();
        if distinct.len() != self.member_seeds.len() {
            return Err(Error::invalid("ensemble member seeds must be distinct"));
        }
        Ok(())
    }
}

/// Train one scorer per member seed. Members train in parallel and are
/// returned in seed order.
pub fn train_ensemble(
    corpus: &[DialogueInstance],
    stats: &CorpusStats,
    spec: &EnsembleSpec,
) -> Result<Vec<ScorerParameters>> {
    spec.validate()?;
    spec.member_seeds
        .par_iter()
        .map(|&s| train(corpus, stats, &spec.train, s).map(|o| o.params))
        .collect()
}

/// Deterministic scores of every candidate, as a one-row distribution.
pub fn predict_deterministic(
    params: &ScorerParameters,
    instance: &DialogueInstance,
    stats: &CorpusStats,
) -> Result<PredictiveDistribution> {
    let feats = instance_features(instance, stats);
    let row = score_all(params, &feats, None)?;
    PredictiveDistribution::new(
        instance.id(),
        ids_of(instance),
        vec![row],
        Source::Deterministic,
        vec![params.train_seed],
    )
}

fn ids_of(instance: &DialogueInstance) -> Vec<String> {
    instance.candidate_ids().into_iter().map(String::from).collect()
}

/// Row `m` holds member `m`'s dropout-free scores.
pub fn predict_ensemble(
    members: &[ScorerParameters],
    instance: &DialogueInstance,
    stats: &CorpusStats,
) -> Result<PredictiveDistribution> {
    let first = members
        .first()
        .ok_or_else(|| Error::invalid("ensemble has no members"))?;
    if let Some(m) = members.iter().find(|m| m.input_dim() != first.input_dim()) {
        return Err(Error::DimensionMismatch(format!(
            "ensemble members disagree on feature dimension ({} vs {})",
            m.input_dim(),
            first.input_dim()
        )));
    }
    let feats = instance_features(instance, stats);
    let rows = members
        .iter()
        .map(|m| score_all(m, &feats, None))
        .collect::<Result<Vec<_>>>()?;
    PredictiveDistribution::new(
        instance.id(),
        ids_of(instance),
        rows,
        Source::Ensemble,
        members.iter().map(|m| m.train_seed).collect(),
    )
}

// ---------------------------------------------------------------------------
// MC dropout
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskSharing {
    /// One mask per pass, applied to every candidate of the list.
    #[default]
    SharedPerPass,
    /// A fresh mask for each candidate within a pass.
    IndependentPerCandidate,
}

impl std::str::FromStr for MaskSharing {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared_per_pass" => Ok(MaskSharing::SharedPerPass),
            "independent_per_candidate" => Ok(MaskSharing::IndependentPerCandidate),
            other => Err(Error::invalid(format!("unknown mask sharing `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropoutSpec {
    pub passes: usize,
    pub dropout_rate: f64,
    pub pass_seed_base: u64,
    pub mask_sharing: MaskSharing,
}

impl DropoutSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.dropout_rate > 0.0 && self.dropout_rate < 1.0) {
            return Err(Error::invalid(format!(
                "dropout rate {} must lie strictly between 0 and 1",
                self.dropout_rate
            )));
        }
        if self.passes == 0 {
            return Err(Error::invalid("dropout needs at least one pass"));
        }
        Ok(())
    }

    pub fn pass_seed(&self, pass: usize) -> u64 {
        self.pass_seed_base.wrapping_add(pass as u64)
    }
}

/// `T` masked forward passes; pass `t` draws its masks from seed
/// `pass_seed_base + t`.
pub fn predict_dropout(
    params: &ScorerParameters,
    spec: &DropoutSpec,
    instance: &DialogueInstance,
    stats: &CorpusStats,
) -> Result<PredictiveDistribution> {
    spec.validate()?;
    let feats = instance_features(instance, stats);
    let h = params.hidden();
    let mut rows = Vec::with_capacity(spec.passes);
    for t in 0..spec.passes {
        let mut rng = seed::rng(spec.pass_seed(t));
        let row = match spec.mask_sharing {
            MaskSharing::SharedPerPass => {
                let mask = DropoutMask::sample(&mut rng, h, spec.dropout_rate);
                score_all(params, &feats, Some(&mask))?
            }
            MaskSharing::IndependentPerCandidate => feats
                .iter()
                .map(|x| {
                    let mask = DropoutMask::sample(&mut rng, h, spec.dropout_rate);
                    crate::scorer::forward(params, x, Some(&mask))
                })
                .collect::<Result<Vec<_>>>()?,
        };
        rows.push(row);
    }
    PredictiveDistribution::new(
        instance.id(),
        ids_of(instance),
        rows,
        Source::Dropout,
        (0..spec.passes).map(|t| spec.pass_seed(t)).collect(),
    )
}

// ---------------------------------------------------------------------------
// Run files
// ---------------------------------------------------------------------------

const RUN_TAG: &str = "rankcal-run v1";

/// Decimal rendering with 9 significant digits.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0.00000000".into();
    }
    let sci = format!("{v:.8e}");
    let exp: i32 = sci
        .rsplit_once('e')
        .and_then(|(_, e)| e.parse().ok())
        .unwrap_or(0);
    let decimals = (8 - exp).max(0) as usize;
    format!("{v:.decimals$}")
}

/// Parsed run file: every distribution shares the header's source and seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFile {
    pub source: Source,
    pub seeds: Vec<u64>,
    pub config_hash: Option<String>,
    pub distributions: Vec<PredictiveDistribution>,
}

impl RunFile {
    pub fn new(distributions: Vec<PredictiveDistribution>, config_hash: Option<String>) -> Result<Self> {
        let first = distributions
            .first()
            .ok_or_else(|| Error::invalid("run file needs at least one distribution"))?;
        let (source, seeds) = (first.source, first.sample_seeds.clone());
        if let Some(d) = distributions.iter().find(|d| d.source != source || d.sample_seeds != seeds) {
            return Err(Error::invalid(format!(
                "`{}` does not share the run's source and seeds",
                d.instance_id
            )));
        }
        Ok(Self {
            source,
            seeds,
            config_hash,
            distributions,
        })
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<run file>", e);
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        write!(w, "# {RUN_TAG}\tsource={}\tseeds={}", self.source.as_str(), seeds.join(",")).map_err(io)?;
        if let Some(h) = &self.config_hash {
            write!(w, "\tconfig={h}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
        for d in &self.distributions {
            for (j, cid) in d.candidate_ids.iter().enumerate() {
                for (s, row) in d.samples().iter().enumerate() {
                    writeln!(w, "{}\t{}\t{}\t{}", d.instance_id, cid, s, format_sig9(row[j])).map_err(io)?;
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(file))
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let bad = |line: usize, field: &str, message: String| Error::Parse {
            line,
            field: field.into(),
            message,
        };
        let (_, header) = lines
            .next()
            .ok_or_else(|| bad(1, "header", "empty run file".into()))?;
        let header = header.map_err(|e| Error::io("<run file>", e))?;
        let mut fields = header.trim_start_matches('#').trim().split('\t');
        if fields.next() != Some(RUN_TAG) {
            return Err(bad(1, "header", format!("expected `{RUN_TAG}`")));
        }
        let mut source = None;
        let mut seeds = None;
        let mut config_hash = None;
        for f in fields {
            match f.split_once('=') {
                Some(("source", v)) => source = Some(v.parse::<Source>()?),
                Some(("seeds", v)) => {
                    seeds = Some(
                        v.split(',')
                            .filter(|s| !s.is_empty())
                            .map(|s| s.parse::<u64>())
                            .collect::<std::result::Result<Vec<_>, _>>()
                            .map_err(|e| bad(1, "seeds", e.to_string()))?,
                    )
                }
                Some(("config", v)) => config_hash = Some(v.to_string()),
                _ => {}
            }
        }
        let source = source.ok_or_else(|| bad(1, "source", "missing".into()))?;
        let seeds: Vec<u64> = seeds.ok_or_else(|| bad(1, "seeds", "missing".into()))?;
        let s = seeds.len();

        struct Pending {
            candidates: Vec<String>,
            cols: HashMap<String, Vec<Option<f64>>>,
        }
        let mut order: Vec<String> = Vec::new();
        let mut pending: HashMap<String, Pending> = HashMap::new();
        for (i, line) in lines {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::io("<run file>", e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 4 {
                return Err(bad(line_no, "record", format!("expected 4 tab-separated fields, got {}", parts.len())));
            }
            let sample: usize = parts[2]
                .parse()
                .map_err(|e: std::num::ParseIntError| bad(line_no, "sample_index", e.to_string()))?;
            if sample >= s {
                return Err(bad(line_no, "sample_index", format!("{sample} out of range for {s} seeds")));
            }
            let score: f64 = parts[3]
                .parse()
                .map_err(|e: std::num::ParseFloatError| bad(line_no, "score", e.to_string()))?;
            let entry = pending.entry(parts[0].to_string()).or_insert_with(|| {
                order.push(parts[0].to_string());
                Pending {
                    candidates: Vec::new(),
                    cols: HashMap::new(),
                }
            });
            let col = entry.cols.entry(parts[1].to_string()).or_insert_with(|| {
                entry.candidates.push(parts[1].to_string());
                vec![None; s]
            });
            if col[sample].replace(score).is_some() {
                return Err(bad(line_no, "sample_index", format!("duplicate sample {sample} for {}/{}", parts[0], parts[1])));
            }
        }

        let mut distributions = Vec::with_capacity(order.len());
        for id in order {
            let p = pending.remove(&id).expect("instance recorded");
            let mut rows = vec![Vec::with_capacity(p.candidates.len()); s];
            for cid in &p.candidates {
                for (row, v) in rows.iter_mut().zip(&p.cols[cid]) {
                    row.push(v.ok_or_else(|| {
                        Error::MissingDistribution(format!("{id}/{cid}: incomplete samples"))
                    })?);
                }
            }
            distributions.push(PredictiveDistribution::new(id, p.candidates, rows, source, seeds.clone())?);
        }
        Ok(Self {
            source,
            seeds,
            config_hash,
            distributions,
        })
    }
}
