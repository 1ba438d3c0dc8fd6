//! Empirical calibration error and reliability curves.
//!
//! Predictions are split into `c` buckets; ECE is the size-weighted mean
//! absolute gap between each bucket's mean confidence and its fraction of
//! relevant items. Equal-width buckets are `[i/c, (i+1)/c)` with the last one
//! closed at 1.0; a value on an interior boundary belongs to the upper bucket.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::IndexedRandom;

use crate::data::DialogueInstance;
use crate::error::{Error, Result};
use crate::seed;
use crate::stochastic::{distribution_stats, format_sig9, PredictiveDistribution};

pub const DEFAULT_BUCKETS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BucketScheme {
    #[default]
    EqualWidth,
    /// Sorted predictions split into `c` groups of (nearly) equal size.
    EqualMass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bucket {
    pub low: f64,
    pub high: f64,
    pub size: usize,
    /// Zero for empty buckets.
    pub mean_confidence: f64,
    /// Zero for empty buckets.
    pub relevance_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityReport {
    pub bucket_count: usize,
    pub scheme: BucketScheme,
    pub buckets: Vec<Bucket>,
    pub ece: f64,
    pub n: usize,
}

impl ReliabilityReport {
    fn from_buckets(buckets: Vec<Bucket>, scheme: BucketScheme, n: usize) -> Self {
        let mut r = Self {
            bucket_count: buckets.len(),
            scheme,
            buckets,
            ece: 0.0,
            n,
        };
        r.ece = r.recompute_ece();
        r
    }

    /// ECE from the bucket fields alone.
    pub fn recompute_ece(&self) -> f64 {
        let n = self.n as f64;
        self.buckets
            .iter()
            .filter(|b| b.size > 0)
            .map(|b| b.size as f64 / n * (b.mean_confidence - b.relevance_fraction).abs())
            .sum()
    }

    pub fn to_csv(&self, config_hash: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# config={config_hash} n={} buckets={} ece={}",
            self.n,
            self.bucket_count,
            format_sig9(self.ece)
        );
        s.push_str("bucket_low,bucket_high,size,mean_confidence,relevance_fraction\n");
        for b in &self.buckets {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                format_sig9(b.low),
                format_sig9(b.high),
                b.size,
                format_sig9(b.mean_confidence),
                format_sig9(b.relevance_fraction)
            );
        }
        s
    }
}

fn bucket_index(p: f64, c: usize) -> usize {
    let cf = c as f64;
    let mut idx = ((p * cf).floor().max(0.0) as usize).min(c - 1);
    // settle floating rounding against the exact boundaries i/c
    while idx + 1 < c && p >= (idx + 1) as f64 / cf {
        idx += 1;
    }
    while idx > 0 && p < idx as f64 / cf {
        idx -= 1;
    }
    idx
}

fn validate(predictions: &[(f64, bool)], c: usize) -> Result<()> {
    if predictions.is_empty() {
        return Err(Error::invalid("no predictions to calibrate"));
    }
    if c == 0 {
        return Err(Error::invalid("bucket count must be at least 1"));
    }
    if let Some((p, _)) = predictions.iter().find(|(p, _)| !(0.0..=1.0).contains(p)) {
        return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

pub fn compute_ece(predictions: &[(f64, bool)], c: usize) -> Result<ReliabilityReport> {
    compute_ece_with(predictions, c, BucketScheme::EqualWidth)
}

pub fn compute_ece_with(predictions: &[(f64, bool)], c: usize, scheme: BucketScheme) -> Result<ReliabilityReport> {
    validate(predictions, c)?;
    let n = predictions.len();
    let mut sums = vec![(0usize, 0.0f64, 0usize); c];
    let mut bounds: Vec<(f64, f64)> = (0..c)
        .map(|i| (i as f64 / c as f64, (i + 1) as f64 / c as f64))
        .collect();
    match scheme {
        BucketScheme::EqualWidth => {
            for &(p, rel) in predictions {
                let b = &mut sums[bucket_index(p, c)];
                b.0 += 1;
                b.1 += p;
                b.2 += usize::from(rel);
            }
        }
        BucketScheme::EqualMass => {
            let mut sorted = predictions.to_vec();
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (base, extra) = (n / c, n % c);
            let mut start = 0;
            let mut last_high = 0.0;
            for (i, bucket) in sums.iter_mut().enumerate() {
                let len = base + usize::from(i < extra);
                let chunk = &sorted[start..start + len];
                start += len;
                match (chunk.first(), chunk.last()) {
                    (Some(lo), Some(hi)) => {
                        bounds[i] = (lo.0, hi.0);
                        last_high = hi.0;
                    }
                    _ => bounds[i] = (last_high, last_high),
                }
                for &(p, rel) in chunk {
                    bucket.0 += 1;
                    bucket.1 += p;
                    bucket.2 += usize::from(rel);
                }
            }
        }
    }
    let buckets = sums
        .into_iter()
        .zip(bounds)
        .map(|((size, conf, rel), (low, high))| Bucket {
            low,
            high,
            size,
            mean_confidence: if size > 0 { conf / size as f64 } else { 0.0 },
            relevance_fraction: if size > 0 { rel as f64 / size as f64 } else { 0.0 },
        })
        .collect();
    Ok(ReliabilityReport::from_buckets(buckets, scheme, n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reducer {
    /// Mean over all samples.
    #[default]
    Mean,
    /// First sample only (member 0 / the unmasked baseline).
    Deterministic,
}

impl Reducer {
    pub fn as_str(&self) -> &'static str {
        match self {
            Reducer::Mean => "mean",
            Reducer::Deterministic => "deterministic",
        }
    }

    pub fn reduce(&self, dist: &PredictiveDistribution) -> Vec<f64> {
        match self {
            Reducer::Mean => distribution_stats(dist).mean,
            Reducer::Deterministic => dist.samples()[0].clone(),
        }
    }
}

impl std::str::FromStr for Reducer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Reducer::Mean),
            "deterministic" => Ok(Reducer::Deterministic),
            other => Err(Error::invalid(format!("unknown reducer `{other}`"))),
        }
    }
}

/// ECE over the relevant candidate of each instance plus `non_rel_per_query`
/// seeded-sampled non-relevant candidates. With one non-relevant per query
/// the relevant/non-relevant mix is balanced.
pub fn balanced_ece(
    distributions: &[PredictiveDistribution],
    instances: &[DialogueInstance],
    reducer: Reducer,
    non_rel_per_query: usize,
    c: usize,
    seed: u64,
) -> Result<ReliabilityReport> {
    compute_ece(&balanced_predictions(distributions, instances, reducer, non_rel_per_query, seed)?, c)
}

/// The `(score, relevant)` pairs `balanced_ece` buckets.
pub fn balanced_predictions(
    distributions: &[PredictiveDistribution],
    instances: &[DialogueInstance],
    reducer: Reducer,
    non_rel_per_query: usize,
    seed: u64,
) -> Result<Vec<(f64, bool)>> {
    if non_rel_per_query == 0 {
        return Err(Error::invalid("non_rel_per_query must be at least 1"));
    }
    let by_id: HashMap<&str, &PredictiveDistribution> =
        distributions.iter().map(|d| (d.instance_id.as_str(), d)).collect();
    let mut rng = seed::rng(seed);
    let mut predictions = Vec::with_capacity(instances.len() * (non_rel_per_query + 1));
    for inst in instances {
        let dist = by_id
            .get(inst.id())
            .ok_or_else(|| Error::MissingDistribution(inst.id().to_string()))?
            .aligned_to(inst)?;
        let rel = inst.relevant_index().ok_or_else(|| Error::InvalidInstance {
            id: inst.id().to_string(),
            message: "no relevant candidate; NOTA lists are excluded from calibration".into(),
        })?;
        let negatives: Vec<usize> = (0..inst.len()).filter(|&j| inst.labels()[j] == 0).collect();
        if negatives.len() < non_rel_per_query {
            return Err(Error::InvalidInstance {
                id: inst.id().to_string(),
                message: format!(
                    "{} non-relevant candidates, {non_rel_per_query} requested",
                    negatives.len()
                ),
            });
        }
        let scores = reducer.reduce(&dist);
        predictions.push((scores[rel], true));
        let mut chosen: Vec<usize> = negatives
            .choose_multiple(&mut rng, non_rel_per_query)
            .copied()
            .collect();
        chosen.sort_unstable();
        predictions.extend(chosen.into_iter().map(|j| (scores[j], false)));
    }
    Ok(predictions)
}

/// Declarative line-chart spec for one or more reliability CSVs.
pub fn reliability_plot_spec(config_hash: &str, series: &[(String, String)]) -> serde_json::Value {
    serde_json::json!({
        "config_hash": config_hash,
        "title": "Reliability curve",
        "mark": "line+point",
        "x": { "field": "mean_confidence", "title": "confidence", "domain": [0.0, 1.0] },
        "y": { "field": "relevance_fraction", "title": "% of relevant documents", "domain": [0.0, 1.0] },
        "reference": { "kind": "diagonal", "style": "dotted", "label": "perfect calibration" },
        "series": series.iter().map(|(label, file)| serde_json::json!({ "label": label, "data": file })).collect::<Vec<_>>(),
    })
}
