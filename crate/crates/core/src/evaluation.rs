//! Ranking effectiveness and significance testing.

use crate::data::RankedList;
use crate::error::{Error, Result};

/// A ranking metric evaluated per list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankingMetric {
    /// `R_n@K` with `n` the list length.
    RecallAt(usize),
}

impl Default for RankingMetric {
    fn default() -> Self {
        RankingMetric::RecallAt(1)
    }
}

impl RankingMetric {
    pub fn evaluate(&self, ranked: &RankedList, labels: &[u8]) -> Result<f64> {
        match *self {
            RankingMetric::RecallAt(k) => recall_at_k(ranked, labels, labels.len(), k),
        }
    }

    pub fn name(&self, n: usize) -> String {
        match self {
            RankingMetric::RecallAt(k) => format!("R_{n}@{k}"),
        }
    }
}

/// Fraction of the relevant candidates ranked within the top `k`.
pub fn recall_at_k(ranked: &RankedList, labels: &[u8], n: usize, k: usize) -> Result<f64> {
    if labels.len() != n || ranked.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "`{}`: {} labels, {} ranked candidates, n = {n}",
            ranked.instance_id,
            labels.len(),
            ranked.len()
        )));
    }
    if k == 0 || k > n {
        return Err(Error::invalid(format!("cutoff {k} outside 1..={n}")));
    }
    let relevant = labels.iter().filter(|&&l| l == 1).count();
    if relevant == 0 {
        return Err(Error::InvalidInstance {
            id: ranked.instance_id.clone(),
            message: "no relevant candidate to recall".into(),
        });
    }
    let hits = ranked.ordering[..k].iter().filter(|&&i| labels[i] == 1).count();
    Ok(hits as f64 / relevant as f64)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTestResult {
    pub t: f64,
    /// Two-sided.
    pub p: f64,
    /// All differences equal but non-zero: `t` is infinite and `p` is reported as 0.
    pub degenerate_variance: bool,
}

impl TTestResult {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p < alpha
    }
}

/// Paired Student's t-test on per-query differences `a − b`, `n − 1` degrees
/// of freedom. Identical inputs give `t = 0, p = 1`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "paired samples of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::invalid("paired t-test needs at least two pairs"));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if diffs.iter().all(|&d| d == 0.0) {
        return Ok(TTestResult {
            t: 0.0,
            p: 1.0,
            degenerate_variance: false,
        });
    }
    let m = mean(&diffs);
    let var = diffs.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Ok(TTestResult {
            t: m.signum() * f64::INFINITY,
            p: 0.0,
            degenerate_variance: true,
        });
    }
    let t = m / (var / n as f64).sqrt();
    let df = (n - 1) as f64;
    let p = statrs::function::beta::beta_reg(df / 2.0, 0.5, df / (df + t * t));
    Ok(TTestResult {
        t,
        p,
        degenerate_variance: false,
    })
}
