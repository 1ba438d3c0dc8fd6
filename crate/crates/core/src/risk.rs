//! Risk-aware re-ranking over predictive distributions.
//!
//! Each candidate's score is its predictive mean penalized by its variance
//! and by its covariance with the other candidates of the same list:
//!
//! `score_j = E[R_j] − b·var[R_j] − 2b·Σ_{i≠j} cov[R_j, R_i]`
//!
//! `b > 0` is risk aversion, `b < 0` risk predilection, `b = 0` ranks by the mean.

use std::fmt::Write as _;

use crate::data::{DialogueInstance, RankedList};
use crate::error::{Error, Result};
use crate::evaluation::{mean, RankingMetric};
use crate::stochastic::{distribution_stats, format_sig9, PredictiveDistribution};

/// Whether the covariance sum also includes the candidate's own variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceTerm {
    #[default]
    ExcludeSelf,
    IncludeSelf,
}

/// Default sweep grid: a `−0.1` predilection probe, then `0.0..=1.0` in steps of 0.05.
pub fn default_b_grid() -> Vec<f64> {
    std::iter::once(-0.1)
        .chain((0..=20).map(|i| i as f64 / 20.0))
        .collect()
}

pub fn risk_adjusted_scores(dist: &PredictiveDistribution, b: f64) -> Vec<f64> {
    risk_adjusted_scores_with(dist, b, CovarianceTerm::ExcludeSelf)
}

pub fn risk_adjusted_scores_with(dist: &PredictiveDistribution, b: f64, term: CovarianceTerm) -> Vec<f64> {
    let st = distribution_stats(dist);
    if st.single_sample && b != 0.0 {
        log::debug!("`{}`: single sample, risk adjustment reduces to the mean", dist.instance_id);
    }
    let k = st.mean.len();
    (0..k)
        .map(|j| {
            let cov_sum: f64 = (0..k)
                .filter(|&i| i != j || term == CovarianceTerm::IncludeSelf)
                .map(|i| st.covariance[j][i])
                .sum();
            st.mean[j] - b * st.variance[j] - 2.0 * b * cov_sum
        })
        .collect()
}

pub fn rerank(dist: &PredictiveDistribution, instance: &DialogueInstance, b: f64) -> Result<RankedList> {
    rerank_with(dist, instance, b, CovarianceTerm::ExcludeSelf)
}

pub fn rerank_with(
    dist: &PredictiveDistribution,
    instance: &DialogueInstance,
    b: f64,
    term: CovarianceTerm,
) -> Result<RankedList> {
    let aligned = dist.aligned_to(instance)?;
    let scores = risk_adjusted_scores_with(&aligned, b, term);
    RankedList::from_scores(instance.id(), scores, &instance.candidate_ids())
}

/// Metric value of every list after re-ranking with `b`.
pub fn per_query_metric(
    pairs: &[(PredictiveDistribution, DialogueInstance)],
    b: f64,
    metric: RankingMetric,
) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|(d, inst)| metric.evaluate(&rerank(d, inst, b)?, inst.labels()))
        .collect()
}

/// The non-negative grid value with the best mean validation metric. Ties go
/// to `b = 0`, then to the smallest `|b|`.
pub fn select_b(
    validation: &[(PredictiveDistribution, DialogueInstance)],
    grid: &[f64],
    metric: RankingMetric,
) -> Result<f64> {
    if validation.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    let mut best: Option<(f64, f64)> = None;
    for &b in grid.iter().filter(|b| **b >= 0.0) {
        let m = mean(&per_query_metric(validation, b, metric)?);
        best = match best {
            None => Some((b, m)),
            Some((bb, bm)) => {
                let better = m > bm || (m == bm && (b == 0.0 || (bb != 0.0 && b.abs() < bb.abs())));
                Some(if better { (b, m) } else { (bb, bm) })
            }
        };
    }
    best.map(|(b, _)| b)
        .ok_or_else(|| Error::invalid("risk grid has no non-negative value"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub b: f64,
    pub metric: f64,
    /// Relative change over `b = 0`, in percent (0 when the reference is 0).
    pub gain_percent: f64,
}

pub fn sweep_report(
    test: &[(PredictiveDistribution, DialogueInstance)],
    grid: &[f64],
    metric: RankingMetric,
) -> Result<Vec<SweepRow>> {
    let reference = mean(&per_query_metric(test, 0.0, metric)?);
    grid.iter()
        .map(|&b| {
            let m = mean(&per_query_metric(test, b, metric)?);
            let gain_percent = if reference > 0.0 {
                (m - reference) / reference * 100.0
            } else {
                0.0
            };
            Ok(SweepRow {
                b,
                metric: m,
                gain_percent,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow], metric_name: &str, config_hash: &str) -> String {
    let mut s = format!("# config={config_hash} metric={metric_name}\nb,metric,gain_percent\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.b, format_sig9(r.metric), format_sig9(r.gain_percent));
    }
    s
}

/// Declarative chart spec: gain over `b = 0` against the risk-aversion value.
pub fn sweep_plot_spec(config_hash: &str, series: &[(String, String)]) -> serde_json::Value {
    serde_json::json!({
        "config_hash": config_hash,
        "title": "Risk-aware ranking gain by risk aversion",
        "mark": "line+point",
        "x": { "field": "b", "title": "risk aversion b" },
        "y": { "field": "gain_percent", "title": "% gain over b = 0" },
        "reference": { "kind": "horizontal", "value": 0.0, "style": "dotted" },
        "series": series.iter().map(|(label, file)| serde_json::json!({ "label": label, "data": file })).collect::<Vec<_>>(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CandidateResponse, Provenance};
    use crate::stochastic::Source;

    fn instance(id: &str, k: usize, relevant: usize) -> DialogueInstance {
        let cands = (0..k)
            .map(|j| CandidateResponse::new(format!("c{j}"), "text", Provenance::SampledRandom))
            .collect();
        let labels = (0..k).map(|j| u8::from(j == relevant)).collect();
        DialogueInstance::new(id, vec![], cands, labels).unwrap()
    }

    fn dist(id: &str, rows: Vec<Vec<f64>>) -> PredictiveDistribution {
        let k = rows[0].len();
        let s = rows.len() as u64;
        PredictiveDistribution::new(id, (0..k).map(|j| format!("c{j}")).collect(), rows, Source::Ensemble, (0..s).collect())
            .unwrap()
    }

    #[test]
    fn worked_two_candidate_example() {
        let d = dist("q", vec![vec![0.6, 0.4], vec![0.8, 0.2]]);
        let s = risk_adjusted_scores(&d, 1.0);
        assert!((s[0] - 0.72).abs() < 1e-12);
        assert!((s[1] - 0.32).abs() < 1e-12);
        let r = rerank(&d, &instance("q", 2, 0), 1.0).unwrap();
        assert_eq!(r.ordering, vec![0, 1]);
    }

    #[test]
    fn b_zero_is_the_mean() {
        let d = dist("q", vec![vec![0.6, 0.4, 0.3], vec![0.8, 0.2, 0.35]]);
        assert_eq!(risk_adjusted_scores(&d, 0.0), distribution_stats(&d).mean);
    }

    #[test]
    fn zero_variance_ignores_b() {
        let d = dist("q", vec![vec![0.6, 0.4], vec![0.6, 0.4]]);
        for b in [-0.1, 0.5, 3.0] {
            assert_eq!(risk_adjusted_scores(&d, b), vec![0.6, 0.4]);
        }
    }

    #[test]
    fn include_self_adds_twice_the_variance() {
        let d = dist("q", vec![vec![0.6, 0.4], vec![0.8, 0.2]]);
        let s = risk_adjusted_scores_with(&d, 1.0, CovarianceTerm::IncludeSelf);
        assert!((s[0] - (0.72 - 0.04)).abs() < 1e-12);
    }

    #[test]
    fn full_tie_orders_by_id() {
        let d = dist("q", vec![vec![0.5; 4], vec![0.5; 4]]);
        let r = rerank(&d, &instance("q", 4, 2), 0.7).unwrap();
        assert_eq!(r.ordering, vec![0, 1, 2, 3]);
    }

    #[test]
    fn rerank_dimension_mismatch() {
        let d = dist("q", vec![vec![0.5; 3], vec![0.5; 3]]);
        assert!(rerank(&d, &instance("q", 4, 0), 0.0).is_err());
        assert!(rerank(&d, &instance("other", 3, 0), 0.0).is_err());
    }

    #[test]
    fn equal_means_lower_variance_wins_under_aversion() {
        // equal means, uncorrelated, candidate 1 has nine times the variance
        let d = dist("q", vec![vec![0.6, 0.8], vec![0.4, 0.8], vec![0.6, 0.2], vec![0.4, 0.2]]);
        let st = distribution_stats(&d);
        assert!((st.mean[0] - st.mean[1]).abs() < 1e-15);
        assert!(st.covariance[0][1].abs() < 1e-15);
        assert!(st.variance[0] < st.variance[1]);
        let inst = instance("q", 2, 0);
        for b in [0.05, 0.5, 2.0] {
            assert_eq!(rerank(&d, &inst, b).unwrap().ordering, vec![0, 1]);
            assert_eq!(rerank(&d, &inst, -b).unwrap().ordering, vec![1, 0]);
        }
    }

    #[test]
    fn select_b_tie_and_singleton() {
        let pairs = vec![(dist("q", vec![vec![0.6, 0.4], vec![0.6, 0.4]]), instance("q", 2, 0))];
        assert_eq!(select_b(&pairs, &default_b_grid(), RankingMetric::default()).unwrap(), 0.0);
        assert_eq!(select_b(&pairs, &[0.0], RankingMetric::default()).unwrap(), 0.0);
        assert_eq!(select_b(&pairs, &[0.3, 0.2], RankingMetric::default()).unwrap(), 0.2);
        assert!(select_b(&[], &[0.0], RankingMetric::default()).is_err());
        assert!(select_b(&pairs, &[-0.1], RankingMetric::default()).is_err());
    }

    #[test]
    fn default_grid_contents() {
        let g = default_b_grid();
        assert_eq!(g.len(), 22);
        assert!(g.contains(&0.0) && g.contains(&-0.1) && g.contains(&0.25) && g.contains(&1.0));
    }

    #[test]
    fn sweep_rows_and_flat_curve() {
        let pairs = vec![(dist("q", vec![vec![0.6, 0.4], vec![0.6, 0.4]]), instance("q", 2, 0))];
        let grid = default_b_grid();
        let rows = sweep_report(&pairs, &grid, RankingMetric::default()).unwrap();
        assert_eq!(rows.len(), grid.len());
        assert!(rows.iter().all(|r| r.gain_percent == 0.0 && r.metric == 1.0));
        let csv = sweep_csv(&rows, "R_2@1", "h");
        assert!(csv.lines().nth(2).unwrap().starts_with("-0.1,1.00000000,"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn linear_in_b(rows in (2usize..6, 2usize..6).prop_flat_map(|(s, k)|
                proptest::collection::vec(proptest::collection::vec(0.0f64..=1.0, k), s))) {
                let d = dist("q", rows);
                let (s0, s1, s2) = (risk_adjusted_scores(&d, 0.0), risk_adjusted_scores(&d, 0.5), risk_adjusted_scores(&d, 1.0));
                for j in 0..s0.len() {
                    prop_assert!((s1[j] - (s0[j] + s2[j]) / 2.0).abs() < 1e-12);
                }
            }
        }
    }
}
