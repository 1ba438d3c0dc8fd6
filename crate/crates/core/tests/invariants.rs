use proptest::prelude::*;
use rankcal::calibration::compute_ece;
use rankcal::evaluation::paired_t_test;
use rankcal::risk::risk_adjusted_scores;
use rankcal::stochastic::{PredictiveDistribution, Source};

fn dist(rows: Vec<Vec<f64>>) -> PredictiveDistribution {
    let k = rows[0].len();
    let s = rows.len() as u64;
    PredictiveDistribution::new("q", (0..k).map(|j| format!("c{j}")).collect(), rows, Source::Ensemble, (0..s).collect())
        .unwrap()
}

fn matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..8, 1usize..8).prop_flat_map(|(s, k)| prop::collection::vec(prop::collection::vec(0.0f64..=1.0, k), s))
}

proptest! {
    #[test]
    fn ece_lies_in_unit_interval(preds in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..300), c in 1usize..20) {
        let r = compute_ece(&preds, c).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.ece));
    }

    #[test]
    fn ece_ignores_input_order(mut preds in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..200)) {
        let a = compute_ece(&preds, 10).unwrap().ece;
        preds.reverse();
        let b = compute_ece(&preds, 10).unwrap().ece;
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn risk_scores_never_exceed_mean_for_positive_b_without_covariance(rows in matrix(), b in 0.0f64..2.0) {
        // a single candidate has no cross terms, so aversion can only lower it
        let single: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0]]).collect();
        let d = dist(single);
        let at0 = risk_adjusted_scores(&d, 0.0)[0];
        prop_assert!(risk_adjusted_scores(&d, b)[0] <= at0 + 1e-15);
    }

    #[test]
    fn risk_scores_are_shift_equivariant(rows in matrix(), b in -0.5f64..2.0, c in 0.0f64..1.0) {
        // keep shifted scores inside [0, 1]
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * (1.0 - c)).collect()).collect();
        let base = risk_adjusted_scores(&dist(rows.clone()), b);
        let shifted: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v + c).collect()).collect();
        for (x, y) in base.iter().zip(risk_adjusted_scores(&dist(shifted), b)) {
            prop_assert!((x + c - y).abs() < 1e-9);
        }
    }

    #[test]
    fn t_test_p_is_a_probability(pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..60)) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let r = paired_t_test(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.p));
    }
}
