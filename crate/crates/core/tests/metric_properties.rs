use proptest::prelude::*;
use selpred_core::data::BinaryLabelView;
use selpred_core::selective::{aurcc, coverage_risk, refinement, risk_coverage_curve, rpp, Refinement};
use selpred_core::testkit::{aurcc_oracle, rpp_oracle};

/// Confidences drawn from a small grid so ties are common, or continuous.
fn instance() -> impl Strategy<Value = (Vec<u8>, Vec<f64>)> {
    (1usize..80, prop::bool::ANY).prop_flat_map(|(n, tied)| {
        let conf = if tied {
            prop::collection::vec((0u8..6).prop_map(|k| k as f64 / 5.0), n).boxed()
        } else {
            prop::collection::vec(-1.0f64..1.0, n).boxed()
        };
        (prop::collection::vec(0u8..=1, n), conf)
    })
}

proptest! {
    #[test]
    fn fast_paths_match_oracles((losses, conf) in instance()) {
        let view = BinaryLabelView::from_losses(losses);
        prop_assert_eq!(rpp(&view, &conf).unwrap(), rpp_oracle(&view, &conf).unwrap());
        let fast = aurcc(&risk_coverage_curve(&view, &conf).unwrap());
        prop_assert!((fast - aurcc_oracle(&view, &conf).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn curve_shape((losses, conf) in instance()) {
        let view = BinaryLabelView::from_losses(losses);
        let curve = risk_coverage_curve(&view, &conf).unwrap();
        prop_assert!(curve.points.windows(2).all(|w| w[0].coverage < w[1].coverage));
        prop_assert_eq!(curve.points.last().unwrap().coverage, 1.0);
        let mut distinct = conf.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        prop_assert_eq!(curve.tie_groups(), distinct.len());
        let area = aurcc(&curve);
        prop_assert!((0.0..=1.0).contains(&area));
    }

    #[test]
    fn coverage_non_increasing_in_threshold((losses, conf) in instance(), mut grid in prop::collection::vec(-1.5f64..1.5, 2..20)) {
        let view = BinaryLabelView::from_losses(losses);
        grid.sort_by(f64::total_cmp);
        let cov: Vec<f64> = grid.iter().map(|&g| coverage_risk(&view, &conf, g).unwrap().coverage).collect();
        prop_assert!(cov.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn rpp_refinement_identity((losses, conf) in instance()) {
        let view = BinaryLabelView::from_losses(losses);
        let n = view.len() as f64;
        let c = view.n_correct() as f64;
        let r = rpp(&view, &conf).unwrap();
        prop_assert!((0.0..=0.25).contains(&r));
        match refinement(&view, &conf).unwrap() {
            Refinement::Defined(rf) => {
                prop_assert!((0.0..=1.0).contains(&rf));
                prop_assert!((r - rf * c * (n - c) / (n * n)).abs() <= 1e-12);
            }
            Refinement::Degenerate => prop_assert!(c == 0.0 || c == n),
        }
    }

    #[test]
    fn monotone_transform_changes_nothing((losses, conf) in instance()) {
        let view = BinaryLabelView::from_losses(losses);
        let warped: Vec<f64> = conf.iter().map(|x| x.powi(3) + x).collect();
        prop_assert_eq!(rpp(&view, &conf).unwrap(), rpp(&view, &warped).unwrap());
        prop_assert_eq!(refinement(&view, &conf).unwrap(), refinement(&view, &warped).unwrap());
        prop_assert_eq!(aurcc(&risk_coverage_curve(&view, &conf).unwrap()),
                        aurcc(&risk_coverage_curve(&view, &warped).unwrap()));
    }

    #[test]
    fn record_order_is_irrelevant((losses, conf) in instance(), seed in any::<u64>()) {
        let n = losses.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut state = seed | 1;
        for i in (1..n).rev() {
            state ^= state << 13; state ^= state >> 7; state ^= state << 17;
            order.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let view = BinaryLabelView::from_losses(losses.clone());
        let shuffled = BinaryLabelView::from_losses(order.iter().map(|&i| losses[i]).collect());
        let sconf: Vec<f64> = order.iter().map(|&i| conf[i]).collect();
        prop_assert_eq!(rpp(&view, &conf).unwrap(), rpp(&shuffled, &sconf).unwrap());
        prop_assert_eq!(aurcc(&risk_coverage_curve(&view, &conf).unwrap()),
                        aurcc(&risk_coverage_curve(&shuffled, &sconf).unwrap()));
    }
}
