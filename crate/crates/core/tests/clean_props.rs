use proptest::prelude::*;
use starcube_core::clean::{impute_mean, impute_regression, smooth_bins, standardize, BinMode};

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

fn column() -> impl Strategy<Value = Vec<Option<f64>>> {
    prop::collection::vec(
        prop::option::weighted(0.7, (-1_000_000_000i64..1_000_000_000).prop_map(|v| v as f64)),
        1..300,
    )
}

proptest! {
    #[test]
    fn mean_imputation_fills_and_keeps_the_mean(col in column()) {
        prop_assume!(col.iter().any(Option::is_some));
        let present: Vec<f64> = col.iter().flatten().copied().collect();
        let out = impute_mean(&col).unwrap();
        prop_assert_eq!(out.len(), col.len());
        prop_assert!(out.iter().all(|v| v.is_finite()));
        for (o, i) in out.iter().zip(&col) {
            if let Some(v) = i {
                prop_assert_eq!(o, v);
            }
        }
        let before = mean(&present);
        prop_assert!((mean(&out) - before).abs() <= 1e-9 * before.abs().max(1.0));
    }

    #[test]
    fn regression_imputation_leaves_present_values(col in column(), slope in -5i64..5) {
        let predictor: Vec<f64> = (0..col.len()).map(|i| (i as i64 * slope) as f64).collect();
        match impute_regression(&col, &predictor) {
            Ok(r) => {
                prop_assert!(r.values.iter().all(|v| v.is_finite()));
                prop_assert_eq!(r.fell_back_to_mean, slope == 0);
                for (o, i) in r.values.iter().zip(&col) {
                    if let Some(v) = i {
                        prop_assert_eq!(o, v);
                    }
                }
            }
            Err(_) => prop_assert!(col.iter().flatten().count() < 2),
        }
    }

    #[test]
    fn standardized_columns_have_zero_mean_unit_variance(
        base in -1_000_000_000i64..1_000_000_000,
        offsets in prop::collection::vec(0i64..1_000_000, 2..500),
    ) {
        prop_assume!(offsets.iter().any(|o| *o != offsets[0]));
        let col: Vec<f64> = offsets.iter().map(|o| (base + o) as f64).collect();
        let z = standardize(&col).unwrap();
        prop_assert!(mean(&z).abs() < 1e-9, "mean {}", mean(&z));
        prop_assert!((variance(&z) - 1.0).abs() < 1e-9, "variance {}", variance(&z));
    }

    #[test]
    fn bin_means_preserve_the_sum(
        col in prop::collection::vec((-1_000_000_000i64..1_000_000_000).prop_map(|v| v as f64), 1..400),
        k in 1usize..20,
    ) {
        let k = k.min(col.len());
        let out = smooth_bins(&col, k, BinMode::Means).unwrap();
        let (a, b): (f64, f64) = (col.iter().sum(), out.iter().sum());
        let scale = col.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        prop_assert!((a - b).abs() <= 1e-9 * scale);
        let bounds = smooth_bins(&col, k, BinMode::Boundaries).unwrap();
        prop_assert!(bounds.iter().all(|v| col.contains(v)));
    }
}
