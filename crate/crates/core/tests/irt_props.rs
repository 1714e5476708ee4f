mod common;

use learnprof_core::dataset::ResponseSet;
use learnprof_core::irt::{self, icc, FitConfig, IrtData, ItemParams, Priors};
use proptest::prelude::*;
use uuid::Uuid;

use common::rec;

fn item(alpha: f64, beta: f64, lambda: f64) -> ItemParams {
    ItemParams {
        question_id: Uuid::nil(),
        alpha,
        beta,
        lambda,
    }
}

/// Random small response set plus a parameter vector of matching length.
fn instance() -> impl Strategy<Value = (ResponseSet, Vec<f64>)> {
    (2usize..7, 2usize..5)
        .prop_flat_map(|(readers, items)| {
            (
                prop::collection::vec(prop::option::weighted(0.8, 0u8..=1), readers * items),
                prop::collection::vec(-2.0f64..2.0, readers + 3 * items),
                Just((readers, items)),
            )
        })
        .prop_map(|(cells, params, (readers, items))| {
            let mut records = Vec::new();
            for r in 0..readers {
                for q in 0..items {
                    if let Some(s) = cells[r * items + q] {
                        records.push(rec(r as u128, q as u128, 1, (r * items + q) as i64, s));
                    }
                }
            }
            // Every reader and item needs at least one record.
            for r in 0..readers.max(items) {
                records.push(rec((r % readers) as u128, (r % items) as u128, 1, 1000 + r as i64, 1));
            }
            let rs = ResponseSet::new(records, [1]);
            let data = IrtData::from_index(&rs.index());
            let params = params[..data.n_params()].to_vec();
            (rs, params)
        })
}

proptest! {
    #[test]
    fn icc_monotone_and_bounded(
        alpha in 0.05f64..4.0,
        beta in -3.0f64..3.0,
        lambda in 0.01f64..0.6,
        t1 in -3.0f64..3.0,
        dt in 0.01f64..2.0,
    ) {
        let p = item(alpha, beta, lambda);
        let (a, b) = (icc(&p, t1), icc(&p, t1 + dt));
        prop_assert!(b > a);
        prop_assert!(a > lambda && b < 1.0);
        let harder = item(alpha, beta + dt, lambda);
        prop_assert!(icc(&harder, t1) < a);
    }

    #[test]
    fn icc_symmetric_about_beta(
        alpha in 0.05f64..4.0,
        beta in -3.0f64..3.0,
        lambda in 0.0f64..0.9,
        x in 0.0f64..5.0,
    ) {
        let p = item(alpha, beta, lambda);
        prop_assert!((icc(&p, beta + x) + icc(&p, beta - x) - (1.0 + lambda)).abs() < 1e-12);
        prop_assert!((icc(&p, beta) - (1.0 + lambda) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences((rs, params) in instance()) {
        let data = IrtData::from_index(&rs.index());
        let priors = Priors::default();
        let mut grad = vec![0.0; params.len()];
        data.evaluate(&params, &priors, Some(&mut grad)).unwrap();
        let h = 1e-5;
        for k in 0..params.len() {
            let mut up = params.clone();
            let mut down = params.clone();
            up[k] += h;
            down[k] -= h;
            let fd = (data.evaluate(&up, &priors, None).unwrap()
                - data.evaluate(&down, &priors, None).unwrap())
                / (2.0 * h);
            let scale = grad[k].abs().max(fd.abs()).max(1e-2);
            prop_assert!((grad[k] - fd).abs() / scale <= 1e-4, "param {}: analytic {} fd {}", k, grad[k], fd);
        }
    }
}

#[test]
fn fit_is_deterministic_and_monotone() {
    let mut records = Vec::new();
    for r in 0..40u128 {
        for q in 0..5u128 {
            let s = u8::from((r + q * 7) % 5 < 2 + (r % 3));
            records.push(rec(r, q, 1, (r * 10 + q) as i64, s));
        }
    }
    let rs = ResponseSet::new(records, [1]);
    let cfg = FitConfig {
        epochs: 200,
        seed: 5,
        ..Default::default()
    };
    let a = irt::fit(&rs, &cfg).unwrap();
    let b = irt::fit(&rs, &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.trajectory.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(a.trajectory.len(), 201);
    let lp = irt::log_posterior(&rs, &a.items, &a.abilities, &cfg).unwrap();
    assert!((lp - a.trajectory[200]).abs() < 1e-9 * lp.abs());
}

#[test]
fn fit_rejects_unanimous_question() {
    let records = (0..5u128).map(|r| rec(r, 0, 1, r as i64, 1)).collect();
    let rs = ResponseSet::new(records, [1]);
    assert!(irt::fit(&rs, &FitConfig::default()).is_err());
}
