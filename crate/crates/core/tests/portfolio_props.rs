use mmlab::portfolio::{modified_sharpe, price_metrics, rank_metrics, Criterion, Window};
use proptest::prelude::*;

const W: Window = Window { start: 0, end: 1 };

fn prices() -> impl Strategy<Value = Vec<i64>> {
    prop::collection::vec(1i64..10_000, 2..60)
}

proptest! {
    #[test]
    fn msharpe_sign_follows_return(ret in -5.0f64..5.0, stdn in 0.0f64..3.0) {
        let m = modified_sharpe(ret, stdn);
        prop_assert_eq!(m.partial_cmp(&0.0), ret.partial_cmp(&0.0));
        if ret > 0.0 && stdn > 0.0 {
            prop_assert!((m - ret / stdn).abs() <= 1e-12 * m.abs().max(1.0));
        }
        if ret < 0.0 {
            prop_assert!((m - ret * stdn).abs() <= 1e-12);
        }
    }

    #[test]
    fn metrics_are_scale_free(p in prices(), k in 2i64..100) {
        let a = price_metrics("A", W, &p).unwrap();
        let scaled: Vec<i64> = p.iter().map(|x| x * k).collect();
        let b = price_metrics("A", W, &scaled).unwrap();
        prop_assert!((a.ret - b.ret).abs() < 1e-9);
        prop_assert!((a.stdn - b.stdn).abs() < 1e-9);
        prop_assert!(a.stdn >= 0.0);
    }

    #[test]
    fn rankings_are_sorted_permutations(series in prop::collection::vec(prices(), 1..8)) {
        let metrics: Vec<_> = series
            .iter()
            .enumerate()
            .map(|(i, p)| price_metrics(&format!("S{i}"), W, p).unwrap())
            .collect();
        for c in Criterion::ALL {
            let r = rank_metrics(&metrics, c);
            let mut got = r.order.clone();
            got.sort();
            let mut want: Vec<_> = metrics.iter().map(|m| m.symbol.clone()).collect();
            want.sort();
            prop_assert_eq!(got, want);
            let score = |s: &str| c.value(metrics.iter().find(|m| m.symbol == s).unwrap());
            for w in r.order.windows(2) {
                let (x, y) = (score(&w[0]), score(&w[1]));
                if c == Criterion::Stdn {
                    prop_assert!(x <= y);
                } else {
                    prop_assert!(x >= y);
                }
                if x == y {
                    prop_assert!(w[0] < w[1]);
                }
            }
        }
    }
}
