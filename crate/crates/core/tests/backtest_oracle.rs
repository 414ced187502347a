mod oracles;

use std::collections::BTreeMap;

use mmlab::backtest::{
    match_tape, run_backtest, BacktestConfig, FillPrice, FillRule, VirtualOrder,
};
use mmlab::lob::{AgentId, OrderId};
use mmlab::sim::AgentSpec;
use mmlab::strategies::{MMParams, PredictionSpec, StrategySpec};
use mmlab::{InstrumentSpec, MarketHistory, Side, Trade};
use oracles::{brute_force_zero_spread, naive_fills};
use proptest::prelude::*;

fn rules() -> Vec<FillRule> {
    let mut out = Vec::new();
    for strict in [false, true] {
        for deplete in [false, true] {
            for price in [FillPrice::Maker, FillPrice::Trade] {
                out.push(FillRule {
                    require_price_improvement: strict,
                    deplete_trade_qty: deplete,
                    fill_price: price,
                });
            }
        }
    }
    out
}

fn orders_strategy() -> impl Strategy<Value = Vec<VirtualOrder>> {
    prop::collection::vec(
        (
            prop_oneof![Just(Side::Buy), Just(Side::Sell)],
            95i64..106,
            1i64..6,
            0i64..30,
            prop::option::of(0i64..20),
            0u32..3,
        ),
        0..25,
    )
    .prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(
                |(i, (side, price, qty, placed_ts, ttl, agent))| VirtualOrder {
                    id: OrderId(i as u64 + 1),
                    agent: AgentId(agent),
                    side,
                    price,
                    qty,
                    placed_ts,
                    expires_at: ttl.map(|t| placed_ts + t),
                },
            )
            .collect()
    })
}

fn tape_strategy() -> impl Strategy<Value = Vec<Trade>> {
    prop::collection::vec((0i64..4, 95i64..106, 1i64..8), 0..40).prop_map(|v| {
        let mut ts = 0;
        v.into_iter()
            .map(|(dt, price, qty)| {
                ts += dt;
                Trade {
                    ts,
                    price,
                    qty,
                    aggressor: Side::Buy,
                }
            })
            .collect()
    })
}

fn filled_by_order(fills: &[mmlab::backtest::VirtualFill]) -> BTreeMap<u64, i64> {
    let mut m = BTreeMap::new();
    for f in fills {
        *m.entry(f.order_id.0).or_insert(0) += f.qty;
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn engine_matches_naive_scan(orders in orders_strategy(), tape in tape_strategy()) {
        for rule in rules() {
            let got = match_tape(&orders, &tape, &rule);
            let want = naive_fills(&orders, &tape, &rule);
            prop_assert_eq!(&got, &want, "rule {:?}", rule);
            for f in &got {
                prop_assert!(f.ts > f.placed_ts);
            }
        }
    }

    #[test]
    fn relaxing_the_rule_never_fills_less(orders in orders_strategy(), tape in tape_strategy()) {
        // without depletion every order sees each trade in full, so
        // loosening the price condition can only add fills
        let strict = FillRule { require_price_improvement: true, ..FillRule::default() };
        let loose = FillRule::default();
        let a = filled_by_order(&match_tape(&orders, &tape, &strict));
        let b = filled_by_order(&match_tape(&orders, &tape, &loose));
        for (id, q) in a {
            prop_assert!(b.get(&id).copied().unwrap_or(0) >= q);
        }
        let shared = filled_by_order(&match_tape(&orders, &tape, &FillRule { deplete_trade_qty: true, ..loose }));
        let full = filled_by_order(&match_tape(&orders, &tape, &loose));
        for (id, q) in shared {
            prop_assert!(full.get(&id).copied().unwrap_or(0) >= q);
        }
    }

    #[test]
    fn zero_spread_oracle_matches_brute_force(
        prices in prop::collection::vec(95i64..106, 2..100),
        qtys in prop::collection::vec(1i64..4, 100),
        horizon in 1usize..4,
        size in 1i64..3,
    ) {
        let spec = InstrumentSpec::unit("T");
        let tape: Vec<Trade> = prices
            .iter()
            .enumerate()
            .map(|(i, &p)| Trade { ts: i as i64 * 100, price: p, qty: qtys[i], aggressor: Side::Buy })
            .collect();
        let history = MarketHistory::new(spec, tape, vec![], vec![]).unwrap();
        let params = MMParams { order_size: size, ..MMParams::default() };
        let cap = params.cap();
        let agent = AgentSpec::new(StrategySpec::ZeroSpread { params }, 5, 2_000)
            .with_prediction(PredictionSpec::oracle(horizon));
        let mut cfg = BacktestConfig::new(history, vec![agent]);
        cfg.options.allow_oracle = true;
        cfg.options.fill.fill_price = FillPrice::Trade;
        let report = run_backtest(&cfg).unwrap();
        let (base, quote) = brute_force_zero_spread(&prices, &qtys, horizon, size, cap, 5, 2_000);
        prop_assert_eq!((report.agents[0].final_base, report.agents[0].final_quote), (base, quote));
        let last = *prices.last().unwrap();
        prop_assert_eq!(report.agents[0].pnl, (quote + base * last) - (2_000 + 5 * last));
    }
}

fn oscillating_run(
    horizon: usize,
    fill_price: FillPrice,
) -> (mmlab::backtest::BacktestReport, Vec<i64>) {
    let prices: Vec<i64> = (0..100)
        .map(|i| if i % 2 == 0 { 101 } else { 100 })
        .collect();
    let tape = prices
        .iter()
        .enumerate()
        .map(|(i, &p)| Trade {
            ts: i as i64 * 100,
            price: p,
            qty: 1,
            aggressor: Side::Buy,
        })
        .collect();
    let history = MarketHistory::new(InstrumentSpec::unit("OSC"), tape, vec![], vec![]).unwrap();
    let agent = AgentSpec::new(
        StrategySpec::ZeroSpread {
            params: MMParams::default(),
        },
        10,
        10_000,
    )
    .with_prediction(PredictionSpec::oracle(horizon));
    let mut cfg = BacktestConfig::new(history, vec![agent]);
    cfg.options.allow_oracle = true;
    cfg.options.fill.fill_price = fill_price;
    (run_backtest(&cfg).unwrap(), prices)
}

#[test]
fn oscillating_tape_rewards_foresight() {
    let (report, prices) = oscillating_run(2, FillPrice::Trade);
    let (base, quote) = brute_force_zero_spread(&prices, &[1; 100], 2, 1, 10, 10, 10_000);
    let a = &report.agents[0];
    assert_eq!((a.final_base, a.final_quote), (base, quote));
    assert!(a.pnl > 0, "pnl {}", a.pnl);
    assert!(a.ret > report.hodl.ret);
    // hodl buys at 101 and marks at 100
    assert!(report.hodl.ret.abs() < 0.02);
}

#[test]
fn one_step_foresight_washes_on_alternating_tape() {
    // quoting both sides at the next print fills both legs at that print
    let (report, _) = oscillating_run(1, FillPrice::Trade);
    assert_eq!(report.agents[0].pnl, 0);
    // at the maker's own price the zero-spread quote never earns an edge
    let (report, _) = oscillating_run(2, FillPrice::Maker);
    assert!(report.agents[0].pnl <= 0);
}
