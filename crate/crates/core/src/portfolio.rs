//! Asset evaluation: return, normalized dispersion, Sharpe and the
//! asymmetric Modified Sharpe ratio, plus rankings by metric and by backtest.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backtest::{run_backtest, BacktestConfig, BacktestOptions};
use crate::marketdata::MarketHistory;
use crate::sim::{AgentSpec, SimError};
use crate::{Candle, Ticks, Ts};

/// Guards the positive branch of [`modified_sharpe`] against `stdn = 0`.
pub const MSHARPE_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PortfolioError {
    #[error("{symbol}: {reason}")]
    Window { symbol: String, reason: String },
    #[error("strategy set is empty")]
    NoStrategies,
    #[error("{symbol}: {source}")]
    Backtest {
        symbol: String,
        #[source]
        source: SimError,
    },
}

/// Return over dispersion when positive; loss times dispersion when negative.
pub fn modified_sharpe(ret: f64, stdn: f64) -> f64 {
    if ret > 0.0 {
        ret / stdn.max(MSHARPE_EPS)
    } else if ret < 0.0 {
        ret * stdn
    } else {
        0.0
    }
}

/// Inclusive timestamp window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: Ts,
    pub end: Ts,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssetMetrics {
    pub symbol: String,
    pub window: Window,
    pub points: usize,
    pub ret: f64,
    /// Population standard deviation over the mean.
    pub stdn: f64,
    pub sharpe: f64,
    pub msharpe: f64,
}

/// Metrics of a price path. Needs at least two prices.
pub fn price_metrics(
    symbol: &str,
    window: Window,
    prices: &[Ticks],
) -> Result<AssetMetrics, PortfolioError> {
    if prices.len() < 2 {
        return Err(PortfolioError::Window {
            symbol: symbol.to_string(),
            reason: format!("{} price(s) in window, need at least 2", prices.len()),
        });
    }
    let n = prices.len() as f64;
    let mean = prices.iter().map(|&p| p as f64).sum::<f64>() / n;
    let var = prices
        .iter()
        .map(|&p| (p as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let stdn = if mean > 0.0 { var.sqrt() / mean } else { 0.0 };
    let (first, last) = (prices[0] as f64, prices[prices.len() - 1] as f64);
    let ret = (last - first) / first;
    Ok(AssetMetrics {
        symbol: symbol.to_string(),
        window,
        points: prices.len(),
        ret,
        stdn,
        sharpe: if stdn > 0.0 { ret / stdn } else { 0.0 },
        msharpe: modified_sharpe(ret, stdn),
    })
}

/// Metrics over the closes of `candles` inside `window`.
pub fn asset_metrics(
    symbol: &str,
    candles: &[Candle],
    window: Window,
) -> Result<AssetMetrics, PortfolioError> {
    let closes: Vec<Ticks> = candles
        .iter()
        .filter(|c| c.ts >= window.start && c.ts <= window.end)
        .map(|c| c.close)
        .collect();
    price_metrics(symbol, window, &closes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Ret,
    Stdn,
    Sharpe,
    Msharpe,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [
        Criterion::Ret,
        Criterion::Stdn,
        Criterion::Sharpe,
        Criterion::Msharpe,
    ];

    pub fn value(self, m: &AssetMetrics) -> f64 {
        match self {
            Self::Ret => m.ret,
            Self::Stdn => m.stdn,
            Self::Sharpe => m.sharpe,
            Self::Msharpe => m.msharpe,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Ret => "ret",
            Self::Stdn => "stdn",
            Self::Sharpe => "sharpe",
            Self::Msharpe => "msharpe",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Exclusion {
    pub symbol: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ranking {
    pub criterion: Criterion,
    /// Best first.
    pub order: Vec<String>,
    /// Adjacent pairs with equal scores, resolved by symbol order.
    pub ties: Vec<(String, String)>,
    pub excluded: Vec<Exclusion>,
}

/// Orders `(symbol, score)` pairs best first; higher is better unless
/// `ascending`.
fn order_scores(
    mut scored: Vec<(String, f64)>,
    ascending: bool,
) -> (Vec<String>, Vec<(String, String)>) {
    scored.sort_by(|a, b| {
        let by_score = if ascending {
            a.1.total_cmp(&b.1)
        } else {
            b.1.total_cmp(&a.1)
        };
        by_score.then_with(|| a.0.cmp(&b.0))
    });
    let ties = scored
        .windows(2)
        .filter(|w| w[0].1.total_cmp(&w[1].1) == Ordering::Equal)
        .map(|w| (w[0].0.clone(), w[1].0.clone()))
        .collect();
    (scored.into_iter().map(|(s, _)| s).collect(), ties)
}

/// Ranks metrics by `criterion`: descending, except ascending for `stdn`.
pub fn rank_metrics(metrics: &[AssetMetrics], criterion: Criterion) -> Ranking {
    let scored = metrics
        .iter()
        .map(|m| (m.symbol.clone(), criterion.value(m)))
        .collect();
    let (order, ties) = order_scores(scored, criterion == Criterion::Stdn);
    Ranking {
        criterion,
        order,
        ties,
        excluded: Vec::new(),
    }
}

/// Checks that `candles` span the whole window.
fn coverage(symbol: &str, candles: &[Candle], window: Window) -> Result<(), String> {
    match (candles.first(), candles.last()) {
        (Some(f), Some(l)) if f.ts <= window.start && l.ts >= window.end => Ok(()),
        (Some(f), Some(l)) => Err(format!(
            "{symbol}: data covers [{}, {}], window is [{}, {}]",
            f.ts, l.ts, window.start, window.end
        )),
        _ => Err(format!("{symbol}: no data")),
    }
}

/// Widest window covered by every series, or `None` when they do not overlap.
pub fn common_window<'a>(series: impl IntoIterator<Item = &'a [Candle]>) -> Option<Window> {
    let mut start = Ts::MIN;
    let mut end = Ts::MAX;
    for c in series {
        start = start.max(c.first()?.ts);
        end = end.min(c.last()?.ts);
    }
    (start < end).then_some(Window { start, end })
}

/// Metrics and ranking of every asset; assets not covering the window are
/// excluded with a reason.
pub fn rank_assets(
    histories: &[(String, Vec<Candle>)],
    window: Window,
    criterion: Criterion,
) -> (Ranking, Vec<AssetMetrics>) {
    let mut metrics = Vec::new();
    let mut excluded = Vec::new();
    for (symbol, candles) in histories {
        match coverage(symbol, candles, window)
            .and_then(|()| asset_metrics(symbol, candles, window).map_err(|e| e.to_string()))
        {
            Ok(m) => metrics.push(m),
            Err(reason) => excluded.push(Exclusion {
                symbol: symbol.clone(),
                reason,
            }),
        }
    }
    let mut ranking = rank_metrics(&metrics, criterion);
    ranking.excluded = excluded;
    (ranking, metrics)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StrategyReturn {
    pub strategy: String,
    #[serde(rename = "return")]
    pub ret: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssetOutcome {
    pub symbol: String,
    pub hodl_return: f64,
    pub best_strategy: String,
    pub best_return: f64,
    pub strategies: Vec<StrategyReturn>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankingReport {
    pub window: Window,
    pub metrics: Vec<AssetMetrics>,
    /// Straight metric orderings, keyed by criterion name.
    pub metric_orderings: BTreeMap<String, Vec<String>>,
    pub outcomes: Vec<AssetOutcome>,
    /// Ordering by best-strategy backtest return.
    pub backtest_ordering: Vec<String>,
    pub ties: Vec<(String, String)>,
    pub oracle_used: bool,
}

/// Price path used for metrics: candle closes, or trade prints without candles.
fn history_prices(history: &MarketHistory) -> Vec<Ticks> {
    if history.candles().is_empty() {
        history.trades().iter().map(|t| t.price).collect()
    } else {
        history.candles().iter().map(|c| c.close).collect()
    }
}

/// Backtests every strategy on every asset over `window` and orders assets
/// by their best strategy return. Every run starts from the capital given in
/// each strategy's agent spec.
pub fn backtest_rank(
    histories: &[(String, MarketHistory)],
    window: Window,
    strategies: &[AgentSpec],
    options: &BacktestOptions,
) -> Result<RankingReport, PortfolioError> {
    if strategies.is_empty() {
        return Err(PortfolioError::NoStrategies);
    }
    let mut assets: Vec<&(String, MarketHistory)> = histories.iter().collect();
    assets.sort_by(|a, b| a.0.cmp(&b.0));

    let results: Vec<(AssetMetrics, AssetOutcome)> = assets
        .par_iter()
        .map(|(symbol, full)| {
            let history = full.window(window.start, window.end);
            let metrics = price_metrics(symbol, window, &history_prices(&history))?;
            let mut hodl_return = 0.0;
            let mut returns = Vec::with_capacity(strategies.len());
            for agent in strategies {
                let mut cfg = BacktestConfig::new(history.clone(), vec![agent.clone()]);
                cfg.options = options.clone();
                let report = run_backtest(&cfg).map_err(|source| PortfolioError::Backtest {
                    symbol: symbol.clone(),
                    source,
                })?;
                hodl_return = report.hodl.ret;
                returns.push(StrategyReturn {
                    strategy: report.agents[0].label.clone(),
                    ret: report.agents[0].ret,
                });
            }
            let best = returns
                .iter()
                .fold(None::<&StrategyReturn>, |best, r| match best {
                    Some(b) if b.ret >= r.ret => Some(b),
                    _ => Some(r),
                })
                .expect("nonempty strategy set");
            let outcome = AssetOutcome {
                symbol: symbol.clone(),
                hodl_return,
                best_strategy: best.strategy.clone(),
                best_return: best.ret,
                strategies: returns.clone(),
            };
            Ok((metrics, outcome))
        })
        .collect::<Result<_, PortfolioError>>()?;

    let (metrics, outcomes): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let metric_orderings = Criterion::ALL
        .iter()
        .map(|&c| (c.name().to_string(), rank_metrics(&metrics, c).order))
        .collect();
    let (backtest_ordering, ties) = order_scores(
        outcomes
            .iter()
            .map(|o| (o.symbol.clone(), o.best_return))
            .collect(),
        false,
    );
    Ok(RankingReport {
        window,
        metrics,
        metric_orderings,
        outcomes,
        backtest_ordering,
        ties,
        oracle_used: strategies.iter().any(|a| a.prediction.is_oracle()),
    })
}

/// Metrics CSV rows: `symbol,ret,stdn,sharpe,msharpe`.
pub fn metrics_csv(metrics: &[AssetMetrics]) -> String {
    let mut s = String::from("symbol,ret,stdn,sharpe,msharpe\n");
    for m in metrics {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            m.symbol, m.ret, m.stdn, m.sharpe, m.msharpe
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const W: Window = Window { start: 0, end: 100 };

    #[test]
    fn msharpe_formula() {
        assert!((modified_sharpe(0.05, 0.02) - 2.5).abs() < 1e-12);
        assert!((modified_sharpe(-0.05, 0.02) + 0.001).abs() < 1e-12);
        assert_eq!(modified_sharpe(0.0, 0.3), 0.0);
        assert_eq!(modified_sharpe(0.1, 0.0), 0.1 / MSHARPE_EPS);
    }

    #[test]
    fn metrics_examples() {
        let flat = price_metrics("A", W, &[100, 100, 100]).unwrap();
        assert_eq!(
            (flat.ret, flat.stdn, flat.msharpe, flat.sharpe),
            (0.0, 0.0, 0.0, 0.0)
        );
        let up = price_metrics("B", W, &[100, 110]).unwrap();
        assert!((up.ret - 0.10).abs() < 1e-12);
        assert!((up.stdn - 5.0 / 105.0).abs() < 1e-12);
        assert!(price_metrics("C", W, &[100]).is_err());
    }

    #[test]
    fn equal_negative_returns_prefer_low_dispersion() {
        let a = modified_sharpe(-0.05, 0.01);
        let b = modified_sharpe(-0.05, 0.05);
        assert!((a + 0.0005).abs() < 1e-15 && (b + 0.0025).abs() < 1e-15);
        assert!(a > b);
    }

    fn candles(prices: &[Ticks]) -> Vec<Candle> {
        prices
            .iter()
            .enumerate()
            .map(|(i, &p)| Candle::flat(i as i64 * 10, p))
            .collect()
    }

    #[test]
    fn ranking_ties_and_exclusions() {
        let h = vec![
            ("ZZZ".to_string(), candles(&[50; 11])),
            ("AAA".to_string(), candles(&[70; 11])),
            ("SHORT".to_string(), candles(&[70; 5])),
        ];
        let (r, m) = rank_assets(&h, W, Criterion::Msharpe);
        assert_eq!(r.order, vec!["AAA", "ZZZ"]);
        assert_eq!(r.ties, vec![("AAA".to_string(), "ZZZ".to_string())]);
        assert_eq!(r.excluded.len(), 1);
        assert_eq!(r.excluded[0].symbol, "SHORT");
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn stdn_ranks_ascending() {
        let h = vec![
            (
                "calm".to_string(),
                candles(&[100, 101, 100, 101, 100, 101, 100, 101, 100, 101, 100]),
            ),
            (
                "wild".to_string(),
                candles(&[100, 120, 90, 130, 80, 100, 120, 90, 130, 80, 110]),
            ),
        ];
        assert_eq!(
            rank_assets(&h, W, Criterion::Stdn).0.order,
            vec!["calm", "wild"]
        );
        assert_eq!(
            rank_assets(&h, W, Criterion::Ret).0.order,
            vec!["wild", "calm"]
        );
    }

    #[test]
    fn common_window_intersects() {
        let a = candles(&[1; 10]);
        let b: Vec<Candle> = candles(&[1; 10]).into_iter().skip(3).collect();
        assert_eq!(
            common_window([a.as_slice(), b.as_slice()]),
            Some(Window { start: 30, end: 90 })
        );
    }

    #[test]
    fn empty_strategy_set() {
        assert!(matches!(
            backtest_rank(&[], W, &[], &BacktestOptions::default()),
            Err(PortfolioError::NoStrategies)
        ));
    }

    proptest! {
        #[test]
        fn msharpe_sign_and_order(ret in -1.0f64..1.0, s1 in 0.0f64..2.0, d in 1e-6f64..2.0) {
            let m = modified_sharpe(ret, s1);
            prop_assert_eq!(m.signum() == ret.signum() || ret == 0.0, true);
            if ret < 0.0 {
                prop_assert!(modified_sharpe(ret, s1) > modified_sharpe(ret, s1 + d));
            }
            if ret >= 0.0 && s1 >= MSHARPE_EPS {
                let sharpe = ret / s1;
                prop_assert_eq!(m, sharpe);
            }
        }

        #[test]
        fn metrics_scale_invariant(prices in proptest::collection::vec(1i64..10_000, 2..50), c in 1i64..1000) {
            let a = price_metrics("A", W, &prices).unwrap();
            let scaled: Vec<Ticks> = prices.iter().map(|p| p * c).collect();
            let b = price_metrics("A", W, &scaled).unwrap();
            prop_assert!((a.ret - b.ret).abs() <= 1e-12 * a.ret.abs().max(1.0));
            prop_assert!((a.stdn - b.stdn).abs() <= 1e-12 * a.stdn.max(1.0));
            prop_assert!((a.msharpe - b.msharpe).abs() <= 1e-9 * a.msharpe.abs().max(1.0));
            prop_assert!(a.stdn >= 0.0);
        }
    }
}
