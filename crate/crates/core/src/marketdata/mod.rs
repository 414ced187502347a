//! Canonical market-data model.
//!
//! Every price is an integer number of ticks and every quantity an integer
//! number of lots of one [`InstrumentSpec`]. Decimal strings from files are
//! mapped onto that grid exactly; values off the grid are rejected.

mod adapter;
mod curve;
mod io;

use std::str::FromStr;

use rust_decimal::prelude::ToPrimitive;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{Atoms, Lots, Ticks, Ts};

pub use adapter::{
    candles_to_trades, load_binance_klines, load_binance_trades, BINANCE_KLINE_COLUMNS,
    BINANCE_TRADE_COLUMNS,
};
pub use curve::{generate_curve, CurveKind, CurveSpec};
pub use io::{
    load_candles, load_snapshots, load_trades, read_candles, read_snapshots, read_trades,
    write_candles, write_snapshots, write_trades,
};

#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },
    #[error("{field} not aligned to the instrument grid at row {row}")]
    OffGrid { row: usize, field: &'static str },
    #[error("nonpositive quantity at row {row}")]
    NonPositiveQty { row: usize },
    #[error("nonpositive price at row {row}")]
    NonPositivePrice { row: usize },
    #[error("timestamps out of order at row {row}")]
    Unsorted { row: usize },
    #[error("crossed book at ts={ts}")]
    CrossedBook { ts: Ts },
    #[error("unsorted book levels at ts={ts}")]
    UnsortedLevels { ts: Ts },
    #[error("invalid candle at row {row}: low/high do not bracket open/close")]
    InvalidCandle { row: usize },
    #[error("invalid instrument: {0}")]
    InvalidInstrument(String),
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("bucket width must be positive, got {0}")]
    InvalidBucket(i64),
    #[error("history sequences are not sorted by ts: {0}")]
    UnsortedHistory(&'static str),
}

pub type Result<T> = std::result::Result<T, MarketDataError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Buy,
    Sell,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Buy => Side::Sell,
            Side::Sell => Side::Buy,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Buy => "buy",
            Side::Sell => "sell",
        }
    }
}

impl FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "buy" | "b" => Ok(Side::Buy),
            "sell" | "s" => Ok(Side::Sell),
            other => Err(format!("unknown side {other:?}")),
        }
    }
}

/// Price and quantity discretization of one symbol pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstrumentSpec {
    pub symbol: String,
    /// Quote-currency units per price tick.
    pub tick_size: Decimal,
    /// Base-currency units per quantity lot.
    pub lot_size: Decimal,
}

impl InstrumentSpec {
    pub fn new(symbol: impl Into<String>, tick_size: Decimal, lot_size: Decimal) -> Result<Self> {
        let spec = Self {
            symbol: symbol.into(),
            tick_size,
            lot_size,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Parses decimal strings for the tick and lot sizes.
    pub fn parse(symbol: impl Into<String>, tick_size: &str, lot_size: &str) -> Result<Self> {
        let tick = parse_decimal(tick_size).ok_or_else(|| {
            MarketDataError::InvalidInstrument(format!("bad tick_size {tick_size:?}"))
        })?;
        let lot = parse_decimal(lot_size).ok_or_else(|| {
            MarketDataError::InvalidInstrument(format!("bad lot_size {lot_size:?}"))
        })?;
        Self::new(symbol, tick, lot)
    }

    /// Integer instrument with tick = lot = 1.
    pub fn unit(symbol: impl Into<String>) -> Self {
        Self {
            symbol: symbol.into(),
            tick_size: Decimal::ONE,
            lot_size: Decimal::ONE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tick_size <= Decimal::ZERO {
            return Err(MarketDataError::InvalidInstrument(
                "tick_size must be > 0".into(),
            ));
        }
        if self.lot_size <= Decimal::ZERO {
            return Err(MarketDataError::InvalidInstrument(
                "lot_size must be > 0".into(),
            ));
        }
        Ok(())
    }

    /// Exact conversion of a decimal price to ticks; `None` when off-grid.
    pub fn price_to_ticks(&self, price: Decimal) -> Option<Ticks> {
        quantize(price, self.tick_size)
    }

    pub fn qty_to_lots(&self, qty: Decimal) -> Option<Lots> {
        quantize(qty, self.lot_size)
    }

    pub fn ticks_to_price(&self, ticks: Ticks) -> Decimal {
        (Decimal::from(ticks) * self.tick_size).normalize()
    }

    pub fn lots_to_qty(&self, lots: Lots) -> Decimal {
        (Decimal::from(lots) * self.lot_size).normalize()
    }

    fn lot_ratio(&self) -> (i128, i128) {
        (self.lot_size.mantissa(), 10i128.pow(self.lot_size.scale()))
    }

    /// Quote atoms exchanged for `qty` lots at `price` ticks, floor-rounded.
    ///
    /// One atom is one `tick_size` of quote currency, so the exact value is
    /// `qty * lot_size * price`.
    pub fn notional(&self, qty: Lots, price: Ticks) -> Atoms {
        let (num, den) = self.lot_ratio();
        let v = (qty as i128 * price as i128 * num).div_euclid(den);
        v.clamp(i64::MIN as i128, i64::MAX as i128) as Atoms
    }

    /// Largest lot count whose notional at `price` does not exceed `quote`.
    pub fn lots_affordable(&self, quote: Atoms, price: Ticks) -> Lots {
        if quote < 0 || price <= 0 {
            return 0;
        }
        let (num, den) = self.lot_ratio();
        let per = price as i128 * num;
        let q = ((quote as i128 + 1) * den - 1).div_euclid(per);
        q.clamp(0, i64::MAX as i128) as Lots
    }
}

pub(crate) fn parse_decimal(s: &str) -> Option<Decimal> {
    let s = s.trim();
    Decimal::from_str_exact(s)
        .or_else(|_| Decimal::from_scientific(s))
        .ok()
}

fn quantize(value: Decimal, step: Decimal) -> Option<i64> {
    let q = value.checked_div(step)?;
    if !q.fract().is_zero() {
        return None;
    }
    q.to_i64()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trade {
    pub ts: Ts,
    pub price: Ticks,
    pub qty: Lots,
    /// Side of the liquidity taker.
    pub aggressor: Side,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LobSnapshot {
    pub ts: Ts,
    /// Best first, descending by price.
    pub bids: Vec<(Ticks, Lots)>,
    /// Best first, ascending by price.
    pub asks: Vec<(Ticks, Lots)>,
}

impl LobSnapshot {
    pub fn best_bid(&self) -> Option<Ticks> {
        self.bids.first().map(|l| l.0)
    }

    pub fn best_ask(&self) -> Option<Ticks> {
        self.asks.first().map(|l| l.0)
    }

    pub fn validate(&self) -> Result<()> {
        let strictly = |levels: &[(Ticks, Lots)], descending: bool| {
            levels.windows(2).all(|w| {
                if descending {
                    w[0].0 > w[1].0
                } else {
                    w[0].0 < w[1].0
                }
            })
        };
        if !strictly(&self.bids, true) || !strictly(&self.asks, false) {
            return Err(MarketDataError::UnsortedLevels { ts: self.ts });
        }
        if self
            .bids
            .iter()
            .chain(&self.asks)
            .any(|&(p, q)| q <= 0 || p <= 0)
        {
            return Err(MarketDataError::UnsortedLevels { ts: self.ts });
        }
        if let (Some(b), Some(a)) = (self.best_bid(), self.best_ask()) {
            if b >= a {
                return Err(MarketDataError::CrossedBook { ts: self.ts });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Candle {
    /// Open time of the bucket.
    pub ts: Ts,
    pub open: Ticks,
    pub high: Ticks,
    pub low: Ticks,
    pub close: Ticks,
    pub volume: Lots,
}

impl Candle {
    pub fn flat(ts: Ts, price: Ticks) -> Self {
        Self {
            ts,
            open: price,
            high: price,
            low: price,
            close: price,
            volume: 0,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.low <= self.open.min(self.close) && self.open.max(self.close) <= self.high
    }
}

/// Immutable, time-ordered data for one symbol pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketHistory {
    spec: InstrumentSpec,
    trades: Vec<Trade>,
    snapshots: Vec<LobSnapshot>,
    candles: Vec<Candle>,
}

impl MarketHistory {
    pub fn new(
        spec: InstrumentSpec,
        trades: Vec<Trade>,
        snapshots: Vec<LobSnapshot>,
        candles: Vec<Candle>,
    ) -> Result<Self> {
        spec.validate()?;
        if !trades.windows(2).all(|w| w[0].ts <= w[1].ts) {
            return Err(MarketDataError::UnsortedHistory("trades"));
        }
        if !snapshots.windows(2).all(|w| w[0].ts <= w[1].ts) {
            return Err(MarketDataError::UnsortedHistory("snapshots"));
        }
        if !candles.windows(2).all(|w| w[0].ts <= w[1].ts) {
            return Err(MarketDataError::UnsortedHistory("candles"));
        }
        Ok(Self {
            spec,
            trades,
            snapshots,
            candles,
        })
    }

    pub fn spec(&self) -> &InstrumentSpec {
        &self.spec
    }

    pub fn trades(&self) -> &[Trade] {
        &self.trades
    }

    pub fn snapshots(&self) -> &[LobSnapshot] {
        &self.snapshots
    }

    pub fn candles(&self) -> &[Candle] {
        &self.candles
    }

    pub fn is_empty(&self) -> bool {
        self.trades.is_empty() && self.snapshots.is_empty() && self.candles.is_empty()
    }

    /// Sub-history with every element in `[start, end]`.
    pub fn window(&self, start: Ts, end: Ts) -> MarketHistory {
        let inside = |ts: Ts| ts >= start && ts <= end;
        MarketHistory {
            spec: self.spec.clone(),
            trades: self
                .trades
                .iter()
                .copied()
                .filter(|t| inside(t.ts))
                .collect(),
            snapshots: self
                .snapshots
                .iter()
                .filter(|s| inside(s.ts))
                .cloned()
                .collect(),
            candles: self
                .candles
                .iter()
                .copied()
                .filter(|c| inside(c.ts))
                .collect(),
        }
    }

    /// Earliest and latest timestamp over all sequences.
    pub fn span(&self) -> Option<(Ts, Ts)> {
        let firsts = [
            self.trades.first().map(|t| t.ts),
            self.snapshots.first().map(|s| s.ts),
            self.candles.first().map(|c| c.ts),
        ];
        let lasts = [
            self.trades.last().map(|t| t.ts),
            self.snapshots.last().map(|s| s.ts),
            self.candles.last().map(|c| c.ts),
        ];
        let lo = firsts.iter().flatten().min()?;
        let hi = lasts.iter().flatten().max()?;
        Some((*lo, *hi))
    }
}

/// Buckets trades into candles of `bucket_ms`; empty buckets are omitted.
pub fn resample(trades: &[Trade], bucket_ms: i64) -> Result<Vec<Candle>> {
    if bucket_ms <= 0 {
        return Err(MarketDataError::InvalidBucket(bucket_ms));
    }
    let mut out: Vec<Candle> = Vec::new();
    for (i, t) in trades.iter().enumerate() {
        if i > 0 && trades[i - 1].ts > t.ts {
            return Err(MarketDataError::Unsorted { row: i });
        }
        let bucket = t.ts.div_euclid(bucket_ms) * bucket_ms;
        match out.last_mut() {
            Some(c) if c.ts == bucket => {
                c.high = c.high.max(t.price);
                c.low = c.low.min(t.price);
                c.close = t.price;
                c.volume += t.qty;
            }
            _ => out.push(Candle {
                ts: bucket,
                open: t.price,
                high: t.price,
                low: t.price,
                close: t.price,
                volume: t.qty,
            }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tr(ts: Ts, price: Ticks, qty: Lots) -> Trade {
        Trade {
            ts,
            price,
            qty,
            aggressor: Side::Buy,
        }
    }

    #[test]
    fn quantize_on_and_off_grid() {
        let spec = InstrumentSpec::parse("BTCUSDT", "0.01", "0.001").unwrap();
        assert_eq!(
            spec.price_to_ticks(parse_decimal("57000.25").unwrap()),
            Some(5_700_025)
        );
        assert_eq!(spec.qty_to_lots(parse_decimal("0.500").unwrap()), Some(500));
        assert_eq!(
            spec.price_to_ticks(parse_decimal("57000.255").unwrap()),
            None
        );
        assert_eq!(spec.ticks_to_price(5_700_025).to_string(), "57000.25");
    }

    #[test]
    fn instrument_rejects_nonpositive_sizes() {
        assert!(InstrumentSpec::parse("X", "0", "1").is_err());
        assert!(InstrumentSpec::parse("X", "1", "-1").is_err());
    }

    #[test]
    fn notional_and_affordability() {
        let unit = InstrumentSpec::unit("U");
        assert_eq!(unit.notional(2, 100), 200);
        assert_eq!(unit.lots_affordable(1000, 100), 10);
        assert_eq!(unit.lots_affordable(999, 100), 9);
        let spec = InstrumentSpec::parse("BTCUSDT", "0.01", "0.001").unwrap();
        // 1 lot = 0.001 BTC at 57000.25 = 57.00025 USDT = 5700.025 cents
        assert_eq!(spec.notional(1, 5_700_025), 5700);
        let q = spec.lots_affordable(10_000, 5_700_025);
        assert!(spec.notional(q, 5_700_025) <= 10_000);
        assert!(spec.notional(q + 1, 5_700_025) > 10_000);
    }

    #[test]
    fn resample_examples() {
        let c = resample(&[tr(0, 10, 1), tr(500, 12, 2)], 1000).unwrap();
        assert_eq!(
            c,
            vec![Candle {
                ts: 0,
                open: 10,
                high: 12,
                low: 10,
                close: 12,
                volume: 3
            }]
        );
        let c = resample(&[tr(42, 7, 1)], 1000).unwrap();
        assert_eq!((c[0].open, c[0].high, c[0].low, c[0].close), (7, 7, 7, 7));
        let c = resample(&[tr(10, 5, 1), tr(2500, 6, 1)], 1000).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].ts, 0);
        assert_eq!(c[1].ts, 2000);
    }

    #[test]
    fn resample_rejects_bad_bucket() {
        assert!(matches!(
            resample(&[tr(0, 1, 1)], 0),
            Err(MarketDataError::InvalidBucket(0))
        ));
    }

    #[test]
    fn snapshot_validation() {
        let ok = LobSnapshot {
            ts: 1,
            bids: vec![(100, 5)],
            asks: vec![(101, 7)],
        };
        ok.validate().unwrap();
        let crossed = LobSnapshot {
            ts: 1,
            bids: vec![(101, 5)],
            asks: vec![(100, 7)],
        };
        assert_eq!(
            crossed.validate().unwrap_err().to_string(),
            "crossed book at ts=1"
        );
        let unsorted = LobSnapshot {
            ts: 2,
            bids: vec![(99, 1), (100, 1)],
            asks: vec![],
        };
        assert!(matches!(
            unsorted.validate(),
            Err(MarketDataError::UnsortedLevels { ts: 2 })
        ));
    }

    #[test]
    fn history_window_and_span() {
        let h = MarketHistory::new(
            InstrumentSpec::unit("A"),
            vec![tr(1, 10, 1), tr(5, 11, 1), tr(9, 12, 1)],
            vec![],
            vec![Candle::flat(0, 10)],
        )
        .unwrap();
        assert_eq!(h.span(), Some((0, 9)));
        let w = h.window(2, 9);
        assert_eq!(w.trades().len(), 2);
        assert!(w.candles().is_empty());
        assert!(MarketHistory::new(
            InstrumentSpec::unit("A"),
            vec![tr(5, 1, 1), tr(1, 1, 1)],
            vec![],
            vec![]
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn resample_conserves_volume_and_order(
            steps in proptest::collection::vec((0i64..3000, 1i64..500, 1i64..50), 1..200),
            bucket in 1i64..5000,
        ) {
            let mut ts = 0;
            let trades: Vec<Trade> = steps.iter().map(|&(dt, p, q)| { ts += dt; tr(ts, p, q) }).collect();
            let candles = resample(&trades, bucket).unwrap();
            let vol: i64 = candles.iter().map(|c| c.volume).sum();
            prop_assert_eq!(vol, trades.iter().map(|t| t.qty).sum::<i64>());
            prop_assert!(candles.windows(2).all(|w| w[0].ts < w[1].ts));
            prop_assert!(candles.iter().all(|c| c.is_valid()));
            prop_assert_eq!(candles.first().unwrap().open, trades[0].price);
            prop_assert_eq!(candles.last().unwrap().close, trades.last().unwrap().price);
        }
    }
}
