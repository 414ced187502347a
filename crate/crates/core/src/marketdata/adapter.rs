//! Ingestion from common exchange exports.
//!
//! Binance public data dumps (`data.binance.vision`) ship without a header
//! row; a header line is tolerated and skipped when its first field is not
//! numeric. Timestamps above 10^14 are taken as microseconds (dumps from
//! 2025 on) and truncated to milliseconds.
//!
//! Kline export → candles CSV:
//!
//! | kline column      | candles column |
//! |-------------------|----------------|
//! | 0 `open_time`     | `ts`           |
//! | 1 `open`          | `open`         |
//! | 2 `high`          | `high`         |
//! | 3 `low`           | `low`          |
//! | 4 `close`         | `close`        |
//! | 5 `volume` (base) | `volume`       |
//!
//! Trade export → trades CSV:
//!
//! | trade column        | trades column                         |
//! |---------------------|---------------------------------------|
//! | 1 `price`           | `price`                               |
//! | 2 `qty`             | `qty`                                 |
//! | 4 `time`            | `ts`                                  |
//! | 5 `is_buyer_maker`  | `side` (`true` → `sell`, else `buy`)  |

use std::fs::File;
use std::io::Read;
use std::path::Path;

use super::io::{price_ticks, qty_lots};
use super::{parse_decimal, Candle, InstrumentSpec, MarketDataError, Result, Side, Trade};
use crate::Ts;

pub const BINANCE_KLINE_COLUMNS: [&str; 12] = [
    "open_time",
    "open",
    "high",
    "low",
    "close",
    "volume",
    "close_time",
    "quote_volume",
    "count",
    "taker_buy_volume",
    "taker_buy_quote_volume",
    "ignore",
];

pub const BINANCE_TRADE_COLUMNS: [&str; 7] = [
    "id",
    "price",
    "qty",
    "quote_qty",
    "time",
    "is_buyer_maker",
    "is_best_match",
];

fn records<R: Read>(reader: R) -> impl Iterator<Item = (usize, Result<csv::StringRecord>)> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader)
        .into_records()
        .enumerate()
        .map(|(i, r)| {
            let row = i + 1;
            (
                row,
                r.map_err(|e| MarketDataError::Parse {
                    row,
                    msg: e.to_string(),
                }),
            )
        })
        .filter(|(row, r)| {
            // skip an optional header row
            !(*row == 1
                && r.as_ref()
                    .ok()
                    .and_then(|rec| rec.get(0))
                    .is_some_and(|f| f.parse::<f64>().is_err()))
        })
}

fn col(rec: &csv::StringRecord, idx: usize, row: usize) -> Result<&str> {
    rec.get(idx).ok_or_else(|| MarketDataError::Parse {
        row,
        msg: format!("missing column {idx}"),
    })
}

fn ts_ms(s: &str, row: usize) -> Result<Ts> {
    let v: i64 = s.parse().map_err(|_| MarketDataError::Parse {
        row,
        msg: format!("bad timestamp {s:?}"),
    })?;
    Ok(if v > 100_000_000_000_000 { v / 1000 } else { v })
}

fn dec(s: &str, row: usize) -> Result<rust_decimal::Decimal> {
    parse_decimal(s).ok_or_else(|| MarketDataError::Parse {
        row,
        msg: format!("bad number {s:?}"),
    })
}

pub fn load_binance_klines(path: impl AsRef<Path>, spec: &InstrumentSpec) -> Result<Vec<Candle>> {
    let mut out: Vec<Candle> = Vec::new();
    for (row, rec) in records(File::open(path)?) {
        let rec = rec?;
        let ts = ts_ms(col(&rec, 0, row)?, row)?;
        let open = price_ticks(spec, dec(col(&rec, 1, row)?, row)?, row, "open")?;
        let high = price_ticks(spec, dec(col(&rec, 2, row)?, row)?, row, "high")?;
        let low = price_ticks(spec, dec(col(&rec, 3, row)?, row)?, row, "low")?;
        let close = price_ticks(spec, dec(col(&rec, 4, row)?, row)?, row, "close")?;
        let v = dec(col(&rec, 5, row)?, row)?;
        let volume = if v.is_zero() {
            0
        } else {
            qty_lots(spec, v, row, "volume")?
        };
        let c = Candle {
            ts,
            open,
            high,
            low,
            close,
            volume,
        };
        if !c.is_valid() {
            return Err(MarketDataError::InvalidCandle { row });
        }
        if out.last().is_some_and(|p| p.ts > ts) {
            return Err(MarketDataError::Unsorted { row });
        }
        out.push(c);
    }
    Ok(out)
}

pub fn load_binance_trades(path: impl AsRef<Path>, spec: &InstrumentSpec) -> Result<Vec<Trade>> {
    let mut out: Vec<Trade> = Vec::new();
    for (row, rec) in records(File::open(path)?) {
        let rec = rec?;
        let price = price_ticks(spec, dec(col(&rec, 1, row)?, row)?, row, "price")?;
        let qty = qty_lots(spec, dec(col(&rec, 2, row)?, row)?, row, "qty")?;
        let ts = ts_ms(col(&rec, 4, row)?, row)?;
        let aggressor = match col(&rec, 5, row)?.to_ascii_lowercase().as_str() {
            "true" | "1" => Side::Sell,
            "false" | "0" => Side::Buy,
            other => {
                return Err(MarketDataError::Parse {
                    row,
                    msg: format!("bad is_buyer_maker {other:?}"),
                })
            }
        };
        if out.last().is_some_and(|t| t.ts > ts) {
            return Err(MarketDataError::Unsorted { row });
        }
        out.push(Trade {
            ts,
            price,
            qty,
            aggressor,
        });
    }
    Ok(out)
}

/// Approximate trade tape through each candle: open, then the extreme
/// nearer to the open, the other extreme, then the close, spread evenly over
/// the bucket. Volume is split across the four prints (at least one lot
/// each).
pub fn candles_to_trades(candles: &[Candle]) -> Vec<Trade> {
    let mut out = Vec::with_capacity(candles.len() * 4);
    let mut last_price = None;
    for (i, c) in candles.iter().enumerate() {
        let width = match (
            candles.get(i + 1),
            i.checked_sub(1).and_then(|j| candles.get(j)),
        ) {
            (Some(n), _) => n.ts - c.ts,
            (None, Some(p)) => c.ts - p.ts,
            (None, None) => 4,
        }
        .max(4);
        let path = if c.close >= c.open {
            [c.open, c.low, c.high, c.close]
        } else {
            [c.open, c.high, c.low, c.close]
        };
        let part = (c.volume / 4).max(1);
        let last_part = (c.volume - 3 * part).max(1);
        for (k, &p) in path.iter().enumerate() {
            let aggressor = match last_price {
                Some(prev) if p < prev => Side::Sell,
                _ => Side::Buy,
            };
            out.push(Trade {
                ts: c.ts + k as i64 * width / 4,
                price: p,
                qty: if k == 3 { last_part } else { part },
                aggressor,
            });
            last_price = Some(p);
        }
    }
    out
}
