//! File formats.
//!
//! - trades CSV: `ts,price,qty,side`, decimal price/qty, side `buy|sell`
//! - snapshots JSON Lines: `{"ts":..,"bids":[[price,qty],..],"asks":[..]}`,
//!   best level first; price/qty as JSON numbers or decimal strings
//! - candles CSV: `ts,open,high,low,close,volume`, decimal prices/volume
//!
//! Row numbers in errors count the header as row 1.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rust_decimal::Decimal;
use serde::Deserialize;

use super::{
    parse_decimal, Candle, InstrumentSpec, LobSnapshot, MarketDataError, Result, Side, Trade,
};
use crate::{Lots, Ticks};

pub const TRADES_HEADER: [&str; 4] = ["ts", "price", "qty", "side"];
pub const CANDLES_HEADER: [&str; 6] = ["ts", "open", "high", "low", "close", "volume"];

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader)
}

fn check_header(rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(|e| MarketDataError::Parse {
        row: 1,
        msg: e.to_string(),
    })?;
    if header.is_empty() {
        return Ok(());
    }
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(MarketDataError::Parse {
            row: 1,
            msg: format!(
                "expected header {:?}, got {:?}",
                expected.join(","),
                got.join(",")
            ),
        });
    }
    Ok(())
}

fn field(rec: &csv::StringRecord, idx: usize, row: usize) -> Result<&str> {
    rec.get(idx).ok_or_else(|| MarketDataError::Parse {
        row,
        msg: format!("missing column {}", idx + 1),
    })
}

fn decimal_field(s: &str, row: usize, name: &str) -> Result<Decimal> {
    parse_decimal(s).ok_or_else(|| MarketDataError::Parse {
        row,
        msg: format!("bad {name} {s:?}"),
    })
}

fn int_field(s: &str, row: usize, name: &str) -> Result<i64> {
    s.parse::<i64>().map_err(|_| MarketDataError::Parse {
        row,
        msg: format!("bad {name} {s:?}"),
    })
}

pub(crate) fn price_ticks(
    spec: &InstrumentSpec,
    d: Decimal,
    row: usize,
    name: &'static str,
) -> Result<Ticks> {
    let p = spec
        .price_to_ticks(d)
        .ok_or(MarketDataError::OffGrid { row, field: name })?;
    if p <= 0 {
        return Err(MarketDataError::NonPositivePrice { row });
    }
    Ok(p)
}

pub(crate) fn qty_lots(
    spec: &InstrumentSpec,
    d: Decimal,
    row: usize,
    name: &'static str,
) -> Result<Lots> {
    if d <= Decimal::ZERO {
        return Err(MarketDataError::NonPositiveQty { row });
    }
    spec.qty_to_lots(d)
        .ok_or(MarketDataError::OffGrid { row, field: name })
}

pub fn read_trades<R: Read>(reader: R, spec: &InstrumentSpec) -> Result<Vec<Trade>> {
    let mut rdr = csv_reader(reader);
    check_header(&mut rdr, &TRADES_HEADER)?;
    let mut out: Vec<Trade> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| MarketDataError::Parse {
            row,
            msg: e.to_string(),
        })?;
        let ts = int_field(field(&rec, 0, row)?, row, "ts")?;
        let price = decimal_field(field(&rec, 1, row)?, row, "price")?;
        let qty = decimal_field(field(&rec, 2, row)?, row, "qty")?;
        let side: Side = field(&rec, 3, row)?
            .parse()
            .map_err(|msg| MarketDataError::Parse { row, msg })?;
        let qty = qty_lots(spec, qty, row, "qty")?;
        let price = price_ticks(spec, price, row, "price")?;
        if out.last().is_some_and(|t| t.ts > ts) {
            return Err(MarketDataError::Unsorted { row });
        }
        out.push(Trade {
            ts,
            price,
            qty,
            aggressor: side,
        });
    }
    Ok(out)
}

pub fn load_trades(path: impl AsRef<Path>, spec: &InstrumentSpec) -> Result<Vec<Trade>> {
    read_trades(File::open(path)?, spec)
}

pub fn write_trades<W: Write>(mut w: W, spec: &InstrumentSpec, trades: &[Trade]) -> Result<()> {
    writeln!(w, "{}", TRADES_HEADER.join(","))?;
    for t in trades {
        writeln!(
            w,
            "{},{},{},{}",
            t.ts,
            spec.ticks_to_price(t.price),
            spec.lots_to_qty(t.qty),
            t.aggressor.as_str()
        )?;
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawNumber {
    Num(serde_json::Number),
    Str(String),
}

impl RawNumber {
    fn decimal(&self) -> Option<Decimal> {
        match self {
            RawNumber::Num(n) => parse_decimal(&n.to_string()),
            RawNumber::Str(s) => parse_decimal(s),
        }
    }
}

#[derive(Deserialize)]
struct RawSnapshot {
    ts: i64,
    bids: Vec<(RawNumber, RawNumber)>,
    asks: Vec<(RawNumber, RawNumber)>,
}

pub fn read_snapshots<R: Read>(reader: R, spec: &InstrumentSpec) -> Result<Vec<LobSnapshot>> {
    let mut out: Vec<LobSnapshot> = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let row = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawSnapshot = serde_json::from_str(&line).map_err(|e| MarketDataError::Parse {
            row,
            msg: e.to_string(),
        })?;
        let convert = |levels: &[(RawNumber, RawNumber)]| -> Result<Vec<(Ticks, Lots)>> {
            levels
                .iter()
                .map(|(p, q)| {
                    let p = p.decimal().ok_or_else(|| MarketDataError::Parse {
                        row,
                        msg: "bad level price".into(),
                    })?;
                    let q = q.decimal().ok_or_else(|| MarketDataError::Parse {
                        row,
                        msg: "bad level qty".into(),
                    })?;
                    Ok((
                        price_ticks(spec, p, row, "price")?,
                        qty_lots(spec, q, row, "qty")?,
                    ))
                })
                .collect()
        };
        let snap = LobSnapshot {
            ts: raw.ts,
            bids: convert(&raw.bids)?,
            asks: convert(&raw.asks)?,
        };
        snap.validate()?;
        if out.last().is_some_and(|s| s.ts > snap.ts) {
            return Err(MarketDataError::Unsorted { row });
        }
        out.push(snap);
    }
    Ok(out)
}

pub fn load_snapshots(path: impl AsRef<Path>, spec: &InstrumentSpec) -> Result<Vec<LobSnapshot>> {
    read_snapshots(File::open(path)?, spec)
}

pub fn write_snapshots<W: Write>(
    mut w: W,
    spec: &InstrumentSpec,
    snapshots: &[LobSnapshot],
) -> Result<()> {
    let levels = |ls: &[(Ticks, Lots)]| {
        ls.iter()
            .map(|&(p, q)| format!("[{},{}]", spec.ticks_to_price(p), spec.lots_to_qty(q)))
            .collect::<Vec<_>>()
            .join(",")
    };
    for s in snapshots {
        writeln!(
            w,
            "{{\"ts\":{},\"bids\":[{}],\"asks\":[{}]}}",
            s.ts,
            levels(&s.bids),
            levels(&s.asks)
        )?;
    }
    Ok(())
}

pub fn read_candles<R: Read>(reader: R, spec: &InstrumentSpec) -> Result<Vec<Candle>> {
    let mut rdr = csv_reader(reader);
    check_header(&mut rdr, &CANDLES_HEADER)?;
    let mut out: Vec<Candle> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| MarketDataError::Parse {
            row,
            msg: e.to_string(),
        })?;
        let ts = int_field(field(&rec, 0, row)?, row, "ts")?;
        let mut px = [0; 4];
        for (k, name) in ["open", "high", "low", "close"].into_iter().enumerate() {
            let d = decimal_field(field(&rec, k + 1, row)?, row, name)?;
            px[k] = price_ticks(spec, d, row, name)?;
        }
        let vol = decimal_field(field(&rec, 5, row)?, row, "volume")?;
        let volume = if vol.is_zero() {
            0
        } else {
            qty_lots(spec, vol, row, "volume")?
        };
        let c = Candle {
            ts,
            open: px[0],
            high: px[1],
            low: px[2],
            close: px[3],
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

pub fn load_candles(path: impl AsRef<Path>, spec: &InstrumentSpec) -> Result<Vec<Candle>> {
    read_candles(File::open(path)?, spec)
}

pub fn write_candles<W: Write>(mut w: W, spec: &InstrumentSpec, candles: &[Candle]) -> Result<()> {
    writeln!(w, "{}", CANDLES_HEADER.join(","))?;
    for c in candles {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            c.ts,
            spec.ticks_to_price(c.open),
            spec.ticks_to_price(c.high),
            spec.ticks_to_price(c.low),
            spec.ticks_to_price(c.close),
            spec.lots_to_qty(c.volume)
        )?;
    }
    Ok(())
}
