//! Synthetic "fundamental" price curves.

use std::path::PathBuf;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::{load_candles, Candle, InstrumentSpec, MarketDataError, Result};
use crate::rng::SimRng;
use crate::{Ticks, Ts};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurveKind {
    Constant,
    /// `slope` ticks per step.
    Linear {
        slope: f64,
    },
    /// `amplitude` ticks, `period` steps.
    Sine {
        amplitude: f64,
        period: f64,
    },
    /// Geometric random walk: log-price increment `drift + volatility * z`.
    Gbm {
        volatility: f64,
        drift: f64,
    },
    /// Closes of a candles CSV, truncated to `n`.
    FromFile {
        path: PathBuf,
        tick_size: Decimal,
        lot_size: Decimal,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSpec {
    #[serde(flatten)]
    pub kind: CurveKind,
    pub p0: Ticks,
    #[serde(default)]
    pub seed: u64,
    pub n: usize,
    #[serde(default = "default_step_ms")]
    pub step_ms: i64,
    #[serde(default)]
    pub start_ts: Ts,
}

fn default_step_ms() -> i64 {
    1000
}

impl CurveSpec {
    pub fn new(kind: CurveKind, p0: Ticks, n: usize) -> Self {
        Self {
            kind,
            p0,
            seed: 0,
            n,
            step_ms: default_step_ms(),
            start_ts: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_step_ms(mut self, step_ms: i64) -> Self {
        self.step_ms = step_ms;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MarketDataError::InvalidCurve(m.to_string()));
        if self.n < 1 {
            return bad("n must be >= 1");
        }
        if self.p0 <= 0 {
            return bad("p0 must be > 0");
        }
        if self.step_ms <= 0 {
            return bad("step_ms must be > 0");
        }
        match &self.kind {
            CurveKind::Constant | CurveKind::FromFile { .. } => {}
            CurveKind::Linear { slope } if !slope.is_finite() => {
                return bad("slope must be finite")
            }
            CurveKind::Sine { amplitude, period } => {
                if !amplitude.is_finite() || !(period.is_finite() && *period > 0.0) {
                    return bad("sine needs finite amplitude and period > 0");
                }
            }
            CurveKind::Gbm { volatility, drift } => {
                if !(volatility.is_finite() && *volatility >= 0.0) || !drift.is_finite() {
                    return bad("gbm needs volatility >= 0 and finite drift");
                }
            }
            CurveKind::Linear { .. } => {}
        }
        Ok(())
    }
}

fn clamp_tick(x: f64) -> Ticks {
    let r = libm::round(x);
    if r < 1.0 {
        1
    } else if r > i64::MAX as f64 / 4.0 {
        i64::MAX / 4
    } else {
        r as Ticks
    }
}

/// `n` candles at `step_ms` spacing whose closes follow the curve; prices
/// never drop below one tick. Output depends only on the spec.
pub fn generate_curve(spec: &CurveSpec) -> Result<Vec<Candle>> {
    spec.validate()?;
    let closes: Vec<Ticks> = match &spec.kind {
        CurveKind::Constant => vec![spec.p0; spec.n],
        CurveKind::Linear { slope } => (0..spec.n)
            .map(|i| clamp_tick(spec.p0 as f64 + slope * i as f64))
            .collect(),
        CurveKind::Sine { amplitude, period } => (0..spec.n)
            .map(|i| {
                let phase = 2.0 * std::f64::consts::PI * i as f64 / period;
                clamp_tick(spec.p0 as f64 + amplitude * libm::sin(phase))
            })
            .collect(),
        CurveKind::Gbm { volatility, drift } => {
            let mut rng = SimRng::new(spec.seed);
            let mut log_p = libm::log(spec.p0 as f64);
            let mut out = Vec::with_capacity(spec.n);
            out.push(spec.p0);
            for _ in 1..spec.n {
                log_p += drift + volatility * rng.standard_normal();
                out.push(clamp_tick(libm::exp(log_p)));
            }
            out
        }
        CurveKind::FromFile {
            path,
            tick_size,
            lot_size,
        } => {
            let inst = InstrumentSpec::new("curve", *tick_size, *lot_size)?;
            let candles = load_candles(path, &inst)?;
            if candles.len() < spec.n {
                return Err(MarketDataError::InvalidCurve(format!(
                    "{} has {} candles, need {}",
                    path.display(),
                    candles.len(),
                    spec.n
                )));
            }
            return Ok(candles.into_iter().take(spec.n).collect());
        }
    };
    let mut prev = closes[0];
    Ok(closes
        .iter()
        .enumerate()
        .map(|(i, &close)| {
            let open = if i == 0 { close } else { prev };
            prev = close;
            Candle {
                ts: spec.start_ts + i as i64 * spec.step_ms,
                open,
                high: open.max(close),
                low: open.min(close),
                close,
                volume: 0,
            }
        })
        .collect())
}
