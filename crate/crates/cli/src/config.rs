//! Layered configuration: an optional TOML file, then command-line flags
//! written over it as dotted keys, then decoded into the engine's types.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::de::DeserializeOwned;
use toml::{Table, Value};

use crate::error::CliError;

/// A TOML table plus the directory its relative paths are resolved against.
#[derive(Clone, Debug, Default)]
pub struct Layered {
    pub table: Table,
    pub base_dir: Option<PathBuf>,
}

impl Layered {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let table: Table = text.parse().map_err(|e: toml::de::Error| {
            CliError::usage(format!("{}: {}", path.display(), e.message()))
        })?;
        Ok(Self {
            table,
            base_dir: path.parent().map(Path::to_path_buf),
        })
    }

    pub fn get(&self, dotted: &str) -> Option<&Value> {
        let mut parts = dotted.split('.');
        let mut cur = self.table.get(parts.next()?)?;
        for part in parts {
            cur = cur.as_table()?.get(part)?;
        }
        Some(cur)
    }

    pub fn set(&mut self, dotted: &str, value: impl Into<Value>) {
        let parts: Vec<&str> = dotted.split('.').collect();
        let (last, parents) = parts.split_last().expect("non-empty key");
        let mut cur = &mut self.table;
        for p in parents {
            let entry = cur
                .entry(p.to_string())
                .or_insert_with(|| Value::Table(Table::new()));
            if !entry.is_table() {
                *entry = Value::Table(Table::new());
            }
            cur = entry.as_table_mut().expect("just made a table");
        }
        cur.insert(last.to_string(), value.into());
    }

    pub fn set_opt<V: Into<Value>>(&mut self, dotted: &str, value: Option<V>) {
        if let Some(v) = value {
            self.set(dotted, v);
        }
    }

    /// Resolves a relative path found in the file against the file's directory.
    pub fn rebase(&mut self, dotted: &str) {
        let Some(dir) = self.base_dir.clone() else {
            return;
        };
        let rebased = match self.get(dotted) {
            Some(Value::String(s)) if Path::new(s).is_relative() => {
                Value::String(path_str(&dir.join(s)))
            }
            Some(Value::Array(items)) => Value::Array(
                items
                    .iter()
                    .map(|v| match v {
                        Value::String(s) if Path::new(s).is_relative() => {
                            Value::String(path_str(&dir.join(s)))
                        }
                        other => other.clone(),
                    })
                    .collect(),
            ),
            _ => return,
        };
        self.set(dotted, rebased);
    }

    pub fn decode<T: DeserializeOwned>(&self, what: &str) -> Result<T, CliError> {
        Value::Table(self.table.clone())
            .try_into()
            .map_err(|e: toml::de::Error| CliError::usage(format!("{what}: {}", e.message())))
    }
}

pub fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

pub fn int(v: impl TryInto<i64>) -> Value {
    Value::Integer(v.try_into().unwrap_or(i64::MAX))
}

#[derive(Args, Clone, Debug, Default)]
pub struct InstrumentArgs {
    /// Symbol label; defaults to the input file stem.
    #[arg(long)]
    pub symbol: Option<String>,
    /// Quote-currency units per price tick, e.g. 0.01.
    #[arg(long)]
    pub tick_size: Option<String>,
    /// Base-currency units per quantity lot, e.g. 0.00001.
    #[arg(long)]
    pub lot_size: Option<String>,
}

pub const DEFAULT_TICK_SIZE: &str = "0.01";
pub const DEFAULT_LOT_SIZE: &str = "0.00001";

impl InstrumentArgs {
    /// Fills `instrument.*`, defaulting the symbol to `stem` and the grid to
    /// a cent tick and a 1e-5 lot.
    pub fn apply(&self, cfg: &mut Layered, stem: Option<&str>) {
        cfg.set_opt("instrument.symbol", self.symbol.clone());
        cfg.set_opt("instrument.tick_size", self.tick_size.clone());
        cfg.set_opt("instrument.lot_size", self.lot_size.clone());
        if cfg.get("instrument.symbol").is_none() {
            cfg.set("instrument.symbol", stem.unwrap_or("ASSET"));
        }
        if cfg.get("instrument.tick_size").is_none() {
            cfg.set("instrument.tick_size", DEFAULT_TICK_SIZE);
        }
        if cfg.get("instrument.lot_size").is_none() {
            cfg.set("instrument.lot_size", DEFAULT_LOT_SIZE);
        }
    }
}

/// Predictor window flags shared by `predict`, `backtest` and `evaluate`.
#[derive(Args, Clone, Debug, Default)]
pub struct WindowArgs {
    /// Training interval T (steps).
    #[arg(short = 'T', long = "train")]
    pub train: Option<usize>,
    /// Retraining period P (steps).
    #[arg(short = 'P', long)]
    pub period: Option<usize>,
    /// Historical interval H (input length).
    #[arg(short = 'H', long = "history")]
    pub history: Option<usize>,
    /// Batch B (steps predicted per call).
    #[arg(short = 'B', long)]
    pub batch: Option<usize>,
    /// Ridge penalty.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// `returns` (default) or `raw`.
    #[arg(long)]
    pub normalization: Option<String>,
    /// `direct` (default) or `iterative`.
    #[arg(long)]
    pub multi_step: Option<String>,
    /// Stride between training frames; defaults to B.
    #[arg(long)]
    pub frame_stride: Option<usize>,
}

impl WindowArgs {
    pub fn apply(&self, cfg: &mut Layered, prefix: &str) {
        let key = |k: &str| format!("{prefix}.{k}");
        cfg.set_opt(&key("training_interval"), self.train.map(int));
        cfg.set_opt(&key("period"), self.period.map(int));
        cfg.set_opt(&key("historical_interval"), self.history.map(int));
        cfg.set_opt(&key("batch"), self.batch.map(int));
        cfg.set_opt(&key("lambda"), self.lambda);
        cfg.set_opt(&key("normalization"), self.normalization.clone());
        cfg.set_opt(&key("multi_step"), self.multi_step.clone());
        cfg.set_opt(&key("frame_stride"), self.frame_stride.map(int));
    }
}

pub const STRATEGY_NAMES: [&str; 4] = ["hodl", "zero_spread", "tick_better", "noise_taker"];

/// Agent table for a strategy given by name on the command line.
pub fn agent_table(
    name: &str,
    base: i64,
    quote: i64,
    order_size: Option<i64>,
    prediction: Option<Table>,
) -> Result<Table, CliError> {
    if !STRATEGY_NAMES.contains(&name) {
        return Err(CliError::usage(format!(
            "unknown strategy `{name}`; expected one of {}",
            STRATEGY_NAMES.join(", ")
        )));
    }
    let mut t = Table::new();
    t.insert("strategy".into(), name.into());
    t.insert("base".into(), base.into());
    t.insert("quote".into(), quote.into());
    if name == "noise_taker" {
        let mut params = Table::new();
        params.insert("lambda".into(), 0.5.into());
        t.insert("params".into(), params.into());
    }
    if let Some(size) = order_size.filter(|_| name == "zero_spread" || name == "tick_better") {
        let mut params = Table::new();
        params.insert("order_size".into(), size.into());
        t.insert("params".into(), params.into());
    }
    if let Some(p) = prediction.filter(|_| name != "hodl" && name != "noise_taker") {
        t.insert("prediction".into(), p.into());
    }
    Ok(t)
}

/// Prediction table from `--predictor KIND [--horizon N]` and window flags.
pub fn prediction_table(
    kind: &str,
    horizon: usize,
    window: &WindowArgs,
) -> Result<Table, CliError> {
    let mut cfg = Layered::default();
    cfg.set("horizon", int(horizon));
    match kind {
        "none" | "oracle" => cfg.set("kind", kind),
        "persistence" | "linreg" | "ridge" => {
            cfg.set("kind", "model");
            cfg.set("model.model", kind);
            // a modest default schedule; every key can be overridden
            cfg.set("model.training_interval", int(480));
            cfg.set("model.period", int(60));
            cfg.set("model.historical_interval", int(60));
            cfg.set("model.batch", int(5));
            window.apply(&mut cfg, "model");
        }
        other => return Err(CliError::usage(format!(
            "unknown predictor `{other}`; expected one of none, oracle, persistence, linreg, ridge"
        ))),
    }
    Ok(cfg.table)
}

/// Splits repeated or comma-separated names.
pub fn split_names(raw: &[String]) -> Vec<String> {
    raw.iter()
        .flat_map(|s| s.split(','))
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_keys() {
        let mut cfg = Layered {
            table: "a = 1\n[b]\nc = 2\nd = 3\n".parse().unwrap(),
            base_dir: None,
        };
        cfg.set("b.c", 20);
        cfg.set("e.f.g", "x");
        assert_eq!(cfg.get("b.c").unwrap().as_integer(), Some(20));
        assert_eq!(cfg.get("b.d").unwrap().as_integer(), Some(3));
        assert_eq!(cfg.get("e.f.g").unwrap().as_str(), Some("x"));
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let mut cfg = Layered {
            table: "p = \"x.csv\"\nq = \"/abs.csv\"\nr = [\"y.csv\"]\n"
                .parse()
                .unwrap(),
            base_dir: Some(PathBuf::from("/cfg")),
        };
        for k in ["p", "q", "r"] {
            cfg.rebase(k);
        }
        assert_eq!(cfg.get("p").unwrap().as_str(), Some("/cfg/x.csv"));
        assert_eq!(cfg.get("q").unwrap().as_str(), Some("/abs.csv"));
        assert_eq!(
            cfg.get("r").unwrap().as_array().unwrap()[0].as_str(),
            Some("/cfg/y.csv")
        );
    }

    #[test]
    fn unknown_strategy_is_a_usage_error() {
        let e = agent_table("martingale", 0, 0, None, None).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("martingale"));
    }

    #[test]
    fn names_split_on_commas() {
        assert_eq!(
            split_names(&["a,b".into(), " c ".into()]),
            vec!["a".to_string(), "b".into(), "c".into()]
        );
    }
}
