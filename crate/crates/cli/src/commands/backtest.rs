use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use toml::Value;

use mmlab::backtest::{run_backtest, BacktestConfig, BacktestOptions};
use mmlab::marketdata::{candles_to_trades, read_candles, read_snapshots, read_trades};
use mmlab::sim::{agents_csv, AgentSpec};
use mmlab::{InstrumentSpec, MarketHistory};

use super::{file_stem, require_oracle_flag, Globals};
use crate::config::{
    agent_table, int, prediction_table, split_names, InstrumentArgs, Layered, WindowArgs,
};
use crate::error::CliError;
use crate::manifest::Run;

#[derive(Args, Clone, Debug, Default)]
pub struct BacktestArgs {
    /// Backtest config file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Trades CSV (`ts,price,qty,side`).
    #[arg(long)]
    pub trades: Option<PathBuf>,
    /// Book snapshots, JSON Lines.
    #[arg(long)]
    pub snapshots: Option<PathBuf>,
    /// Candles CSV; replayed as an approximate tape when no trades are given.
    #[arg(long)]
    pub candles: Option<PathBuf>,
    #[command(flatten)]
    pub instrument: InstrumentArgs,
    /// Strategies to run (repeatable or comma-separated); replaces the
    /// config's agents.
    #[arg(long = "strategy")]
    pub strategies: Vec<String>,
    /// Prediction feed: none, oracle, persistence, linreg or ridge.
    #[arg(long)]
    pub predictor: Option<String>,
    /// Prediction horizon in decision ticks.
    #[arg(long, default_value_t = 1)]
    pub horizon: usize,
    #[command(flatten)]
    pub window: WindowArgs,
    /// Starting base lots of each flag-defined agent.
    #[arg(long, default_value_t = 10)]
    pub base: i64,
    /// Starting quote atoms of each flag-defined agent.
    #[arg(long, default_value_t = 1_000_000)]
    pub quote: i64,
    /// Lots per quote of the market-making strategies.
    #[arg(long)]
    pub order_size: Option<i64>,
    /// Decision interval in ms; defaults to the snapshot, candle or trade times.
    #[arg(long)]
    pub cadence_ms: Option<i64>,
    /// Lifetime of virtual orders in ms; by default they live until requoted.
    #[arg(long)]
    pub ttl_ms: Option<i64>,
    /// `maker` (default) or `trade`.
    #[arg(long)]
    pub fill_price: Option<String>,
    /// Fill only on trades strictly through the limit.
    #[arg(long)]
    pub price_improvement: bool,
    /// Share each trade's quantity across the orders it fills.
    #[arg(long)]
    pub deplete: bool,
    /// Maker fee in basis points.
    #[arg(long)]
    pub maker_bps: Option<u32>,
    /// Taker fee in basis points.
    #[arg(long)]
    pub taker_bps: Option<u32>,
    /// Starting quote atoms of the hodl benchmark; defaults to the first agent's.
    #[arg(long)]
    pub benchmark_quote: Option<i64>,
    /// Keep every virtual fill in the report.
    #[arg(long)]
    pub record_fills: bool,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub trades: Option<String>,
    pub snapshots: Option<String>,
    pub candles: Option<String>,
}

/// Resolved backtest configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktestFile {
    pub instrument: InstrumentSpec,
    #[serde(default)]
    pub data: DataPaths,
    #[serde(default)]
    pub options: BacktestOptions,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
}

fn resolve(args: &BacktestArgs, g: &Globals) -> Result<BacktestFile, CliError> {
    let mut cfg = Layered::load(args.config.as_deref())?;
    for key in ["data.trades", "data.snapshots", "data.candles"] {
        cfg.rebase(key);
    }
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.to_string_lossy().into_owned());
    cfg.set_opt("data.trades", path(&args.trades));
    cfg.set_opt("data.snapshots", path(&args.snapshots));
    cfg.set_opt("data.candles", path(&args.candles));
    let stem = ["data.trades", "data.candles", "data.snapshots"]
        .iter()
        .find_map(|k| {
            cfg.get(k)
                .and_then(Value::as_str)
                .map(|s| file_stem(s.as_ref()))
        });
    args.instrument.apply(&mut cfg, stem.as_deref());

    cfg.set_opt("options.cadence_ms", args.cadence_ms.map(int));
    cfg.set_opt("options.ttl_ms", args.ttl_ms.map(int));
    cfg.set_opt("options.fill.fill_price", args.fill_price.clone());
    if args.price_improvement {
        cfg.set("options.fill.require_price_improvement", true);
    }
    if args.deplete {
        cfg.set("options.fill.deplete_trade_qty", true);
    }
    cfg.set_opt("options.fees.maker_bps", args.maker_bps.map(int));
    cfg.set_opt("options.fees.taker_bps", args.taker_bps.map(int));
    if cfg.get("options.fees").is_some() {
        for k in ["options.fees.maker_bps", "options.fees.taker_bps"] {
            if cfg.get(k).is_none() {
                cfg.set(k, 0);
            }
        }
    }
    cfg.set_opt("options.benchmark_quote", args.benchmark_quote.map(int));
    if args.record_fills {
        cfg.set("options.record_fills", true);
    }

    let names = split_names(&args.strategies);
    let prediction = match &args.predictor {
        Some(kind) => Some(prediction_table(kind, args.horizon, &args.window)?),
        None => None,
    };
    if !names.is_empty() {
        let agents = names
            .iter()
            .map(|n| {
                agent_table(
                    n,
                    args.base,
                    args.quote,
                    args.order_size,
                    prediction.clone(),
                )
                .map(Value::Table)
            })
            .collect::<Result<Vec<_>, _>>()?;
        cfg.set("agents", agents);
    } else if let Some(p) = prediction {
        // a predictor flag alone re-feeds the configured quoting agents
        if let Some(Value::Array(agents)) = cfg.table.get_mut("agents") {
            for a in agents.iter_mut().filter_map(Value::as_table_mut) {
                let quoting = matches!(
                    a.get("strategy").and_then(Value::as_str),
                    Some("zero_spread" | "tick_better")
                );
                if quoting {
                    a.insert("prediction".into(), p.clone().into());
                }
            }
        }
    }
    if let Some(Value::Array(agents)) = cfg.get("agents") {
        for a in agents {
            if let Some(name) = a.get("strategy").and_then(Value::as_str) {
                agent_table(name, 0, 0, None, None)?;
            }
        }
    }

    let mut file: BacktestFile = cfg.decode("backtest config")?;
    if let Some(seed) = g.seed {
        file.options.seed = seed;
    }
    file.options.allow_oracle = g.allow_oracle;
    Ok(file)
}

pub fn run(args: &BacktestArgs, g: &Globals) -> Result<(), CliError> {
    let file = resolve(args, g)?;
    if file.agents.is_empty() {
        return Err(CliError::usage(
            "no strategies: pass --strategy or list [[agents]] in the config",
        ));
    }
    require_oracle_flag(&file.agents, file.options.allow_oracle)?;
    let mut run = Run::new("backtest", &g.out);
    if let Some(c) = &args.config {
        run.read_input(c)?;
    }
    let spec = &file.instrument;
    let trades = match &file.data.trades {
        Some(p) => read_trades(&run.read_input(p.as_ref())?[..], spec)
            .map_err(|e| CliError::from(e).context(p))?,
        None => Vec::new(),
    };
    let snapshots = match &file.data.snapshots {
        Some(p) => read_snapshots(&run.read_input(p.as_ref())?[..], spec)
            .map_err(|e| CliError::from(e).context(p))?,
        None => Vec::new(),
    };
    let candles = match &file.data.candles {
        Some(p) => read_candles(&run.read_input(p.as_ref())?[..], spec)
            .map_err(|e| CliError::from(e).context(p))?,
        None => Vec::new(),
    };
    if trades.is_empty() && snapshots.is_empty() && candles.is_empty() {
        return Err(CliError::usage(
            "no market data: pass --trades, --snapshots or --candles",
        ));
    }
    let trades = if trades.is_empty() {
        candles_to_trades(&candles)
    } else {
        trades
    };
    let history = MarketHistory::new(spec.clone(), trades, snapshots, candles)?;
    run.set_config(&file, file.options.seed);

    let cfg = BacktestConfig {
        history,
        agents: file.agents.clone(),
        options: file.options.clone(),
    };
    let report = run_backtest(&cfg)?;
    log::info!(
        "{} decision ticks over {} trades, {} fills",
        report.decision_ticks,
        report.trades_replayed,
        report.total_fills
    );
    run.write_report("report.json", &report)?;
    run.write_text("plot.csv", &report.plot_csv())?;
    run.write_text("agents.csv", &agents_csv(&report.agents))?;
    println!("{}", g.out.join("report.json").display());
    Ok(())
}
