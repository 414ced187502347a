use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use clap::Args;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use toml::Value;

use mmlab::backtest::BacktestOptions;
use mmlab::marketdata::{candles_to_trades, read_candles};
use mmlab::portfolio::{
    backtest_rank, common_window, metrics_csv, rank_assets, rank_metrics, AssetMetrics, Criterion,
    Window,
};
use mmlab::sim::AgentSpec;
use mmlab::{Candle, InstrumentSpec, MarketHistory};

use super::{file_stem, require_oracle_flag, Globals};
use crate::config::{
    agent_table, int, prediction_table, split_names, InstrumentArgs, Layered, WindowArgs,
};
use crate::error::CliError;
use crate::manifest::Run;

#[derive(Args, Clone, Debug, Default)]
pub struct EvaluateArgs {
    /// Candle CSVs, one per asset; each file stem is the asset's symbol.
    pub candles: Vec<PathBuf>,
    /// Evaluation config file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Inclusive window `START:END` in ms; defaults to the span every asset covers.
    #[arg(long)]
    pub window: Option<String>,
    #[command(flatten)]
    pub instrument: InstrumentArgs,
    /// Strategies to backtest on every asset (repeatable or comma-separated).
    #[arg(long = "strategies")]
    pub strategies: Vec<String>,
    /// Prediction feed for the quoting strategies.
    #[arg(long)]
    pub predictor: Option<String>,
    /// Prediction horizon in decision ticks.
    #[arg(long, default_value_t = 1)]
    pub horizon: usize,
    #[command(flatten)]
    pub model: WindowArgs,
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
    /// `maker` (default) or `trade`.
    #[arg(long)]
    pub fill_price: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub tick_size: Decimal,
    pub lot_size: Decimal,
}

/// Resolved evaluation configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateFile {
    pub assets: Vec<String>,
    pub instrument: Grid,
    #[serde(default)]
    pub window: Option<Window>,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub options: BacktestOptions,
}

#[derive(Serialize)]
struct MetricsPayload<'a> {
    window: Window,
    metrics: &'a [AssetMetrics],
    orderings: BTreeMap<String, Vec<String>>,
}

fn parse_window(s: &str) -> Result<Window, CliError> {
    let bad = || CliError::usage(format!("bad window `{s}`; expected START:END in ms"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let start = a.trim().parse().map_err(|_| bad())?;
    let end = b.trim().parse().map_err(|_| bad())?;
    if start >= end {
        return Err(CliError::usage(format!(
            "window start {start} is not before end {end}"
        )));
    }
    Ok(Window { start, end })
}

fn resolve(args: &EvaluateArgs, g: &Globals) -> Result<EvaluateFile, CliError> {
    let mut cfg = Layered::load(args.config.as_deref())?;
    cfg.rebase("assets");
    if !args.candles.is_empty() {
        let paths: Vec<Value> = args
            .candles
            .iter()
            .map(|p| p.to_string_lossy().into_owned().into())
            .collect();
        cfg.set("assets", paths);
    }
    args.instrument.apply(&mut cfg, None);
    // every asset is named after its file
    if let Some(Value::Table(t)) = cfg.table.get_mut("instrument") {
        t.remove("symbol");
    }
    if let Some(w) = &args.window {
        let w = parse_window(w)?;
        cfg.set("window.start", int(w.start));
        cfg.set("window.end", int(w.end));
    }
    cfg.set_opt("options.cadence_ms", args.cadence_ms.map(int));
    cfg.set_opt("options.fill.fill_price", args.fill_price.clone());
    let prediction = match &args.predictor {
        Some(kind) => Some(prediction_table(kind, args.horizon, &args.model)?),
        None => None,
    };
    let names = split_names(&args.strategies);
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
    }
    let mut file: EvaluateFile = cfg.decode("evaluate config")?;
    if let Some(seed) = g.seed {
        file.options.seed = seed;
    }
    file.options.allow_oracle = g.allow_oracle;
    Ok(file)
}

pub fn run(args: &EvaluateArgs, g: &Globals) -> Result<(), CliError> {
    let file = resolve(args, g)?;
    if file.assets.is_empty() {
        return Err(CliError::usage("no assets: pass one or more candle files"));
    }
    require_oracle_flag(&file.agents, file.options.allow_oracle)?;
    let mut run = Run::new("evaluate", &g.out);
    if let Some(c) = &args.config {
        run.read_input(c)?;
    }

    let mut seen = HashSet::new();
    let mut series: Vec<(String, InstrumentSpec, Vec<Candle>)> = Vec::new();
    for path in &file.assets {
        let symbol = file_stem(path.as_ref());
        if !seen.insert(symbol.clone()) {
            return Err(CliError::usage(format!("two assets are named `{symbol}`")));
        }
        let spec = InstrumentSpec::new(
            symbol.clone(),
            file.instrument.tick_size,
            file.instrument.lot_size,
        )?;
        let bytes = run.read_input(path.as_ref())?;
        let candles =
            read_candles(&bytes[..], &spec).map_err(|e| CliError::from(e).context(path))?;
        series.push((symbol, spec, candles));
    }

    let window = match file.window {
        Some(w) => w,
        None => common_window(series.iter().map(|s| s.2.as_slice())).ok_or_else(|| {
            CliError::usage("the assets share no common time span; pass --window")
        })?,
    };
    for (symbol, _, candles) in &series {
        let covered = matches!(
            (candles.first(), candles.last()),
            (Some(f), Some(l)) if f.ts <= window.start && l.ts >= window.end
        );
        if !covered {
            let span = match (candles.first(), candles.last()) {
                (Some(f), Some(l)) => format!("[{}, {}]", f.ts, l.ts),
                _ => "nothing".into(),
            };
            return Err(CliError::usage(format!(
                "{symbol}: window [{}, {}] is not covered by the data, which spans {span}",
                window.start, window.end
            )));
        }
    }
    let mut resolved = file.clone();
    resolved.window = Some(window);
    run.set_config(&resolved, file.options.seed);

    let named: Vec<(String, Vec<Candle>)> = series
        .iter()
        .map(|(s, _, c)| (s.clone(), c.clone()))
        .collect();
    let (ranking, metrics) = rank_assets(&named, window, Criterion::Msharpe);
    if let Some(x) = ranking.excluded.first() {
        return Err(CliError::usage(format!("{}: {}", x.symbol, x.reason)));
    }
    let orderings = Criterion::ALL
        .iter()
        .map(|&c| (c.name().to_string(), rank_metrics(&metrics, c).order))
        .collect();
    run.write_report(
        "metrics.json",
        &MetricsPayload {
            window,
            metrics: &metrics,
            orderings,
        },
    )?;
    run.write_text("metrics.csv", &metrics_csv(&metrics))?;

    if !file.agents.is_empty() {
        let histories = series
            .into_iter()
            .map(|(symbol, spec, candles)| {
                let tape = candles_to_trades(&candles);
                MarketHistory::new(spec, tape, Vec::new(), candles).map(|h| (symbol, h))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let report = backtest_rank(&histories, window, &file.agents, &file.options)?;
        let mut csv = String::from("symbol,hodl_return,best_strategy,best_return\n");
        for o in &report.outcomes {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                o.symbol, o.hodl_return, o.best_strategy, o.best_return
            ));
        }
        run.write_report("ranking.json", &report)?;
        run.write_text("ranking.csv", &csv)?;
        println!("{}", g.out.join("ranking.json").display());
    }
    println!("{}", g.out.join("metrics.csv").display());
    Ok(())
}
