use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use toml::Value;

use mmlab::marketdata::read_candles;
use mmlab::predictor::{evaluate, PredictorConfig};
use mmlab::InstrumentSpec;

use super::{file_stem, Globals};
use crate::config::{InstrumentArgs, Layered, WindowArgs};
use crate::error::CliError;
use crate::manifest::Run;

#[derive(Args, Clone, Debug, Default)]
pub struct PredictArgs {
    /// Predictor config file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Candles CSV (`ts,open,high,low,close,volume`).
    #[arg(long)]
    pub candles: Option<PathBuf>,
    #[command(flatten)]
    pub instrument: InstrumentArgs,
    /// persistence, linreg or ridge.
    #[arg(long)]
    pub model: Option<String>,
    #[command(flatten)]
    pub window: WindowArgs,
}

/// Resolved predictor evaluation configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictFile {
    pub candles: String,
    pub instrument: InstrumentSpec,
    pub predictor: PredictorConfig,
}

fn resolve(args: &PredictArgs) -> Result<PredictFile, CliError> {
    let mut cfg = Layered::load(args.config.as_deref())?;
    cfg.rebase("candles");
    cfg.set_opt(
        "candles",
        args.candles
            .as_ref()
            .map(|p| p.to_string_lossy().into_owned()),
    );
    let Some(candles) = cfg.get("candles").and_then(Value::as_str).map(String::from) else {
        return Err(CliError::usage(
            "no candles: pass --candles or set `candles` in the config",
        ));
    };
    args.instrument
        .apply(&mut cfg, Some(&file_stem(candles.as_ref())));
    cfg.set_opt("predictor.model", args.model.clone());
    args.window.apply(&mut cfg, "predictor");
    cfg.decode("predictor config")
}

pub fn run(args: &PredictArgs, g: &Globals) -> Result<(), CliError> {
    let file = resolve(args)?;
    file.predictor.validate()?;
    let mut run = Run::new("predict", &g.out);
    if let Some(c) = &args.config {
        run.read_input(c)?;
    }
    let bytes = run.read_input(file.candles.as_ref())?;
    let candles = read_candles(&bytes[..], &file.instrument)
        .map_err(|e| CliError::from(e).context(&file.candles))?;
    run.set_config(&file, g.seed.unwrap_or(0));

    let report = evaluate(&candles, &file.predictor)?;
    log::info!(
        "{} trainings, {} predictions, improvement {:.4}",
        report.trainings,
        report.prediction_count,
        report.improvement
    );
    let spec = &file.instrument;
    let mut csv = String::from("ts,horizon,predicted,actual,baseline\n");
    for p in &report.predictions {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            p.ts,
            p.horizon,
            spec.ticks_to_price(p.predicted),
            spec.ticks_to_price(p.actual),
            spec.ticks_to_price(p.baseline)
        ));
    }
    run.write_report("report.json", &report)?;
    run.write_text("predictions.csv", &csv)?;
    println!("{}", g.out.join("report.json").display());
    Ok(())
}
