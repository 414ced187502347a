use serde::Serialize;

use super::{
    fit, predict_batch, schedule, FittedModel, ModelKind, PredictorConfig, PredictorError, Result,
    ScheduleEvent,
};
use crate::{Candle, Ticks, Ts};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PredictionRecord {
    /// Timestamp of the predicted step.
    pub ts: Ts,
    /// Step at which the prediction was made.
    pub made_at: usize,
    pub horizon: usize,
    pub predicted: Ticks,
    pub actual: Ticks,
    /// Last known value at `made_at`.
    pub baseline: Ticks,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HorizonError {
    pub horizon: usize,
    pub count: usize,
    pub mae_model: f64,
    pub mae_persistence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub model: ModelKind,
    pub span: usize,
    pub gaps_filled: usize,
    pub trainings: usize,
    pub fallbacks: usize,
    pub prediction_count: usize,
    pub mae_model: f64,
    pub mae_persistence: f64,
    pub improvement: f64,
    pub per_horizon: Vec<HorizonError>,
    #[serde(skip)]
    pub predictions: Vec<PredictionRecord>,
}

fn improvement(model: f64, base: f64) -> f64 {
    if model == 0.0 && base == 0.0 {
        0.0
    } else {
        1.0 - model / base
    }
}

/// Forward-fills omitted buckets so the series is uniform in time. The
/// bucket width is the smallest positive timestamp gap.
pub fn fill_gaps(candles: &[Candle]) -> (Vec<Ts>, Vec<Ticks>, usize) {
    let step = candles
        .windows(2)
        .map(|w| w[1].ts - w[0].ts)
        .filter(|&d| d > 0)
        .min();
    let mut ts = Vec::with_capacity(candles.len());
    let mut closes = Vec::with_capacity(candles.len());
    let mut filled = 0;
    for (i, c) in candles.iter().enumerate() {
        if let (Some(step), Some(prev)) = (step, i.checked_sub(1).map(|j| &candles[j])) {
            let mut t = prev.ts + step;
            while t + step <= c.ts {
                ts.push(t);
                closes.push(prev.close);
                filled += 1;
                t += step;
            }
        }
        ts.push(c.ts);
        closes.push(c.close);
    }
    (ts, closes, filled)
}

/// Walks the train/predict schedule over candle closes and scores the model
/// against the last-known-price baseline on the same prediction points.
pub fn evaluate(candles: &[Candle], cfg: &PredictorConfig) -> Result<EvalReport> {
    let (ts, closes, filled) = fill_gaps(candles);
    if filled > 0 {
        log::info!("forward-filled {filled} missing candle(s)");
    }
    let mut report = evaluate_closes(&closes, &ts, cfg)?;
    report.gaps_filled = filled;
    Ok(report)
}

/// As [`evaluate`] on a uniform series; `ts` labels each step.
pub fn evaluate_closes(closes: &[Ticks], ts: &[Ts], cfg: &PredictorConfig) -> Result<EvalReport> {
    assert_eq!(closes.len(), ts.len(), "one timestamp per close");
    cfg.validate()?;
    let span = closes.len();
    let needed = cfg.training_interval + cfg.batch;
    if span < needed {
        return Err(PredictorError::InsufficientHistory { span, needed });
    }
    let b = cfg.batch;
    let mut model: Option<FittedModel> = None;
    let mut trainings = 0;
    let mut fallbacks = 0;
    let mut predictions = Vec::new();
    let mut abs_model = vec![0.0f64; b];
    let mut abs_base = vec![0.0f64; b];
    let mut counts = vec![0usize; b];
    for event in schedule(span, cfg)? {
        match event {
            ScheduleEvent::Train { step, window } => {
                let m = fit(&closes[window], cfg, step)?;
                trainings += 1;
                fallbacks += usize::from(m.fell_back);
                model = Some(m);
            }
            ScheduleEvent::Predict {
                step,
                input,
                targets,
                ..
            } => {
                if targets.start >= span {
                    continue;
                }
                let m = model.as_ref().expect("train precedes predict");
                let pred = predict_batch(m, &closes[input])?;
                let baseline = closes[step - 1];
                for (k, target) in targets.enumerate() {
                    if target >= span {
                        break;
                    }
                    let actual = closes[target];
                    abs_model[k] += (pred[k] - actual).abs() as f64;
                    abs_base[k] += (baseline - actual).abs() as f64;
                    counts[k] += 1;
                    predictions.push(PredictionRecord {
                        ts: ts[target],
                        made_at: step,
                        horizon: k + 1,
                        predicted: pred[k],
                        actual,
                        baseline,
                    });
                }
            }
        }
    }
    let per_horizon: Vec<HorizonError> = (0..b)
        .filter(|&k| counts[k] > 0)
        .map(|k| HorizonError {
            horizon: k + 1,
            count: counts[k],
            mae_model: abs_model[k] / counts[k] as f64,
            mae_persistence: abs_base[k] / counts[k] as f64,
        })
        .collect();
    let n = predictions.len();
    let mae_model = abs_model.iter().sum::<f64>() / n.max(1) as f64;
    let mae_persistence = abs_base.iter().sum::<f64>() / n.max(1) as f64;
    Ok(EvalReport {
        model: cfg.model,
        span,
        gaps_filled: 0,
        trainings,
        fallbacks,
        prediction_count: n,
        mae_model,
        mae_persistence,
        improvement: improvement(mae_model, mae_persistence),
        per_horizon,
        predictions,
    })
}
