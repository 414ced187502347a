use std::ops::Range;

use super::{PredictorConfig, PredictorError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScheduleEvent {
    /// Fit a model at `step` on `window` (always `step - T .. step`).
    Train { step: usize, window: Range<usize> },
    /// Predict at `step` from `input` (`step - H .. step`) for `targets`
    /// (`step .. step + B`), using the model trained at `model_step`.
    Predict {
        step: usize,
        input: Range<usize>,
        targets: Range<usize>,
        model_step: usize,
    },
}

impl ScheduleEvent {
    pub fn step(&self) -> usize {
        match self {
            Self::Train { step, .. } | Self::Predict { step, .. } => *step,
        }
    }
}

/// Training and prediction events over a series of `span` steps, in step
/// order. At a retraining step the train event precedes the prediction that
/// uses it. Predictions may be scheduled at `span` itself; their targets then
/// lie beyond the series.
pub fn schedule(span: usize, cfg: &PredictorConfig) -> Result<Vec<ScheduleEvent>> {
    cfg.validate()?;
    let (t, p, h, b) = (
        cfg.training_interval,
        cfg.period,
        cfg.historical_interval,
        cfg.batch,
    );
    if span < t {
        return Err(PredictorError::InsufficientHistory { span, needed: t });
    }
    let mut events = Vec::new();
    let mut tk = t;
    while tk <= span {
        events.push(ScheduleEvent::Train {
            step: tk,
            window: tk - t..tk,
        });
        let mut s = tk;
        while s < tk + p && s <= span {
            events.push(ScheduleEvent::Predict {
                step: s,
                input: s - h..s,
                targets: s..s + b,
                model_step: tk,
            });
            s += b;
        }
        tk += p;
    }
    Ok(events)
}
