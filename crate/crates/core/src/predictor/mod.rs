//! Rolling price predictor.
//!
//! Window algebra, in series steps:
//!
//! - training interval `T`: a model trained at step `t` sees `[t - T, t)`;
//! - period `P`: models are retrained at `T, T + P, T + 2P, ...`;
//! - historical interval `H`: inputs of one prediction;
//! - batch `B`: values predicted at once, and the stride between
//!   predictions inside a period.
//!
//! A prediction made at step `s` reads `[s - H, s)` and predicts steps
//! `s .. s + B`, so horizon `h` targets step `s + h - 1`.

mod eval;
mod linalg;
mod model;
mod schedule;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use eval::{evaluate, evaluate_closes, fill_gaps, EvalReport, HorizonError, PredictionRecord};
pub use model::{fit, predict_batch, FittedModel};
pub use schedule::{schedule, ScheduleEvent};

use crate::Ticks;

#[derive(Debug, Error, PartialEq)]
pub enum PredictorError {
    #[error("invalid predictor config: {0}")]
    Config(String),
    #[error("insufficient history: span {span} < training interval {needed}")]
    InsufficientHistory { span: usize, needed: usize },
    #[error("training window too short for H+B: {frames} frame(s), need at least 2")]
    TooFewFrames { frames: usize },
    #[error("expected {expected} input values, got {got}")]
    InputLength { expected: usize, got: usize },
    #[error("prices must be positive")]
    NonPositivePrice,
    #[error("normal matrix is singular")]
    Singular,
    #[error("model blow-up: non-finite output from {kind:?} model trained at step {trained_at}")]
    BlowUp { kind: ModelKind, trained_at: usize },
    #[error("malformed model file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, PredictorError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Persistence,
    Linreg,
    Ridge,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Log prices relative to the last input; predictions re-anchored on it.
    #[default]
    Returns,
    Raw,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MultiStep {
    /// One regression row per horizon.
    #[default]
    Direct,
    /// One-step model fed back on its own predictions.
    Iterative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub training_interval: usize,
    pub period: usize,
    pub historical_interval: usize,
    pub batch: usize,
    pub model: ModelKind,
    /// Ridge penalty; ignored by the other models.
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub multi_step: MultiStep,
    /// Stride between training frames; defaults to `batch`.
    #[serde(default)]
    pub frame_stride: Option<usize>,
}

impl PredictorConfig {
    pub fn new(model: ModelKind, t: usize, p: usize, h: usize, b: usize) -> Self {
        Self {
            training_interval: t,
            period: p,
            historical_interval: h,
            batch: b,
            model,
            lambda: 0.0,
            normalization: Normalization::Returns,
            multi_step: MultiStep::Direct,
            frame_stride: None,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_normalization(mut self, n: Normalization) -> Self {
        self.normalization = n;
        self
    }

    pub fn with_multi_step(mut self, m: MultiStep) -> Self {
        self.multi_step = m;
        self
    }

    pub fn with_frame_stride(mut self, stride: usize) -> Self {
        self.frame_stride = Some(stride);
        self
    }

    pub fn stride(&self) -> usize {
        self.frame_stride.unwrap_or(self.batch)
    }

    /// Number of training frames in one training window.
    pub fn frame_count(&self) -> usize {
        let width = self.historical_interval + self.batch;
        if self.training_interval < width {
            0
        } else {
            (self.training_interval - width) / self.stride().max(1) + 1
        }
    }

    /// Checks `1 <= B <= P <= T`, `H >= 1`, `T >= H + B`, naming the
    /// violated inequality.
    pub fn validate(&self) -> Result<()> {
        let (t, p, h, b) = (
            self.training_interval,
            self.period,
            self.historical_interval,
            self.batch,
        );
        let err = |m: &str| Err(PredictorError::Config(m.to_string()));
        if b < 1 {
            return err("batch must be at least 1");
        }
        if b > p {
            return err("batch exceeds period (B <= P)");
        }
        if p > t {
            return err("period exceeds training interval (P <= T)");
        }
        if h < 1 {
            return err("historical interval must be at least 1");
        }
        if t < h + b {
            return err(
                "training interval shorter than historical interval plus batch (T >= H + B)",
            );
        }
        if self.frame_stride == Some(0) {
            return err("frame stride must be at least 1");
        }
        if self.model == ModelKind::Ridge && !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return err("ridge lambda must be finite and >= 0");
        }
        Ok(())
    }
}

/// Incremental predictor fed one price per step.
///
/// After `observe` has been called `s` times the predictor holds steps
/// `0..s`; it retrains and predicts on the same schedule as [`schedule`].
#[derive(Clone, Debug)]
pub struct OnlinePredictor {
    cfg: PredictorConfig,
    history: Vec<Ticks>,
    model: Option<FittedModel>,
    batch: Option<(usize, Vec<Ticks>)>,
    fit_failures: usize,
}

impl OnlinePredictor {
    pub fn new(cfg: PredictorConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.model != ModelKind::Persistence && cfg.frame_count() < 2 {
            return Err(PredictorError::TooFewFrames {
                frames: cfg.frame_count(),
            });
        }
        Ok(Self {
            cfg,
            history: Vec::new(),
            model: None,
            batch: None,
            fit_failures: 0,
        })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.cfg
    }

    pub fn model(&self) -> Option<&FittedModel> {
        self.model.as_ref()
    }

    pub fn fit_failures(&self) -> usize {
        self.fit_failures
    }

    pub fn observe(&mut self, price: Ticks) {
        self.history.push(price);
        let s = self.history.len();
        let (t, p) = (self.cfg.training_interval, self.cfg.period);
        if s >= t && (s - t).is_multiple_of(p) {
            match fit(&self.history[s - t..], &self.cfg, s) {
                Ok(m) => self.model = Some(m),
                Err(e) => {
                    self.fit_failures += 1;
                    log::warn!("predictor fit failed at step {s}: {e}");
                }
            }
        }
        if let Some(model) = &self.model {
            if (s - model.trained_at).is_multiple_of(self.cfg.batch) {
                let h = self.cfg.historical_interval;
                match predict_batch(model, &self.history[s - h..]) {
                    Ok(values) => self.batch = Some((s, values)),
                    Err(e) => {
                        self.batch = None;
                        log::warn!("prediction failed at step {s}: {e}");
                    }
                }
            }
        }
    }

    /// Predicted price `horizon` steps after the latest observed one, from
    /// the current batch; absent before the first model or past the batch.
    pub fn predict(&self, horizon: usize) -> Option<Ticks> {
        let (first, values) = self.batch.as_ref()?;
        let target = (self.history.len() - 1).checked_add(horizon)?;
        target
            .checked_sub(*first)
            .and_then(|i| values.get(i))
            .copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_invariants_named() {
        let ok = PredictorConfig::new(ModelKind::Linreg, 20, 5, 4, 2);
        ok.validate().unwrap();
        let msg = |c: PredictorConfig| c.validate().unwrap_err().to_string();
        assert!(msg(PredictorConfig::new(ModelKind::Linreg, 20, 5, 4, 6))
            .contains("batch exceeds period"));
        assert!(msg(PredictorConfig::new(ModelKind::Linreg, 20, 25, 4, 2)).contains("P <= T"));
        assert!(msg(PredictorConfig::new(ModelKind::Linreg, 5, 5, 4, 2)).contains("T >= H + B"));
        assert!(msg(PredictorConfig::new(ModelKind::Linreg, 20, 5, 0, 2)).contains("historical"));
        assert!(msg(PredictorConfig::new(ModelKind::Linreg, 20, 5, 4, 0)).contains("batch"));
        assert!(
            msg(PredictorConfig::new(ModelKind::Ridge, 20, 5, 4, 2).with_lambda(-1.0))
                .contains("lambda")
        );
    }

    #[test]
    fn frame_count_arithmetic() {
        assert_eq!(
            PredictorConfig::new(ModelKind::Linreg, 480, 60, 60, 5).frame_count(),
            84
        );
        assert_eq!(
            PredictorConfig::new(ModelKind::Linreg, 10, 2, 4, 2)
                .with_frame_stride(1)
                .frame_count(),
            5
        );
        assert_eq!(
            PredictorConfig::new(ModelKind::Linreg, 6, 2, 4, 2).frame_count(),
            1
        );
    }

    #[test]
    fn online_matches_batch_schedule() {
        let cfg = PredictorConfig::new(ModelKind::Linreg, 12, 4, 3, 2)
            .with_normalization(Normalization::Raw);
        let mut online = OnlinePredictor::new(cfg.clone()).unwrap();
        let series: Vec<Ticks> = (0..30).map(|i| 100 + 2 * i).collect();
        for (i, &p) in series.iter().enumerate() {
            online.observe(p);
            let s = i + 1;
            if s < 12 {
                assert_eq!(online.predict(1), None);
            } else if i + 1 < series.len() {
                // linear data: next value predicted exactly
                assert_eq!(online.predict(1), Some(series[i + 1]), "step {s}");
            }
        }
        assert_eq!(online.model().unwrap().trained_at, 28);
    }

    #[test]
    fn online_rejects_too_few_frames() {
        let cfg = PredictorConfig::new(ModelKind::Linreg, 6, 2, 4, 2);
        assert!(matches!(
            OnlinePredictor::new(cfg),
            Err(PredictorError::TooFewFrames { frames: 1 })
        ));
    }
}
