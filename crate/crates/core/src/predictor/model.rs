use std::fmt::Write as _;

use super::linalg::ridge_multi;
use super::{ModelKind, MultiStep, Normalization, PredictorConfig, PredictorError, Result};
use crate::Ticks;

/// Penalty used when a plain least-squares normal matrix is singular.
const FALLBACK_LAMBDA: f64 = 1e-8;

const MAGIC: &str = "mmlab-model v1";

#[derive(Clone, Debug, PartialEq)]
pub struct FittedModel {
    pub kind: ModelKind,
    pub normalization: Normalization,
    pub multi_step: MultiStep,
    pub historical_interval: usize,
    pub batch: usize,
    pub lambda: f64,
    /// One row per horizon (a single one-step row in iterative mode), each
    /// `[intercept, w_0, .., w_{H-1}]` over the normalized inputs.
    pub weights: Vec<Vec<f64>>,
    pub trained_at: usize,
    pub frames: usize,
    /// The solve was singular and retried with a tiny ridge penalty.
    pub fell_back: bool,
}

fn features(values: &[f64], norm: Normalization) -> Vec<f64> {
    match norm {
        Normalization::Raw => values.to_vec(),
        Normalization::Returns => {
            let last = *values.last().expect("non-empty input");
            values.iter().map(|v| (v / last).ln()).collect()
        }
    }
}

fn target(anchor: f64, value: f64, norm: Normalization) -> f64 {
    match norm {
        Normalization::Raw => value,
        Normalization::Returns => (value / anchor).ln(),
    }
}

fn denormalize(anchor: f64, y: f64, norm: Normalization) -> f64 {
    match norm {
        Normalization::Raw => y,
        Normalization::Returns => anchor * y.exp(),
    }
}

fn check_prices(values: &[Ticks]) -> Result<()> {
    if values.iter().any(|&p| p <= 0) {
        Err(PredictorError::NonPositivePrice)
    } else {
        Ok(())
    }
}

impl FittedModel {
    pub fn persistence(cfg: &PredictorConfig, trained_at: usize) -> Self {
        let h = cfg.historical_interval;
        let mut row = vec![0.0; h + 1];
        row[h] = 1.0;
        let rows = match cfg.multi_step {
            MultiStep::Direct => cfg.batch,
            MultiStep::Iterative => 1,
        };
        Self {
            kind: ModelKind::Persistence,
            normalization: cfg.normalization,
            multi_step: cfg.multi_step,
            historical_interval: h,
            batch: cfg.batch,
            lambda: 0.0,
            weights: vec![row; rows],
            trained_at,
            frames: 0,
            fell_back: false,
        }
    }

    fn apply(&self, row: &[f64], x: &[f64]) -> f64 {
        row[0] + row[1..].iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    /// Unrounded predictions for the next `batch` steps.
    pub fn predict_raw(&self, recent: &[Ticks]) -> Result<Vec<f64>> {
        if recent.len() != self.historical_interval {
            return Err(PredictorError::InputLength {
                expected: self.historical_interval,
                got: recent.len(),
            });
        }
        check_prices(recent)?;
        let norm = self.normalization;
        let mut window: Vec<f64> = recent.iter().map(|&p| p as f64).collect();
        let out = match self.multi_step {
            MultiStep::Direct => {
                let anchor = *window.last().unwrap();
                let x = features(&window, norm);
                self.weights
                    .iter()
                    .map(|row| denormalize(anchor, self.apply(row, &x), norm))
                    .collect()
            }
            MultiStep::Iterative => {
                let mut out = Vec::with_capacity(self.batch);
                for _ in 0..self.batch {
                    let anchor = *window.last().unwrap();
                    let x = features(&window, norm);
                    let next = denormalize(anchor, self.apply(&self.weights[0], &x), norm);
                    out.push(next);
                    window.remove(0);
                    window.push(next);
                }
                out
            }
        };
        Ok(out)
    }

    /// Self-describing text layout: a magic line, `key value` header lines,
    /// then `weights <rows> <cols>` followed by one whitespace-separated row
    /// per line. Weights are written in shortest round-trip decimal form.
    pub fn to_text(&self) -> String {
        let kind = match self.kind {
            ModelKind::Persistence => "persistence",
            ModelKind::Linreg => "linreg",
            ModelKind::Ridge => "ridge",
        };
        let norm = match self.normalization {
            Normalization::Returns => "returns",
            Normalization::Raw => "raw",
        };
        let ms = match self.multi_step {
            MultiStep::Direct => "direct",
            MultiStep::Iterative => "iterative",
        };
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "kind {kind}");
        let _ = writeln!(s, "normalization {norm}");
        let _ = writeln!(s, "multi_step {ms}");
        let _ = writeln!(s, "historical_interval {}", self.historical_interval);
        let _ = writeln!(s, "batch {}", self.batch);
        let _ = writeln!(s, "lambda {:?}", self.lambda);
        let _ = writeln!(s, "trained_at {}", self.trained_at);
        let _ = writeln!(s, "frames {}", self.frames);
        let _ = writeln!(s, "fell_back {}", self.fell_back);
        let cols = self.weights.first().map_or(0, Vec::len);
        let _ = writeln!(s, "weights {} {}", self.weights.len(), cols);
        for row in &self.weights {
            let line: Vec<String> = row.iter().map(|w| format!("{w:?}")).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| PredictorError::Format(m);
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        if lines.next() != Some(MAGIC) {
            return Err(bad("missing header line".into()));
        }
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(format!("missing {key}")))?;
            match line.split_once(' ') {
                Some((k, v)) if k == key => Ok(v.trim().to_string()),
                _ => Err(bad(format!("expected {key}, got {line:?}"))),
            }
        };
        let num = |key: &str, v: String| -> Result<usize> {
            v.parse().map_err(|_| bad(format!("bad {key} {v:?}")))
        };
        let kind = match field("kind")?.as_str() {
            "persistence" => ModelKind::Persistence,
            "linreg" => ModelKind::Linreg,
            "ridge" => ModelKind::Ridge,
            other => return Err(bad(format!("unknown kind {other:?}"))),
        };
        let normalization = match field("normalization")?.as_str() {
            "returns" => Normalization::Returns,
            "raw" => Normalization::Raw,
            other => return Err(bad(format!("unknown normalization {other:?}"))),
        };
        let multi_step = match field("multi_step")?.as_str() {
            "direct" => MultiStep::Direct,
            "iterative" => MultiStep::Iterative,
            other => return Err(bad(format!("unknown multi_step {other:?}"))),
        };
        let historical_interval = num("historical_interval", field("historical_interval")?)?;
        let batch = num("batch", field("batch")?)?;
        let lambda_s = field("lambda")?;
        let lambda: f64 = lambda_s
            .parse()
            .map_err(|_| bad(format!("bad lambda {lambda_s:?}")))?;
        let trained_at = num("trained_at", field("trained_at")?)?;
        let frames = num("frames", field("frames")?)?;
        let fell_back = match field("fell_back")?.as_str() {
            "true" => true,
            "false" => false,
            other => return Err(bad(format!("bad fell_back {other:?}"))),
        };
        let dims = field("weights")?;
        let (r, c) = dims
            .split_once(' ')
            .ok_or_else(|| bad(format!("bad weights dims {dims:?}")))?;
        let rows = num("rows", r.to_string())?;
        let cols = num("cols", c.trim().to_string())?;
        let expected_rows = match multi_step {
            MultiStep::Direct => batch,
            MultiStep::Iterative => 1,
        };
        if rows != expected_rows || cols != historical_interval + 1 {
            return Err(bad(format!("weights {rows}x{cols} do not match H and B")));
        }
        let mut weights = Vec::with_capacity(rows);
        for i in 0..rows {
            let line = lines
                .next()
                .ok_or_else(|| bad(format!("missing weight row {i}")))?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|w| w.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(format!("bad weight row {i}")))?;
            if row.len() != cols || row.iter().any(|w| !w.is_finite()) {
                return Err(bad(format!("bad weight row {i}")));
            }
            weights.push(row);
        }
        Ok(Self {
            kind,
            normalization,
            multi_step,
            historical_interval,
            batch,
            lambda,
            weights,
            trained_at,
            frames,
            fell_back,
        })
    }
}

/// Fits a model on `window` (exactly `T` prices). `trained_at` is recorded
/// as metadata only.
pub fn fit(window: &[Ticks], cfg: &PredictorConfig, trained_at: usize) -> Result<FittedModel> {
    cfg.validate()?;
    if window.len() != cfg.training_interval {
        return Err(PredictorError::InputLength {
            expected: cfg.training_interval,
            got: window.len(),
        });
    }
    check_prices(window)?;
    if cfg.model == ModelKind::Persistence {
        return Ok(FittedModel::persistence(cfg, trained_at));
    }
    let frames = cfg.frame_count();
    if frames < 2 {
        return Err(PredictorError::TooFewFrames { frames });
    }
    let (h, b) = (cfg.historical_interval, cfg.batch);
    let outputs = match cfg.multi_step {
        MultiStep::Direct => b,
        MultiStep::Iterative => 1,
    };
    let norm = cfg.normalization;
    let values: Vec<f64> = window.iter().map(|&p| p as f64).collect();
    let mut xs = Vec::with_capacity(frames);
    let mut ys = Vec::with_capacity(frames);
    for f in 0..frames {
        let j = f * cfg.stride();
        let input = &values[j..j + h];
        let anchor = input[h - 1];
        xs.push(features(input, norm));
        ys.push(
            values[j + h..j + h + outputs]
                .iter()
                .map(|&v| target(anchor, v, norm))
                .collect::<Vec<_>>(),
        );
    }
    // under returns the last feature is identically zero
    let mut active = vec![true; h];
    if norm == Normalization::Returns {
        active[h - 1] = false;
    }
    let lambda = match cfg.model {
        ModelKind::Ridge => cfg.lambda,
        _ => 0.0,
    };
    let sol =
        ridge_multi(&xs, &ys, &active, lambda, FALLBACK_LAMBDA).ok_or(PredictorError::Singular)?;
    if sol.fell_back {
        log::info!(
            "singular normal matrix at step {trained_at}; refit with lambda={FALLBACK_LAMBDA}"
        );
    }
    if sol.rows.iter().flatten().any(|w| !w.is_finite()) {
        return Err(PredictorError::BlowUp {
            kind: cfg.model,
            trained_at,
        });
    }
    Ok(FittedModel {
        kind: cfg.model,
        normalization: norm,
        multi_step: cfg.multi_step,
        historical_interval: h,
        batch: b,
        lambda,
        weights: sol.rows,
        trained_at,
        frames,
        fell_back: sol.fell_back,
    })
}

/// Predicts the next `B` prices from the last `H`, rounded half-up to ticks.
pub fn predict_batch(model: &FittedModel, recent: &[Ticks]) -> Result<Vec<Ticks>> {
    let blow_up = || PredictorError::BlowUp {
        kind: model.kind,
        trained_at: model.trained_at,
    };
    model
        .predict_raw(recent)?
        .into_iter()
        .map(|y| {
            let r = (y + 0.5).floor();
            if r.is_finite() && r.abs() < 9.0e15 {
                Ok(r as Ticks)
            } else {
                Err(blow_up())
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(n: usize, start: Ticks, slope: Ticks) -> Vec<Ticks> {
        (0..n as i64).map(|i| start + slope * i).collect()
    }

    #[test]
    fn persistence_repeats_last_value() {
        for norm in [Normalization::Returns, Normalization::Raw] {
            let cfg =
                PredictorConfig::new(ModelKind::Persistence, 10, 4, 4, 3).with_normalization(norm);
            let m = fit(&linear(10, 50, 3), &cfg, 10).unwrap();
            for row in &m.weights {
                assert_eq!(row, &vec![0.0, 0.0, 0.0, 0.0, 1.0]);
            }
            assert_eq!(
                predict_batch(&m, &[101, 102, 103, 104]).unwrap(),
                vec![104, 104, 104]
            );
        }
    }

    #[test]
    fn linreg_extrapolates_linear_series() {
        let cfg = PredictorConfig::new(ModelKind::Linreg, 20, 4, 4, 2)
            .with_normalization(Normalization::Raw);
        let m = fit(&linear(20, 80, 1), &cfg, 20).unwrap();
        assert_eq!(
            predict_batch(&m, &[101, 102, 103, 104]).unwrap(),
            vec![105, 106]
        );
        let raw = m.predict_raw(&[101, 102, 103, 104]).unwrap();
        assert!((raw[0] - 105.0).abs() / 105.0 < 1e-9);
    }

    #[test]
    fn linreg_returns_mode_on_geometric_series() {
        let window: Vec<Ticks> = (0..40)
            .map(|i| (1000.0 * 1.01f64.powi(i)).round() as Ticks)
            .collect();
        let cfg = PredictorConfig::new(ModelKind::Linreg, 40, 10, 5, 2);
        let m = fit(&window, &cfg, 40).unwrap();
        let recent = &window[35..];
        let pred = predict_batch(&m, recent).unwrap();
        let expect = 1000.0 * 1.01f64.powi(40);
        assert!(
            (pred[0] as f64 - expect).abs() <= 2.0,
            "{pred:?} vs {expect}"
        );
        assert!(m.weights.iter().all(|r| r[5] == 0.0));
    }

    #[test]
    fn constant_window_ridge_predicts_constant() {
        for norm in [Normalization::Returns, Normalization::Raw] {
            let cfg = PredictorConfig::new(ModelKind::Ridge, 12, 4, 3, 2)
                .with_lambda(1.0)
                .with_normalization(norm);
            let m = fit(&[250; 12], &cfg, 12).unwrap();
            for y in m.predict_raw(&[250, 250, 250]).unwrap() {
                assert!((y - 250.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn singular_linreg_falls_back() {
        // raw constant window: centered design is all zeros
        let cfg = PredictorConfig::new(ModelKind::Linreg, 12, 4, 3, 2)
            .with_normalization(Normalization::Raw);
        let m = fit(&[7; 12], &cfg, 12).unwrap();
        assert!(m.fell_back);
        assert_eq!(predict_batch(&m, &[7, 7, 7]).unwrap(), vec![7, 7]);
    }

    #[test]
    fn precondition_errors() {
        let cfg = PredictorConfig::new(ModelKind::Linreg, 6, 2, 4, 2);
        assert_eq!(
            fit(&[1; 6], &cfg, 6),
            Err(PredictorError::TooFewFrames { frames: 1 })
        );
        assert!(fit(&[1; 5], &cfg, 6).is_err());
        let cfg = PredictorConfig::new(ModelKind::Linreg, 12, 4, 3, 2);
        assert_eq!(
            fit(&[0; 12], &cfg, 12),
            Err(PredictorError::NonPositivePrice)
        );
        let m = fit(&linear(12, 10, 1), &cfg, 12).unwrap();
        assert_eq!(
            predict_batch(&m, &[1, 2]),
            Err(PredictorError::InputLength {
                expected: 3,
                got: 2
            })
        );
    }

    #[test]
    fn blow_up_reports_model() {
        let mut m =
            FittedModel::persistence(&PredictorConfig::new(ModelKind::Linreg, 12, 4, 3, 2), 12);
        m.kind = ModelKind::Linreg;
        m.weights[0][0] = 1e300;
        let err = predict_batch(&m, &[5, 5, 5]).unwrap_err();
        assert_eq!(
            err,
            PredictorError::BlowUp {
                kind: ModelKind::Linreg,
                trained_at: 12
            }
        );
        assert!(err.to_string().contains("model blow-up"));
    }

    #[test]
    fn rounding_is_half_up() {
        let mut m = FittedModel::persistence(
            &PredictorConfig::new(ModelKind::Linreg, 12, 4, 1, 2)
                .with_normalization(Normalization::Raw),
            12,
        );
        m.weights = vec![vec![0.5, 1.0], vec![-0.5, 1.0]];
        assert_eq!(predict_batch(&m, &[10]).unwrap(), vec![11, 10]);
    }

    #[test]
    fn iterative_feeds_back_predictions() {
        let cfg = PredictorConfig::new(ModelKind::Linreg, 20, 4, 4, 3)
            .with_normalization(Normalization::Raw)
            .with_multi_step(MultiStep::Iterative);
        let m = fit(&linear(20, 10, 2), &cfg, 20).unwrap();
        assert_eq!(m.weights.len(), 1);
        assert_eq!(
            predict_batch(&m, &[40, 42, 44, 46]).unwrap(),
            vec![48, 50, 52]
        );
    }

    #[test]
    fn text_round_trip() {
        let window: Vec<Ticks> = (0..30).map(|i| 100 + (i * 37 % 11)).collect();
        let cfg = PredictorConfig::new(ModelKind::Ridge, 30, 5, 4, 2).with_lambda(0.25);
        let m = fit(&window, &cfg, 30).unwrap();
        let text = m.to_text();
        assert!(text.starts_with("mmlab-model v1\nkind ridge\n"));
        assert_eq!(FittedModel::from_text(&text).unwrap(), m);
        assert!(FittedModel::from_text(&text.replace("batch 2", "batch 3")).is_err());
        assert!(FittedModel::from_text("garbage").is_err());
    }
}
