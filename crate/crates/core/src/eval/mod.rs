//! Forecast error reports: per-segment mean Euclidean distance in the
//! original coordinate units, compared against the constant-pose baseline.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{DataError, DyadSample, LandmarkFrame, Segment, FUTURE_LEN, OBSERVED_LEN};
use crate::model::{forecast_batch, ModelError, ModelParams};

const EVAL_BATCH: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("cannot evaluate an empty dataset")]
    Empty,
    #[error("evaluation samples must be normalized")]
    NotNormalized,
    #[error("{0} forecasts for {1} samples")]
    Count(usize, usize),
    #[error("forecast {sample} has {found} frames, expected {expected}")]
    Horizon { sample: usize, found: usize, expected: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentScores {
    pub face: f64,
    pub body: f64,
    pub hands: f64,
}

impl SegmentScores {
    pub fn get(&self, seg: Segment) -> f64 {
        match seg {
            Segment::Face => self.face,
            Segment::Body => self.body,
            Segment::Hands => self.hands,
        }
    }

    fn from_fn(mut f: impl FnMut(Segment) -> f64) -> Self {
        Self {
            face: f(Segment::Face),
            body: f(Segment::Body),
            hands: f(Segment::Hands),
        }
    }
}

/// Error per forecast frame, one curve per segment.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentCurves {
    pub face: Vec<f64>,
    pub body: Vec<f64>,
    pub hands: Vec<f64>,
}

impl SegmentCurves {
    pub fn get(&self, seg: Segment) -> &[f64] {
        match seg {
            Segment::Face => &self.face,
            Segment::Body => &self.body,
            Segment::Hands => &self.hands,
        }
    }
}

/// Distances for one set of forecasts.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub mean: SegmentScores,
    pub curve: SegmentCurves,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sample_count: usize,
    pub model: Scores,
    pub baseline: Scores,
    /// Model minus baseline mean distance; negative is better.
    pub delta: SegmentScores,
    /// `delta / baseline`.
    pub relative_delta: SegmentScores,
}

/// Zero-velocity forecast: the last observed frame repeated.
pub fn baseline_constant(observed: &[LandmarkFrame]) -> Vec<LandmarkFrame> {
    match observed.last() {
        Some(last) => vec![*last; FUTURE_LEN],
        None => Vec::new(),
    }
}

fn distance(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Scores normalized `forecasts` against each sample's future. Both are
/// mapped back to original units with the target's stored statistics first.
pub fn score_forecasts(dataset: &[DyadSample], forecasts: &[Vec<LandmarkFrame>]) -> Result<Scores, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::Empty);
    }
    if forecasts.len() != dataset.len() {
        return Err(EvalError::Count(forecasts.len(), dataset.len()));
    }
    let mut sums = [[0.0; FUTURE_LEN]; 3];
    for (i, (sample, pred)) in dataset.iter().zip(forecasts).enumerate() {
        let stats = sample.target.stats().ok_or(EvalError::NotNormalized)?;
        if pred.len() != FUTURE_LEN {
            return Err(EvalError::Horizon {
                sample: i,
                found: pred.len(),
                expected: FUTURE_LEN,
            });
        }
        for (t, (p, truth)) in pred.iter().zip(sample.target.future()).enumerate() {
            let p = stats.denormalize_frame(p);
            let truth = stats.denormalize_frame(truth);
            for seg in Segment::ALL {
                let d: f64 = seg
                    .landmarks()
                    .map(|j| distance(&p.points()[j], &truth.points()[j]))
                    .sum();
                sums[seg.index()][t] += d / seg.n_landmarks() as f64;
            }
        }
    }
    let n = dataset.len() as f64;
    let curve = |seg: Segment| -> Vec<f64> { sums[seg.index()].iter().map(|s| s / n).collect() };
    let curves = SegmentCurves {
        face: curve(Segment::Face),
        body: curve(Segment::Body),
        hands: curve(Segment::Hands),
    };
    let mean = SegmentScores::from_fn(|seg| curves.get(seg).iter().sum::<f64>() / FUTURE_LEN as f64);
    Ok(Scores { mean, curve: curves })
}

/// Model forecasts for every sample, in normalized units.
pub fn model_forecasts(params: &ModelParams, dataset: &[DyadSample]) -> Result<Vec<Vec<LandmarkFrame>>, EvalError> {
    let mut out = Vec::with_capacity(dataset.len());
    for chunk in dataset.chunks(EVAL_BATCH) {
        let pairs: Vec<(&[LandmarkFrame], &[LandmarkFrame])> =
            chunk.iter().map(|s| (s.target.observed(), s.partner.observed())).collect();
        out.extend(forecast_batch(&pairs, params)?);
    }
    Ok(out)
}

/// Evaluates the model and the constant-pose baseline on normalized samples.
pub fn evaluate(params: &ModelParams, dataset: &[DyadSample]) -> Result<EvalReport, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::Empty);
    }
    if !dataset.iter().all(DyadSample::is_normalized) {
        return Err(EvalError::NotNormalized);
    }
    if params.config.observed_len != OBSERVED_LEN || params.config.horizon != FUTURE_LEN {
        return Err(ModelError::Input(format!(
            "model windows {}/{} do not match data windows {OBSERVED_LEN}/{FUTURE_LEN}",
            params.config.observed_len, params.config.horizon
        ))
        .into());
    }
    let model = score_forecasts(dataset, &model_forecasts(params, dataset)?)?;
    let base: Vec<Vec<LandmarkFrame>> = dataset.iter().map(|s| baseline_constant(s.target.observed())).collect();
    let baseline = score_forecasts(dataset, &base)?;
    let delta = SegmentScores::from_fn(|seg| model.mean.get(seg) - baseline.mean.get(seg));
    let relative_delta = SegmentScores::from_fn(|seg| {
        let b = baseline.mean.get(seg);
        if b > 0.0 {
            delta.get(seg) / b
        } else {
            0.0
        }
    });
    Ok(EvalReport {
        sample_count: dataset.len(),
        model,
        baseline,
        delta,
        relative_delta,
    })
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "samples: {}", self.sample_count);
        let _ = writeln!(s, "{:<8}{:>14}{:>14}{:>14}{:>10}", "segment", "model", "baseline", "delta", "rel");
        for seg in Segment::ALL {
            let _ = writeln!(
                s,
                "{:<8}{:>14.6e}{:>14.6e}{:>14.6e}{:>9.2}%",
                seg.name(),
                self.model.mean.get(seg),
                self.baseline.mean.get(seg),
                self.delta.get(seg),
                100.0 * self.relative_delta.get(seg)
            );
        }
        let _ = writeln!(s, "\nper-frame error (model / baseline)");
        let _ = writeln!(s, "{:<6}{:>24}{:>24}{:>24}", "frame", "face", "body", "hands");
        for t in 0..FUTURE_LEN {
            let _ = write!(s, "{:<6}", t);
            for seg in Segment::ALL {
                let cell = format!(
                    "{:.3e}/{:.3e}",
                    self.model.curve.get(seg)[t],
                    self.baseline.curve.get(seg)[t]
                );
                let _ = write!(s, "{cell:>24}");
            }
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }
}
