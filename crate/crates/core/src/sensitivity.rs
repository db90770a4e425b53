//! Context sensitivity of per-phoneme features across the lookahead
//! conditions, just-noticeable-difference classification, per-sentence
//! deviation scores and their correlation with listening-test means.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ConditionKind;
use crate::metrics::Feature;

#[derive(Debug, Error, PartialEq)]
pub enum SensitivityError {
    #[error("expected {expected} condition values, got {got}")]
    WrongCount { expected: usize, got: usize },
    #[error("duplicate condition label {0:?}")]
    DuplicateLabel(String),
    #[error("pitch value {0} is not positive")]
    NonPositivePitch(f64),
    #[error("relative duration check needs a positive full-context duration")]
    MissingBase,
    #[error("no JND threshold is defined for {0:?}")]
    NoThreshold(Feature),
    #[error("{0:?} has zero variance across the corpus")]
    DegenerateScale(Feature),
    #[error("correlation needs two equal-length series of at least two values with non-zero variance")]
    DegenerateInput,
    #[error("empty input")]
    EmptyInput,
}

/// One feature's value for one phoneme under every non-`k=0` condition:
/// the predicted and random samples, ground truth and full context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSet {
    pub labels: Vec<String>,
    pub values: Vec<f64>,
}

impl ConditionSet {
    pub fn expected_len(num_samples: usize) -> usize {
        2 * num_samples + 2
    }

    pub fn new(entries: Vec<(String, f64)>, num_samples: usize) -> Result<Self, SensitivityError> {
        let expected = Self::expected_len(num_samples);
        if entries.len() != expected {
            return Err(SensitivityError::WrongCount { expected, got: entries.len() });
        }
        let mut seen = BTreeSet::new();
        for (label, _) in &entries {
            if !seen.insert(label.as_str()) {
                return Err(SensitivityError::DuplicateLabel(label.clone()));
            }
        }
        let (labels, values) = entries.into_iter().unzip();
        Ok(Self { labels, values })
    }

    pub fn range(&self, feature: Feature) -> Result<f64, SensitivityError> {
        feature_range(&self.values, feature)
    }
}

/// `max - min`, or the cents distance `1200 log2(max/min)` for pitch.
pub fn feature_range(values: &[f64], feature: Feature) -> Result<f64, SensitivityError> {
    if values.is_empty() {
        return Err(SensitivityError::EmptyInput);
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    match feature {
        Feature::PitchCents => {
            if min <= 0.0 {
                return Err(SensitivityError::NonPositivePitch(min));
            }
            Ok(1200.0 * (max / min).log2())
        }
        Feature::Duration | Feature::Energy => Ok(max - min),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JndThresholds {
    pub pitch_cents: f64,
    pub duration_frames: f64,
    pub duration_relative: f64,
}

impl Default for JndThresholds {
    fn default() -> Self {
        Self { pitch_cents: 300.0, duration_frames: 1.0, duration_relative: 0.05 }
    }
}

/// Which threshold decided a classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JndRule {
    PitchCents,
    DurationFrames,
    DurationRelative,
    /// Every applicable threshold was exceeded.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JndVerdict {
    pub below_jnd: bool,
    pub rule: JndRule,
}

/// Thresholds are inclusive: a range equal to the threshold is below it.
/// `base` is the full-context duration in frames and is only consulted when
/// the absolute frame test fails.
pub fn jnd_classify(range: f64, feature: Feature, base: Option<f64>, thresholds: &JndThresholds) -> Result<JndVerdict, SensitivityError> {
    match feature {
        Feature::PitchCents => {
            let below = range <= thresholds.pitch_cents;
            Ok(JndVerdict { below_jnd: below, rule: if below { JndRule::PitchCents } else { JndRule::None } })
        }
        Feature::Duration => {
            if range <= thresholds.duration_frames {
                return Ok(JndVerdict { below_jnd: true, rule: JndRule::DurationFrames });
            }
            let base = base.filter(|b| *b > 0.0).ok_or(SensitivityError::MissingBase)?;
            let below = range / base <= thresholds.duration_relative;
            Ok(JndVerdict { below_jnd: below, rule: if below { JndRule::DurationRelative } else { JndRule::None } })
        }
        Feature::Energy => Err(SensitivityError::NoThreshold(feature)),
    }
}

/// Absolute deviation of one phoneme's feature from its full-context value;
/// pitch in cents.
pub fn phoneme_deviation(feature: Feature, value: f64, full: f64) -> Result<f64, SensitivityError> {
    match feature {
        Feature::PitchCents => {
            if value <= 0.0 || full <= 0.0 {
                return Err(SensitivityError::NonPositivePitch(value.min(full)));
            }
            Ok(1200.0 * (value / full).log2().abs())
        }
        Feature::Duration | Feature::Energy => Ok((value - full).abs()),
    }
}

/// Largest per-phoneme deviation of a sentence under one condition, per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceMaxima {
    pub utterance_id: String,
    pub condition: ConditionKind,
    pub duration: f64,
    pub energy: f64,
    pub pitch_cents: f64,
}

impl SentenceMaxima {
    pub fn get(&self, feature: Feature) -> f64 {
        match feature {
            Feature::Duration => self.duration,
            Feature::Energy => self.energy,
            Feature::PitchCents => self.pitch_cents,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceDeviation {
    pub utterance_id: String,
    pub condition: ConditionKind,
    pub combined_score: f64,
    pub mushra_mean: Option<f64>,
}

/// Maximum of `deviations`, 0 for an empty sentence.
pub fn max_deviation(deviations: &[f64]) -> f64 {
    deviations.iter().copied().fold(0.0, f64::max)
}

/// Z-scores each feature's sentence maxima over all rows (population
/// standard deviation) and sums the three z-scores per row.
pub fn sentence_deviation_scores(rows: &[SentenceMaxima]) -> Result<Vec<SentenceDeviation>, SensitivityError> {
    if rows.is_empty() {
        return Err(SensitivityError::EmptyInput);
    }
    let n = rows.len() as f64;
    let mut combined = vec![0.0; rows.len()];
    for feature in [Feature::Duration, Feature::Energy, Feature::PitchCents] {
        let mean = rows.iter().map(|r| r.get(feature)).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r.get(feature) - mean).powi(2)).sum::<f64>() / n;
        if var <= 0.0 {
            return Err(SensitivityError::DegenerateScale(feature));
        }
        let std = var.sqrt();
        for (c, r) in combined.iter_mut().zip(rows) {
            *c += (r.get(feature) - mean) / std;
        }
    }
    Ok(rows
        .iter()
        .zip(combined)
        .map(|(r, combined_score)| SentenceDeviation {
            utterance_id: r.utterance_id.clone(),
            condition: r.condition,
            combined_score,
            mushra_mean: None,
        })
        .collect())
}

/// Product-moment correlation, clamped to `[-1, 1]`.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, SensitivityError> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(SensitivityError::DegenerateInput);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(SensitivityError::DegenerateInput);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeFraction {
    pub threshold: f64,
    /// Fraction of ranges `<= threshold`.
    pub fraction: f64,
}

pub fn range_percentiles(ranges: &[f64], thresholds: &[f64]) -> Result<Vec<RangeFraction>, SensitivityError> {
    if ranges.is_empty() {
        return Err(SensitivityError::EmptyInput);
    }
    let mut sorted = ranges.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(thresholds
        .iter()
        .map(|&threshold| {
            let below = sorted.partition_point(|r| *r <= threshold);
            RangeFraction { threshold, fraction: below as f64 / sorted.len() as f64 }
        })
        .collect())
}
