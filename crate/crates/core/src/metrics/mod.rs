//! Prosodic divergence between a test condition and the full-context
//! reference.
//!
//! Duration and energy are compared per phoneme; duration on the natural log
//! of the frame count. Pitch is compared per sentence: mel spectrograms are
//! aligned with DTW, pitch is tracked on the concatenated audio with the mel
//! hop, and the aligned voiced frame pairs are averaged in cents.

mod dtw;
mod energy;
mod pitch;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::predictor::normalize_for_match;
use crate::synth::PhonemeRecord;

pub use dtw::{dtw_align, AlignmentPath};
pub use energy::{phoneme_energy_from_waveform, StftParams};
pub use pitch::{extract_pitch, pitch_mae_cents, PitchParams, PitchTrack};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{test} test items vs {reference} reference items")]
    LengthMismatch { test: usize, reference: usize },
    #[error("phoneme {index}: {test:?} vs {reference:?}")]
    SymbolMismatch { index: usize, test: String, reference: String },
    #[error("empty input")]
    EmptyInput,
    #[error("mel widths differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("sample span {start}..{end} outside waveform of {len} samples")]
    SpanOutOfRange { start: usize, end: usize, len: usize },
    #[error("sample rate {sample_rate} Hz is below twice fmax {fmax} Hz")]
    RateTooLow { sample_rate: u32, fmax: f64 },
    #[error("no aligned frame pair is voiced in both tracks")]
    NoVoicedOverlap,
    #[error("alignment index ({0}, {1}) outside the pitch tracks")]
    PathOutOfRange(usize, usize),
    #[error("error {0} has no prediction/ground-truth label")]
    MissingLabels(usize),
    #[error("invalid parameters: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Duration,
    Energy,
    PitchCents,
}

impl Feature {
    pub fn name(self) -> &'static str {
        match self {
            Feature::Duration => "duration",
            Feature::Energy => "energy",
            Feature::PitchCents => "pitch_cents",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureMAEReport {
    pub feature: Feature,
    pub mae: f64,
    /// Population standard deviation of the per-unit values.
    pub std: f64,
    pub count: usize,
}

/// Mean and population standard deviation (two-pass).
pub fn aggregate_report(feature: Feature, values: &[f64]) -> Result<FeatureMAEReport, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(FeatureMAEReport { feature, mae: mean, std: var.sqrt(), count: values.len() })
}

fn check_pairing(test: &[PhonemeRecord], reference: &[PhonemeRecord]) -> Result<(), MetricsError> {
    if test.len() != reference.len() {
        return Err(MetricsError::LengthMismatch { test: test.len(), reference: reference.len() });
    }
    for (index, (t, r)) in test.iter().zip(reference).enumerate() {
        if t.symbol != r.symbol {
            return Err(MetricsError::SymbolMismatch { index, test: t.symbol.clone(), reference: r.symbol.clone() });
        }
    }
    Ok(())
}

/// `|ln d_test - ln d_ref|` per phoneme.
pub fn duration_errors(test: &[PhonemeRecord], reference: &[PhonemeRecord]) -> Result<Vec<f64>, MetricsError> {
    check_pairing(test, reference)?;
    Ok(test
        .iter()
        .zip(reference)
        .map(|(t, r)| (f64::from(t.duration_frames).ln() - f64::from(r.duration_frames).ln()).abs())
        .collect())
}

/// `|e_test - e_ref|` per phoneme.
pub fn energy_errors(test: &[PhonemeRecord], reference: &[PhonemeRecord]) -> Result<Vec<f64>, MetricsError> {
    check_pairing(test, reference)?;
    Ok(test.iter().zip(reference).map(|(t, r)| (t.energy - r.energy).abs()).collect())
}

pub fn duration_mae(test: &[PhonemeRecord], reference: &[PhonemeRecord]) -> Result<FeatureMAEReport, MetricsError> {
    aggregate_report(Feature::Duration, &duration_errors(test, reference)?)
}

pub fn energy_mae(test: &[PhonemeRecord], reference: &[PhonemeRecord]) -> Result<FeatureMAEReport, MetricsError> {
    aggregate_report(Feature::Energy, &energy_errors(test, reference)?)
}

/// A per-phoneme error from a predicted-condition synthesis, labelled with
/// the word that was predicted and the word that actually followed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledError {
    pub value: f64,
    pub predicted: Option<String>,
    pub truth: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectnessSplit {
    /// `None` when no error fell into the partition.
    pub correct: Option<FeatureMAEReport>,
    pub incorrect: Option<FeatureMAEReport>,
}

pub fn split_by_prediction_correctness(feature: Feature, errors: &[LabeledError]) -> Result<CorrectnessSplit, MetricsError> {
    let mut correct = Vec::new();
    let mut incorrect = Vec::new();
    for (i, e) in errors.iter().enumerate() {
        let (Some(p), Some(t)) = (&e.predicted, &e.truth) else {
            return Err(MetricsError::MissingLabels(i));
        };
        if normalize_for_match(p) == normalize_for_match(t) {
            correct.push(e.value);
        } else {
            incorrect.push(e.value);
        }
    }
    Ok(CorrectnessSplit {
        correct: aggregate_report(feature, &correct).ok(),
        incorrect: aggregate_report(feature, &incorrect).ok(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn recs(durations: &[u32], energies: &[f64]) -> Vec<PhonemeRecord> {
        durations
            .iter()
            .zip(energies)
            .enumerate()
            .map(|(i, (&d, &e))| PhonemeRecord { symbol: format!("P{i}"), word_index: 0, duration_frames: d, pitch_hz: 100.0, energy: e })
            .collect()
    }

    #[test]
    fn duration_examples() {
        let a = recs(&[2, 4], &[0.2, 0.4]);
        let r = duration_mae(&a, &a).unwrap();
        assert_eq!((r.mae, r.std, r.count), (0.0, 0.0, 2));
        let r = duration_mae(&a, &recs(&[2, 2], &[0.2, 0.2])).unwrap();
        assert!((r.mae - std::f64::consts::LN_2 / 2.0).abs() < 1e-12);
        let r = duration_mae(&recs(&[3], &[0.0]), &recs(&[6], &[0.0])).unwrap();
        assert!((r.mae - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn energy_examples() {
        let r = energy_mae(&recs(&[1, 1], &[0.2, 0.4]), &recs(&[1, 1], &[0.2, 0.2])).unwrap();
        assert!((r.mae - 0.1).abs() < 1e-12 && (r.std - 0.1).abs() < 1e-12);
    }

    #[test]
    fn pairing_errors() {
        assert_eq!(
            duration_mae(&recs(&[1], &[0.0]), &recs(&[1, 2], &[0.0, 0.0])),
            Err(MetricsError::LengthMismatch { test: 1, reference: 2 })
        );
        let mut other = recs(&[1], &[0.0]);
        other[0].symbol = "Q".into();
        assert!(matches!(energy_mae(&recs(&[1], &[0.0]), &other), Err(MetricsError::SymbolMismatch { index: 0, .. })));
    }

    #[test]
    fn aggregate_examples() {
        let r = aggregate_report(Feature::Energy, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!((r.mae, r.std), (1.0, 0.0));
        let r = aggregate_report(Feature::Energy, &[0.0, 2.0]).unwrap();
        assert_eq!((r.mae, r.std), (1.0, 1.0));
        assert_eq!(aggregate_report(Feature::Energy, &[]), Err(MetricsError::EmptyInput));
    }

    /// Single-pass Welford accumulation, independent of the two-pass route.
    fn welford(values: &[f64]) -> (f64, f64) {
        let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
        for &x in values {
            n += 1.0;
            let d = x - mean;
            mean += d / n;
            m2 += d * (x - mean);
        }
        (mean, (m2 / n).sqrt())
    }

    proptest! {
        #[test]
        fn aggregate_matches_welford(values in prop::collection::vec(0.0f64..5.0, 1..2000)) {
            let r = aggregate_report(Feature::Duration, &values).unwrap();
            let (mean, std) = welford(&values);
            prop_assert!((r.mae - mean).abs() < 1e-9);
            prop_assert!((r.std - std).abs() < 1e-9);
        }

        #[test]
        fn duration_mae_ignores_labels_and_order(pairs in prop::collection::vec((1u32..10, 1u32..10), 1..30)) {
            let t: Vec<u32> = pairs.iter().map(|p| p.0).collect();
            let r: Vec<u32> = pairs.iter().map(|p| p.1).collect();
            let zeros = vec![0.0; t.len()];
            let base = duration_mae(&recs(&t, &zeros), &recs(&r, &zeros)).unwrap();
            let mut relabeled_t = recs(&t, &zeros);
            let mut relabeled_r = recs(&r, &zeros);
            for (a, b) in relabeled_t.iter_mut().zip(relabeled_r.iter_mut()) {
                a.symbol = format!("{}x", a.symbol);
                b.symbol = a.symbol.clone();
            }
            relabeled_t.reverse();
            relabeled_r.reverse();
            let other = duration_mae(&relabeled_t, &relabeled_r).unwrap();
            prop_assert!((base.mae - other.mae).abs() < 1e-12);
        }
    }

    fn labeled(value: f64, p: &str, t: &str) -> LabeledError {
        LabeledError { value, predicted: Some(p.into()), truth: Some(t.into()) }
    }

    #[test]
    fn correctness_split() {
        let all_correct = [labeled(0.0, "a", "a"), labeled(0.0, "The", "the")];
        let s = split_by_prediction_correctness(Feature::Duration, &all_correct).unwrap();
        assert_eq!(s.correct.unwrap().count, 2);
        assert!(s.incorrect.is_none());

        let half = [labeled(0.0, "a", "a"), labeled(1.0, "a", "b"), labeled(0.0, "c", "c"), labeled(3.0, "x", "y")];
        let s = split_by_prediction_correctness(Feature::Duration, &half).unwrap();
        assert_eq!(s.correct.unwrap().count, s.incorrect.unwrap().count);
        assert_eq!(s.incorrect.unwrap().mae, 2.0);

        let missing = [LabeledError { value: 1.0, predicted: None, truth: Some("a".into()) }];
        assert_eq!(split_by_prediction_correctness(Feature::Duration, &missing), Err(MetricsError::MissingLabels(0)));
    }
}
