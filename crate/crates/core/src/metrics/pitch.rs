use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::dtw::AlignmentPath;
use super::MetricsError;
use crate::assembly::Waveform;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitchTrack {
    pub f0_hz: Vec<f64>,
    pub voiced: Vec<bool>,
    pub hop_samples: u32,
    pub sample_rate: u32,
}

impl PitchTrack {
    pub fn len(&self) -> usize {
        self.f0_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0_hz.is_empty()
    }

    pub fn voiced_count(&self) -> usize {
        self.voiced.iter().filter(|v| **v).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PitchParams {
    pub frame_ms: f64,
    pub hop_samples: u32,
    pub fmin: f64,
    pub fmax: f64,
    /// Minimum normalized autocorrelation peak for a voiced frame.
    pub voicing_threshold: f64,
    /// Candidate peaks within this fraction of the best peak are treated as
    /// equivalent and the shortest lag wins, which avoids octave-down errors.
    pub octave_tolerance: f64,
    /// Track length; defaults to `ceil(len / hop)`.
    pub num_frames: Option<usize>,
}

impl Default for PitchParams {
    fn default() -> Self {
        Self {
            frame_ms: 40.0,
            hop_samples: 256,
            fmin: 75.0,
            fmax: 600.0,
            voicing_threshold: 0.45,
            octave_tolerance: 0.05,
            num_frames: None,
        }
    }
}

struct FrameAnalyzer {
    fft_len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    buf: Vec<Complex<f64>>,
}

impl FrameAnalyzer {
    fn new(max_frame: usize) -> Self {
        let fft_len = (2 * max_frame).next_power_of_two().max(2);
        let mut planner = FftPlanner::new();
        Self {
            fft_len,
            forward: planner.plan_fft_forward(fft_len),
            inverse: planner.plan_fft_inverse(fft_len),
            buf: vec![Complex::new(0.0, 0.0); fft_len],
        }
    }

    /// Raw autocorrelation `Σ x[i] x[i+τ]` for all lags.
    fn autocorrelation(&mut self, x: &[f64]) -> Vec<f64> {
        for (i, slot) in self.buf.iter_mut().enumerate() {
            *slot = Complex::new(x.get(i).copied().unwrap_or(0.0), 0.0);
        }
        self.forward.process(&mut self.buf);
        for c in self.buf.iter_mut() {
            *c = Complex::new(c.norm_sqr(), 0.0);
        }
        self.inverse.process(&mut self.buf);
        let scale = 1.0 / self.fft_len as f64;
        self.buf[..x.len()].iter().map(|c| c.re * scale).collect()
    }
}

/// Pitch per hop by normalized autocorrelation.
///
/// Frame `t` is centred on sample `t*hop + hop/2` (the middle of mel frame
/// `t`) and clipped at the signal edges. For each lag in
/// `[sr/fmax, sr/fmin]` the autocorrelation is normalized by the energies of
/// the two overlapping segments; the chosen peak is refined by parabolic
/// interpolation.
pub fn extract_pitch(w: &Waveform, params: &PitchParams) -> Result<PitchTrack, MetricsError> {
    if f64::from(w.sample_rate) < 2.0 * params.fmax {
        return Err(MetricsError::RateTooLow { sample_rate: w.sample_rate, fmax: params.fmax });
    }
    if params.hop_samples == 0 || params.fmin <= 0.0 || params.fmin >= params.fmax || params.frame_ms <= 0.0 {
        return Err(MetricsError::InvalidParams("pitch analysis needs hop > 0 and 0 < fmin < fmax"));
    }
    let sr = f64::from(w.sample_rate);
    let hop = params.hop_samples as usize;
    let win = ((params.frame_ms * sr / 1000.0).round() as usize).max(4);
    let frames = params.num_frames.unwrap_or_else(|| w.len().div_ceil(hop));
    let min_lag = ((sr / params.fmax).floor() as usize).max(2);
    let max_lag_cap = (sr / params.fmin).ceil() as usize;

    let mut analyzer = FrameAnalyzer::new(win);
    let mut f0_hz = vec![0.0; frames];
    let mut voiced = vec![false; frames];
    let mut seg = Vec::with_capacity(win);
    let mut prefix = Vec::with_capacity(win + 1);
    for t in 0..frames {
        let center = t * hop + hop / 2;
        let start = center.saturating_sub(win / 2);
        let end = (center + win - win / 2).min(w.len());
        if start >= end {
            continue;
        }
        seg.clear();
        seg.extend(w.samples[start..end].iter().map(|&s| f64::from(s)));
        let mean = seg.iter().sum::<f64>() / seg.len() as f64;
        seg.iter_mut().for_each(|s| *s -= mean);
        let len = seg.len();
        let max_lag = max_lag_cap.min(len / 2);
        if max_lag < min_lag + 2 {
            continue;
        }
        prefix.clear();
        prefix.push(0.0);
        for s in &seg {
            prefix.push(prefix.last().unwrap() + s * s);
        }
        let acf = analyzer.autocorrelation(&seg);
        let norm = |lag: usize| {
            let head = prefix[len - lag];
            let tail = prefix[len] - prefix[lag];
            let denom = (head * tail).sqrt();
            if denom > 1e-12 {
                acf[lag] / denom
            } else {
                0.0
            }
        };
        let lo = min_lag - 1;
        let r: Vec<f64> = (lo..=max_lag + 1).map(norm).collect();
        let mut peaks: Vec<(usize, f64)> = Vec::new();
        for i in 1..r.len() - 1 {
            if r[i] >= r[i - 1] && r[i] > r[i + 1] {
                peaks.push((i, r[i]));
            }
        }
        let Some(best) = peaks.iter().map(|p| p.1).reduce(f64::max) else { continue };
        if best < params.voicing_threshold {
            continue;
        }
        let (i, value) = *peaks.iter().find(|p| p.1 >= best * (1.0 - params.octave_tolerance)).expect("best is a peak");
        let denom = r[i - 1] - 2.0 * value + r[i + 1];
        let delta = if denom.abs() > 1e-12 { 0.5 * (r[i - 1] - r[i + 1]) / denom } else { 0.0 };
        let lag = (lo + i) as f64 + delta.clamp(-0.5, 0.5);
        f0_hz[t] = sr / lag;
        voiced[t] = true;
    }
    Ok(PitchTrack { f0_hz, voiced, hop_samples: params.hop_samples, sample_rate: w.sample_rate })
}

/// Mean of `1200 * |log2(f_test / f_ref)|` over aligned frame pairs that
/// are voiced in both tracks.
pub fn pitch_mae_cents(test: &PitchTrack, reference: &PitchTrack, path: &AlignmentPath) -> Result<f64, MetricsError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for &(i, j) in &path.pairs {
        if i >= test.len() || j >= reference.len() {
            return Err(MetricsError::PathOutOfRange(i, j));
        }
        if test.voiced[i] && reference.voiced[j] {
            sum += (test.f0_hz[i] / reference.f0_hz[j]).log2().abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(MetricsError::NoVoicedOverlap);
    }
    Ok(1200.0 * sum / count as f64)
}
