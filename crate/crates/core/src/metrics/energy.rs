use std::ops::Range;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::assembly::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftParams {
    pub win: usize,
    pub hop: usize,
}

impl Default for StftParams {
    /// 1024-sample Hann window, 256-sample hop.
    fn default() -> Self {
        Self { win: 1024, hop: 256 }
    }
}

fn hann(win: usize) -> Vec<f64> {
    (0..win).map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / win as f64).cos()).collect()
}

/// Mean of `|STFT|²` over the one-sided frequency bins of every frame that
/// overlaps `span`. Frame `m` covers samples `m*hop .. m*hop + win`, zero
/// padded past the end of the signal.
pub fn phoneme_energy_from_waveform(w: &Waveform, span: Range<usize>, params: StftParams) -> Result<f64, MetricsError> {
    if params.win == 0 || params.hop == 0 || params.win < params.hop {
        return Err(MetricsError::InvalidParams("STFT needs win >= hop > 0"));
    }
    if span.start >= span.end || span.end > w.len() {
        return Err(MetricsError::SpanOutOfRange { start: span.start, end: span.end, len: w.len() });
    }
    let first = (span.start + 1).saturating_sub(params.win).div_ceil(params.hop);
    let last = (span.end - 1) / params.hop;
    let window = hann(params.win);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(params.win);
    let bins = params.win / 2 + 1;
    let mut buf = vec![Complex::new(0.0, 0.0); params.win];
    let mut total = 0.0;
    for m in first..=last {
        let start = m * params.hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            let s = w.samples.get(start + i).copied().unwrap_or(0.0);
            *slot = Complex::new(f64::from(s) * window[i], 0.0);
        }
        fft.process(&mut buf);
        total += buf[..bins].iter().map(|c| c.norm_sqr()).sum::<f64>();
    }
    Ok(total / ((last + 1 - first) * bins) as f64)
}
