//! Synthesizer contract, the deterministic mock backend and word
//! segmentation from per-phoneme durations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::InputSequence;
use crate::hash::fnv1a64;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("synthesizer backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("no synthesizable characters in {0:?}")]
    InvalidText(String),
    #[error("phoneme word indices are not contiguous")]
    NonContiguousWordIndices,
    #[error("word {n} out of range 1..={len}")]
    WordOutOfRange { n: usize, len: usize },
    #[error("malformed backend response: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhonemeRecord {
    pub symbol: String,
    /// 0-based word position in the input sequence.
    pub word_index: usize,
    pub duration_frames: u32,
    /// 0 means unvoiced.
    pub pitch_hz: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameParams {
    pub sample_rate: u32,
    pub hop_samples: u32,
    pub mel_bins: usize,
}

impl Default for FrameParams {
    fn default() -> Self {
        Self { sample_rate: 22050, hop_samples: 256, mel_bins: 80 }
    }
}

impl FrameParams {
    pub fn frame_seconds(&self) -> f64 {
        f64::from(self.hop_samples) / f64::from(self.sample_rate)
    }
}

/// Row-major `frames × bins` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelSpectrogram {
    bins: usize,
    data: Vec<f32>,
}

impl MelSpectrogram {
    pub fn new(bins: usize) -> Self {
        Self { bins, data: Vec::new() }
    }

    pub fn from_rows(bins: usize, rows: &[Vec<f32>]) -> Result<Self, SynthError> {
        let mut mel = Self::new(bins);
        for row in rows {
            if row.len() != bins {
                return Err(SynthError::Malformed(format!("mel row has {} bins, expected {bins}", row.len())));
            }
            mel.data.extend_from_slice(row);
        }
        Ok(mel)
    }

    pub fn from_flat(bins: usize, data: Vec<f32>) -> Result<Self, SynthError> {
        if bins == 0 || !data.len().is_multiple_of(bins) {
            return Err(SynthError::Malformed("flat mel length is not a multiple of bins".into()));
        }
        Ok(Self { bins, data })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.data.len().checked_div(self.bins).unwrap_or(0)
    }

    pub fn row(&self, frame: usize) -> &[f32] {
        &self.data[frame * self.bins..(frame + 1) * self.bins]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.bins.max(1))
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.data
    }

    pub fn push_row(&mut self, row: &[f32]) {
        assert_eq!(row.len(), self.bins, "mel row width");
        self.data.extend_from_slice(row);
    }

    pub fn slice_frames(&self, start: usize, end: usize) -> MelSpectrogram {
        Self { bins: self.bins, data: self.data[start * self.bins..end * self.bins].to_vec() }
    }

    pub fn append(&mut self, other: &MelSpectrogram) {
        assert_eq!(other.bins, self.bins, "mel width");
        self.data.extend_from_slice(&other.data);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub input: InputSequence,
    pub phonemes: Vec<PhonemeRecord>,
    pub mel: MelSpectrogram,
    pub frame_params: FrameParams,
}

impl SynthesisResult {
    pub fn total_frames(&self) -> usize {
        self.phonemes.iter().map(|p| p.duration_frames as usize).sum()
    }
}

pub trait Synthesizer: Send + Sync {
    fn synthesize(&self, seq: &InputSequence) -> Result<SynthesisResult, SynthError>;
}

/// Deterministic grapheme-as-phoneme stand-in for a neural acoustic model.
///
/// Each alphabetic character of a word is one phoneme. Its features are a
/// function of `(phoneme, word, next word)` only, hashed with FNV-1a, so a
/// word's rendering depends on exactly one token of future context.
/// Sequence-final words get two extra frames per phoneme, 20 Hz lower pitch
/// and half their energy.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockSynthesizer {
    pub frame_params: FrameParams,
}

pub const END_MARKER: &str = "<END>";

struct MockPhoneme {
    hash: u64,
    record: PhonemeRecord,
}

fn mock_phoneme(symbol: String, word: &str, next: &str, word_index: usize) -> MockPhoneme {
    let h = fnv1a64(format!("{symbol}|{word}|{next}").as_bytes());
    let is_final = next == END_MARKER;
    let mut duration = 2 + (h % 6) as u32;
    let mut pitch = 120.0 + (h % 80) as f64;
    let mut energy = 0.1 + ((h >> 8) % 100) as f64 / 200.0;
    if is_final {
        duration += 2;
        pitch = (pitch - 20.0).max(75.0);
        energy *= 0.5;
    }
    MockPhoneme {
        hash: h,
        record: PhonemeRecord { symbol, word_index, duration_frames: duration, pitch_hz: pitch, energy },
    }
}

impl MockSynthesizer {
    pub fn new(frame_params: FrameParams) -> Self {
        Self { frame_params }
    }

    pub fn mock_synthesize(&self, seq: &InputSequence) -> Result<SynthesisResult, SynthError> {
        let bins = self.frame_params.mel_bins;
        let mut phonemes = Vec::new();
        let mut mel = MelSpectrogram::new(bins);
        let mut row = vec![0f32; bins];
        for (wi, word) in seq.token_surfaces.iter().enumerate() {
            let next = seq.token_surfaces.get(wi + 1).map_or(END_MARKER, String::as_str);
            for c in word.chars().filter(|c| c.is_alphabetic()) {
                let ph = mock_phoneme(c.to_uppercase().collect(), word, next, wi);
                let base = ph.hash % 1000;
                for f in 0..u64::from(ph.record.duration_frames) {
                    for (b, v) in row.iter_mut().enumerate() {
                        *v = ((base + 31 * f + 7 * b as u64) % 1000) as f32 / 1000.0;
                    }
                    mel.push_row(&row);
                }
                phonemes.push(ph.record);
            }
        }
        if phonemes.is_empty() {
            return Err(SynthError::InvalidText(seq.text.clone()));
        }
        Ok(SynthesisResult { input: seq.clone(), phonemes, mel, frame_params: self.frame_params })
    }
}

impl Synthesizer for MockSynthesizer {
    fn synthesize(&self, seq: &InputSequence) -> Result<SynthesisResult, SynthError> {
        self.mock_synthesize(seq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordSpan {
    pub word_index: usize,
    pub frame_start: usize,
    pub frame_end: usize,
}

/// Frame ranges per word from cumulative phoneme durations. Words without
/// phonemes (e.g. bare punctuation) get empty spans, so the spans always
/// cover every word of the input and partition the frames.
pub fn segment_words(result: &SynthesisResult) -> Result<Vec<WordSpan>, SynthError> {
    let words = result.input.len();
    let mut spans: Vec<WordSpan> = (0..words).map(|w| WordSpan { word_index: w, frame_start: 0, frame_end: 0 }).collect();
    let mut cursor = 0usize;
    let mut current = 0usize;
    for p in &result.phonemes {
        if p.word_index < current || p.word_index >= words {
            return Err(SynthError::NonContiguousWordIndices);
        }
        while current < p.word_index {
            spans[current + 1].frame_start = cursor;
            spans[current + 1].frame_end = cursor;
            current += 1;
        }
        cursor += p.duration_frames as usize;
        spans[current].frame_end = cursor;
    }
    for span in spans.iter_mut().skip(current + 1) {
        span.frame_start = cursor;
        span.frame_end = cursor;
    }
    Ok(spans)
}

/// Phonemes and mel frames of word `n` (1-based).
pub fn target_word_features(
    result: &SynthesisResult,
    n: usize,
) -> Result<(Vec<PhonemeRecord>, MelSpectrogram), SynthError> {
    let len = result.input.len();
    if n == 0 || n > len {
        return Err(SynthError::WordOutOfRange { n, len });
    }
    let spans = segment_words(result)?;
    let span = spans[n - 1];
    let phonemes = result.phonemes.iter().filter(|p| p.word_index == n - 1).cloned().collect();
    Ok((phonemes, result.mel.slice_frames(span.frame_start, span.frame_end)))
}
