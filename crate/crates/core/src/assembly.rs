//! Word waveforms: mock vocoding, crossfade concatenation and WAV I/O.

use std::f64::consts::TAU;
use std::fs;
use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::synth::{FrameParams, MelSpectrogram, PhonemeRecord};

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("chunks have different sample rates ({0} vs {1})")]
    RateMismatch(u32, u32),
    #[error("chunk {index} has {len} samples, shorter than the {fade}-sample crossfade")]
    ChunkTooShort { index: usize, len: usize, fade: usize },
    #[error("nothing to concatenate")]
    NoChunks,
    #[error("sample {index} = {value} outside [-1, 1]")]
    ClippedInput { index: usize, value: f32 },
    #[error("unsupported WAV: {0}")]
    UnsupportedWav(String),
    #[error("vocoder unavailable: {0}")]
    VocoderUnavailable(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Wav(#[from] hound::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

pub trait Vocoder: Send + Sync {
    fn vocode(&self, phonemes: &[PhonemeRecord], mel: &MelSpectrogram, params: FrameParams) -> Result<Waveform, AssemblyError>;
}

/// Renders each phoneme frame as a sine at the phoneme's pitch with
/// amplitude `min(1, energy)`. The phase runs continuously across frames and
/// phonemes; unvoiced frames are silent.
pub fn mock_vocode(phonemes: &[PhonemeRecord], params: FrameParams) -> Waveform {
    let sr = f64::from(params.sample_rate);
    let hop = params.hop_samples as usize;
    let total: usize = phonemes.iter().map(|p| p.duration_frames as usize * hop).sum();
    let mut samples = Vec::with_capacity(total);
    let mut phase = 0.0f64;
    for p in phonemes {
        let n = p.duration_frames as usize * hop;
        if p.pitch_hz <= 0.0 {
            samples.extend(std::iter::repeat_n(0.0, n));
            continue;
        }
        let amp = p.energy.clamp(0.0, 1.0);
        let step = TAU * p.pitch_hz / sr;
        for _ in 0..n {
            samples.push((amp * phase.sin()) as f32);
            phase = (phase + step) % TAU;
        }
    }
    Waveform { samples, sample_rate: params.sample_rate }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockVocoder;

impl Vocoder for MockVocoder {
    fn vocode(&self, phonemes: &[PhonemeRecord], _mel: &MelSpectrogram, params: FrameParams) -> Result<Waveform, AssemblyError> {
        Ok(mock_vocode(phonemes, params))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrossfadeSpec {
    pub duration_ms: f64,
}

impl Default for CrossfadeSpec {
    fn default() -> Self {
        Self { duration_ms: 1.0 }
    }
}

impl CrossfadeSpec {
    pub fn samples(&self, sample_rate: u32) -> usize {
        (self.duration_ms.max(0.0) * f64::from(sample_rate) / 1000.0).round() as usize
    }
}

/// Joins chunks by overlapping `L` samples at each boundary with linear
/// equal-gain ramps: `out[i] = a[i] + (b[i] - a[i]) * (i + 1) / (L + 1)`.
/// The result is `Σ len - (count - 1) * L` samples long.
pub fn crossfade_concat(chunks: &[Waveform], spec: CrossfadeSpec) -> Result<Waveform, AssemblyError> {
    let first = chunks.first().ok_or(AssemblyError::NoChunks)?;
    let rate = first.sample_rate;
    let fade = spec.samples(rate);
    for (index, c) in chunks.iter().enumerate() {
        if c.sample_rate != rate {
            return Err(AssemblyError::RateMismatch(rate, c.sample_rate));
        }
        if c.len() < fade {
            return Err(AssemblyError::ChunkTooShort { index, len: c.len(), fade });
        }
    }
    let total: usize = chunks.iter().map(Waveform::len).sum::<usize>() - (chunks.len() - 1) * fade;
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(&first.samples);
    for chunk in &chunks[1..] {
        let start = out.len() - fade;
        for i in 0..fade {
            let a = out[start + i];
            let b = chunk.samples[i];
            let w = (i + 1) as f32 / (fade + 1) as f32;
            // the clamp only absorbs rounding; mathematically the blend lies between a and b
            out[start + i] = (a + (b - a) * w).clamp(a.min(b), a.max(b));
        }
        out.extend_from_slice(&chunk.samples[fade..]);
    }
    Ok(Waveform { samples: out, sample_rate: rate })
}

fn check_range(w: &Waveform) -> Result<(), AssemblyError> {
    match w.samples.iter().position(|s| !(-1.0..=1.0).contains(s)) {
        Some(index) => Err(AssemblyError::ClippedInput { index, value: w.samples[index] }),
        None => Ok(()),
    }
}

/// 16-bit PCM mono WAV bytes. Samples outside [-1, 1] are rejected.
pub fn encode_wav(w: &Waveform) -> Result<Vec<u8>, AssemblyError> {
    check_range(w)?;
    let spec = hound::WavSpec { channels: 1, sample_rate: w.sample_rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut cursor, spec)?;
        for &s in &w.samples {
            writer.write_sample((s * 32767.0).round() as i16)?;
        }
        writer.finalize()?;
    }
    Ok(cursor.into_inner())
}

pub fn decode_wav(bytes: &[u8]) -> Result<Waveform, AssemblyError> {
    let reader = hound::WavReader::new(Cursor::new(bytes))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(AssemblyError::UnsupportedWav(format!(
            "{} channel(s), {} bits {:?}",
            spec.channels, spec.bits_per_sample, spec.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| (f32::from(v) / 32767.0).max(-1.0)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Waveform { samples, sample_rate: spec.sample_rate })
}

/// Writes next to the target and renames over it, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

pub fn write_wav(w: &Waveform, path: &Path) -> Result<(), AssemblyError> {
    let bytes = encode_wav(w)?;
    Ok(write_atomic(path, &bytes)?)
}

pub fn read_wav(path: &Path) -> Result<Waveform, AssemblyError> {
    decode_wav(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn constant(v: f32, len: usize) -> Waveform {
        Waveform::new(vec![v; len], 22050)
    }

    fn phoneme(pitch: f64, frames: u32, energy: f64) -> PhonemeRecord {
        PhonemeRecord { symbol: "A".into(), word_index: 0, duration_frames: frames, pitch_hz: pitch, energy }
    }

    #[test]
    fn vocode_sine() {
        let w = mock_vocode(&[phoneme(440.0, 10, 1.0)], FrameParams::default());
        assert_eq!(w.len(), 2560);
        for (i, s) in w.samples.iter().enumerate().step_by(97) {
            let expected = (TAU * 440.0 * i as f64 / 22050.0).sin();
            assert!((f64::from(*s) - expected).abs() < 1e-4, "sample {i}");
        }
    }

    #[test]
    fn vocode_unvoiced_is_silent() {
        let w = mock_vocode(&[phoneme(0.0, 3, 0.8)], FrameParams::default());
        assert_eq!(w.len(), 768);
        assert!(w.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn vocode_phase_is_continuous() {
        let params = FrameParams::default();
        let w = mock_vocode(&[phoneme(200.0, 4, 0.5), phoneme(300.0, 4, 0.5)], params);
        let bound = 0.5 * TAU * 300.0 / 22050.0 + 1e-6;
        let max_jump = w.samples.windows(2).map(|p| f64::from((p[1] - p[0]).abs())).fold(0.0, f64::max);
        assert!(max_jump <= bound, "{max_jump} > {bound}");
    }

    #[test]
    fn crossfade_length_and_default_fade() {
        assert_eq!(CrossfadeSpec::default().samples(22050), 22);
        let out = crossfade_concat(&[constant(0.1, 100), constant(0.2, 100)], CrossfadeSpec::default()).unwrap();
        assert_eq!(out.len(), 178);
    }

    #[test]
    fn crossfade_ramp_values() {
        let spec = CrossfadeSpec { duration_ms: 3.0 * 1000.0 / 22050.0 };
        assert_eq!(spec.samples(22050), 3);
        let out = crossfade_concat(&[constant(0.0, 5), constant(1.0, 5)], spec).unwrap();
        assert_eq!(&out.samples[2..5], &[0.25, 0.5, 0.75]);
        assert_eq!(out.len(), 7);
    }

    #[test]
    fn crossfade_errors() {
        let spec = CrossfadeSpec::default();
        assert!(matches!(crossfade_concat(&[], spec), Err(AssemblyError::NoChunks)));
        let other = Waveform::new(vec![0.0; 100], 16000);
        assert!(matches!(crossfade_concat(&[constant(0.0, 100), other], spec), Err(AssemblyError::RateMismatch(22050, 16000))));
        assert!(matches!(
            crossfade_concat(&[constant(0.0, 100), constant(0.0, 10)], spec),
            Err(AssemblyError::ChunkTooShort { index: 1, len: 10, fade: 22 })
        ));
    }

    #[test]
    fn wav_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sine.wav");
        let sine: Vec<f32> = (0..2205).map(|i| (TAU * 1000.0 * i as f64 / 22050.0).sin() as f32).collect();
        let w = Waveform::new(sine, 22050);
        write_wav(&w, &path).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 22050);
        let max_err = w.samples.iter().zip(&back.samples).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(max_err <= 1.0 / 32767.0);

        let empty = Waveform::new(vec![], 22050);
        write_wav(&empty, &path).unwrap();
        assert_eq!(read_wav(&path).unwrap(), empty);

        assert!(matches!(encode_wav(&Waveform::new(vec![0.0, 1.5], 22050)), Err(AssemblyError::ClippedInput { index: 1, .. })));
    }

    proptest! {
        #[test]
        fn zero_fade_is_plain_concat(a in prop::collection::vec(-1.0f32..1.0, 0..50), b in prop::collection::vec(-1.0f32..1.0, 0..50)) {
            let out = crossfade_concat(
                &[Waveform::new(a.clone(), 8000), Waveform::new(b.clone(), 8000)],
                CrossfadeSpec { duration_ms: 0.0 },
            ).unwrap();
            prop_assert_eq!(out.samples, [a, b].concat());
        }

        #[test]
        fn constants_preserved_and_associative(c in -1.0f32..1.0, lens in prop::collection::vec(22usize..80, 1..6)) {
            let chunks: Vec<Waveform> = lens.iter().map(|&l| constant(c, l)).collect();
            let spec = CrossfadeSpec::default();
            let all = crossfade_concat(&chunks, spec).unwrap();
            prop_assert!(all.samples.iter().all(|&s| s == c));
            prop_assert_eq!(all.len(), lens.iter().sum::<usize>() - (lens.len() - 1) * 22);
            if chunks.len() >= 3 {
                let left = crossfade_concat(&chunks[..2], spec).unwrap();
                let mut rest = vec![left];
                rest.extend_from_slice(&chunks[2..]);
                prop_assert_eq!(crossfade_concat(&rest, spec).unwrap(), all);
            }
        }

        #[test]
        fn output_bounded_by_inputs(a in prop::collection::vec(-1.0f32..1.0, 22..60), b in prop::collection::vec(-1.0f32..1.0, 22..60)) {
            let peak = a.iter().chain(&b).map(|s| s.abs()).fold(0.0, f32::max);
            let out = crossfade_concat(&[Waveform::new(a, 22050), Waveform::new(b, 22050)], CrossfadeSpec::default()).unwrap();
            prop_assert!(out.samples.iter().all(|s| s.abs() <= peak));
        }
    }
}
