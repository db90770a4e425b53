//! Stage glue: predictions for a corpus, per-utterance rendering of every
//! lookahead condition, evaluation against the full-context rendering,
//! summary tables, sensitivity data and listening-test bundles.
//!
//! Every function here works on one utterance (or reduces over finished
//! per-utterance results in input order), so callers may fan out across
//! threads without changing any output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{crossfade_concat, read_wav, write_atomic, write_wav, AssemblyError, CrossfadeSpec, Vocoder, Waveform};
use crate::corpus::{enumerate_conditions, ConditionConfig, ConditionKind, CorpusError, InputSequence, LookaheadCondition, Utterance};
use crate::metrics::{
    aggregate_report, dtw_align, duration_errors, energy_errors, extract_pitch, phoneme_energy_from_waveform, pitch_mae_cents,
    split_by_prediction_correctness, Feature, FeatureMAEReport, LabeledError, MetricsError, PitchParams, StftParams,
};
use crate::mushra::{MushraCondition, MushraError, MushraStats, Trial, TrialBundle, TrialClip};
use crate::predictor::{
    predict_lookahead, prediction_rate, sample_length_matched_random, word_length_distribution, LengthBins, LengthHistogram, NextWordSampler,
    Prediction, PredictionCache, PredictionRecord, PredictionSource, PredictorError, WordFrequencyList, DEFAULT_RETRY_BUDGET, DEFAULT_TOP_K,
};
use crate::rng;
use crate::sensitivity::{
    jnd_classify, max_deviation, pearson, phoneme_deviation, range_percentiles, sentence_deviation_scores, ConditionSet, JndRule,
    JndThresholds, RangeFraction, SensitivityError, SentenceDeviation, SentenceMaxima,
};
use crate::synth::{target_word_features, FrameParams, MelSpectrogram, PhonemeRecord, SynthError, SynthesisResult, Synthesizer};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Sensitivity(#[from] SensitivityError),
    #[error(transparent)]
    Mushra(#[from] MushraError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),
    #[error("unknown sentence id {0:?}")]
    UnknownSentenceId(String),
    #[error("malformed mel file {0}")]
    MalformedMel(PathBuf),
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergySource {
    /// Per-phoneme energy reported by the synthesizer.
    #[default]
    Backend,
    /// STFT energy of the vocoded word, measured over each phoneme's samples.
    Waveform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub conditions: ConditionConfig,
    pub top_k: usize,
    pub retry_budget: usize,
    pub seed: u64,
    pub length_bins: LengthBins,
    pub frame: FrameParams,
    pub crossfade: CrossfadeSpec,
    pub stft: StftParams,
    pub pitch: PitchParams,
    pub energy_source: EnergySource,
    pub jnd: JndThresholds,
    /// Synthesis/vocoder attempts per item before the item is skipped.
    pub attempts: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            conditions: ConditionConfig::default(),
            top_k: DEFAULT_TOP_K,
            retry_budget: DEFAULT_RETRY_BUDGET,
            seed: 0,
            length_bins: LengthBins::default(),
            frame: FrameParams::default(),
            crossfade: CrossfadeSpec::default(),
            stft: StftParams::default(),
            pitch: PitchParams::default(),
            energy_source: EnergySource::Backend,
            jnd: JndThresholds::default(),
            attempts: 2,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.conditions.k == 0 {
            return Err(PipelineError::InvalidConfig("predicted and random conditions need k >= 1"));
        }
        if self.conditions.num_samples == 0 {
            return Err(PipelineError::InvalidConfig("num_samples must be at least 1"));
        }
        if self.attempts == 0 {
            return Err(PipelineError::InvalidConfig("attempts must be at least 1"));
        }
        Ok(())
    }

    /// Pitch analysis on the mel hop, so DTW frame indices address pitch frames.
    fn pitch_params(&self, hop_samples: u32, num_frames: usize) -> PitchParams {
        PitchParams { hop_samples, num_frames: Some(num_frames), ..self.pitch }
    }
}

fn prompt(utt: &Utterance, n: usize) -> Vec<String> {
    utt.surfaces().take(n).map(str::to_string).collect()
}

/// Language-model lookahead samples for every token; entry `n - 1` holds
/// the space-joined samples for token `n`.
pub fn predict_utterance(utt: &Utterance, backend: &dyn NextWordSampler, cfg: &PipelineConfig) -> Result<Vec<Vec<String>>, PredictorError> {
    (1..=utt.len())
        .map(|n| {
            let mut rng = rng::for_item(cfg.seed, &["pred", &utt.id, &n.to_string()]);
            predict_lookahead(backend, &prompt(utt, n), cfg.conditions.k, cfg.conditions.num_samples, cfg.top_k, cfg.retry_budget, &mut rng)
        })
        .collect()
}

/// Length distribution of every language-model word in the corpus.
pub fn lm_length_histogram<'a>(samples: impl IntoIterator<Item = &'a String>, bins: &LengthBins) -> Result<LengthHistogram, PredictorError> {
    let words: Vec<Prediction> = samples
        .into_iter()
        .flat_map(|s| s.split_whitespace())
        .map(|w| Prediction { word: w.to_string(), sample_index: 0, source: PredictionSource::LanguageModel })
        .collect();
    word_length_distribution(&words, bins)
}

/// Length-matched random lookahead strings for every token.
pub fn random_utterance(utt: &Utterance, hist: &LengthHistogram, list: &WordFrequencyList, cfg: &PipelineConfig) -> Result<Vec<Vec<String>>, PredictorError> {
    let (k, samples) = (cfg.conditions.k, cfg.conditions.num_samples);
    (1..=utt.len())
        .map(|n| {
            let mut rng = rng::for_item(cfg.seed, &["rand", &utt.id, &n.to_string()]);
            let words = sample_length_matched_random(hist, list, k * samples, &mut rng)?;
            Ok(words.chunks(k).map(|c| c.iter().map(|p| p.word.as_str()).collect::<Vec<_>>().join(" ")).collect())
        })
        .collect()
}

pub fn build_records(utts: &[Utterance], lm: &[Vec<Vec<String>>], random: &[Vec<Vec<String>>]) -> Vec<PredictionRecord> {
    let mut out = Vec::new();
    for ((utt, pred), rand) in utts.iter().zip(lm).zip(random) {
        for (i, (p, r)) in pred.iter().zip(rand).enumerate() {
            out.push(PredictionRecord { utterance: utt.id.clone(), n: i + 1, pred: p.clone(), rand: r.clone() });
        }
    }
    out
}

/// Sequential convenience over [`predict_utterance`], [`lm_length_histogram`]
/// and [`random_utterance`].
pub fn generate_predictions(
    utts: &[Utterance],
    backend: &dyn NextWordSampler,
    list: &WordFrequencyList,
    cfg: &PipelineConfig,
) -> Result<Vec<PredictionRecord>, PipelineError> {
    cfg.validate()?;
    let lm = utts.iter().map(|u| predict_utterance(u, backend, cfg)).collect::<Result<Vec<_>, _>>()?;
    let hist = lm_length_histogram(lm.iter().flatten().flatten(), &cfg.length_bins)?;
    let random = utts.iter().map(|u| random_utterance(u, &hist, list, cfg)).collect::<Result<Vec<_>, _>>()?;
    Ok(build_records(utts, &lm, &random))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRates {
    pub language_model: f64,
    pub random: f64,
    /// Predicted slots per source (tokens with a following word, times samples).
    pub slots: usize,
}

/// Compares the first word of every sample with the true next word. The
/// last token of an utterance has no next word and is not counted.
pub fn prediction_rates(utts: &[Utterance], cache: &PredictionCache) -> Result<PredictionRates, PipelineError> {
    let (mut pred, mut rand, mut truth_p, mut truth_r) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for utt in utts {
        for n in 1..utt.len() {
            let record = cache.get(&utt.id, n).ok_or_else(|| CorpusError::MissingPredictions { utterance: utt.id.clone(), n })?;
            let truth = utt.surface(n + 1).unwrap_or_default();
            for s in &record.pred {
                pred.push(s.split_whitespace().next().unwrap_or_default());
                truth_p.push(truth);
            }
            for s in &record.rand {
                rand.push(s.split_whitespace().next().unwrap_or_default());
                truth_r.push(truth);
            }
        }
    }
    Ok(PredictionRates { language_model: prediction_rate(&pred, &truth_p)?, random: prediction_rate(&rand, &truth_r)?, slots: pred.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenFeatures {
    pub n: usize,
    /// Words after the target in the synthesized input.
    pub lookahead: Vec<String>,
    pub phonemes: Vec<PhonemeRecord>,
    pub mel_frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measured_energy: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionFeatures {
    pub condition: LookaheadCondition,
    pub tokens: Vec<TokenFeatures>,
}

/// One condition of one utterance: the target-word features of every token,
/// their mel frames in token order, and the crossfaded word audio.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionRender {
    pub features: ConditionFeatures,
    pub mel: MelSpectrogram,
    pub audio: Waveform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceFeatures {
    pub utterance_id: String,
    pub words: Vec<String>,
    pub conditions: Vec<ConditionFeatures>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRender {
    pub utterance_id: String,
    pub words: Vec<String>,
    pub conditions: Vec<ConditionRender>,
}

impl UtteranceRender {
    pub fn condition(&self, key: &str) -> Option<&ConditionRender> {
        self.conditions.iter().find(|c| c.features.condition.key() == key)
    }

    pub fn full(&self) -> Option<&ConditionRender> {
        self.conditions.iter().find(|c| c.features.condition.kind == ConditionKind::Full)
    }

    pub fn features(&self) -> UtteranceFeatures {
        UtteranceFeatures {
            utterance_id: self.utterance_id.clone(),
            words: self.words.clone(),
            conditions: self.conditions.iter().map(|c| c.features.clone()).collect(),
        }
    }
}

fn with_attempts<T, E>(attempts: usize, mut f: impl FnMut() -> Result<T, E>) -> Result<T, E> {
    let mut last = f();
    for _ in 1..attempts {
        if last.is_ok() {
            break;
        }
        last = f();
    }
    last
}

fn measure_energy(chunk: &Waveform, phonemes: &[PhonemeRecord], hop: usize, stft: StftParams) -> Result<Vec<f64>, MetricsError> {
    let mut start = 0usize;
    phonemes
        .iter()
        .map(|p| {
            let end = (start + p.duration_frames as usize * hop).min(chunk.len());
            let e = phoneme_energy_from_waveform(chunk, start..end, stft);
            start += p.duration_frames as usize * hop;
            e
        })
        .collect()
}

/// Synthesizes every lookahead condition of `utt`, keeps the target word of
/// each sequence, vocodes it on its own and crossfades the words in token
/// order. The full-context sequence is synthesized once and split into
/// words the same way.
pub fn render_utterance(
    utt: &Utterance,
    cache: &PredictionCache,
    synth: &dyn Synthesizer,
    vocoder: &dyn Vocoder,
    cfg: &PipelineConfig,
) -> Result<UtteranceRender, PipelineError> {
    let mut groups: Vec<(LookaheadCondition, Vec<InputSequence>)> = Vec::new();
    for seq in enumerate_conditions(utt, &cfg.conditions, cache)? {
        match groups.iter_mut().find(|g| g.0 == seq.condition) {
            Some(g) => g.1.push(seq),
            None => groups.push((seq.condition, vec![seq])),
        }
    }
    let mut conditions = Vec::with_capacity(groups.len());
    for (condition, seqs) in groups {
        let mut tokens = Vec::with_capacity(utt.len());
        let mut mel = MelSpectrogram::new(cfg.frame.mel_bins);
        let mut chunks = Vec::with_capacity(utt.len());
        let results = seqs.iter().map(|seq| with_attempts(cfg.attempts, || synth.synthesize(seq))).collect::<Result<Vec<_>, _>>()?;
        let jobs: Vec<(usize, &SynthesisResult)> = if condition.kind == ConditionKind::Full {
            (1..=utt.len()).map(|n| (n, &results[0])).collect()
        } else {
            seqs.iter().zip(&results).map(|(seq, r)| (seq.target_index, r)).collect()
        };
        for (n, result) in jobs {
            let (phonemes, word_mel) = target_word_features(result, n)?;
            let mut measured_energy = None;
            if !phonemes.is_empty() {
                let chunk = with_attempts(cfg.attempts, || vocoder.vocode(&phonemes, &word_mel, result.frame_params))?;
                if cfg.energy_source == EnergySource::Waveform {
                    measured_energy = Some(measure_energy(&chunk, &phonemes, result.frame_params.hop_samples as usize, cfg.stft)?);
                }
                chunks.push(chunk);
            }
            if mel.bins() != word_mel.bins() && mel.frames() == 0 {
                mel = MelSpectrogram::new(word_mel.bins());
            }
            mel.append(&word_mel);
            tokens.push(TokenFeatures {
                n,
                lookahead: result.input.token_surfaces[n.min(result.input.len())..].to_vec(),
                mel_frames: word_mel.frames(),
                phonemes,
                measured_energy,
            });
        }
        let audio = crossfade_concat(&chunks, cfg.crossfade)?;
        conditions.push(ConditionRender { features: ConditionFeatures { condition, tokens }, mel, audio });
    }
    Ok(UtteranceRender { utterance_id: utt.id.clone(), words: utt.surfaces().map(str::to_string).collect(), conditions })
}

/// One row of the per-phoneme error log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhonemeError {
    pub utterance: String,
    pub n: usize,
    pub condition: ConditionKind,
    pub sample: usize,
    pub phoneme: String,
    pub dur_err: f64,
    pub energy_err: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentencePitch {
    pub utterance_id: String,
    pub condition: ConditionKind,
    pub sample: usize,
    pub cents_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UtteranceEval {
    pub utterance_id: String,
    pub phonemes: Vec<PhonemeError>,
    pub pitch: Vec<SentencePitch>,
    pub warnings: Vec<String>,
}

fn energy_view(token: &TokenFeatures, source: EnergySource) -> Vec<PhonemeRecord> {
    match (&token.measured_energy, source) {
        (Some(measured), EnergySource::Waveform) => {
            token.phonemes.iter().zip(measured).map(|(p, e)| PhonemeRecord { energy: *e, ..p.clone() }).collect()
        }
        _ => token.phonemes.clone(),
    }
}

/// Per-phoneme duration/energy errors of every token and per-sentence pitch
/// error of every condition, all against the full-context rendering.
pub fn evaluate_utterance(render: &UtteranceRender, cfg: &PipelineConfig) -> Result<UtteranceEval, PipelineError> {
    let full = render.full().ok_or_else(|| PipelineError::MissingArtifact(PathBuf::from(format!("{}/full", render.utterance_id))))?;
    let mut eval = UtteranceEval { utterance_id: render.utterance_id.clone(), ..Default::default() };
    let hop = cfg.frame.hop_samples;
    let reference_track = extract_pitch(&full.audio, &cfg.pitch_params(hop, full.mel.frames()))?;

    for cond in render.conditions.iter().filter(|c| c.features.condition.kind != ConditionKind::Full) {
        let condition = cond.features.condition;
        for (token, reference) in cond.features.tokens.iter().zip(&full.features.tokens) {
            let test_e = energy_view(token, cfg.energy_source);
            let ref_e = energy_view(reference, cfg.energy_source);
            let pairing = duration_errors(&token.phonemes, &reference.phonemes).and_then(|d| Ok((d, energy_errors(&test_e, &ref_e)?)));
            let (dur, energy) = match pairing {
                Ok(v) => v,
                Err(e) => {
                    eval.warnings.push(format!("{} token {} {}: {e}", render.utterance_id, token.n, condition.key()));
                    continue;
                }
            };
            let labels = condition.kind == ConditionKind::Predicted && token.n < render.words.len();
            for ((p, d), e) in token.phonemes.iter().zip(dur).zip(energy) {
                eval.phonemes.push(PhonemeError {
                    utterance: render.utterance_id.clone(),
                    n: token.n,
                    condition: condition.kind,
                    sample: condition.sample_index,
                    phoneme: p.symbol.clone(),
                    dur_err: d,
                    energy_err: e,
                    predicted: labels.then(|| token.lookahead.first().cloned()).flatten(),
                    truth: labels.then(|| render.words[token.n].clone()),
                });
            }
        }

        if cond.mel.frames() == 0 {
            continue;
        }
        let (path, _) = dtw_align(&cond.mel, &full.mel)?;
        let track = extract_pitch(&cond.audio, &cfg.pitch_params(hop, cond.mel.frames()))?;
        match pitch_mae_cents(&track, &reference_track, &path) {
            Ok(cents_mae) => eval.pitch.push(SentencePitch {
                utterance_id: render.utterance_id.clone(),
                condition: condition.kind,
                sample: condition.sample_index,
                cents_mae,
            }),
            Err(e) => eval.warnings.push(format!("{} {}: {e}", render.utterance_id, condition.key())),
        }
    }
    Ok(eval)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    /// `None` when no unit fell into the row.
    pub report: Option<FeatureMAEReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub duration: Vec<TableRow>,
    pub energy: Vec<TableRow>,
    pub pitch: Vec<TableRow>,
}

impl Summary {
    pub fn row(&self, feature: Feature, label: &str) -> Option<&FeatureMAEReport> {
        let rows = match feature {
            Feature::Duration => &self.duration,
            Feature::Energy => &self.energy,
            Feature::PitchCents => &self.pitch,
        };
        rows.iter().find(|r| r.label == label).and_then(|r| r.report.as_ref())
    }
}

pub fn row_labels(k: usize) -> [String; 6] {
    ["k=0".into(), format!("GT k={k}"), format!("Pred k={k}"), format!("Rand k={k}"), "Correct pred.".into(), "Incorrect pred.".into()]
}

const KINDS: [ConditionKind; 4] = [ConditionKind::Unknown, ConditionKind::GroundTruth, ConditionKind::Predicted, ConditionKind::Random];

/// Reduces per-utterance evaluations to the duration and energy tables
/// (four conditions plus the correct/incorrect prediction split) and the
/// pitch table (four conditions, one unit per sentence and sample).
pub fn summarize(evals: &[UtteranceEval], k: usize) -> Result<Summary, PipelineError> {
    let labels = row_labels(k);
    let phoneme_table = |feature: Feature, value: fn(&PhonemeError) -> f64| -> Result<Vec<TableRow>, PipelineError> {
        let mut rows: Vec<TableRow> = KINDS
            .iter()
            .zip(&labels)
            .map(|(kind, label)| {
                let values: Vec<f64> = evals.iter().flat_map(|e| &e.phonemes).filter(|p| p.condition == *kind).map(value).collect();
                TableRow { label: label.clone(), report: aggregate_report(feature, &values).ok() }
            })
            .collect();
        let labelled: Vec<LabeledError> = evals
            .iter()
            .flat_map(|e| &e.phonemes)
            .filter(|p| p.condition == ConditionKind::Predicted && p.truth.is_some())
            .map(|p| LabeledError { value: value(p), predicted: p.predicted.clone(), truth: p.truth.clone() })
            .collect();
        let split = split_by_prediction_correctness(feature, &labelled)?;
        rows.push(TableRow { label: labels[4].clone(), report: split.correct });
        rows.push(TableRow { label: labels[5].clone(), report: split.incorrect });
        Ok(rows)
    };
    let pitch = KINDS
        .iter()
        .zip(&labels)
        .map(|(kind, label)| {
            let values: Vec<f64> = evals.iter().flat_map(|e| &e.pitch).filter(|p| p.condition == *kind).map(|p| p.cents_mae).collect();
            TableRow { label: label.clone(), report: aggregate_report(Feature::PitchCents, &values).ok() }
        })
        .collect();
    Ok(Summary { duration: phoneme_table(Feature::Duration, |p| p.dur_err)?, energy: phoneme_table(Feature::Energy, |p| p.energy_err)?, pitch })
}

pub fn table_csv(rows: &[TableRow]) -> String {
    let mut out = String::from("condition,mae,std,count\n");
    for row in rows {
        match &row.report {
            Some(r) => out.push_str(&format!("{},{:.6},{:.6},{}\n", row.label, r.mae, r.std, r.count)),
            None => out.push_str(&format!("{},,,0\n", row.label)),
        }
    }
    out
}

pub fn pitch_rows_csv(evals: &[UtteranceEval]) -> String {
    let mut out = String::from("utterance_id,condition,sample,cents_mae\n");
    for p in evals.iter().flat_map(|e| &e.pitch) {
        out.push_str(&format!("{},{},{},{:.6}\n", p.utterance_id, p.condition.label(), p.sample, p.cents_mae));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhonemeRange {
    pub phoneme_id: String,
    pub feature: Feature,
    pub range: f64,
    /// `None` for features without a JND threshold.
    pub below_jnd: Option<bool>,
    pub rule: Option<JndRule>,
}

fn feature_value(p: &PhonemeRecord, feature: Feature) -> f64 {
    match feature {
        Feature::Duration => f64::from(p.duration_frames),
        Feature::Energy => p.energy,
        Feature::PitchCents => p.pitch_hz,
    }
}

const FEATURES: [Feature; 3] = [Feature::Duration, Feature::Energy, Feature::PitchCents];

/// Conditions entering the range analysis: every predicted and random
/// sample, ground truth and full context.
fn range_conditions(render: &UtteranceRender) -> Vec<&ConditionRender> {
    render.conditions.iter().filter(|c| c.features.condition.kind != ConditionKind::Unknown).collect()
}

/// Feature range of every phoneme across the non-`k=0` conditions, with
/// JND classification. Phonemes whose symbols differ between conditions
/// are skipped.
pub fn phoneme_ranges(render: &UtteranceRender, cfg: &PipelineConfig) -> Result<Vec<PhonemeRange>, PipelineError> {
    let conditions = range_conditions(render);
    let full = render.full().ok_or_else(|| PipelineError::MissingArtifact(PathBuf::from(format!("{}/full", render.utterance_id))))?;
    let mut out = Vec::new();
    for (ti, full_token) in full.features.tokens.iter().enumerate() {
        for (j, full_ph) in full_token.phonemes.iter().enumerate() {
            let per_condition: Option<Vec<(String, &PhonemeRecord)>> = conditions
                .iter()
                .map(|c| {
                    c.features.tokens.get(ti)?.phonemes.get(j).filter(|p| p.symbol == full_ph.symbol).map(|p| (c.features.condition.key(), p))
                })
                .collect();
            let Some(per_condition) = per_condition else { continue };
            let phoneme_id = format!("{}:{}:{}", render.utterance_id, full_token.n, j + 1);
            for feature in FEATURES {
                let entries = per_condition.iter().map(|(key, p)| (key.clone(), feature_value(p, feature))).collect();
                let set = ConditionSet::new(entries, cfg.conditions.num_samples)?;
                let range = set.range(feature)?;
                let verdict = match feature {
                    Feature::Energy => None,
                    _ => Some(jnd_classify(range, feature, Some(feature_value(full_ph, Feature::Duration)), &cfg.jnd)?),
                };
                out.push(PhonemeRange { phoneme_id: phoneme_id.clone(), feature, range, below_jnd: verdict.map(|v| v.below_jnd), rule: verdict.map(|v| v.rule) });
            }
        }
    }
    Ok(out)
}

pub fn ranges_csv(ranges: &[PhonemeRange]) -> String {
    let mut out = String::from("phoneme_id,feature,range,below_jnd\n");
    for r in ranges {
        let below = r.below_jnd.map_or(String::new(), |b| b.to_string());
        out.push_str(&format!("{},{},{:.6},{}\n", r.phoneme_id, r.feature.name(), r.range, below));
    }
    out
}

/// Fraction of phoneme ranges at or below the pitch and duration JND
/// thresholds.
pub fn jnd_fractions(ranges: &[PhonemeRange], thresholds: &JndThresholds) -> Result<Vec<(Feature, RangeFraction)>, PipelineError> {
    let mut out = Vec::new();
    for (feature, threshold) in [(Feature::PitchCents, thresholds.pitch_cents), (Feature::Duration, thresholds.duration_frames)] {
        let values: Vec<f64> = ranges.iter().filter(|r| r.feature == feature).map(|r| r.range).collect();
        out.push((feature, range_percentiles(&values, &[threshold])?[0]));
    }
    Ok(out)
}

/// Largest deviation from full context over all samples and phonemes of the
/// predicted and of the random condition.
pub fn sentence_maxima(render: &UtteranceRender) -> Result<Vec<SentenceMaxima>, PipelineError> {
    let full = render.full().ok_or_else(|| PipelineError::MissingArtifact(PathBuf::from(format!("{}/full", render.utterance_id))))?;
    let mut out = Vec::new();
    for kind in [ConditionKind::Predicted, ConditionKind::Random] {
        let mut per_feature = [Vec::new(), Vec::new(), Vec::new()];
        for cond in render.conditions.iter().filter(|c| c.features.condition.kind == kind) {
            for (token, reference) in cond.features.tokens.iter().zip(&full.features.tokens) {
                for (p, r) in token.phonemes.iter().zip(&reference.phonemes).filter(|(p, r)| p.symbol == r.symbol) {
                    for (slot, feature) in per_feature.iter_mut().zip(FEATURES) {
                        slot.push(phoneme_deviation(feature, feature_value(p, feature), feature_value(r, feature))?);
                    }
                }
            }
        }
        out.push(SentenceMaxima {
            utterance_id: render.utterance_id.clone(),
            condition: kind,
            duration: max_deviation(&per_feature[0]),
            energy: max_deviation(&per_feature[1]),
            pitch_cents: max_deviation(&per_feature[2]),
        });
    }
    Ok(out)
}

/// Combined deviation scores with listening-test means attached where
/// available, and their correlation when at least two sentences have both.
pub fn deviation_vs_mushra(maxima: &[SentenceMaxima], stats: Option<&MushraStats>) -> Result<(Vec<SentenceDeviation>, Option<f64>), PipelineError> {
    let mut scores = sentence_deviation_scores(maxima)?;
    if let Some(stats) = stats {
        let means: BTreeMap<(&str, ConditionKind), f64> = stats
            .sentences
            .iter()
            .filter_map(|s| {
                let kind = match s.condition {
                    MushraCondition::PredK1 => ConditionKind::Predicted,
                    MushraCondition::RandK1 => ConditionKind::Random,
                    _ => return None,
                };
                Some(((s.utterance_id.as_str(), kind), s.mean?))
            })
            .collect();
        for s in &mut scores {
            s.mushra_mean = means.get(&(s.utterance_id.as_str(), s.condition)).copied();
        }
    }
    let (x, y): (Vec<f64>, Vec<f64>) = scores.iter().filter_map(|s| Some((s.combined_score, s.mushra_mean?))).unzip();
    let r = if x.len() >= 2 { pearson(&x, &y).ok() } else { None };
    Ok((scores, r))
}

pub fn sentences_csv(scores: &[SentenceDeviation]) -> String {
    let mut out = String::from("utterance_id,condition,combined_score,mushra_mean\n");
    for s in scores {
        let mean = s.mushra_mean.map_or(String::new(), |m| format!("{m:.6}"));
        out.push_str(&format!("{},{},{:.6},{}\n", s.utterance_id, s.condition.label(), s.combined_score, mean));
    }
    out
}

const MEL_MAGIC: &[u8; 4] = b"PGML";

/// `PGML`, bins and frames as little-endian `u32`, then row-major `f32` LE.
pub fn encode_mel(mel: &MelSpectrogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + mel.as_flat().len() * 4);
    out.extend_from_slice(MEL_MAGIC);
    out.extend_from_slice(&(mel.bins() as u32).to_le_bytes());
    out.extend_from_slice(&(mel.frames() as u32).to_le_bytes());
    for v in mel.as_flat() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_mel(bytes: &[u8]) -> Option<MelSpectrogram> {
    if bytes.len() < 12 || &bytes[..4] != MEL_MAGIC {
        return None;
    }
    let bins = u32::from_le_bytes(bytes[4..8].try_into().ok()?) as usize;
    let frames = u32::from_le_bytes(bytes[8..12].try_into().ok()?) as usize;
    let body = &bytes[12..];
    if body.len() != bins.checked_mul(frames)?.checked_mul(4)? {
        return None;
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    MelSpectrogram::from_flat(bins, data).ok()
}

/// File-system name for an utterance id.
pub fn safe_name(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' }).collect()
}

/// Artifact paths under an output directory:
///
/// ```text
/// predictions.jsonl
/// features/<utt>.json      mels/<utt>/<cond>.mel      audio/<utt>/<cond>.wav
/// eval/  sensitivity/  mushra/  errors.jsonl
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactLayout {
    pub root: PathBuf,
}

impl ArtifactLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions.jsonl")
    }

    pub fn errors(&self) -> PathBuf {
        self.root.join("errors.jsonl")
    }

    pub fn features(&self, utt: &str) -> PathBuf {
        self.root.join("features").join(format!("{}.json", safe_name(utt)))
    }

    pub fn mel(&self, utt: &str, key: &str) -> PathBuf {
        self.root.join("mels").join(safe_name(utt)).join(format!("{key}.mel"))
    }

    pub fn audio(&self, utt: &str, key: &str) -> PathBuf {
        self.root.join("audio").join(safe_name(utt)).join(format!("{key}.wav"))
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn sensitivity_dir(&self) -> PathBuf {
        self.root.join("sensitivity")
    }

    pub fn mushra_dir(&self) -> PathBuf {
        self.root.join("mushra")
    }

    pub fn save_render(&self, render: &UtteranceRender) -> Result<(), PipelineError> {
        let id = &render.utterance_id;
        for dir in [self.root.join("features"), self.root.join("mels").join(safe_name(id)), self.root.join("audio").join(safe_name(id))] {
            std::fs::create_dir_all(dir)?;
        }
        for c in &render.conditions {
            let key = c.features.condition.key();
            write_atomic(&self.mel(id, &key), &encode_mel(&c.mel))?;
            write_wav(&c.audio, &self.audio(id, &key))?;
        }
        write_atomic(&self.features(id), &serde_json::to_vec(&render.features())?)?;
        Ok(())
    }

    pub fn load_render(&self, utt: &str) -> Result<UtteranceRender, PipelineError> {
        let path = self.features(utt);
        if !path.exists() {
            return Err(PipelineError::MissingArtifact(path));
        }
        let features: UtteranceFeatures = serde_json::from_slice(&std::fs::read(&path)?)?;
        let mut conditions = Vec::with_capacity(features.conditions.len());
        for c in features.conditions {
            let key = c.condition.key();
            let mel_path = self.mel(utt, &key);
            let bytes = std::fs::read(&mel_path).map_err(|_| PipelineError::MissingArtifact(mel_path.clone()))?;
            let mel = decode_mel(&bytes).ok_or(PipelineError::MalformedMel(mel_path))?;
            let wav_path = self.audio(utt, &key);
            if !wav_path.exists() {
                return Err(PipelineError::MissingArtifact(wav_path));
            }
            conditions.push(ConditionRender { features: c, mel, audio: read_wav(&wav_path)? });
        }
        Ok(UtteranceRender { utterance_id: features.utterance_id, words: features.words, conditions })
    }
}

/// Condition keys feeding each listening-test clip; the hidden reference is
/// the full-context audio again.
pub const MUSHRA_SOURCES: [(MushraCondition, &str); 5] = [
    (MushraCondition::HiddenReference, "full"),
    (MushraCondition::KZero, "k0"),
    (MushraCondition::GroundTruthK1, "gt"),
    (MushraCondition::PredK1, "pred1"),
    (MushraCondition::RandK1, "rand1"),
];

/// Copies the rendered audio of each sentence into `out_dir/trial_XX/` as
/// `reference.wav` plus five blinded `clipN.wav` files in a seeded random
/// order, and writes `trials.json`.
pub fn export_mushra_bundle(layout: &ArtifactLayout, utterance_ids: &[String], out_dir: &Path, seed: u64) -> Result<TrialBundle, PipelineError> {
    for id in utterance_ids {
        if !layout.features(id).exists() {
            return Err(PipelineError::UnknownSentenceId(id.clone()));
        }
        for (_, key) in MUSHRA_SOURCES {
            let path = layout.audio(id, key);
            if !path.exists() {
                return Err(PipelineError::MissingArtifact(path));
            }
        }
    }
    std::fs::create_dir_all(out_dir)?;
    let mut trials = Vec::with_capacity(utterance_ids.len());
    for (i, id) in utterance_ids.iter().enumerate() {
        let trial_id = format!("trial_{:02}", i + 1);
        std::fs::create_dir_all(out_dir.join(&trial_id))?;
        let permutation_seed = rng::for_item(seed, &["mushra", id]).next_u64();
        let mut order = MUSHRA_SOURCES;
        order.shuffle(&mut rng::seeded(permutation_seed));
        let reference = format!("{trial_id}/reference.wav");
        write_atomic(&out_dir.join(&reference), &std::fs::read(layout.audio(id, "full"))?)?;
        let mut clips = Vec::with_capacity(5);
        for (j, (condition, key)) in order.iter().enumerate() {
            let file = format!("{trial_id}/clip{}.wav", j + 1);
            write_atomic(&out_dir.join(&file), &std::fs::read(layout.audio(id, key))?)?;
            clips.push(TrialClip { condition: *condition, file });
        }
        trials.push(Trial { trial_id, utterance_id: id.clone(), reference, clips, permutation_seed });
    }
    let bundle = TrialBundle { trials };
    write_atomic(&out_dir.join("trials.json"), &serde_json::to_vec_pretty(&bundle)?)?;
    Ok(bundle)
}
