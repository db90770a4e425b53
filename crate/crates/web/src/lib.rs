//! Browser bindings for the mock pipeline: render one sentence under every
//! lookahead condition, track the pitch of the joined audio, and align a
//! condition against full context.
//!
//! Every export takes plain arguments and returns a JSON string so the page
//! needs no generated TypeScript types.

use prosogap::corpus::{parse_corpus, ConditionConfig};
use prosogap::metrics::{dtw_align, extract_pitch, pitch_mae_cents, PitchParams};
use prosogap::pipeline::{evaluate_utterance, generate_predictions, render_utterance, PipelineConfig, UtteranceRender};
use prosogap::predictor::{train_ngram, PredictionCache, WordFrequencyList};
use prosogap::{assembly::MockVocoder, synth::MockSynthesizer, ConditionKind, Utterance};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const TRAINING_TEXT: &str = include_str!("../../../data/demo/corpus.txt");

fn config(seed: u64, num_samples: usize) -> PipelineConfig {
    PipelineConfig { seed, conditions: ConditionConfig { k: 1, num_samples: num_samples.clamp(1, 10) }, ..Default::default() }
}

/// Trains the n-gram predictor on the demo corpus plus the sentence itself.
fn render(sentence: &str, cfg: &PipelineConfig) -> Result<UtteranceRender, String> {
    let utt = Utterance::new("demo", sentence).map_err(|e| e.to_string())?;
    let mut training: Vec<String> = parse_corpus(TRAINING_TEXT).map_err(|e| e.to_string())?.iter().map(|u| u.surfaces().collect::<Vec<_>>().join(" ")).collect();
    training.push(utt.surfaces().collect::<Vec<_>>().join(" "));
    let model = train_ngram(&training.join("\n"), 3).map_err(|e| e.to_string())?;
    let records = generate_predictions(std::slice::from_ref(&utt), &model, &WordFrequencyList::builtin(), cfg).map_err(|e| e.to_string())?;
    render_utterance(&utt, &PredictionCache::from_records(records), &MockSynthesizer::default(), &MockVocoder, cfg).map_err(|e| e.to_string())
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Per-condition word features and errors against full context.
pub fn conditions_json(sentence: &str, seed: u64, num_samples: usize) -> Result<Value, String> {
    let cfg = config(seed, num_samples);
    let r = render(sentence, &cfg)?;
    let eval = evaluate_utterance(&r, &cfg).map_err(|e| e.to_string())?;
    let conditions: Vec<Value> = r
        .conditions
        .iter()
        .map(|c| {
            let cond = c.features.condition;
            let errs = || eval.phonemes.iter().filter(move |p| p.condition == cond.kind && p.sample == cond.sample_index);
            let pitch = eval.pitch.iter().find(|p| p.condition == cond.kind && p.sample == cond.sample_index).map(|p| p.cents_mae);
            let words: Vec<Value> = c
                .features
                .tokens
                .iter()
                .map(|t| {
                    json!({
                        "n": t.n,
                        "lookahead": t.lookahead,
                        "frames": t.mel_frames,
                        "pitch_hz": mean(t.phonemes.iter().map(|p| p.pitch_hz)),
                        "energy": mean(t.phonemes.iter().map(|p| p.energy)),
                    })
                })
                .collect();
            let full_pitch = if cond.kind == ConditionKind::Full { Some(0.0) } else { pitch };
            json!({
                "key": cond.key(),
                "kind": cond.kind.label(),
                "duration_mae": mean(errs().map(|p| p.dur_err)),
                "energy_mae": mean(errs().map(|p| p.energy_err)),
                "pitch_mae_cents": full_pitch,
                "audio_seconds": c.audio.duration_seconds(),
                "words": words,
            })
        })
        .collect();
    Ok(json!({ "words": r.words, "conditions": conditions }))
}

/// Autocorrelation pitch of one condition's crossfaded audio and of the
/// full-context audio, on the mel hop.
pub fn pitch_json(sentence: &str, key: &str, seed: u64) -> Result<Value, String> {
    let cfg = config(seed, 5);
    let r = render(sentence, &cfg)?;
    let track = |key: &str| -> Result<Value, String> {
        let c = r.condition(key).ok_or_else(|| format!("unknown condition {key:?}"))?;
        let params = PitchParams { hop_samples: cfg.frame.hop_samples, ..cfg.pitch };
        let t = extract_pitch(&c.audio, &params).map_err(|e| e.to_string())?;
        let f0: Vec<Option<f64>> = t.f0_hz.iter().zip(&t.voiced).map(|(f, v)| v.then_some(*f)).collect();
        Ok(json!({ "key": key, "f0_hz": f0 }))
    };
    let hop_seconds = f64::from(cfg.frame.hop_samples) / f64::from(cfg.frame.sample_rate);
    Ok(json!({ "hop_seconds": hop_seconds, "tracks": [track(key)?, track("full")?] }))
}

/// DTW path between a condition's mel and the full-context mel, with the
/// pitch error measured along it.
pub fn align_json(sentence: &str, key: &str, seed: u64) -> Result<Value, String> {
    let cfg = config(seed, 5);
    let r = render(sentence, &cfg)?;
    let test = r.condition(key).ok_or_else(|| format!("unknown condition {key:?}"))?;
    let full = r.full().ok_or("no full-context rendering")?;
    let (path, cost) = dtw_align(&test.mel, &full.mel).map_err(|e| e.to_string())?;
    let params = |frames| PitchParams { hop_samples: cfg.frame.hop_samples, num_frames: Some(frames), ..cfg.pitch };
    let tt = extract_pitch(&test.audio, &params(test.mel.frames())).map_err(|e| e.to_string())?;
    let ft = extract_pitch(&full.audio, &params(full.mel.frames())).map_err(|e| e.to_string())?;
    let cents = pitch_mae_cents(&tt, &ft, &path).ok();
    let pairs: Vec<[usize; 2]> = path.pairs.iter().map(|&(i, j)| [i, j]).collect();
    Ok(json!({
        "test_frames": test.mel.frames(),
        "reference_frames": full.mel.frames(),
        "cost": cost,
        "path": pairs,
        "pitch_mae_cents": cents,
    }))
}

fn to_js(v: Result<Value, String>) -> Result<String, JsError> {
    v.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = renderConditions)]
pub fn render_conditions(sentence: &str, seed: u32, num_samples: usize) -> Result<String, JsError> {
    to_js(conditions_json(sentence, seed.into(), num_samples))
}

#[wasm_bindgen(js_name = pitchTrack)]
pub fn pitch_track(sentence: &str, key: &str, seed: u32) -> Result<String, JsError> {
    to_js(pitch_json(sentence, key, seed.into()))
}

#[wasm_bindgen(js_name = alignCondition)]
pub fn align_condition(sentence: &str, key: &str, seed: u32) -> Result<String, JsError> {
    to_js(align_json(sentence, key, seed.into()))
}
