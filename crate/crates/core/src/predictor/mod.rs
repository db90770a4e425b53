//! Future-word candidates for the predicted and random conditions.

mod cache;
mod filter;
mod length;
mod ngram;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{to_jsonl, PredictionCache, PredictionRecord};
pub use filter::{is_word, normalize_for_match, space_prefix_filter};
pub use length::{sample_length_matched_random, word_length_distribution, LengthBins, LengthHistogram, WordFrequencyList, DEFAULT_WORD_LIST_CAP};
pub use ngram::{train_ngram, NgramModel};

pub const DEFAULT_TOP_K: usize = 30;
pub const DEFAULT_RETRY_BUDGET: usize = 100;

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("predictor backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("no accepted sample after {draws} draws")]
    FilterExhausted { draws: usize },
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("top_k must be at least 1")]
    InvalidTopK,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("n-gram order must be at least 1")]
    InvalidOrder,
    #[error("empty input")]
    EmptyInput,
    #[error("length bin {0} has no eligible words")]
    EmptyBin(String),
    #[error("{predictions} predictions but {truths} ground-truth words")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("invalid histogram: {0}")]
    InvalidHistogram(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictionSource {
    LanguageModel,
    Random,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub word: String,
    pub sample_index: usize,
    pub source: PredictionSource,
}

/// A backend that emits raw continuations of a prompt, as a subword language
/// model would: a sample may start with a space (a new word) or continue the
/// last prompt word.
pub trait NextWordSampler {
    /// Draws `count` raw samples from the `top_k` most likely continuations.
    fn sample_raw(
        &self,
        prompt: &[String],
        top_k: usize,
        count: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<String>, PredictorError>;
}

/// Draws `num_samples` accepted next words, resampling rejected draws until
/// `retry_budget` raw draws have been spent. Samples are drawn with
/// replacement, so duplicates are possible.
pub fn predict_next(
    backend: &dyn NextWordSampler,
    prompt: &[String],
    num_samples: usize,
    top_k: usize,
    retry_budget: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<Prediction>, PredictorError> {
    if prompt.is_empty() {
        return Err(PredictorError::EmptyPrompt);
    }
    if top_k == 0 {
        return Err(PredictorError::InvalidTopK);
    }
    let mut out = Vec::with_capacity(num_samples);
    let mut draws = 0;
    while out.len() < num_samples {
        let want = (num_samples - out.len()).min(retry_budget.saturating_sub(draws));
        if want == 0 {
            return Err(PredictorError::FilterExhausted { draws });
        }
        let raw = backend.sample_raw(prompt, top_k, want, rng)?;
        if raw.is_empty() {
            return Err(PredictorError::BackendUnavailable("backend returned no samples".into()));
        }
        draws += raw.len();
        for sample in raw {
            if out.len() == num_samples {
                break;
            }
            if let Some(word) = space_prefix_filter(&sample) {
                out.push(Prediction { word, sample_index: out.len() + 1, source: PredictionSource::LanguageModel });
            }
        }
    }
    Ok(out)
}

/// Predicts `k` words by feeding each accepted word back into the prompt.
/// Returns one space-joined string per sample.
pub fn predict_lookahead(
    backend: &dyn NextWordSampler,
    prompt: &[String],
    k: usize,
    num_samples: usize,
    top_k: usize,
    retry_budget: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<String>, PredictorError> {
    let first = predict_next(backend, prompt, num_samples, top_k, retry_budget, rng)?;
    let mut out = Vec::with_capacity(num_samples);
    for p in first {
        let mut words = vec![p.word];
        let mut extended = prompt.to_vec();
        while words.len() < k {
            extended.push(words.last().cloned().unwrap_or_default());
            let next = predict_next(backend, &extended, 1, top_k, retry_budget, rng)?;
            words.push(next.into_iter().next().map(|p| p.word).unwrap_or_default());
        }
        out.push(words.join(" "));
    }
    Ok(out)
}

/// Fraction of predicted words that exactly match the true next word, after
/// case folding and stripping surrounding punctuation.
pub fn prediction_rate<P: AsRef<str>, T: AsRef<str>>(predictions: &[P], truths: &[T]) -> Result<f64, PredictorError> {
    if predictions.len() != truths.len() {
        return Err(PredictorError::LengthMismatch { predictions: predictions.len(), truths: truths.len() });
    }
    if predictions.is_empty() {
        return Err(PredictorError::EmptyInput);
    }
    let hits = predictions
        .iter()
        .zip(truths)
        .filter(|(p, t)| normalize_for_match(p.as_ref()) == normalize_for_match(t.as_ref()))
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}
