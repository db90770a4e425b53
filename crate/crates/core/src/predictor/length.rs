//! Word-length matching for the random condition.
//!
//! Random future words are drawn so that their character lengths follow the
//! length distribution of the language-model predictions: pick a length bin
//! from that distribution, restrict the common-word list to the bin, then
//! draw a word uniformly.

use std::collections::HashSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{Prediction, PredictionSource, PredictorError};

pub const DEFAULT_WORD_LIST_CAP: usize = 1266;

const BUILTIN_WORDS: &str = include_str!("../../data/common_words.txt");

/// Character-length bins given by their inclusive lower edges; the last bin
/// is open-ended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthBins {
    lower_edges: Vec<usize>,
}

impl Default for LengthBins {
    /// {1–2, 3–4, 5–6, 7–8, 9–10, 11+}
    fn default() -> Self {
        Self { lower_edges: vec![1, 3, 5, 7, 9, 11] }
    }
}

impl LengthBins {
    pub fn new(lower_edges: Vec<usize>) -> Result<Self, PredictorError> {
        if lower_edges.is_empty() || lower_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PredictorError::InvalidHistogram("bin edges must be non-empty and strictly increasing"));
        }
        Ok(Self { lower_edges })
    }

    pub fn len(&self) -> usize {
        self.lower_edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower_edges.is_empty()
    }

    /// Bin for a word of `chars` characters; lengths below the first edge
    /// fall into the first bin.
    pub fn bin_of(&self, chars: usize) -> usize {
        self.lower_edges.iter().rposition(|&lo| chars >= lo).unwrap_or(0)
    }

    pub fn bin_of_word(&self, word: &str) -> usize {
        self.bin_of(word.chars().count())
    }

    pub fn label(&self, bin: usize) -> String {
        let lo = self.lower_edges[bin];
        match self.lower_edges.get(bin + 1) {
            Some(&next) if next - 1 == lo => format!("{lo}"),
            Some(&next) => format!("{lo}-{}", next - 1),
            None => format!("{lo}+"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthHistogram {
    pub bins: LengthBins,
    pub masses: Vec<f64>,
}

impl LengthHistogram {
    pub fn new(bins: LengthBins, masses: Vec<f64>) -> Result<Self, PredictorError> {
        if masses.len() != bins.len() {
            return Err(PredictorError::InvalidHistogram("one mass per bin required"));
        }
        if masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(PredictorError::InvalidHistogram("masses must be finite and non-negative"));
        }
        if (masses.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(PredictorError::InvalidHistogram("masses must sum to 1"));
        }
        Ok(Self { bins, masses })
    }
}

pub fn word_length_distribution(predictions: &[Prediction], bins: &LengthBins) -> Result<LengthHistogram, PredictorError> {
    if predictions.is_empty() {
        return Err(PredictorError::EmptyInput);
    }
    let mut counts = vec![0usize; bins.len()];
    for p in predictions {
        counts[bins.bin_of_word(&p.word)] += 1;
    }
    let total = predictions.len() as f64;
    let masses = counts.into_iter().map(|c| c as f64 / total).collect();
    Ok(LengthHistogram { bins: bins.clone(), masses })
}

/// Most-frequent-first list of lowercase words without duplicates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordFrequencyList {
    words: Vec<String>,
}

impl WordFrequencyList {
    /// One word per line; lines are trimmed and lowercased, blanks and
    /// repeats dropped, and the list cut at `cap` entries.
    pub fn parse(text: &str, cap: usize) -> Self {
        let mut seen = HashSet::new();
        let words = text
            .lines()
            .map(|l| l.trim().to_lowercase())
            .filter(|w| !w.is_empty() && seen.insert(w.clone()))
            .take(cap)
            .collect();
        Self { words }
    }

    /// A bundled list of common English words.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_WORDS, DEFAULT_WORD_LIST_CAP)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.iter().any(|w| w == word)
    }
}

pub fn sample_length_matched_random(
    hist: &LengthHistogram,
    list: &WordFrequencyList,
    num_samples: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<Prediction>, PredictorError> {
    let mut by_bin: Vec<Vec<&str>> = vec![Vec::new(); hist.bins.len()];
    for w in list.words() {
        by_bin[hist.bins.bin_of_word(w)].push(w);
    }
    let picker = WeightedIndex::new(&hist.masses).map_err(|_| PredictorError::InvalidHistogram("no positive mass"))?;
    let mut out = Vec::with_capacity(num_samples);
    for i in 0..num_samples {
        let bin = picker.sample(rng);
        let eligible = &by_bin[bin];
        if eligible.is_empty() {
            return Err(PredictorError::EmptyBin(hist.bins.label(bin)));
        }
        let word = eligible[rng.gen_range(0..eligible.len())];
        out.push(Prediction { word: word.to_string(), sample_index: i + 1, source: PredictionSource::Random });
    }
    Ok(out)
}
