//! Utterances, tokens and lookahead-conditioned input sequences.
//!
//! A token is a run of non-space characters; punctuation stays attached to
//! the word it follows. For the token at position `n` (1-based) and
//! lookahead `k`, the synthesizer input holds the first `n` tokens of the
//! utterance followed by up to `k` future words whose provenance depends on
//! the condition. Near the end of the utterance the lookahead is clamped so
//! that the sequence never extends past token `N`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::predictor::PredictionCache;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("utterance has no tokens")]
    EmptyUtterance,
    #[error("target index {n} out of range 1..={len}")]
    IndexOutOfRange { n: usize, len: usize },
    #[error("suffix has {got} words, lookahead k={expected}")]
    SuffixLengthMismatch { expected: usize, got: usize },
    #[error("invalid condition: {0}")]
    InvalidCondition(&'static str),
    #[error("no predictions cached for utterance {utterance} token {n}")]
    MissingPredictions { utterance: String, n: usize },
    #[error("cache for utterance {utterance} token {n} holds {got} samples, need {expected}")]
    NotEnoughSamples { utterance: String, n: usize, expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    /// 1-based position in the utterance.
    pub index: usize,
}

/// Splits on whitespace; runs of whitespace collapse and the ends are trimmed.
pub fn tokenize(text: &str) -> Result<Vec<Token>, CorpusError> {
    let tokens: Vec<Token> = text
        .split_whitespace()
        .enumerate()
        .map(|(i, s)| Token { surface: s.to_string(), index: i + 1 })
        .collect();
    if tokens.is_empty() {
        return Err(CorpusError::EmptyUtterance);
    }
    Ok(tokens)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub raw_text: String,
    pub tokens: Vec<Token>,
}

impl Utterance {
    pub fn new(id: impl Into<String>, text: &str) -> Result<Self, CorpusError> {
        Ok(Self { id: id.into(), raw_text: text.to_string(), tokens: tokenize(text)? })
    }

    /// Token count `N`.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surface(&self, n: usize) -> Option<&str> {
        n.checked_sub(1).and_then(|i| self.tokens.get(i)).map(|t| t.surface.as_str())
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.surface.as_str())
    }
}

/// Parses a corpus file: one sentence per line, blank lines skipped. The
/// utterance id is the 1-based line number unless the line starts with an
/// `id|` prefix.
pub fn parse_corpus(text: &str) -> Result<Vec<Utterance>, CorpusError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, body) = match line.split_once('|') {
            Some((id, body)) if !id.trim().is_empty() && !id.trim().contains(char::is_whitespace) => {
                (id.trim().to_string(), body)
            }
            _ => ((lineno + 1).to_string(), line),
        };
        out.push(Utterance::new(id, body)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConditionKind {
    Unknown,
    GroundTruth,
    Predicted,
    Random,
    Full,
}

impl ConditionKind {
    pub fn label(self) -> &'static str {
        match self {
            ConditionKind::Unknown => "k0",
            ConditionKind::GroundTruth => "gt",
            ConditionKind::Predicted => "pred",
            ConditionKind::Random => "rand",
            ConditionKind::Full => "full",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Some(match label {
            "k0" => ConditionKind::Unknown,
            "gt" => ConditionKind::GroundTruth,
            "pred" => ConditionKind::Predicted,
            "rand" => ConditionKind::Random,
            "full" => ConditionKind::Full,
            _ => return None,
        })
    }

    pub fn is_sampled(self) -> bool {
        matches!(self, ConditionKind::Predicted | ConditionKind::Random)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LookaheadCondition {
    pub kind: ConditionKind,
    pub k: usize,
    /// 0 for unsampled kinds, 1-based otherwise.
    pub sample_index: usize,
}

impl LookaheadCondition {
    pub fn unknown() -> Self {
        Self { kind: ConditionKind::Unknown, k: 0, sample_index: 0 }
    }

    pub fn ground_truth(k: usize) -> Self {
        Self { kind: ConditionKind::GroundTruth, k, sample_index: 0 }
    }

    pub fn predicted(k: usize, sample_index: usize) -> Self {
        Self { kind: ConditionKind::Predicted, k, sample_index }
    }

    pub fn random(k: usize, sample_index: usize) -> Self {
        Self { kind: ConditionKind::Random, k, sample_index }
    }

    pub fn full() -> Self {
        Self { kind: ConditionKind::Full, k: 0, sample_index: 0 }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        match self.kind {
            ConditionKind::Unknown if self.k != 0 => Err(CorpusError::InvalidCondition("unknown lookahead requires k=0")),
            ConditionKind::Predicted | ConditionKind::Random if self.k == 0 => {
                Err(CorpusError::InvalidCondition("sampled lookahead requires k>=1"))
            }
            ConditionKind::Predicted | ConditionKind::Random if self.sample_index == 0 => {
                Err(CorpusError::InvalidCondition("sampled lookahead requires sample_index>=1"))
            }
            _ => Ok(()),
        }
    }

    /// Stable label such as `k0`, `gt`, `pred3`, `full`.
    pub fn key(&self) -> String {
        if self.kind.is_sampled() {
            format!("{}{}", self.kind.label(), self.sample_index)
        } else {
            self.kind.label().to_string()
        }
    }
}

impl fmt::Display for LookaheadCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ConditionKind::Unknown => write!(f, "k=0"),
            ConditionKind::GroundTruth => write!(f, "GT k={}", self.k),
            ConditionKind::Predicted => write!(f, "Pred k={} #{}", self.k, self.sample_index),
            ConditionKind::Random => write!(f, "Rand k={} #{}", self.k, self.sample_index),
            ConditionKind::Full => write!(f, "Full"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSequence {
    pub utterance_id: String,
    /// Token being synthesized (1-based). `N` for the full-context sequence.
    pub target_index: usize,
    pub condition: LookaheadCondition,
    pub token_surfaces: Vec<String>,
    pub text: String,
}

impl InputSequence {
    fn from_surfaces(utterance_id: &str, target_index: usize, condition: LookaheadCondition, surfaces: Vec<String>) -> Self {
        let text = surfaces.join(" ");
        Self { utterance_id: utterance_id.to_string(), target_index, condition, token_surfaces: surfaces, text }
    }

    pub fn len(&self) -> usize {
        self.token_surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_surfaces.is_empty()
    }
}

/// Builds the synthesizer input for token `n` under `condition`.
///
/// `suffix` is only read for predicted/random conditions and must hold
/// exactly `k` words; only the first `min(n+k, N) - n` of them are appended.
pub fn build_sequence(
    utterance: &Utterance,
    n: usize,
    condition: LookaheadCondition,
    suffix: &[String],
) -> Result<InputSequence, CorpusError> {
    condition.validate()?;
    let len = utterance.len();
    if n == 0 || n > len {
        return Err(CorpusError::IndexOutOfRange { n, len });
    }
    let prefix = utterance.tokens[..n].iter().map(|t| t.surface.clone());
    let surfaces: Vec<String> = match condition.kind {
        ConditionKind::Unknown => prefix.collect(),
        ConditionKind::GroundTruth => {
            let end = (n + condition.k).min(len);
            utterance.tokens[..end].iter().map(|t| t.surface.clone()).collect()
        }
        ConditionKind::Full => utterance.tokens.iter().map(|t| t.surface.clone()).collect(),
        ConditionKind::Predicted | ConditionKind::Random => {
            if suffix.len() != condition.k {
                return Err(CorpusError::SuffixLengthMismatch { expected: condition.k, got: suffix.len() });
            }
            let room = (n + condition.k).min(len) - n;
            prefix.chain(suffix[..room].iter().cloned()).collect()
        }
    };
    Ok(InputSequence::from_surfaces(&utterance.id, n, condition, surfaces))
}

/// One full-context sequence for the whole utterance.
pub fn full_sequence(utterance: &Utterance) -> InputSequence {
    InputSequence::from_surfaces(
        &utterance.id,
        utterance.len(),
        LookaheadCondition::full(),
        utterance.surfaces().map(str::to_string).collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConditionConfig {
    pub k: usize,
    pub num_samples: usize,
}

impl Default for ConditionConfig {
    fn default() -> Self {
        Self { k: 1, num_samples: 5 }
    }
}

/// All sequences needed for one utterance, in a fixed order: for each token
/// `n` the unknown, ground-truth, predicted and random sequences, then the
/// single full-context sequence. Yields `N * (2 + 2 * num_samples) + 1` items.
pub fn enumerate_conditions(
    utterance: &Utterance,
    config: &ConditionConfig,
    cache: &PredictionCache,
) -> Result<Vec<InputSequence>, CorpusError> {
    let mut out = Vec::with_capacity(utterance.len() * (2 + 2 * config.num_samples) + 1);
    for n in 1..=utterance.len() {
        out.push(build_sequence(utterance, n, LookaheadCondition::unknown(), &[])?);
        out.push(build_sequence(utterance, n, LookaheadCondition::ground_truth(config.k), &[])?);
        if config.num_samples == 0 {
            continue;
        }
        let record = cache.get(&utterance.id, n).ok_or_else(|| CorpusError::MissingPredictions {
            utterance: utterance.id.clone(),
            n,
        })?;
        for (kind, samples) in [(ConditionKind::Predicted, &record.pred), (ConditionKind::Random, &record.rand)] {
            if samples.len() < config.num_samples {
                return Err(CorpusError::NotEnoughSamples {
                    utterance: utterance.id.clone(),
                    n,
                    expected: config.num_samples,
                    got: samples.len(),
                });
            }
            for (i, sample) in samples.iter().take(config.num_samples).enumerate() {
                let words: Vec<String> = sample.split_whitespace().map(str::to_string).collect();
                let condition = LookaheadCondition { kind, k: config.k, sample_index: i + 1 };
                out.push(build_sequence(utterance, n, condition, &words)?);
            }
        }
    }
    out.push(full_sequence(utterance));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::PredictionRecord;

    const TIDY: &str = "Do you think that you could manage, Tidy?";

    fn tidy() -> Utterance {
        Utterance::new("1", TIDY).unwrap()
    }

    fn cache_for(utt: &Utterance, samples: usize) -> PredictionCache {
        let records = (1..=utt.len()).map(|n| PredictionRecord {
            utterance: utt.id.clone(),
            n,
            pred: (0..samples).map(|i| format!("pred{i}")).collect(),
            rand: (0..samples).map(|i| format!("rand{i}")).collect(),
        });
        PredictionCache::from_records(records)
    }

    #[test]
    fn tokenize_keeps_punctuation() {
        let surfaces: Vec<_> = tokenize(TIDY).unwrap().into_iter().map(|t| t.surface).collect();
        assert_eq!(surfaces, ["Do", "you", "think", "that", "you", "could", "manage,", "Tidy?"]);
    }

    #[test]
    fn tokenize_edge_cases() {
        assert_eq!(tokenize("Hi").unwrap(), vec![Token { surface: "Hi".into(), index: 1 }]);
        let t = tokenize("a  b").unwrap();
        assert_eq!(t.iter().map(|t| t.surface.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(t[1].index, 2);
        assert_eq!(tokenize("  \t "), Err(CorpusError::EmptyUtterance));
    }

    #[test]
    fn ground_truth_and_predicted_sequences() {
        let u = tidy();
        let gt = build_sequence(&u, 3, LookaheadCondition::ground_truth(1), &[]).unwrap();
        assert_eq!(gt.text, "Do you think that");
        let pred = build_sequence(&u, 3, LookaheadCondition::predicted(1, 1), &["this".into()]).unwrap();
        assert_eq!(pred.text, "Do you think this");
        let end = build_sequence(&u, 8, LookaheadCondition::ground_truth(1), &[]).unwrap();
        assert_eq!(end.text, TIDY);
        assert_eq!(end.len(), 8);
    }

    #[test]
    fn sampled_suffix_is_clamped() {
        let u = tidy();
        let s = build_sequence(&u, 8, LookaheadCondition::random(1, 2), &["art".into()]).unwrap();
        assert_eq!(s.len(), 8);
        let words: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let s = build_sequence(&u, 6, LookaheadCondition::predicted(3, 1), &words).unwrap();
        assert_eq!(&s.token_surfaces[6..], ["a", "b"]);
    }

    #[test]
    fn build_sequence_errors() {
        let u = tidy();
        assert_eq!(
            build_sequence(&u, 9, LookaheadCondition::unknown(), &[]),
            Err(CorpusError::IndexOutOfRange { n: 9, len: 8 })
        );
        assert_eq!(
            build_sequence(&u, 2, LookaheadCondition::predicted(1, 1), &[]),
            Err(CorpusError::SuffixLengthMismatch { expected: 1, got: 0 })
        );
        assert!(matches!(
            build_sequence(&u, 2, LookaheadCondition { kind: ConditionKind::Unknown, k: 1, sample_index: 0 }, &[]),
            Err(CorpusError::InvalidCondition(_))
        ));
    }

    #[test]
    fn enumerate_counts() {
        let u = Utterance::new("a", "one two three four five").unwrap();
        let seqs = enumerate_conditions(&u, &ConditionConfig { k: 1, num_samples: 5 }, &cache_for(&u, 5)).unwrap();
        assert_eq!(seqs.len(), 61);

        let u = Utterance::new("b", "alone").unwrap();
        let seqs = enumerate_conditions(&u, &ConditionConfig { k: 1, num_samples: 1 }, &cache_for(&u, 1)).unwrap();
        assert_eq!(seqs.len(), 5);
        assert!(seqs.iter().all(|s| s.text == "alone"));

        let u = tidy();
        let seqs = enumerate_conditions(&u, &ConditionConfig::default(), &cache_for(&u, 5)).unwrap();
        // direct count: per token 1 + 1 + 5 + 5, plus one full sequence
        let mut expected = 0;
        for _n in 1..=8 {
            expected += 1 + 1 + 5 + 5;
        }
        assert_eq!(seqs.len(), expected + 1);
    }

    #[test]
    fn enumerate_requires_cache() {
        let u = tidy();
        let err = enumerate_conditions(&u, &ConditionConfig::default(), &PredictionCache::default()).unwrap_err();
        assert_eq!(err, CorpusError::MissingPredictions { utterance: "1".into(), n: 1 });
    }

    #[test]
    fn gt_prefix_and_unknown_equivalence() {
        let u = tidy();
        let full = full_sequence(&u);
        for n in 1..u.len() {
            let gt = build_sequence(&u, n, LookaheadCondition::ground_truth(1), &[]).unwrap();
            assert!(full.text.starts_with(&gt.text));
            assert_eq!(gt.len(), n + 1);
            let k0 = build_sequence(&u, n, LookaheadCondition::unknown(), &[]).unwrap();
            let gt0 = build_sequence(&u, n, LookaheadCondition::ground_truth(0), &[]).unwrap();
            assert_eq!(k0.token_surfaces, gt0.token_surfaces);
            assert_eq!(&k0.token_surfaces[..], &u.surfaces().take(n).collect::<Vec<_>>()[..]);
        }
    }

    #[test]
    fn parse_corpus_ids() {
        let text = "first line here\n\nabc|with an id\n  spaced   out  \n";
        let utts = parse_corpus(text).unwrap();
        let ids: Vec<_> = utts.iter().map(|u| u.id.as_str()).collect();
        assert_eq!(ids, ["1", "abc", "4"]);
        assert_eq!(utts[1].surfaces().collect::<Vec<_>>(), ["with", "an", "id"]);
        assert_eq!(utts[2].len(), 2);
    }
}
