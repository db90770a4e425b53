//! Count-based n-gram backend with backoff to shorter contexts.

use std::collections::{BTreeMap, HashMap};

use rand::distributions::{Distribution, WeightedIndex};
use rand::RngCore;

use super::filter::normalize_for_match;
use super::{NextWordSampler, PredictorError};

type Continuations = BTreeMap<String, usize>;

#[derive(Debug, Clone)]
pub struct NgramModel {
    order: usize,
    /// Indexed by context length (0 = unigram).
    tables: Vec<HashMap<Vec<String>, Continuations>>,
}

fn ends_sentence(token: &str) -> bool {
    token.trim_end_matches(['"', '\'', ')', ']']).ends_with(['.', '!', '?'])
}

fn clean(token: &str) -> String {
    token.trim_matches(|c: char| !c.is_alphanumeric()).to_string()
}

/// Trains on whitespace-separated text. Surrounding punctuation is stripped
/// from words; lines and sentence-final punctuation reset the context.
pub fn train_ngram(corpus: &str, order: usize) -> Result<NgramModel, PredictorError> {
    if order == 0 {
        return Err(PredictorError::InvalidOrder);
    }
    let mut tables: Vec<HashMap<Vec<String>, Continuations>> = vec![HashMap::new(); order];
    let mut any = false;
    for line in corpus.lines() {
        let mut history: Vec<String> = Vec::new();
        for raw in line.split_whitespace() {
            let word = clean(raw);
            if !word.is_empty() {
                any = true;
                let key = normalize_for_match(&word);
                for ctx_len in 0..order.min(history.len() + 1) {
                    let ctx = history[history.len() - ctx_len..].to_vec();
                    *tables[ctx_len].entry(ctx).or_default().entry(word.clone()).or_default() += 1;
                }
                history.push(key);
            }
            if ends_sentence(raw) {
                history.clear();
            }
        }
    }
    if !any {
        return Err(PredictorError::EmptyCorpus);
    }
    Ok(NgramModel { order, tables })
}

impl NgramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    /// The `top_k` most frequent continuations of the longest seen suffix of
    /// `prompt`, most frequent first (ties alphabetical). Never empty.
    pub fn candidates(&self, prompt: &[String], top_k: usize) -> Vec<(String, usize)> {
        let history: Vec<String> = prompt.iter().map(|w| normalize_for_match(w)).filter(|w| !w.is_empty()).collect();
        // a prompt ending a sentence starts a fresh context
        let history: &[String] = if prompt.last().is_some_and(|w| ends_sentence(w)) { &[] } else { &history };
        let longest = (self.order - 1).min(history.len());
        for ctx_len in (0..=longest).rev() {
            let ctx = &history[history.len() - ctx_len..];
            if let Some(conts) = self.tables[ctx_len].get(ctx) {
                let mut ranked: Vec<(String, usize)> = conts.iter().map(|(w, c)| (w.clone(), *c)).collect();
                ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
                ranked.truncate(top_k);
                return ranked;
            }
        }
        unreachable!("unigram table is non-empty after training")
    }
}

impl NextWordSampler for NgramModel {
    fn sample_raw(
        &self,
        prompt: &[String],
        top_k: usize,
        count: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<String>, PredictorError> {
        if top_k == 0 {
            return Err(PredictorError::InvalidTopK);
        }
        let cands = self.candidates(prompt, top_k);
        let dist = WeightedIndex::new(cands.iter().map(|(_, c)| *c)).expect("counts are positive");
        Ok((0..count).map(|_| format!(" {}", cands[dist.sample(rng)].0)).collect())
    }
}
