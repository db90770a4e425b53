//! Per-token prediction cache, stored as JSONL.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Future-word samples for token `n` of one utterance. For lookahead `k > 1`
/// each entry holds `k` space-separated words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub utterance: String,
    pub n: usize,
    pub pred: Vec<String>,
    pub rand: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PredictionCache {
    records: BTreeMap<(String, usize), PredictionRecord>,
}

impl PredictionCache {
    pub fn from_records(records: impl IntoIterator<Item = PredictionRecord>) -> Self {
        Self { records: records.into_iter().map(|r| ((r.utterance.clone(), r.n), r)).collect() }
    }

    pub fn get(&self, utterance: &str, n: usize) -> Option<&PredictionRecord> {
        self.records.get(&(utterance.to_string(), n))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &PredictionRecord> {
        self.records.values()
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<PredictionRecord>, _>>()?;
        Ok(Self::from_records(records))
    }
}

/// Serializes records in the given order, one JSON object per line.
pub fn to_jsonl<'a>(records: impl IntoIterator<Item = &'a PredictionRecord>) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}
