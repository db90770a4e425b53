//! Listening-test administration: trial bundles, listener sessions, rating
//! collection with an append-only log, post-screening and score statistics.
//!
//! Conditions are identified by label, never by position. Each listener sees
//! the five test clips of a trial in their own seeded slot order.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum MushraError {
    #[error("no trials loaded")]
    NoTrialsLoaded,
    #[error("unknown listener {0:?}")]
    UnknownListener(String),
    #[error("unknown trial {0:?}")]
    UnknownTrial(String),
    #[error("expected scores for 5 slots, got {0}")]
    IncompleteRatings(usize),
    #[error("unknown slot {0}")]
    UnknownSlot(u8),
    #[error("score {0} outside 0..=100")]
    ScoreOutOfRange(i64),
    #[error("trial already rated by this listener")]
    DuplicateSubmission,
    #[error("no listener survived screening")]
    EmptyAfterScreening,
    #[error("trial {trial:?} must have exactly one clip per condition")]
    InvalidTrial { trial: String },
    #[error("ratings log line {line} is corrupt")]
    CorruptLog { line: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MushraCondition {
    HiddenReference,
    KZero,
    GroundTruthK1,
    PredK1,
    RandK1,
}

impl MushraCondition {
    pub const ALL: [MushraCondition; 5] =
        [MushraCondition::HiddenReference, MushraCondition::KZero, MushraCondition::GroundTruthK1, MushraCondition::PredK1, MushraCondition::RandK1];

    pub fn label(self) -> &'static str {
        match self {
            MushraCondition::HiddenReference => "hidden_reference",
            MushraCondition::KZero => "k_zero",
            MushraCondition::GroundTruthK1 => "ground_truth_k1",
            MushraCondition::PredK1 => "pred_k1",
            MushraCondition::RandK1 => "rand_k1",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialClip {
    pub condition: MushraCondition,
    /// Path relative to the bundle root; file names carry no condition label.
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub trial_id: String,
    pub utterance_id: String,
    pub reference: String,
    pub clips: Vec<TrialClip>,
    /// Seed of the shuffle that produced the clip file order.
    pub permutation_seed: u64,
}

impl Trial {
    fn validate(&self) -> Result<(), MushraError> {
        let conditions: BTreeSet<_> = self.clips.iter().map(|c| c.condition).collect();
        if self.clips.len() != 5 || conditions.len() != 5 {
            return Err(MushraError::InvalidTrial { trial: self.trial_id.clone() });
        }
        Ok(())
    }
}

/// Contents of `trials.json`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrialBundle {
    pub trials: Vec<Trial>,
}

impl TrialBundle {
    pub fn load(dir: &Path) -> Result<Self, MushraError> {
        let bundle: TrialBundle = serde_json::from_slice(&std::fs::read(dir.join("trials.json"))?)?;
        for t in &bundle.trials {
            t.validate()?;
        }
        Ok(bundle)
    }

    pub fn trial(&self, trial_id: &str) -> Option<&Trial> {
        self.trials.iter().find(|t| t.trial_id == trial_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListenerSession {
    pub listener_id: String,
    pub trials: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MushraRating {
    pub listener_id: String,
    pub trial_id: String,
    pub condition: MushraCondition,
    pub score: u8,
    pub submitted_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum LogEvent {
    Session(ListenerSession),
    Ratings { ratings: Vec<MushraRating> },
}

/// Blinded view of a trial for one listener.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialView {
    pub trial_id: String,
    pub reference: String,
    pub clips: Vec<SlotClip>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotClip {
    pub slot: u8,
    pub file: String,
}

/// Clip index (into `Trial::clips`) shown in each slot for this listener.
pub fn slot_order(seed: u64, listener_id: &str, trial_id: &str) -> [usize; 5] {
    let mut order = [0, 1, 2, 3, 4];
    order.shuffle(&mut rng::for_item(seed, &["slots", listener_id, trial_id]));
    order
}

#[derive(Default)]
struct State {
    sessions: BTreeMap<String, ListenerSession>,
    rated: BTreeSet<(String, String)>,
    ratings: Vec<MushraRating>,
}

impl State {
    fn apply(&mut self, event: LogEvent) {
        match event {
            LogEvent::Session(s) => {
                self.sessions.insert(s.listener_id.clone(), s);
            }
            LogEvent::Ratings { ratings } => {
                if let Some(r) = ratings.first() {
                    self.rated.insert((r.listener_id.clone(), r.trial_id.clone()));
                }
                self.ratings.extend(ratings);
            }
        }
    }
}

/// Sessions and ratings, optionally persisted to a JSONL log that is replayed
/// on open. Writers are serialized; readers take a snapshot.
pub struct MushraStore {
    bundle: TrialBundle,
    seed: u64,
    state: RwLock<State>,
    log: Mutex<Option<File>>,
    log_path: Option<PathBuf>,
}

impl MushraStore {
    pub fn in_memory(bundle: TrialBundle, seed: u64) -> Self {
        Self { bundle, seed, state: RwLock::new(State::default()), log: Mutex::new(None), log_path: None }
    }

    /// Opens (or creates) the log at `path` and replays it. A final line
    /// without a trailing newline is treated as an interrupted write and
    /// dropped.
    pub fn open(bundle: TrialBundle, seed: u64, path: &Path) -> Result<Self, MushraError> {
        let mut state = State::default();
        if path.exists() {
            let text = std::fs::read_to_string(path)?;
            for event in replay(&text)? {
                state.apply(event);
            }
            let complete = text.rfind('\n').map_or(0, |i| i + 1);
            if complete < text.len() {
                OpenOptions::new().write(true).open(path)?.set_len(complete as u64)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { bundle, seed, state: RwLock::new(state), log: Mutex::new(Some(file)), log_path: Some(path.to_path_buf()) })
    }

    pub fn bundle(&self) -> &TrialBundle {
        &self.bundle
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log_path.as_deref()
    }

    fn persist(&self, log: &mut Option<File>, event: &LogEvent) -> Result<(), MushraError> {
        if let Some(file) = log.as_mut() {
            let mut line = serde_json::to_vec(event)?;
            line.push(b'\n');
            file.write_all(&line)?;
            file.sync_data()?;
        }
        Ok(())
    }

    pub fn create_session(&self) -> Result<ListenerSession, MushraError> {
        if self.bundle.trials.is_empty() {
            return Err(MushraError::NoTrialsLoaded);
        }
        let mut log = self.log.lock().expect("log lock");
        let listener_id = format!("L{:04}", self.state.read().expect("state lock").sessions.len() + 1);
        let mut trials: Vec<String> = self.bundle.trials.iter().map(|t| t.trial_id.clone()).collect();
        trials.shuffle(&mut rng::for_item(self.seed, &["session", &listener_id]));
        let session = ListenerSession { listener_id, trials };
        let event = LogEvent::Session(session.clone());
        self.persist(&mut log, &event)?;
        self.state.write().expect("state lock").apply(event);
        Ok(session)
    }

    pub fn session(&self, listener_id: &str) -> Option<ListenerSession> {
        self.state.read().expect("state lock").sessions.get(listener_id).cloned()
    }

    fn assigned_trial(&self, listener_id: &str, trial_id: &str) -> Result<&Trial, MushraError> {
        let state = self.state.read().expect("state lock");
        let session = state.sessions.get(listener_id).ok_or_else(|| MushraError::UnknownListener(listener_id.into()))?;
        if !session.trials.iter().any(|t| t == trial_id) {
            return Err(MushraError::UnknownTrial(trial_id.into()));
        }
        self.bundle.trial(trial_id).ok_or_else(|| MushraError::UnknownTrial(trial_id.into()))
    }

    pub fn trial_view(&self, listener_id: &str, trial_id: &str) -> Result<TrialView, MushraError> {
        let trial = self.assigned_trial(listener_id, trial_id)?;
        let order = slot_order(self.seed, listener_id, trial_id);
        Ok(TrialView {
            trial_id: trial.trial_id.clone(),
            reference: trial.reference.clone(),
            clips: order.iter().enumerate().map(|(slot, &clip)| SlotClip { slot: slot as u8, file: trial.clips[clip].file.clone() }).collect(),
        })
    }

    /// Accepts exactly one score per slot. The whole trial is persisted as a
    /// single log line.
    pub fn submit_ratings(&self, listener_id: &str, trial_id: &str, scores: &BTreeMap<u8, i64>, submitted_at: u64) -> Result<Vec<MushraRating>, MushraError> {
        let trial = self.assigned_trial(listener_id, trial_id)?;
        if let Some(&slot) = scores.keys().find(|s| **s >= 5) {
            return Err(MushraError::UnknownSlot(slot));
        }
        if scores.len() != 5 {
            return Err(MushraError::IncompleteRatings(scores.len()));
        }
        if let Some(&bad) = scores.values().find(|s| !(0..=100).contains(*s)) {
            return Err(MushraError::ScoreOutOfRange(bad));
        }
        let order = slot_order(self.seed, listener_id, trial_id);
        let ratings: Vec<MushraRating> = scores
            .iter()
            .map(|(&slot, &score)| MushraRating {
                listener_id: listener_id.into(),
                trial_id: trial_id.into(),
                condition: trial.clips[order[slot as usize]].condition,
                score: score as u8,
                submitted_at,
            })
            .collect();
        let mut log = self.log.lock().expect("log lock");
        if self.state.read().expect("state lock").rated.contains(&(listener_id.to_string(), trial_id.to_string())) {
            return Err(MushraError::DuplicateSubmission);
        }
        let event = LogEvent::Ratings { ratings: ratings.clone() };
        self.persist(&mut log, &event)?;
        self.state.write().expect("state lock").apply(event);
        Ok(ratings)
    }

    pub fn ratings(&self) -> Vec<MushraRating> {
        self.state.read().expect("state lock").ratings.clone()
    }

    pub fn stats(&self) -> Result<MushraStats, MushraError> {
        compute_stats(&self.bundle, &self.ratings())
    }
}

fn replay(text: &str) -> Result<Vec<LogEvent>, MushraError> {
    let mut events = Vec::new();
    let terminated = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(e) => events.push(e),
            Err(_) if i + 1 == lines.len() && !terminated => break,
            Err(_) => return Err(MushraError::CorruptLog { line: i + 1 }),
        }
    }
    Ok(events)
}

/// Rebuilds the rating list from a log without opening it for writing.
pub fn replay_ratings(path: &Path) -> Result<Vec<MushraRating>, MushraError> {
    let mut state = State::default();
    for event in replay(&std::fs::read_to_string(path)?)? {
        state.apply(event);
    }
    Ok(state.ratings)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Screening {
    pub kept: BTreeSet<String>,
    pub excluded: BTreeSet<String>,
}

/// A listener is excluded iff they scored the hidden reference below 90 on
/// more than 15% of their completed trials.
pub fn screen_listeners(ratings: &[MushraRating]) -> Screening {
    let mut per_listener: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for r in ratings.iter().filter(|r| r.condition == MushraCondition::HiddenReference) {
        let entry = per_listener.entry(&r.listener_id).or_default();
        entry.0 += 1;
        if r.score < 90 {
            entry.1 += 1;
        }
    }
    let mut screening = Screening { kept: BTreeSet::new(), excluded: BTreeSet::new() };
    for (listener, (completed, failed)) in per_listener {
        if failed * 100 > 15 * completed {
            screening.excluded.insert(listener.to_string());
        } else {
            screening.kept.insert(listener.to_string());
        }
    }
    screening
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionStats {
    pub condition: MushraCondition,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub utterance_id: String,
    pub condition: MushraCondition,
    /// `None` when no kept listener rated the sentence.
    pub mean: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MushraStats {
    pub kept_listeners: usize,
    pub excluded_listeners: Vec<String>,
    pub conditions: Vec<ConditionStats>,
    pub sentences: Vec<SentenceScore>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Screens listeners, then summarizes the kept ratings per condition and
/// per (sentence, pred/rand).
pub fn compute_stats(bundle: &TrialBundle, ratings: &[MushraRating]) -> Result<MushraStats, MushraError> {
    let screening = screen_listeners(ratings);
    let kept: Vec<&MushraRating> = ratings.iter().filter(|r| screening.kept.contains(&r.listener_id)).collect();
    if kept.is_empty() {
        return Err(MushraError::EmptyAfterScreening);
    }
    let mut by_condition: BTreeMap<MushraCondition, Vec<f64>> = BTreeMap::new();
    let mut by_sentence: BTreeMap<(&str, MushraCondition), Vec<f64>> = BTreeMap::new();
    let utterance_of: BTreeMap<&str, &str> = bundle.trials.iter().map(|t| (t.trial_id.as_str(), t.utterance_id.as_str())).collect();
    for r in &kept {
        by_condition.entry(r.condition).or_default().push(f64::from(r.score));
        if let Some(utt) = utterance_of.get(r.trial_id.as_str()) {
            by_sentence.entry((utt, r.condition)).or_default().push(f64::from(r.score));
        }
    }
    let conditions = by_condition
        .into_iter()
        .map(|(condition, mut scores)| {
            scores.sort_by(f64::total_cmp);
            ConditionStats {
                condition,
                mean: scores.iter().sum::<f64>() / scores.len() as f64,
                median: quantile(&scores, 0.5),
                q1: quantile(&scores, 0.25),
                q3: quantile(&scores, 0.75),
                n: scores.len(),
            }
        })
        .collect();
    let mut sentences = Vec::new();
    for trial in &bundle.trials {
        for condition in [MushraCondition::PredK1, MushraCondition::RandK1] {
            let scores = by_sentence.get(&(trial.utterance_id.as_str(), condition));
            sentences.push(SentenceScore {
                utterance_id: trial.utterance_id.clone(),
                condition,
                mean: scores.map(|s| s.iter().sum::<f64>() / s.len() as f64),
                n: scores.map_or(0, Vec::len),
            });
        }
    }
    Ok(MushraStats { kept_listeners: screening.kept.len(), excluded_listeners: screening.excluded.into_iter().collect(), conditions, sentences })
}

/// Unblinded ratings as CSV.
pub fn ratings_csv(bundle: &TrialBundle, ratings: &[MushraRating]) -> String {
    let screening = screen_listeners(ratings);
    let mut out = String::from("listener_id,trial_id,utterance_id,condition,score,submitted_at,excluded\n");
    for r in ratings {
        let utt = bundle.trial(&r.trial_id).map_or("", |t| t.utterance_id.as_str());
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.listener_id,
            r.trial_id,
            utt,
            r.condition.label(),
            r.score,
            r.submitted_at,
            screening.excluded.contains(&r.listener_id)
        ));
    }
    out
}
