//! Building blocks for measuring how much the prosody of an incremental
//! text-to-speech system depends on the words that come after the one being
//! spoken.
//!
//! The crate is organised along the experiment's data flow:
//!
//! * [`corpus`] tokenizes sentences and enumerates lookahead-conditioned
//!   input sequences (unknown, ground-truth, predicted, random, full).
//! * [`predictor`] supplies future-word candidates: the next-word predictor
//!   contract, an n-gram backend, the space-prefix filter and the
//!   length-matched random sampler.
//! * [`synth`] defines the synthesizer contract and a deterministic mock
//!   backend, plus word segmentation from per-phoneme durations.
//! * [`assembly`] vocodes word chunks, joins them with a short crossfade and
//!   reads/writes WAV.
//! * [`metrics`] holds duration/energy/pitch error measures, DTW and the
//!   autocorrelation pitch tracker.
//! * [`sensitivity`] computes per-phoneme feature ranges, JND classes,
//!   sentence deviation scores and correlations.
//! * [`mushra`] is the transport-free core of the listening-test service.
//! * [`pipeline`] glues the stages together per utterance.

pub mod assembly;
pub mod corpus;
pub mod hash;
pub mod mushra;
pub mod metrics;
pub mod pipeline;
pub mod predictor;
pub mod rng;
pub mod sensitivity;
pub mod synth;

pub use assembly::{CrossfadeSpec, Waveform};
pub use corpus::{ConditionKind, InputSequence, LookaheadCondition, Token, Utterance};
pub use metrics::{AlignmentPath, Feature, FeatureMAEReport, PitchTrack};
pub use predictor::{Prediction, PredictionSource, WordFrequencyList};
pub use synth::{FrameParams, MelSpectrogram, PhonemeRecord, SynthesisResult, WordSpan};
