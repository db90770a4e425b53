//! The experiment stages. Each reads the previous stage's artifacts from the
//! output directory and replaces its own outputs atomically.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use prosogap::assembly::{write_atomic, MockVocoder, Vocoder};
use prosogap::corpus::parse_corpus;
use prosogap::mushra::{compute_stats, replay_ratings, TrialBundle};
use prosogap::pipeline::{
    build_records, deviation_vs_mushra, evaluate_utterance, export_mushra_bundle, jnd_fractions, lm_length_histogram, phoneme_ranges,
    pitch_rows_csv, predict_utterance, prediction_rates, random_utterance, ranges_csv, render_utterance, sentence_maxima, sentences_csv,
    summarize, table_csv, ArtifactLayout, PipelineError, UtteranceEval, UtteranceRender,
};
use prosogap::predictor::{to_jsonl, train_ngram, NextWordSampler, PredictionCache, WordFrequencyList};
use prosogap::synth::{MockSynthesizer, Synthesizer};
use prosogap::Utterance;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Descriptor, ExperimentConfig};
use crate::remote::{HttpEndpoint, RemoteSampler, RemoteSynthesizer, RemoteVocoder};
use crate::{CliError, Outcome};

/// Sentences exported when the config names none.
pub const DEFAULT_TRIALS: usize = 20;

/// One skipped item in `errors.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub stage: String,
    pub utterance: String,
    pub error: String,
}

pub struct Context {
    pub cfg: ExperimentConfig,
    pub layout: ArtifactLayout,
    pub utterances: Vec<Utterance>,
    pool: rayon::ThreadPool,
}

impl Context {
    pub fn new(cfg: ExperimentConfig, workers: Option<usize>) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(&cfg.corpus_path)?;
        let utterances = parse_corpus(&text).map_err(PipelineError::from)?;
        let ids: BTreeSet<&str> = utterances.iter().map(|u| u.id.as_str()).collect();
        if ids.len() != utterances.len() {
            return Err(CliError::Config("corpus has duplicate utterance ids".into()));
        }
        let threads = workers.or(cfg.workers).unwrap_or(0);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| CliError::Config(e.to_string()))?;
        let layout = ArtifactLayout::new(&cfg.output_dir);
        std::fs::create_dir_all(&layout.root)?;
        Ok(Self { cfg, layout, utterances, pool })
    }

    fn endpoint(&self, url: &str, retries: usize) -> Result<HttpEndpoint, CliError> {
        HttpEndpoint::new(url, Duration::from_secs(self.cfg.request_timeout_secs), retries).map_err(CliError::Config)
    }

    fn predictor(&self) -> Result<Box<dyn NextWordSampler + Sync>, CliError> {
        Ok(match self.cfg.predictor() {
            Descriptor::Builtin => {
                let path = self.cfg.lm_corpus_path.as_ref().unwrap_or(&self.cfg.corpus_path);
                let text = std::fs::read_to_string(path)?;
                let training: String = match self.cfg.lm_corpus_path {
                    Some(_) => text,
                    None => self.utterances.iter().map(|u| u.surfaces().collect::<Vec<_>>().join(" ") + "\n").collect(),
                };
                Box::new(train_ngram(&training, self.cfg.ngram_order).map_err(PipelineError::from)?)
            }
            Descriptor::Url(url) => Box::new(RemoteSampler(self.endpoint(url, self.cfg.pipeline.attempts - 1)?)),
        })
    }

    // Synthesis and vocoding retries come from the pipeline's attempt loop.
    fn synthesizer(&self) -> Result<Box<dyn Synthesizer>, CliError> {
        Ok(match &self.cfg.backend {
            Descriptor::Builtin => Box::new(MockSynthesizer::new(self.cfg.pipeline.frame)),
            Descriptor::Url(url) => Box::new(RemoteSynthesizer(self.endpoint(url, 0)?)),
        })
    }

    fn vocoder(&self) -> Result<Box<dyn Vocoder>, CliError> {
        Ok(match &self.cfg.vocoder {
            Descriptor::Builtin => Box::new(MockVocoder),
            Descriptor::Url(url) => Box::new(RemoteVocoder(self.endpoint(url, 0)?)),
        })
    }

    fn word_list(&self) -> Result<WordFrequencyList, CliError> {
        Ok(match &self.cfg.word_list_path {
            Some(p) => WordFrequencyList::parse(&std::fs::read_to_string(p)?, prosogap::predictor::DEFAULT_WORD_LIST_CAP),
            None => WordFrequencyList::builtin(),
        })
    }

    fn cache(&self) -> Result<PredictionCache, CliError> {
        let path = self.layout.predictions();
        let text = std::fs::read_to_string(&path).map_err(|_| PipelineError::MissingArtifact(path))?;
        Ok(PredictionCache::parse_jsonl(&text)?)
    }

    fn bundle_dir(&self) -> PathBuf {
        self.layout.mushra_dir().join("bundle")
    }

    fn ratings_log(&self) -> PathBuf {
        self.layout.mushra_dir().join("ratings.jsonl")
    }

    /// Utterances the synthesize stage skipped.
    fn skipped(&self) -> Result<BTreeSet<String>, CliError> {
        Ok(read_errors(&self.layout.errors())?.into_iter().filter(|e| e.stage == "synthesize").map(|e| e.utterance).collect())
    }

    fn load_renders(&self) -> Result<(Vec<UtteranceRender>, usize), CliError> {
        let skipped = self.skipped()?;
        let ids: Vec<&str> = self.utterances.iter().map(|u| u.id.as_str()).filter(|id| !skipped.contains(*id)).collect();
        if ids.is_empty() {
            return Err(PipelineError::MissingArtifact(self.layout.root.join("features")).into());
        }
        let renders = self.pool.install(|| ids.par_iter().map(|id| self.layout.load_render(id)).collect::<Result<Vec<_>, _>>())?;
        Ok((renders, skipped.len()))
    }
}

pub fn read_errors(path: &Path) -> Result<Vec<ErrorRecord>, CliError> {
    match std::fs::read_to_string(path) {
        Ok(text) => Ok(text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect::<Result<_, _>>()?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(e.into()),
    }
}

/// Replaces one stage's records in `errors.jsonl`, keeping the others.
fn replace_stage_errors(path: &Path, stage: &str, records: &[ErrorRecord]) -> Result<(), CliError> {
    let mut all: Vec<ErrorRecord> = read_errors(path)?.into_iter().filter(|e| e.stage != stage).collect();
    all.extend_from_slice(records);
    let mut out = String::new();
    for r in &all {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())?;
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    write_atomic(path, bytes)?;
    Ok(())
}

/// Samples language-model and random lookahead words for every token and
/// writes the prediction cache. Nothing is written if any prediction fails.
pub fn prepare(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg = &ctx.cfg.pipeline;
    let predictor = ctx.predictor()?;
    let list = ctx.word_list()?;
    let utts = &ctx.utterances;
    let lm = ctx.pool.install(|| utts.par_iter().map(|u| predict_utterance(u, predictor.as_ref(), cfg)).collect::<Result<Vec<_>, _>>());
    let lm = lm.map_err(PipelineError::from)?;
    let hist = lm_length_histogram(lm.iter().flatten().flatten(), &cfg.length_bins).map_err(PipelineError::from)?;
    let random = ctx.pool.install(|| utts.par_iter().map(|u| random_utterance(u, &hist, &list, cfg)).collect::<Result<Vec<_>, _>>());
    let random = random.map_err(PipelineError::from)?;
    let records = build_records(utts, &lm, &random);
    write_file(&ctx.layout.predictions(), to_jsonl(&records).as_bytes())?;
    Ok(Outcome::Clean)
}

/// Renders every condition of every utterance. An utterance whose synthesis
/// or vocoding still fails after the configured attempts is skipped and
/// logged.
pub fn synthesize(ctx: &Context) -> Result<Outcome, CliError> {
    let cache = ctx.cache()?;
    let synth = ctx.synthesizer()?;
    let vocoder = ctx.vocoder()?;
    let cfg = &ctx.cfg.pipeline;
    let results: Vec<Result<(), PipelineError>> = ctx.pool.install(|| {
        ctx.utterances
            .par_iter()
            .map(|u| {
                let render = render_utterance(u, &cache, synth.as_ref(), vocoder.as_ref(), cfg)?;
                ctx.layout.save_render(&render)
            })
            .collect()
    });
    let mut errors = Vec::new();
    for (u, r) in ctx.utterances.iter().zip(results) {
        match r {
            Ok(()) => {}
            Err(e @ PipelineError::Io(_)) => return Err(e.into()),
            Err(e) => errors.push(ErrorRecord { stage: "synthesize".into(), utterance: u.id.clone(), error: e.to_string() }),
        }
    }
    replace_stage_errors(&ctx.layout.errors(), "synthesize", &errors)?;
    if errors.len() == ctx.utterances.len() {
        return Err(CliError::Config(format!("every utterance failed to synthesize; first error: {}", errors[0].error)));
    }
    Ok(if errors.is_empty() { Outcome::Clean } else { Outcome::Partial })
}

#[derive(Serialize)]
struct EvalSummary<'a> {
    utterances: usize,
    skipped: usize,
    prediction_rates: prosogap::pipeline::PredictionRates,
    tables: &'a prosogap::pipeline::Summary,
    warnings: Vec<&'a str>,
}

/// Duration, energy and pitch tables against the full-context rendering.
pub fn evaluate(ctx: &Context) -> Result<Outcome, CliError> {
    let cache = ctx.cache()?;
    let (renders, skipped) = ctx.load_renders()?;
    let cfg = &ctx.cfg.pipeline;
    let evals: Vec<UtteranceEval> = ctx.pool.install(|| renders.par_iter().map(|r| evaluate_utterance(r, cfg)).collect::<Result<_, _>>())?;
    let summary = summarize(&evals, cfg.conditions.k)?;
    let rates = prediction_rates(&ctx.utterances, &cache)?;
    let dir = ctx.layout.eval_dir();
    write_file(&dir.join("duration.csv"), table_csv(&summary.duration).as_bytes())?;
    write_file(&dir.join("energy.csv"), table_csv(&summary.energy).as_bytes())?;
    write_file(&dir.join("pitch.csv"), table_csv(&summary.pitch).as_bytes())?;
    write_file(&dir.join("pitch_sentences.csv"), pitch_rows_csv(&evals).as_bytes())?;
    let mut phonemes = String::new();
    for p in evals.iter().flat_map(|e| &e.phonemes) {
        phonemes.push_str(&serde_json::to_string(p)?);
        phonemes.push('\n');
    }
    write_file(&dir.join("phoneme_errors.jsonl"), phonemes.as_bytes())?;
    let report = EvalSummary {
        utterances: evals.len(),
        skipped,
        prediction_rates: rates,
        tables: &summary,
        warnings: evals.iter().flat_map(|e| e.warnings.iter().map(String::as_str)).collect(),
    };
    write_file(&dir.join("summary.json"), &serde_json::to_vec_pretty(&report)?)?;
    Ok(if skipped == 0 { Outcome::Clean } else { Outcome::Partial })
}

#[derive(Serialize)]
struct SensitivitySummary {
    phonemes: usize,
    jnd: Vec<JndRow>,
    combiner: &'static str,
    listening_test: Option<String>,
    pearson_r: Option<f64>,
}

#[derive(Serialize)]
struct JndRow {
    feature: &'static str,
    threshold: f64,
    fraction_below: f64,
}

/// Per-phoneme feature ranges, JND fractions and sentence deviation scores,
/// correlated with listening-test means when ratings exist.
pub fn sensitivity(ctx: &Context) -> Result<Outcome, CliError> {
    let (renders, skipped) = ctx.load_renders()?;
    let cfg = &ctx.cfg.pipeline;
    let per_utt: Vec<_> = ctx.pool.install(|| {
        renders.par_iter().map(|r| Ok::<_, PipelineError>((phoneme_ranges(r, cfg)?, sentence_maxima(r)?))).collect::<Result<Vec<_>, _>>()
    })?;
    let ranges: Vec<_> = per_utt.iter().flat_map(|(r, _)| r.iter().cloned()).collect();
    let maxima: Vec<_> = per_utt.iter().flat_map(|(_, m)| m.iter().cloned()).collect();
    let fractions = jnd_fractions(&ranges, &cfg.jnd)?;

    let (stats, note) = match (TrialBundle::load(&ctx.bundle_dir()), ctx.ratings_log().is_file()) {
        (Ok(bundle), true) => match compute_stats(&bundle, &replay_ratings(&ctx.ratings_log())?) {
            Ok(s) => (Some(s), None),
            Err(e) => (None, Some(e.to_string())),
        },
        _ => (None, Some("no listening-test ratings".to_string())),
    };
    let (scores, r) = deviation_vs_mushra(&maxima, stats.as_ref())?;

    let dir = ctx.layout.sensitivity_dir();
    write_file(&dir.join("ranges.csv"), ranges_csv(&ranges).as_bytes())?;
    write_file(&dir.join("sentences.csv"), sentences_csv(&scores).as_bytes())?;
    let summary = SensitivitySummary {
        phonemes: ranges.len() / 3,
        jnd: fractions.iter().map(|(f, rf)| JndRow { feature: f.name(), threshold: rf.threshold, fraction_below: rf.fraction }).collect(),
        combiner: "sum of per-feature z-scores (population std) of sentence maxima",
        listening_test: note,
        pearson_r: r,
    };
    write_file(&dir.join("summary.json"), &serde_json::to_vec_pretty(&summary)?)?;
    Ok(if skipped == 0 { Outcome::Clean } else { Outcome::Partial })
}

/// Writes the trial bundle into `mushra/bundle`, replacing any previous one.
pub fn export_mushra(ctx: &Context) -> Result<Outcome, CliError> {
    let ids: Vec<String> = if ctx.cfg.mushra.sentence_ids.is_empty() {
        let skipped = ctx.skipped()?;
        ctx.utterances.iter().map(|u| u.id.clone()).filter(|id| !skipped.contains(id)).take(DEFAULT_TRIALS).collect()
    } else {
        ctx.cfg.mushra.sentence_ids.clone()
    };
    let target = ctx.bundle_dir();
    let staging = ctx.layout.mushra_dir().join("bundle.staging");
    if staging.exists() {
        std::fs::remove_dir_all(&staging)?;
    }
    export_mushra_bundle(&ctx.layout, &ids, &staging, ctx.cfg.pipeline.seed)?;
    if target.exists() {
        std::fs::remove_dir_all(&target)?;
    }
    std::fs::rename(&staging, &target)?;
    Ok(Outcome::Clean)
}
