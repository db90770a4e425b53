//! Experiment configuration: one JSON document, paths relative to the file.

use std::fmt;
use std::path::{Path, PathBuf};

use prosogap::pipeline::PipelineConfig;
use serde::{Deserialize, Deserializer};

use crate::CliError;

pub const BACKEND_URL_ENV: &str = "PROSOGAP_BACKEND_URL";

/// Where a model stage runs: in-process or behind an HTTP endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Descriptor {
    /// Mock synthesizer/vocoder, or the n-gram model for prediction.
    #[default]
    Builtin,
    Url(String),
}

impl Descriptor {
    pub fn parse(s: &str) -> Result<Self, String> {
        match s.trim() {
            "mock" | "ngram" | "builtin" => Ok(Descriptor::Builtin),
            url if url.starts_with("http://") || url.starts_with("https://") => Ok(Descriptor::Url(url.trim_end_matches('/').to_string())),
            other => Err(format!("expected \"mock\", \"ngram\" or an http(s) URL, got {other:?}")),
        }
    }
}

impl fmt::Display for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Descriptor::Builtin => f.write_str("builtin"),
            Descriptor::Url(u) => f.write_str(u),
        }
    }
}

impl<'de> Deserialize<'de> for Descriptor {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Descriptor::parse(&String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default)]
pub struct MushraConfig {
    /// Sentences exported as trials; empty means the first 20 synthesized.
    pub sentence_ids: Vec<String>,
    pub bind: String,
    pub static_dir: Option<PathBuf>,
}

impl Default for MushraConfig {
    fn default() -> Self {
        Self { sentence_ids: Vec::new(), bind: "127.0.0.1:8080".into(), static_dir: None }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub corpus_path: PathBuf,
    /// Frequency-ordered word list for random lookahead; built-in list if absent.
    pub word_list_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Serves `/v1/synthesize`, and `/v1/predict` unless `predictor` is set.
    pub backend: Descriptor,
    pub vocoder: Descriptor,
    pub predictor: Option<Descriptor>,
    /// Training text for the built-in n-gram predictor; the corpus if absent.
    pub lm_corpus_path: Option<PathBuf>,
    pub ngram_order: usize,
    pub request_timeout_secs: u64,
    pub workers: Option<usize>,
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
    pub mushra: MushraConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpus_path: PathBuf::new(),
            word_list_path: None,
            output_dir: PathBuf::from("out"),
            backend: Descriptor::Builtin,
            vocoder: Descriptor::Builtin,
            predictor: None,
            lm_corpus_path: None,
            ngram_order: 3,
            request_timeout_secs: 5,
            workers: None,
            pipeline: PipelineConfig::default(),
            mushra: MushraConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads the file, applies the backend URL override and resolves every
    /// path against the config file's directory.
    pub fn load(path: &Path, backend_override: Option<&str>) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(url) = backend_override.filter(|u| !u.is_empty()) {
            cfg.backend = Descriptor::parse(url).map_err(|e| CliError::Config(format!("{BACKEND_URL_ENV}: {e}")))?;
        }
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus_path);
        fix(&mut self.output_dir);
        for p in [&mut self.word_list_path, &mut self.lm_corpus_path, &mut self.mushra.static_dir].into_iter().flatten() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.corpus_path.as_os_str().is_empty() {
            return Err(CliError::Config("corpus_path is required".into()));
        }
        for p in [Some(&self.corpus_path), self.word_list_path.as_ref(), self.lm_corpus_path.as_ref()].into_iter().flatten() {
            if !p.is_file() {
                return Err(CliError::Config(format!("{} is not a readable file", p.display())));
            }
        }
        if let Some(dir) = &self.mushra.static_dir {
            if !dir.is_dir() {
                return Err(CliError::Config(format!("{} is not a directory", dir.display())));
            }
        }
        if self.ngram_order == 0 {
            return Err(CliError::Config("ngram_order must be at least 1".into()));
        }
        if self.request_timeout_secs == 0 {
            return Err(CliError::Config("request_timeout_secs must be at least 1".into()));
        }
        self.pipeline.validate().map_err(|e| CliError::Config(e.to_string()))
    }

    /// The prediction source: explicit, else the backend URL, else n-gram.
    pub fn predictor(&self) -> &Descriptor {
        self.predictor.as_ref().unwrap_or(&self.backend)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_flattened_pipeline() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"corpus_path": "c.txt", "seed": 9, "top_k": 10, "conditions": {"k": 2}}"#).unwrap();
        assert_eq!(cfg.pipeline.seed, 9);
        assert_eq!(cfg.pipeline.top_k, 10);
        assert_eq!(cfg.pipeline.conditions.k, 2);
        assert_eq!(cfg.pipeline.conditions.num_samples, 5);
        assert_eq!(cfg.backend, Descriptor::Builtin);
        assert_eq!(cfg.predictor(), &Descriptor::Builtin);
    }

    #[test]
    fn descriptors() {
        assert_eq!(Descriptor::parse("http://h:1/").unwrap(), Descriptor::Url("http://h:1".into()));
        assert!(Descriptor::parse("gpt2").is_err());
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"backend": "http://x"}"#).unwrap();
        assert_eq!(cfg.predictor(), &Descriptor::Url("http://x".into()));
    }

    #[test]
    fn load_resolves_relative_paths_and_override() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("c.txt"), "Hello there.\n").unwrap();
        std::fs::write(dir.path().join("cfg.json"), r#"{"corpus_path": "c.txt", "output_dir": "out"}"#).unwrap();
        let cfg = ExperimentConfig::load(&dir.path().join("cfg.json"), Some("http://127.0.0.1:9")).unwrap();
        assert_eq!(cfg.corpus_path, dir.path().join("c.txt"));
        assert_eq!(cfg.output_dir, dir.path().join("out"));
        assert_eq!(cfg.backend, Descriptor::Url("http://127.0.0.1:9".into()));
        std::fs::write(dir.path().join("bad.json"), r#"{"corpus_path": "missing.txt"}"#).unwrap();
        assert!(matches!(ExperimentConfig::load(&dir.path().join("bad.json"), None), Err(CliError::Config(_))));
    }
}
