//! Blocking HTTP clients for externally hosted language-model, acoustic-model
//! and vocoder services.

use std::time::Duration;

use prosogap::assembly::{decode_wav, AssemblyError, Vocoder, Waveform};
use prosogap::predictor::{NextWordSampler, PredictorError};
use prosogap::synth::{FrameParams, MelSpectrogram, PhonemeRecord, SynthError, SynthesisResult, Synthesizer};
use prosogap::InputSequence;
use rand::RngCore;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone)]
pub struct HttpEndpoint {
    base: String,
    client: reqwest::blocking::Client,
    /// Extra attempts after a transport failure or 5xx response.
    retries: usize,
}

impl HttpEndpoint {
    pub fn new(base: &str, timeout: Duration, retries: usize) -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder().timeout(timeout).build().map_err(|e| e.to_string())?;
        Ok(Self { base: base.trim_end_matches('/').to_string(), client, retries })
    }

    fn post(&self, path: &str, body: &impl Serialize) -> Result<reqwest::blocking::Response, String> {
        let url = format!("{}{path}", self.base);
        let mut last = String::new();
        for _ in 0..=self.retries {
            match self.client.post(&url).json(body).send() {
                Ok(r) if r.status().is_success() => return Ok(r),
                Ok(r) if r.status().is_server_error() => last = format!("{url}: HTTP {}", r.status()),
                Ok(r) => return Err(format!("{url}: HTTP {}", r.status())),
                Err(e) => last = format!("{url}: {e}"),
            }
        }
        Err(last)
    }
}

#[derive(Serialize)]
struct PredictRequest<'a> {
    prompt: &'a str,
    top_k: usize,
    num_samples: usize,
}

#[derive(Deserialize)]
struct PredictResponse {
    samples: Vec<String>,
}

/// Language-model service. Sampling happens server-side, so the local
/// generator is unused and reproducibility depends on the service.
pub struct RemoteSampler(pub HttpEndpoint);

impl NextWordSampler for RemoteSampler {
    fn sample_raw(&self, prompt: &[String], top_k: usize, count: usize, _rng: &mut dyn RngCore) -> Result<Vec<String>, PredictorError> {
        let prompt = prompt.join(" ");
        let resp = self.0.post("/v1/predict", &PredictRequest { prompt: &prompt, top_k, num_samples: count }).map_err(PredictorError::BackendUnavailable)?;
        let body: PredictResponse = resp.json().map_err(|e| PredictorError::BackendUnavailable(e.to_string()))?;
        Ok(body.samples)
    }
}

#[derive(Serialize)]
struct SynthesizeRequest<'a> {
    text: &'a str,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SynthesizeResponse {
    pub phonemes: Vec<PhonemeRecord>,
    pub mel: Vec<Vec<f32>>,
    pub sample_rate: u32,
    pub hop_samples: u32,
}

pub struct RemoteSynthesizer(pub HttpEndpoint);

impl RemoteSynthesizer {
    /// Checks the response against the request and turns it into a result.
    pub fn into_result(seq: &InputSequence, resp: SynthesizeResponse) -> Result<SynthesisResult, SynthError> {
        let bins = resp.mel.first().map_or(0, Vec::len);
        let mel = MelSpectrogram::from_rows(bins, &resp.mel)?;
        let result = SynthesisResult {
            input: seq.clone(),
            phonemes: resp.phonemes,
            mel,
            frame_params: FrameParams { sample_rate: resp.sample_rate, hop_samples: resp.hop_samples, mel_bins: bins },
        };
        if result.mel.frames() != result.total_frames() {
            return Err(SynthError::Malformed(format!("{} mel frames for {} phoneme frames", result.mel.frames(), result.total_frames())));
        }
        if resp.sample_rate == 0 || resp.hop_samples == 0 {
            return Err(SynthError::Malformed("zero sample rate or hop".into()));
        }
        prosogap::synth::segment_words(&result)?;
        Ok(result)
    }
}

impl Synthesizer for RemoteSynthesizer {
    fn synthesize(&self, seq: &InputSequence) -> Result<SynthesisResult, SynthError> {
        let resp = self.0.post("/v1/synthesize", &SynthesizeRequest { text: &seq.text }).map_err(SynthError::BackendUnavailable)?;
        let body: SynthesizeResponse = resp.json().map_err(|e| SynthError::Malformed(e.to_string()))?;
        Self::into_result(seq, body)
    }
}

#[derive(Serialize)]
struct VocodeRequest<'a> {
    mel: Vec<&'a [f32]>,
    hop_samples: u32,
    sample_rate: u32,
}

pub struct RemoteVocoder(pub HttpEndpoint);

impl Vocoder for RemoteVocoder {
    fn vocode(&self, _phonemes: &[PhonemeRecord], mel: &MelSpectrogram, params: FrameParams) -> Result<Waveform, AssemblyError> {
        let body = VocodeRequest { mel: mel.rows().collect(), hop_samples: params.hop_samples, sample_rate: params.sample_rate };
        let resp = self.0.post("/v1/vocode", &body).map_err(AssemblyError::VocoderUnavailable)?;
        let bytes = resp.bytes().map_err(|e| AssemblyError::VocoderUnavailable(e.to_string()))?;
        decode_wav(&bytes)
    }
}
