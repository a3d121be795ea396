//! Chat-model backends behind one completion contract.
//!
//! A backend only turns a prompt into text. Each pipeline run wraps the
//! shared backend in a [`Session`] that owns the run's [`Transcript`], so one
//! backend handle can serve many concurrent runs.

mod http;
mod parse;
mod replay;
mod scripted;

use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::HttpChatBackend;
pub use parse::{
    classify_constraint, parse_generated_spf, parse_match_response, parse_self_verification_response,
    parse_solution_response, MatchOutcome, ParsedSolution, SelfVerdict, SolutionParseError, SpfParseError,
    UNPARSEABLE_VERDICT,
};
pub use replay::{prompt_sha256, Cassette, CassetteRecord, RecordingBackend, ReplayBackend};
pub use scripted::ScriptedBackend;

/// Overrides where relative cassette paths are resolved.
pub const CASSETTE_DIR_ENV: &str = "ROUTEFORGE_CASSETTE_DIR";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication error: {0}")]
    Auth(String),
    #[error("scripted backend has no response left")]
    ScriptExhausted,
    #[error("no recorded response for prompt {prompt_sha256}")]
    ReplayMiss { prompt_sha256: String },
    #[error("scripted backend is already serving another run")]
    ConcurrentUse,
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error("cassette error: {0}")]
    Cassette(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BackendKind {
    HttpChat,
    Scripted,
    Replay,
}

fn default_model() -> String {
    "gpt-4-turbo".to_string()
}
fn default_api_key_env() -> String {
    "OPENAI_API_KEY".to_string()
}
fn default_temperature() -> f64 {
    0.7
}
fn default_timeout_secs() -> f64 {
    60.0
}
fn default_max_retries() -> u32 {
    3
}

/// Backend settings. Credentials are never stored here, only the name of
/// the environment variable that holds them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub backend_kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default = "default_model")]
    pub model_name: String,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    /// Used for solve, fix, refine and formulation prompts. Matching and
    /// self-verification always run at 0.
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// JSON array of responses for the scripted backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    /// Cassette file for the replay backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cassette: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            backend_kind: BackendKind::HttpChat,
            endpoint: None,
            model_name: default_model(),
            api_key_env: default_api_key_env(),
            temperature: default_temperature(),
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            script: None,
            cassette: None,
        }
    }
}

impl BackendConfig {
    pub fn scripted() -> Self {
        Self { backend_kind: BackendKind::Scripted, ..Self::default() }
    }

    pub fn replay(cassette: impl Into<PathBuf>) -> Self {
        Self { backend_kind: BackendKind::Replay, cassette: Some(cassette.into()), ..Self::default() }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs.max(0.001))
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::Config(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(GatewayError::Config("timeout must be positive".into()));
        }
        Ok(())
    }
}

/// Resolves a cassette path: absolute paths stay, relative ones are joined
/// to `$ROUTEFORGE_CASSETTE_DIR` when set, else to `base`.
pub fn resolve_cassette_path(path: &Path, base: Option<&Path>) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    if let Some(dir) = std::env::var_os(CASSETTE_DIR_ENV).filter(|d| !d.is_empty()) {
        return PathBuf::from(dir).join(path);
    }
    match base {
        Some(base) => base.join(path),
        None => path.to_path_buf(),
    }
}

/// The completion contract every backend implements.
pub trait ChatBackend: Send + Sync {
    fn kind(&self) -> BackendKind;

    fn complete(&self, prompt: &str, temperature: f64) -> Result<String, GatewayError>;

    /// Live backends stamp transcripts with wall-clock time; offline ones use
    /// a logical counter so replays stay byte-identical.
    fn is_live(&self) -> bool {
        self.kind() == BackendKind::HttpChat
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn kind(&self) -> BackendKind {
        (**self).kind()
    }
    fn complete(&self, prompt: &str, temperature: f64) -> Result<String, GatewayError> {
        (**self).complete(prompt, temperature)
    }
    fn is_live(&self) -> bool {
        (**self).is_live()
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<T> {
    fn kind(&self) -> BackendKind {
        (**self).kind()
    }
    fn complete(&self, prompt: &str, temperature: f64) -> Result<String, GatewayError> {
        (**self).complete(prompt, temperature)
    }
    fn is_live(&self) -> bool {
        (**self).is_live()
    }
}

/// Builds the backend described by `config`. Relative script and cassette
/// paths resolve against `base`.
pub fn build_backend(config: &BackendConfig, base: Option<&Path>) -> Result<Box<dyn ChatBackend>, GatewayError> {
    config.validate()?;
    match config.backend_kind {
        BackendKind::HttpChat => Ok(Box::new(HttpChatBackend::new(config)?)),
        BackendKind::Scripted => {
            let path = config
                .script
                .as_ref()
                .ok_or_else(|| GatewayError::Config("scripted backend needs a script file".into()))?;
            let path = match base {
                Some(b) if path.is_relative() => b.join(path),
                _ => path.clone(),
            };
            Ok(Box::new(ScriptedBackend::from_file(&path)?))
        }
        BackendKind::Replay => {
            let path = config
                .cassette
                .as_ref()
                .ok_or_else(|| GatewayError::Config("replay backend needs a cassette file".into()))?;
            let cassette = Cassette::load(resolve_cassette_path(path, base))?;
            Ok(Box::new(ReplayBackend::new(cassette)))
        }
    }
}

/// What a prompt is for; decides the sampling temperature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PromptKind {
    Match,
    Solve,
    Fix,
    Refine,
    Formulate,
    SelfVerify,
}

impl PromptKind {
    pub fn temperature(self, configured: f64) -> f64 {
        match self {
            PromptKind::Match | PromptKind::SelfVerify => 0.0,
            _ => configured,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub prompt: String,
    pub response: String,
    /// Unix milliseconds for live backends, call sequence number otherwise.
    pub timestamp: u64,
    pub backend_kind: BackendKind,
    pub prompt_kind: PromptKind,
}

/// Append-only log of one run's exchanges.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn push(&mut self, entry: TranscriptEntry) {
        self.entries.push(entry);
    }
}

/// One run's view of a backend.
pub struct Session<'a> {
    backend: &'a dyn ChatBackend,
    temperature: f64,
    transcript: Transcript,
}

impl<'a> Session<'a> {
    pub fn new(backend: &'a dyn ChatBackend, temperature: f64) -> Self {
        Self { backend, temperature, transcript: Transcript::default() }
    }

    /// Sends a prompt and appends the exchange to the transcript.
    pub fn complete(&mut self, prompt: &str, kind: PromptKind) -> Result<String, GatewayError> {
        if prompt.trim().is_empty() {
            return Err(GatewayError::EmptyPrompt);
        }
        let response = self.backend.complete(prompt, kind.temperature(self.temperature))?;
        let timestamp = if self.backend.is_live() {
            SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
        } else {
            self.transcript.len() as u64
        };
        self.transcript.push(TranscriptEntry {
            prompt: prompt.to_string(),
            response: response.clone(),
            timestamp,
            backend_kind: self.backend.kind(),
            prompt_kind: kind,
        });
        Ok(response)
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn calls(&self) -> usize {
        self.transcript.len()
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn session_records_exchanges() {
        let backend = ScriptedBackend::new(["one", "two"]);
        let mut s = Session::new(&backend, 0.7);
        assert_eq!(s.complete("p1", PromptKind::Match).unwrap(), "one");
        assert_eq!(s.complete("p2", PromptKind::Solve).unwrap(), "two");
        assert!(matches!(s.complete("p3", PromptKind::Solve), Err(GatewayError::ScriptExhausted)));
        let t = s.into_transcript();
        assert_eq!(t.len(), 2);
        assert_eq!(t.entries()[1].prompt, "p2");
        assert_eq!(t.entries()[1].timestamp, 1);
        assert_eq!(t.entries()[0].backend_kind, BackendKind::Scripted);
    }

    #[test]
    fn empty_prompt_rejected() {
        let backend = ScriptedBackend::new(["x"]);
        let mut s = Session::new(&backend, 0.7);
        assert!(matches!(s.complete("  ", PromptKind::Solve), Err(GatewayError::EmptyPrompt)));
        assert_eq!(s.calls(), 0);
    }

    #[test]
    fn temperatures_per_kind() {
        assert_eq!(PromptKind::Match.temperature(0.7), 0.0);
        assert_eq!(PromptKind::SelfVerify.temperature(0.7), 0.0);
        assert_eq!(PromptKind::Refine.temperature(0.7), 0.7);
        assert_eq!(PromptKind::Solve.temperature(0.7), 0.7);
    }

    #[test]
    fn config_validation() {
        let mut c = BackendConfig::default();
        assert!(c.validate().is_ok());
        c.temperature = 2.5;
        assert!(c.validate().is_err());
        let json = r#"{"backend_kind": "REPLAY", "cassette": "c.json"}"#;
        let c: BackendConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c.temperature, 0.7);
        assert_eq!(c.api_key_env, "OPENAI_API_KEY");
        assert!(serde_json::from_str::<BackendConfig>(r#"{"backend_kind": "REPLAY", "api_key": "x"}"#).is_err());
    }

    #[test]
    fn missing_files_are_config_errors() {
        assert!(matches!(build_backend(&BackendConfig::scripted(), None), Err(GatewayError::Config(_))));
        let c = BackendConfig { backend_kind: BackendKind::Replay, ..BackendConfig::default() };
        assert!(matches!(build_backend(&c, None), Err(GatewayError::Config(_))));
    }
}
