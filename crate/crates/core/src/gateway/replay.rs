//! Record/replay cassettes.
//!
//! A cassette is a JSON array of `{prompt_sha256, prompt, response}`
//! records. Replay looks a prompt up by hash, confirms the exact text, and
//! hands out records with the same prompt in recorded order.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendKind, ChatBackend, GatewayError, Transcript};

pub fn prompt_sha256(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteRecord {
    pub prompt_sha256: String,
    pub prompt: String,
    pub response: String,
}

impl CassetteRecord {
    pub fn new(prompt: impl Into<String>, response: impl Into<String>) -> Self {
        let prompt = prompt.into();
        Self { prompt_sha256: prompt_sha256(&prompt), prompt, response: response.into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Cassette {
    pub records: Vec<CassetteRecord>,
}

impl Cassette {
    pub fn from_transcript(transcript: &Transcript) -> Self {
        Self {
            records: transcript.entries().iter().map(|e| CassetteRecord::new(&e.prompt, &e.response)).collect(),
        }
    }

    pub fn push(&mut self, prompt: &str, response: &str) {
        self.records.push(CassetteRecord::new(prompt, response));
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Cassette(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| GatewayError::Cassette(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GatewayError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("cassette serialization is infallible");
        std::fs::write(path, text + "\n")
            .map_err(|e| GatewayError::Cassette(format!("cannot write {}: {e}", path.display())))
    }
}

#[derive(Debug)]
pub struct ReplayBackend {
    cassette: Cassette,
    by_hash: HashMap<String, Vec<usize>>,
    used: Mutex<HashMap<String, usize>>,
}

impl ReplayBackend {
    pub fn new(cassette: Cassette) -> Self {
        let mut by_hash: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, r) in cassette.records.iter().enumerate() {
            by_hash.entry(r.prompt_sha256.clone()).or_default().push(i);
        }
        Self { cassette, by_hash, used: Mutex::new(HashMap::new()) }
    }
}

impl ChatBackend for ReplayBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Replay
    }

    fn complete(&self, prompt: &str, _temperature: f64) -> Result<String, GatewayError> {
        let hash = prompt_sha256(prompt);
        let miss = || GatewayError::ReplayMiss { prompt_sha256: hash.clone() };
        let candidates = self.by_hash.get(&hash).ok_or_else(miss)?;
        let matching: Vec<usize> =
            candidates.iter().copied().filter(|&i| self.cassette.records[i].prompt == prompt).collect();
        let mut used = self.used.lock().expect("replay cursor lock poisoned");
        let cursor = used.entry(hash.clone()).or_insert(0);
        let &index = matching.get(*cursor).ok_or_else(miss)?;
        *cursor += 1;
        Ok(self.cassette.records[index].response.clone())
    }
}

/// Wraps another backend and keeps every exchange for later replay.
pub struct RecordingBackend<B> {
    inner: B,
    cassette: Mutex<Cassette>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, cassette: Mutex::new(Cassette::default()) }
    }

    pub fn cassette(&self) -> Cassette {
        self.cassette.lock().expect("recording lock poisoned").clone()
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn kind(&self) -> BackendKind {
        self.inner.kind()
    }

    fn complete(&self, prompt: &str, temperature: f64) -> Result<String, GatewayError> {
        let response = self.inner.complete(prompt, temperature)?;
        self.cassette.lock().expect("recording lock poisoned").push(prompt, &response);
        Ok(response)
    }

    fn is_live(&self) -> bool {
        self.inner.is_live()
    }
}
